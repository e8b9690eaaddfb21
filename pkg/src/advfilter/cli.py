"""``advfilter`` command line.

Exit status: 0 on success, 1 for usage errors (one stderr line per problem),
2 for data errors raised while reading or processing inputs.
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
from pathlib import Path
from typing import Sequence

from . import attack, evaluation, isoforest, pipeline, report, selftest
from .errors import AdvFilterError, IoError
from .features import dump_features_csv
from .frame_io import (DatasetManifest, ManifestEntry, extract_video, load_manifest,
                       write_manifest, write_y4m)
from .parallel import default_workers
from .synth import synthetic_frames

log = logging.getLogger("advfilter")

DEFAULT_SEED = 42


class UsageError(Exception):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError([f"{self.prog}: {message}"])


# --- flag parsing -----------------------------------------------------------------
# Numeric flags are taken as strings and checked together, so every bad flag
# is reported rather than only the first.

def _add(p: argparse.ArgumentParser, *names: str, required_input=False) -> None:
    for name in names:
        if name == "input":
            p.add_argument("--input", required=required_input, help="input file")
        elif name == "out":
            p.add_argument("--out", required=True, help="output directory")
        elif name == "seed":
            p.add_argument("--seed", default=str(DEFAULT_SEED),
                           help=f"seed for the model, forest and stream layout (default {DEFAULT_SEED})")
        elif name == "epsilons":
            p.add_argument("--epsilons", default=",".join(map(str, attack.DEFAULT_EPSILONS)),
                           help="comma-separated attack strengths, strictly increasing")
        elif name == "contamination":
            p.add_argument("--contamination", default="0.1",
                           help="expected anomalous fraction in (0, 0.5] (default 0.1)")
        elif name == "workers":
            p.add_argument("--workers", default=None,
                           help="worker processes (default $ADVFILTER_WORKERS or 1)")
        elif name == "mode":
            p.add_argument("--mode", choices=("batch", "stream"), default="batch")
        elif name == "warmup":
            p.add_argument("--warmup", default="50",
                           help="clean warmup frames; also the clean prefix of a composed stream")
        elif name == "refit-every":
            p.add_argument("--refit-every", default=None,
                           help="stream mode: refit after this many frames")
        elif name == "attack-fraction":
            p.add_argument("--attack-fraction", default="0.385",
                           help="share of frames replaced by an attacked copy (default 0.385)")
        elif name == "positive":
            p.add_argument("--positive", choices=evaluation.CLASSES, default="attacked",
                           help="class treated as positive in metrics (default attacked)")
        elif name == "detections":
            p.add_argument("--detections", required=True, help="detections.csv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="advfilter", description="Generate FGSM frames and filter them out "
                     "with an Isolation Forest over multi-scale frame statistics.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("extract", help="split a Y4M video into PPM frames and a manifest")
    _add(p, "input", "out", required_input=True)

    p = sub.add_parser("attack", help="write FGSM copies of every clean frame")
    _add(p, "input", "out", "seed", "epsilons", "workers", required_input=True)

    p = sub.add_parser("detect", help="score frames and flag anomalies")
    _add(p, "input", "out", "seed", "contamination", "workers", "mode", "warmup",
         "refit-every", "attack-fraction", required_input=True)

    p = sub.add_parser("eval", help="confusion matrix and metrics from detections.csv")
    _add(p, "detections", "positive")
    p.add_argument("--out", default=None, help="directory for metrics.json")

    p = sub.add_parser("report", help="SVG figures and decorated frames")
    _add(p, "detections", "out")
    p.add_argument("--input", default=None, help="stream manifest, enables decorated frames")

    p = sub.add_parser("run-all", help="extract, attack, detect, eval and report in one tree")
    _add(p, "input", "out", "seed", "epsilons", "contamination", "workers", "mode", "warmup",
         "refit-every", "attack-fraction", "positive", required_input=True)

    sub.add_parser("selftest", help="run the built-in oracle checks")

    p = sub.add_parser("synth", help="write a seeded synthetic Y4M test video")
    p.add_argument("--out", required=True, help="output .y4m path")
    p.add_argument("--seed", default="0")
    p.add_argument("--frames", default="200")
    p.add_argument("--width", default="64")
    p.add_argument("--height", default="64")
    return parser


def _validate(ns: argparse.Namespace) -> None:
    problems: list[str] = []

    def as_int(name, lo=None, hi=None):
        raw = getattr(ns, name, None)
        if raw is None:
            return
        try:
            v = int(raw)
        except ValueError:
            problems.append(f"--{name.replace('_', '-')}: expected an integer, got {raw!r}")
            return
        if lo is not None and v < lo:
            problems.append(f"--{name.replace('_', '-')}: must be >= {lo}, got {v}")
            return
        if hi is not None and v > hi:
            problems.append(f"--{name.replace('_', '-')}: must be <= {hi}, got {v}")
            return
        setattr(ns, name, v)

    def as_float(name, lo, hi, lo_open=True):
        raw = getattr(ns, name, None)
        if raw is None:
            return
        try:
            v = float(raw)
        except ValueError:
            problems.append(f"--{name.replace('_', '-')}: expected a number, got {raw!r}")
            return
        below = v <= lo if lo_open else v < lo
        if below or v > hi or v != v:
            bracket = "(" if lo_open else "["
            problems.append(f"--{name.replace('_', '-')}: must lie in {bracket}{lo}, {hi}], got {raw}")
            return
        setattr(ns, name, v)

    as_int("seed", 0, 2**64 - 1)
    as_int("warmup", 2 if getattr(ns, "mode", None) == "stream" else 0)
    as_int("refit_every", 1)
    as_int("frames", 1)
    as_int("width", 1)
    as_int("height", 1)
    as_float("contamination", 0.0, 0.5)
    as_float("attack_fraction", 0.0, 1.0, lo_open=False)

    if hasattr(ns, "workers"):
        if ns.workers is None:
            try:
                ns.workers = default_workers()
            except ValueError as exc:
                problems.append(str(exc))
        else:
            as_int("workers", 1)

    if getattr(ns, "epsilons", None) is not None:
        try:
            values = tuple(float(t) for t in ns.epsilons.split(",") if t.strip())
            ns.epsilons = attack.AttackConfig(values).epsilons
        except ValueError as exc:
            problems.append(f"--epsilons: {exc}")

    if getattr(ns, "refit_every", None) is not None and getattr(ns, "mode", "stream") != "stream":
        problems.append("--refit-every: only meaningful with --mode stream")

    if problems:
        raise UsageError(problems)


# --- helpers ----------------------------------------------------------------------

def _rebase(manifest: DatasetManifest, src_root: Path, dst_root: Path) -> DatasetManifest:
    """Rewrite entry paths so they resolve from ``dst_root`` instead of ``src_root``."""
    if src_root.resolve() == dst_root.resolve():
        return manifest
    entries = [ManifestEntry(e.index,
                             Path(os.path.relpath(src_root / e.path, dst_root)).as_posix(),
                             e.role, e.epsilon) for e in manifest.entries]
    return manifest.with_entries(entries)


def _mkdir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from exc


def _stream_config(ns) -> pipeline.StreamConfig:
    return pipeline.StreamConfig(mode=ns.mode, warmup=ns.warmup, refit_every=ns.refit_every,
                                 workers=ns.workers, contamination=ns.contamination, seed=ns.seed)


def _single_track(manifest: DatasetManifest, ns) -> DatasetManifest:
    if manifest.frame_count == len(manifest.entries):
        return manifest
    return pipeline.compose_stream(manifest, ns.attack_fraction, ns.seed, clean_prefix=ns.warmup)


# --- subcommands ------------------------------------------------------------------

def cmd_extract(ns) -> int:
    out = Path(ns.out)
    manifest = extract_video(ns.input, out)
    log.info("extracted %d frames (%dx%d)", manifest.frame_count, manifest.width, manifest.height)
    print(out / "manifest.json")
    return 0


def _attack(manifest_path: Path, out: Path, ns) -> Path:
    manifest = load_manifest(manifest_path)
    root = manifest_path.parent
    if root.resolve() != out.resolve():
        for e in manifest.entries:
            dst = out / e.path
            _mkdir(dst.parent)
            try:
                shutil.copyfile(root / e.path, dst)
            except OSError as exc:
                raise IoError(root / e.path, exc.strerror or str(exc)) from exc
    config = attack.AttackConfig(ns.epsilons, seed=ns.seed)
    union = attack.attack_dataset(manifest, config, out, ns.workers)
    path = out / "attacked_manifest.json"
    write_manifest(union, path)
    log.info("wrote %d adversarial frames", len(union.entries) - len(manifest.entries))
    return path


def cmd_attack(ns) -> int:
    print(_attack(Path(ns.input), Path(ns.out), ns))
    return 0


def _detect(manifest_path: Path, out: Path, ns) -> tuple[Path, DatasetManifest]:
    """Run detection; writes stream_manifest.json, detections.csv and, in batch mode,
    features.csv and forest.isof. Returns the detections path and stream manifest."""
    config = _stream_config(ns)
    manifest = _single_track(load_manifest(manifest_path), ns)
    root = manifest_path.parent
    _mkdir(out)
    stream = _rebase(manifest, root, out)
    write_manifest(stream, out / "stream_manifest.json")

    if config.mode == "batch":
        X = pipeline.manifest_features(stream, out, config.workers)
        dump_features_csv([e.index for e in stream.entries], X, out / "features.csv")
        records, forest = pipeline.run_batch(stream, out, config, features=X)
        isoforest.save(forest, out / "forest.isof")
    else:
        records = pipeline.stream_manifest(stream, out, config)
    path = out / "detections.csv"
    pipeline.write_detections(records, path)
    kept = pipeline.filter_frames(records, stream, out, out / "filtered")
    log.info("flagged %d of %d frames; %d passed the filter",
             sum(r.flagged for r in records), len(records), len(kept.entries))
    return path, stream


def cmd_detect(ns) -> int:
    path, _ = _detect(Path(ns.input), Path(ns.out), ns)
    print(path)
    return 0


def _metrics_lines(cm: evaluation.ConfusionMatrix, rep: evaluation.MetricsReport) -> list[str]:
    lines = [f"positive={cm.positive_class}", f"tp={cm.tp}", f"fp={cm.fp}", f"tn={cm.tn}",
             f"fn={cm.fn}"]
    for key in ("err", "acc", "sn", "sp", "prec", "fpr", "f1"):
        lines.append(f"{key}={getattr(rep, key):.4f}")
    lines.append("auc=" + ("n/a" if rep.auc is None else f"{rep.auc:.4f}"))
    if rep.degenerate:
        lines.append("degenerate=1")
    return lines


def _evaluate(records, positive: str, out: Path | None) -> tuple[list[str], Path | None]:
    cm, rep = evaluation.evaluate(records, positive)
    path = None
    if out is not None:
        _mkdir(out)
        path = out / "metrics.json"
        evaluation.write_metrics(cm, rep, path)
        other = evaluation.CLASSES[1 - evaluation.CLASSES.index(positive)]
        cm2, rep2 = evaluation.evaluate(records, other)
        evaluation.write_metrics(cm2, rep2, out / f"metrics_{other}.json")
    return _metrics_lines(cm, rep), path


def cmd_eval(ns) -> int:
    records = pipeline.read_detections(ns.detections)
    lines, _ = _evaluate(records, ns.positive, Path(ns.out) if ns.out else None)
    print("\n".join(lines))
    return 0


def _report(records, out: Path, manifest: DatasetManifest | None, root: Path | None) -> None:
    matrix = evaluation.confusion(records) if records else None
    report.render_all(records, out / "figures", matrix)
    if manifest is not None:
        n = report.decorate_frames(records, manifest, root, out)
        log.info("decorated %d frames", n)


def cmd_report(ns) -> int:
    records = pipeline.read_detections(ns.detections)
    out = Path(ns.out)
    manifest = root = None
    if ns.input:
        manifest = load_manifest(ns.input)
        root = Path(ns.input).parent
    _report(records, out, manifest, root)
    print(out / "figures")
    print(report.summary_line(records))
    return 0


def cmd_run_all(ns) -> int:
    out = Path(ns.out)
    frames = out / "frames"
    extract_video(ns.input, frames)
    attacked = _attack(frames / "manifest.json", frames, ns)
    detections, stream = _detect(attacked, out, ns)
    records = pipeline.read_detections(detections)
    lines, metrics_path = _evaluate(records, ns.positive, out)
    _report(records, out, stream, out)
    for line in lines:
        log.info("%s", line)
    log.info("%s", report.summary_line(records))
    print(metrics_path)
    return 0


def cmd_selftest(ns) -> int:
    return 0 if selftest.run() else 1


def cmd_synth(ns) -> int:
    frames = synthetic_frames(ns.frames, ns.width, ns.height, seed=ns.seed)
    path = Path(ns.out)
    _mkdir(path.parent)
    try:
        path.write_bytes(write_y4m(frames))
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from exc
    print(path)
    return 0


COMMANDS = {"extract": cmd_extract, "attack": cmd_attack, "detect": cmd_detect,
            "eval": cmd_eval, "report": cmd_report, "run-all": cmd_run_all,
            "selftest": cmd_selftest, "synth": cmd_synth}


def _header(ns) -> str:
    parts = [f"seed={getattr(ns, 'seed', DEFAULT_SEED)}"]
    for key in ("workers", "mode", "contamination", "warmup", "epsilons", "positive"):
        if getattr(ns, key, None) is not None:
            v = getattr(ns, key)
            parts.append(f"{key}={','.join(map(str, v)) if isinstance(v, tuple) else v}")
    return f"{ns.command}: " + " ".join(parts)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("advfilter %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(logging.INFO)
    log.propagate = False
    try:
        ns = build_parser().parse_args(argv)
        _validate(ns)
    except UsageError as exc:
        for problem in exc.problems:
            print(f"usage error: {problem}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return 0 if exc.code in (0, None) else 1
    log.info("%s", _header(ns))
    try:
        return COMMANDS[ns.command](ns)
    except (AdvFilterError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
