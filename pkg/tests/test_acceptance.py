"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL`` line straight to the terminal, so a plain
``pytest tests/test_acceptance.py`` run doubles as the acceptance report.
"""

import json
import math
import os
import random
import time

import numpy as np
import pytest

from advfilter import isoforest, selftest
from advfilter.attack import DEFAULT_EPSILONS, AttackConfig, attack_dataset, fgsm_levels
from advfilter.errors import FormatError
from advfilter.evaluation import ConfusionMatrix, metrics
from advfilter.frame_io import (DatasetManifest, Frame, ManifestEntry, adversarial_name, clean_name,
                                dumps_manifest, manifest_from_json, parse_y4m, read_ppm, save_frame,
                                write_ppm, write_y4m)
from advfilter.pipeline import StreamConfig, compose_stream, detections_to_csv, run_batch
from advfilter.report import render_all
from advfilter.tinynet import init_params

from conftest import reference_records


@pytest.fixture
def report(capsys):
    def emit(n, name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  [{n}] {name}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def mixed_stream(tmp_path_factory, video):
    root = tmp_path_factory.mktemp("acc")
    entries = []
    for f in video:
        rel = f"clean/{clean_name(f.index)}"
        save_frame(f, root / rel)
        entries.append(ManifestEntry(f.index, rel, "clean"))
    clean = DatasetManifest("fixture.y4m", 10, 1, 64, 64, tuple(entries))
    union = attack_dataset(clean, AttackConfig(), root)
    return root, compose_stream(union, 0.385, seed=42, clean_prefix=50)


def test_1_metric_reproduction(report):
    cm = ConfusionMatrix(tp=77, fp=13, tn=109, fn=0, positive_class="attacked")
    a, c = metrics(cm), metrics(cm.swapped())
    want = {"acc": 0.935, "err": 0.065, "sn": 0.893, "sp": 1.0, "prec": 1.0, "f1": 0.943}
    errs = [abs(a.acc - 0.935), abs(a.err - 0.065)]
    errs += [abs(getattr(c, k) - v) for k, v in want.items()]
    got = ", ".join(f"{k}={getattr(c, k):.5f}" for k in want)
    report(1, "metric reproduction", max(errs) <= 1e-3,
           f"clean-positive {got}; max deviation {max(errs):.5f} (tol 0.001)")


def test_2_fgsm_contract(report, video):
    params = init_params(42)
    t0 = time.perf_counter()
    worst, in_range, identity = -math.inf, True, True
    for f in video:
        for eps, out in zip(DEFAULT_EPSILONS, fgsm_levels(params, f, DEFAULT_EPSILONS)):
            worst = max(worst, np.abs(out.pixels - f.pixels).max() - eps)
            in_range &= bool(out.pixels.min() >= 0 and out.pixels.max() <= 1)
        identity &= fgsm_levels(params, f, (0.0,))[0] == f
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and in_range and identity and dt < 30
    report(2, "FGSM contract", ok,
           f"200 frames x 5 eps, max(|d|inf - eps)={worst:.2e}, range ok={in_range}, "
           f"eps=0 identity={identity}, {dt:.1f}s (limit 30s)")


def test_3_gradient_check(report):
    t0 = time.perf_counter()
    errs = [selftest.gradient_check(seed, 64) for seed in range(1, 6)]
    dt = time.perf_counter() - t0
    report(3, "input gradient", max(errs) <= 1e-3 and dt < 10,
           f"64 coords x 5 seeds, max rel err {max(errs):.2e} (tol 1e-3), {dt:.1f}s (limit 10s)")


def test_4_isolation_property(report):
    wins = sum(selftest.planted_outlier_rank(seed) for seed in range(20))
    c2 = isoforest.average_path_length(2)
    half = all(isoforest.score_from_path_length(isoforest.average_path_length(p), p) == 0.5
               for p in (2, 64, 256))
    ok = wins == 20 and round(c2, 6) == 0.154431 and c2 == 2 * isoforest.EULER_GAMMA - 1 and half
    report(4, "isolation property", ok,
           f"outlier ranked highest {wins}/20, c(2)={c2:.6f}, score(c(psi))=0.5: {half}")


def test_5_detection_trend(report, mixed_stream):
    root, m = mixed_stream
    contamination = 0.4
    records, _ = run_batch(m, root, StreamConfig(contamination=contamination, seed=42))
    rates = []
    for eps in DEFAULT_EPSILONS:
        sel = [r.flagged for r in records if r.epsilon == eps]
        rates.append(float(np.mean(sel)))
    clean = [r.flagged for r in records if r.truth == "clean"]
    false_rate = float(np.mean(clean))
    ok = (all(b >= a for a, b in zip(rates, rates[1:])) and rates[-1] > 0.9
          and false_rate <= contamination + 0.1)
    detail = " ".join(f"eps{e}={r:.2f}" for e, r in zip(DEFAULT_EPSILONS, rates))
    report(5, "detection trend", ok,
           f"{detail}; clean false-flag rate {false_rate:.3f} (limit {contamination + 0.1:.1f})")


def test_6_parallel_determinism(report, mixed_stream, tmp_path):
    root, m = mixed_stream
    outputs, times = {}, {}
    for w in (1, 8, 4):
        t0 = time.perf_counter()
        records, _ = run_batch(m, root, StreamConfig(contamination=0.4, workers=w))
        times[w] = time.perf_counter() - t0
        svgs = [p.read_bytes() for p in render_all(records, tmp_path / f"w{w}")]
        outputs[w] = (detections_to_csv(records).encode(), svgs)
    same = outputs[1] == outputs[8]
    cores = os.cpu_count() or 1
    if cores >= 4:
        ratio = times[4] / times[1]
        timing_ok, timing = ratio <= 0.7, f"4-worker/1-worker time {ratio:.2f} (limit 0.7)"
    else:
        timing_ok, timing = True, f"speed-up check N/A on a {cores}-core host (needs >= 4)"
    report(6, "parallel determinism", same and timing_ok,
           f"workers 1 vs 8 byte-identical detections.csv and SVGs: {same}; {timing}")


def _canonical_manifest():
    entries = [ManifestEntry(0, f"clean/{clean_name(0)}", "clean"),
               ManifestEntry(0, f"adversarial/{adversarial_name(0, 0.05)}", "adversarial", 0.05),
               ManifestEntry(1, f"clean/{clean_name(1)}", "clean")]
    return DatasetManifest("video.y4m", 30000, 1001, 8, 6, tuple(entries))


def test_7_format_fidelity(report):
    rng = np.random.default_rng(7)
    ppm = write_ppm(Frame(0, rng.integers(0, 256, (6, 8, 3)) / 255))
    ppm_ok = write_ppm(read_ppm(ppm)) == ppm
    text = dumps_manifest(_canonical_manifest())
    man_ok = dumps_manifest(manifest_from_json(json.loads(text))) == text

    y4m = write_y4m([Frame(i, rng.random((6, 8, 3))) for i in range(3)])
    r = random.Random(7)
    crashes, typed, parsed = [], 0, 0
    for case in range(10_000):
        blob = y4m if case % 2 else ppm
        data = bytearray(blob[:r.randrange(len(blob) + 1)])
        if case % 4 >= 2 and data:
            data[r.randrange(len(data))] = r.randrange(256)
        try:
            parse_y4m(bytes(data)) if case % 2 else read_ppm(bytes(data))
            parsed += 1
        except FormatError:
            typed += 1
        except Exception as exc:  # noqa: BLE001 - any other type is a failure
            crashes.append(f"{type(exc).__name__}: {exc}")
    ok = ppm_ok and man_ok and not crashes
    report(7, "format fidelity", ok,
           f"PPM round-trip {ppm_ok}, manifest round-trip {man_ok}; 10000 fuzz cases: "
           f"{typed} typed errors, {parsed} parsed, {len(crashes)} untyped"
           + (f" (first: {crashes[0]})" if crashes else ""))


def test_8_figures(report, tmp_path):
    import xml.etree.ElementTree as ET
    ns = "{http://www.w3.org/2000/svg}"
    paths = {p.name: p for p in render_all(reference_records(), tmp_path)}

    def labels(name, cls):
        root = ET.fromstring(paths[name].read_bytes())
        return [e.text for e in root.iter(ns + "text") if e.get("class") == cls]

    cells = labels("confusion.svg", "cell-count")
    bars = labels("distribution.svg", "bar-value")
    ok = cells == ["109", "13", "0", "77"] and bars == ["77", "90", "0", "109", "122"]
    report(8, "figure reproduction", ok, f"heatmap cells {'/'.join(cells)}, "
           f"distribution bars {'/'.join(bars)}")
