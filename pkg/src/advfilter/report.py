"""Result figures as standalone SVG, and colour-bordered output frames.

All charts share a 960x540 canvas and a fixed palette. Coordinates are
printed with two decimals and element order is fixed, so identical inputs
give byte-identical files.
"""

from __future__ import annotations

import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import IoError, MissingInput, UnknownTruth
from .evaluation import ConfusionMatrix, confusion
from .frame_io import DatasetManifest, load_frame, output_relpath, save_frame
from .pipeline import DetectionRecord

WIDTH, HEIGHT = 960, 540
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 80, 40, 60, 80

BLUE = "#1f77b4"
RED = "#d62728"
GREEN = "#2ca02c"
GRAY = "#7f7f7f"
YELLOW = "#e6c619"
INK = "#222222"

KINDS = ("distribution_bars", "timeline", "actual_vs_detected", "threshold_line",
         "confusion_heatmap")
FILENAMES = {
    "distribution_bars": "distribution.svg",
    "timeline": "timeline.svg",
    "actual_vs_detected": "actual_vs_detected.svg",
    "threshold_line": "thresholds.svg",
    "confusion_heatmap": "confusion.svg",
}
TITLES = {
    "distribution_bars": "Distribution of Attack Detection Results",
    "timeline": "Timeline of Detected Attacks",
    "actual_vs_detected": "Actual vs Detected Attacks",
    "threshold_line": "Threshold Values",
    "confusion_heatmap": "Confusion Matrix",
}

BORDER = 5


@dataclass(frozen=True)
class ChartSpec:
    kind: str
    title: str
    output_path: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown chart kind {self.kind!r}")


def _n(v: float) -> str:
    return f"{v:.2f}"


class _Svg:
    def __init__(self, title: str):
        self.parts: list[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="Helvetica, Arial, sans-serif">',
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        ]
        self.text(WIDTH / 2, 32, title, size=20, anchor="middle", cls="title")

    def rect(self, x, y, w, h, fill, stroke=None, cls=None):
        extra = f' stroke="{stroke}"' if stroke else ""
        extra += f' class="{cls}"' if cls else ""
        self.parts.append(f'<rect x="{_n(x)}" y="{_n(y)}" width="{_n(w)}" height="{_n(h)}" '
                          f'fill="{fill}"{extra}/>')

    def line(self, x1, y1, x2, y2, stroke=INK, width=1.0, dash=None):
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<line x1="{_n(x1)}" y1="{_n(y1)}" x2="{_n(x2)}" y2="{_n(y2)}" '
                          f'stroke="{stroke}" stroke-width="{width}"{extra}/>')

    def text(self, x, y, s, size=12, anchor="start", fill=INK, cls=None, rotate=False):
        extra = f' class="{cls}"' if cls else ""
        if rotate:
            extra += f' transform="rotate(-90 {_n(x)} {_n(y)})"'
        self.parts.append(f'<text x="{_n(x)}" y="{_n(y)}" font-size="{size}" '
                          f'text-anchor="{anchor}" fill="{fill}"{extra}>{escape(str(s))}</text>')

    def circle(self, x, y, r, stroke, fill="none", cls=None):
        extra = f' class="{cls}"' if cls else ""
        self.parts.append(f'<circle cx="{_n(x)}" cy="{_n(y)}" r="{_n(r)}" fill="{fill}" '
                          f'stroke="{stroke}" stroke-width="1.5"{extra}/>')

    def cross(self, x, y, r, stroke, cls=None):
        extra = f' class="{cls}"' if cls else ""
        d = (f"M{_n(x - r)} {_n(y - r)}L{_n(x + r)} {_n(y + r)}"
             f"M{_n(x - r)} {_n(y + r)}L{_n(x + r)} {_n(y - r)}")
        self.parts.append(f'<path d="{d}" stroke="{stroke}" stroke-width="1.5" fill="none"{extra}/>')

    def polyline(self, pts, stroke, width=1.5, dash=None, cls=None):
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        extra += f' class="{cls}"' if cls else ""
        coords = " ".join(f"{_n(x)},{_n(y)}" for x, y in pts)
        self.parts.append(f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
                          f'stroke-width="{width}"{extra}/>')

    def legend(self, items, x=WIDTH - MARGIN_RIGHT - 200, y=MARGIN_TOP + 10):
        for k, (label, colour) in enumerate(items):
            self.rect(x, y + 20 * k, 12, 12, colour)
            self.text(x + 18, y + 20 * k + 11, label, size=12)

    def render(self) -> bytes:
        return ("\n".join(self.parts + ["</svg>"]) + "\n").encode("utf-8")


class _Axes:
    """Linear data-to-canvas mapping for the plot area."""

    def __init__(self, xlo, xhi, ylo, yhi):
        self.x0, self.x1 = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
        self.y0, self.y1 = HEIGHT - MARGIN_BOTTOM, MARGIN_TOP
        self.xlo, self.xhi = xlo, (xhi if xhi > xlo else xlo + 1)
        self.ylo, self.yhi = ylo, (yhi if yhi > ylo else ylo + 1)

    def x(self, v):
        return self.x0 + (v - self.xlo) / (self.xhi - self.xlo) * (self.x1 - self.x0)

    def y(self, v):
        return self.y0 + (v - self.ylo) / (self.yhi - self.ylo) * (self.y1 - self.y0)

    def draw(self, svg: _Svg, xlabel: str, ylabel: str, yticks=None, ytick_labels=None, nx=5):
        svg.line(self.x0, self.y0, self.x1, self.y0)
        svg.line(self.x0, self.y0, self.x0, self.y1)
        for k in range(nx + 1 if nx else 0):
            v = self.xlo + (self.xhi - self.xlo) * k / nx
            svg.line(self.x(v), self.y0, self.x(v), self.y0 + 5)
            svg.text(self.x(v), self.y0 + 20, f"{v:.0f}", size=11, anchor="middle")
        if yticks is None:
            yticks = [self.ylo + (self.yhi - self.ylo) * k / 4 for k in range(5)]
            ytick_labels = [f"{v:.3f}" for v in yticks]
        for v, lab in zip(yticks, ytick_labels):
            svg.line(self.x0 - 5, self.y(v), self.x0, self.y(v))
            svg.text(self.x0 - 8, self.y(v) + 4, lab, size=11, anchor="end")
        svg.text((self.x0 + self.x1) / 2, HEIGHT - 30, xlabel, size=13, anchor="middle")
        svg.text(22, (self.y0 + self.y1) / 2, ylabel, size=13, anchor="middle", rotate=True)


def _need_truth(kind: str, records: Sequence[DetectionRecord]) -> None:
    if any(r.truth not in ("attacked", "clean") for r in records):
        raise MissingInput(kind, "records with known ground truth")


def distribution_counts(records: Sequence[DetectionRecord]) -> dict[str, int]:
    attacked = sum(r.truth == "attacked" for r in records)
    flagged = sum(r.flagged for r in records)
    return {
        "Actual Attack Frames": attacked,
        "Detected Attack Frames": flagged,
        "Undetected Attack Frames": sum(r.truth == "attacked" and not r.flagged for r in records),
        "Non-Attacked (Detection)": len(records) - flagged,
        "Non-Attacked (Actual)": len(records) - attacked,
    }


def _distribution(title, records) -> bytes:
    _need_truth("distribution_bars", records)
    counts = distribution_counts(records)
    colours = [BLUE, RED, YELLOW, GREEN, GRAY]
    svg = _Svg(title)
    top = max(max(counts.values()), 1)
    ax = _Axes(0, len(counts), 0, top * 1.15)
    ticks = [top * k / 4 for k in range(5)]
    ax.draw(svg, "Category", "Number of frames", ticks, [f"{v:.0f}" for v in ticks], nx=0)
    slot = (ax.x1 - ax.x0) / len(counts)
    for k, ((label, value), colour) in enumerate(zip(counts.items(), colours)):
        x = ax.x0 + slot * k + slot * 0.15
        svg.rect(x, ax.y(value), slot * 0.7, ax.y0 - ax.y(value), colour, cls="bar")
        svg.text(x + slot * 0.35, ax.y(value) - 6, str(value), size=14, anchor="middle",
                 cls="bar-value")
        svg.text(x + slot * 0.35, ax.y0 + 20, label, size=11, anchor="middle", cls="bar-label")
    return svg.render()


def _index_axes(records, ylo, yhi) -> _Axes:
    idx = [r.frame_index for r in records]
    return _Axes(min(idx, default=0), max(idx, default=1), ylo, yhi)


def _timeline(title, records) -> bytes:
    svg = _Svg(title)
    ax = _index_axes(records, -0.5, 1.5)
    ax.draw(svg, "Frame index", "Verdict", [0, 1], ["clean", "attack"])
    for r in records:
        if r.flagged:
            svg.cross(ax.x(r.frame_index), ax.y(1), 4, RED, cls="marker-detected")
        else:
            svg.circle(ax.x(r.frame_index), ax.y(0), 3.5, GREEN, cls="marker-clean")
    svg.legend([("Detected attack", RED), ("Non-attacked", GREEN)])
    return svg.render()


def summary_line(records: Sequence[DetectionRecord]) -> str:
    cm = confusion(records, "attacked")
    acc = 100.0 * (cm.tp + cm.tn) / cm.total if cm.total else 0.0
    return (f"actual {cm.tp + cm.fn} | accurately detected {cm.tp} | false detected {cm.fp} | "
            f"undetected {cm.fn} | accuracy {acc:.2f}%")


def _actual_vs_detected(title, records) -> bytes:
    _need_truth("actual_vs_detected", records)
    svg = _Svg(title)
    ax = _index_axes(records, -0.5, 1.5)
    ax.draw(svg, "Frame index", "Attack", [0, 1], ["no", "yes"])
    for r in records:
        if r.truth == "attacked":
            svg.cross(ax.x(r.frame_index), ax.y(1), 4, BLUE, cls="marker-actual")
        if r.flagged:
            svg.circle(ax.x(r.frame_index), ax.y(1), 5, RED, cls="marker-detected")
    svg.legend([("Actual attack", BLUE), ("Detected attack", RED)])
    svg.text(WIDTH / 2, 52, summary_line(records), size=13, anchor="middle", cls="summary")
    return svg.render()


def _thresholds(title, records) -> bytes:
    _need_truth("threshold_line", records)
    svg = _Svg(title)
    values = [r.score for r in records] + [r.threshold for r in records]
    lo, hi = (min(values), max(values)) if values else (0.0, 1.0)
    pad = (hi - lo) * 0.05 or 0.05
    ax = _index_axes(records, lo - pad, hi + pad)
    ax.draw(svg, "Image index", "Anomaly score")
    if records:
        svg.polyline([(ax.x(r.frame_index), ax.y(r.score)) for r in records], BLUE, 1.0,
                     cls="score")
        svg.polyline([(ax.x(r.frame_index), ax.y(r.threshold)) for r in records], INK, 1.5,
                     dash="6 3", cls="threshold")
    for r in records:
        x, y = ax.x(r.frame_index), ax.y(r.score)
        if r.flagged and r.truth == "clean":
            svg.circle(x, y, 4, RED, RED, cls="marker-false")
        elif r.flagged:
            svg.circle(x, y, 4, GREEN, GREEN, cls="marker-accurate")
        elif r.truth == "attacked":
            svg.circle(x, y, 4, YELLOW, YELLOW, cls="marker-undetected")
    svg.legend([("Score", BLUE), ("Threshold", INK), ("False detection", RED),
                ("Accurate detection", GREEN), ("Undetected", YELLOW)])
    return svg.render()


def _ramp(t: float) -> str:
    """White to dark blue, monotone in t in [0, 1]."""
    lo, hi = np.array([247, 251, 255]), np.array([8, 48, 107])
    r, g, b = np.rint(lo + (hi - lo) * t).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def _heatmap(title, records, matrix) -> bytes:
    if matrix is None:
        if records is None:
            raise MissingInput("confusion_heatmap", "matrix or records")
        matrix = confusion(records, "attacked")
    cm = matrix.as_attacked()
    grid = [[cm.tn, cm.fp], [cm.fn, cm.tp]]
    labels = ["Non-Attacked", "Attacked"]
    top = max(max(row) for row in grid) or 1
    svg = _Svg(title)
    size = 180
    x0, y0 = WIDTH / 2 - size, HEIGHT / 2 - size + 20
    for i, row in enumerate(grid):
        svg.text(x0 - 12, y0 + size * i + size / 2 + 5, labels[i], size=14, anchor="end")
        for j, count in enumerate(row):
            t = count / top
            svg.rect(x0 + size * j, y0 + size * i, size, size, _ramp(t), stroke="#ffffff",
                     cls="cell")
            svg.text(x0 + size * j + size / 2, y0 + size * i + size / 2 + 8, str(count), size=24,
                     anchor="middle", fill="#ffffff" if t > 0.5 else INK, cls="cell-count")
    for j in range(2):
        svg.text(x0 + size * j + size / 2, y0 + 2 * size + 24, labels[j], size=14, anchor="middle")
    svg.text(WIDTH / 2, y0 + 2 * size + 50, "Predicted label", size=13, anchor="middle")
    svg.text(x0 - 130, y0 + size, "True label", size=13, anchor="middle", rotate=True)
    return svg.render()


def render_chart(spec: ChartSpec, records: Sequence[DetectionRecord] | None,
                 matrix: ConfusionMatrix | None = None) -> bytes:
    if spec.kind == "confusion_heatmap":
        return _heatmap(spec.title, records, matrix)
    if records is None:
        raise MissingInput(spec.kind, "records")
    records = sorted(records, key=lambda r: r.frame_index)
    if spec.kind == "distribution_bars":
        return _distribution(spec.title, records)
    if spec.kind == "timeline":
        return _timeline(spec.title, records)
    if spec.kind == "actual_vs_detected":
        return _actual_vs_detected(spec.title, records)
    return _thresholds(spec.title, records)


def render_all(records: Sequence[DetectionRecord], out_dir: str | Path,
               matrix: ConfusionMatrix | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for kind in KINDS:
        spec = ChartSpec(kind, TITLES[kind], str(out_dir / FILENAMES[kind]))
        Path(spec.output_path).write_bytes(render_chart(spec, records, matrix))
        written.append(Path(spec.output_path))
    return written


# --- decorated frames -------------------------------------------------------------

def add_border(pixels: np.ndarray, colour: tuple[float, float, float], width: int = BORDER) -> np.ndarray:
    out = np.array(pixels, dtype=np.float64)
    out[:width] = colour
    out[-width:] = colour
    out[:, :width] = colour
    out[:, -width:] = colour
    return out


def border_colour(record: DetectionRecord) -> tuple[float, float, float] | None:
    """Green for true positives, red for false positives and false negatives."""
    if record.truth not in ("attacked", "clean"):
        raise UnknownTruth(record.frame_index)
    attacked = record.truth == "attacked"
    if attacked and record.flagged:
        return (0.0, 1.0, 0.0)
    if attacked != record.flagged:
        return (1.0, 0.0, 0.0)
    return None


def decorate_frames(records: Sequence[DetectionRecord], manifest: DatasetManifest,
                    src_root: str | Path, out_dir: str | Path) -> int:
    """Write every frame under ``out_dir/decorated/`` with its outcome border."""
    src_root, out_dir = Path(src_root), Path(out_dir)
    by_index = {r.frame_index: r for r in records}
    written = 0
    for e in manifest.entries:
        if e.index not in by_index:
            raise ValueError(f"no detection record for frame {e.index}")
        colour = border_colour(by_index[e.index])
        dst = out_dir / "decorated" / output_relpath(e.path)
        if colour is None:
            try:
                dst.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(src_root / e.path, dst)
            except OSError as exc:
                raise IoError(dst, exc.strerror or str(exc)) from exc
        else:
            frame = load_frame(src_root / e.path, e.index)
            save_frame(frame.with_pixels(add_border(frame.pixels, colour)), dst)
        written += 1
    return written
