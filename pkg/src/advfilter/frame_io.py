"""Frame containers and the on-disk formats: Y4M video, binary PPM, manifest JSON.

Pixels are kept as float64 arrays of shape ``(height, width, 3)`` in C order,
which is exactly the row-major, RGB-interleaved layout of a P6 payload.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import BinaryIO, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    BadMaxval,
    IoError,
    MalformedHeader,
    SchemaViolation,
    TruncatedFrame,
    TruncatedPixelData,
    UnsupportedColorspace,
)

Y4M_MAGIC = b"YUV4MPEG2"
SUPPORTED_COLORSPACES = ("420", "420jpeg", "420mpeg2", "444")
ROLES = ("clean", "adversarial")

# longest header line we are willing to scan before declaring it malformed
_MAX_HEADER = 4096


@dataclass(frozen=True, eq=False)
class Frame:
    """One decoded RGB frame; intensities in [0, 1]."""

    index: int
    pixels: np.ndarray

    def __post_init__(self):
        if not isinstance(self.index, (int, np.integer)) or self.index < 0:
            raise ValueError(f"frame index must be a nonnegative integer, got {self.index!r}")
        px = np.array(self.pixels, dtype=np.float64, order="C")
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"pixels must have shape (height, width, 3), got {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel intensities must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "index", int(self.index))
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def with_pixels(self, pixels: np.ndarray) -> "Frame":
        return Frame(self.index, pixels)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.index == other.index and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


# --- Y4M ---------------------------------------------------------------------

class Y4MHeader(NamedTuple):
    width: int
    height: int
    fps_num: int
    fps_den: int
    colorspace: str


def _plane_sizes(header: Y4MHeader) -> tuple[int, int, int]:
    w, h = header.width, header.height
    if header.colorspace == "444":
        return w * h, w * h, w * h
    chroma = ((w + 1) // 2) * ((h + 1) // 2)
    return w * h, chroma, chroma


def _parse_y4m_header(line: bytes) -> Y4MHeader:
    tokens = line.split(b" ")
    if tokens[0] != Y4M_MAGIC:
        raise MalformedHeader("stream does not start with YUV4MPEG2 magic")
    width = height = None
    fps = None
    colorspace = "420jpeg"
    for tok in tokens[1:]:
        if not tok:
            continue
        tag, value = chr(tok[0]), tok[1:].decode("ascii", errors="replace")
        try:
            if tag == "W":
                width = int(value)
            elif tag == "H":
                height = int(value)
            elif tag == "F":
                num, den = value.split(":")
                fps = (int(num), int(den))
            elif tag == "C":
                colorspace = value
        except ValueError:
            raise MalformedHeader(f"bad header parameter {tok!r}") from None
    if width is None or height is None or fps is None:
        raise MalformedHeader("header must declare W, H and F")
    if width < 1 or height < 1 or fps[0] < 1 or fps[1] < 1:
        raise MalformedHeader("W, H and F must be positive")
    if colorspace not in SUPPORTED_COLORSPACES:
        raise UnsupportedColorspace(f"colorspace C{colorspace} is not supported")
    return Y4MHeader(width, height, fps[0], fps[1], colorspace)


def ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    """BT.601 full-range conversion of byte-valued planes to RGB in [0, 1]."""
    y = y.astype(np.float64)
    cb = cb.astype(np.float64) - 128.0
    cr = cr.astype(np.float64) - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.clip(np.stack([r, g, b], axis=-1) / 255.0, 0.0, 1.0)


def rgb_to_ycbcr(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`ycbcr_to_rgb`, returning float planes on the 0..255 scale."""
    r, g, b = (rgb[..., k] * 255.0 for k in range(3))
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return y, cb, cr


def _decode_payload(payload: bytes, header: Y4MHeader, index: int) -> Frame:
    w, h = header.width, header.height
    ny, nc, _ = _plane_sizes(header)
    buf = np.frombuffer(payload, dtype=np.uint8)
    y = buf[:ny].reshape(h, w)
    if header.colorspace == "444":
        cb = buf[ny:2 * ny].reshape(h, w)
        cr = buf[2 * ny:].reshape(h, w)
    else:
        cw, ch = (w + 1) // 2, (h + 1) // 2
        cb = buf[ny:ny + nc].reshape(ch, cw)
        cr = buf[ny + nc:].reshape(ch, cw)
        rows = np.arange(h) // 2
        cols = np.arange(w) // 2
        cb = cb[rows][:, cols]
        cr = cr[rows][:, cols]
    return Frame(index, ycbcr_to_rgb(y, cb, cr))


def parse_y4m(data: bytes | BinaryIO) -> tuple[Y4MHeader, list[Frame]]:
    """Decode a YUV4MPEG2 stream into RGB frames, indexed from 0 in stream order."""
    if not isinstance(data, (bytes, bytearray, memoryview)):
        data = data.read()
    data = bytes(data)
    end = data.find(b"\n", 0, _MAX_HEADER)
    if end < 0:
        if not data.startswith(Y4M_MAGIC[: len(data)]) or not data:
            raise MalformedHeader("stream does not start with YUV4MPEG2 magic")
        raise MalformedHeader("unterminated stream header")
    header = _parse_y4m_header(data[:end])
    frame_bytes = sum(_plane_sizes(header))

    frames: list[Frame] = []
    pos = end + 1
    while pos < len(data):
        rest = data[pos:pos + 5]
        if len(rest) < 5:
            if b"FRAME".startswith(rest):
                raise TruncatedFrame(f"frame {len(frames)}: stream ends inside FRAME marker")
            raise MalformedHeader(f"frame {len(frames)}: expected FRAME marker")
        if rest != b"FRAME":
            raise MalformedHeader(f"frame {len(frames)}: expected FRAME marker")
        nl = data.find(b"\n", pos, pos + _MAX_HEADER)
        if nl < 0:
            raise TruncatedFrame(f"frame {len(frames)}: unterminated FRAME header")
        start = nl + 1
        stop = start + frame_bytes
        if stop > len(data):
            raise TruncatedFrame(
                f"frame {len(frames)}: payload has {len(data) - start} of {frame_bytes} bytes"
            )
        frames.append(_decode_payload(data[start:stop], header, len(frames)))
        pos = stop
    return header, frames


def _subsample_420(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    padded = np.pad(plane, ((0, h % 2), (0, w % 2)), mode="edge")
    return padded.reshape(padded.shape[0] // 2, 2, padded.shape[1] // 2, 2).mean(axis=(1, 3))


def _to_bytes(plane: np.ndarray) -> bytes:
    return np.clip(np.floor(plane + 0.5), 0, 255).astype(np.uint8).tobytes()


def write_y4m(frames: Sequence[Frame], fps_num: int = 10, fps_den: int = 1,
              colorspace: str = "444") -> bytes:
    """Encode frames as a YUV4MPEG2 stream (2x2-averaged chroma for 4:2:0)."""
    if not frames:
        raise ValueError("need at least one frame to infer dimensions")
    if colorspace not in SUPPORTED_COLORSPACES:
        raise UnsupportedColorspace(f"colorspace C{colorspace} is not supported")
    h, w = frames[0].height, frames[0].width
    out = [f"YUV4MPEG2 W{w} H{h} F{fps_num}:{fps_den} Ip A1:1 C{colorspace}\n".encode()]
    for fr in frames:
        if (fr.height, fr.width) != (h, w):
            raise ValueError("all frames must share dimensions")
        y, cb, cr = rgb_to_ycbcr(fr.pixels)
        if colorspace != "444":
            cb, cr = _subsample_420(cb), _subsample_420(cr)
        out += [b"FRAME\n", _to_bytes(y), _to_bytes(cb), _to_bytes(cr)]
    return b"".join(out)


# --- PPM ---------------------------------------------------------------------

def _ppm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping '#' comments.

    Returns the tokens and the offset of the single whitespace byte that
    terminates the last one.
    """
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos] in b" \t\r\n":
            pos += 1
        if pos < n and data[pos] == ord("#"):
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise MalformedHeader("unterminated comment in PPM header")
            pos = nl + 1
            continue
        start = pos
        while pos < n and data[pos] not in b" \t\r\n#":
            pos += 1
        if pos == start or pos >= n:
            raise MalformedHeader("PPM header is incomplete")
        tokens.append(data[start:pos])
    if data[pos] not in b" \t\r\n":
        raise MalformedHeader("PPM header must end with a single whitespace byte")
    return tokens, pos


def read_ppm(data: bytes, index: int = 0) -> Frame:
    data = bytes(data)
    magic, width, height, maxval = None, 0, 0, 0
    tokens, pos = _ppm_tokens(data, 4)
    magic = tokens[0]
    if magic != b"P6":
        raise MalformedHeader(f"expected P6 magic, got {magic[:8]!r}")
    try:
        width, height, maxval = (int(t.decode("ascii")) for t in tokens[1:])
    except (ValueError, UnicodeDecodeError):
        raise MalformedHeader("PPM width, height and maxval must be decimal integers") from None
    if width < 1 or height < 1:
        raise MalformedHeader("PPM dimensions must be positive")
    if maxval != 255:
        raise BadMaxval(f"maxval must be 255, got {maxval}")
    start = pos + 1
    need = width * height * 3
    if len(data) - start < need:
        raise TruncatedPixelData(f"expected {need} pixel bytes, found {len(data) - start}")
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=start)
    return Frame(index, raw.reshape(height, width, 3) / 255.0)


def quantize(pixels: np.ndarray) -> np.ndarray:
    """Map [0, 1] intensities to bytes with round-half-up."""
    return np.floor(np.asarray(pixels) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(frame: Frame) -> bytes:
    header = f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii")
    return header + quantize(frame.pixels).tobytes()


def load_frame(path: str | Path, index: int = 0) -> Frame:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from exc
    return read_ppm(data, index)


def save_frame(frame: Frame, path: str | Path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(write_ppm(frame))
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from exc


# --- dataset manifest --------------------------------------------------------

def epsilon_tag(epsilon: float) -> str:
    return repr(float(epsilon)).replace(".", "p")


def output_relpath(path: str) -> Path:
    """``path`` with root and ``..`` parts dropped, safe to join under an output directory."""
    return Path(*[p for p in PurePosixPath(path).parts if p not in ("/", "..")])


def clean_name(index: int) -> str:
    return f"frame_{index:06d}.ppm"


def adversarial_name(index: int, epsilon: float) -> str:
    return f"frame_{index:06d}_eps{epsilon_tag(epsilon)}.ppm"


@dataclass(frozen=True)
class ManifestEntry:
    index: int
    path: str
    role: str
    epsilon: float | None = None

    @property
    def sort_key(self) -> tuple[int, int, float]:
        return (self.index, ROLES.index(self.role), self.epsilon or 0.0)


@dataclass(frozen=True)
class DatasetManifest:
    source_path: str
    fps_num: int
    fps_den: int
    width: int
    height: int
    entries: tuple[ManifestEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        for i, e in enumerate(entries):
            where = f"frames[{i}]"
            if e.role not in ROLES:
                raise SchemaViolation(f"{where}.role", f"must be one of {ROLES}, got {e.role!r}")
            if (e.role == "adversarial") != (e.epsilon is not None):
                raise SchemaViolation(f"{where}.epsilon", "present iff role is adversarial")
            if i and not entries[i - 1].sort_key < e.sort_key:
                raise SchemaViolation(where, "entries must be strictly sorted by index then role")

    @property
    def fps(self) -> float:
        return self.fps_num / self.fps_den

    @property
    def frame_count(self) -> int:
        return len({e.index for e in self.entries})

    def with_entries(self, entries: Iterable[ManifestEntry]) -> "DatasetManifest":
        ordered = tuple(sorted(entries, key=lambda e: e.sort_key))
        return DatasetManifest(self.source_path, self.fps_num, self.fps_den,
                               self.width, self.height, ordered)

    def to_json(self) -> dict:
        frames = []
        for e in self.entries:
            item = {"index": e.index, "path": e.path, "role": e.role}
            if e.epsilon is not None:
                item["epsilon"] = e.epsilon
            frames.append(item)
        return {
            "source": self.source_path,
            "fps_num": self.fps_num,
            "fps_den": self.fps_den,
            "width": self.width,
            "height": self.height,
            "frames": frames,
        }


_TOP_KEYS = {"source": str, "fps_num": int, "fps_den": int, "width": int, "height": int,
             "frames": list}
_ENTRY_KEYS = {"index": int, "path": str, "role": str}


def _check_type(value, expected, key_path: str):
    ok = isinstance(value, expected) and not (expected is int and isinstance(value, bool))
    if not ok:
        raise SchemaViolation(key_path, f"expected {expected.__name__}, got {type(value).__name__}")


def manifest_from_json(obj) -> DatasetManifest:
    if not isinstance(obj, dict):
        raise SchemaViolation("$", "manifest must be a JSON object")
    for key in obj:
        if key not in _TOP_KEYS:
            raise SchemaViolation(f"$.{key}", "unknown key")
    for key, typ in _TOP_KEYS.items():
        if key not in obj:
            raise SchemaViolation(f"$.{key}", "missing key")
        _check_type(obj[key], typ, f"$.{key}")
    for key in ("fps_num", "fps_den", "width", "height"):
        if obj[key] < 1:
            raise SchemaViolation(f"$.{key}", "must be positive")

    entries = []
    for i, item in enumerate(obj["frames"]):
        where = f"$.frames[{i}]"
        if not isinstance(item, dict):
            raise SchemaViolation(where, "entry must be an object")
        for key in item:
            if key not in _ENTRY_KEYS and key != "epsilon":
                raise SchemaViolation(f"{where}.{key}", "unknown key")
        for key, typ in _ENTRY_KEYS.items():
            if key not in item:
                raise SchemaViolation(f"{where}.{key}", "missing key")
            _check_type(item[key], typ, f"{where}.{key}")
        if item["index"] < 0:
            raise SchemaViolation(f"{where}.index", "must be nonnegative")
        eps = item.get("epsilon")
        if eps is not None:
            if isinstance(eps, bool) or not isinstance(eps, (int, float)) or not math.isfinite(eps):
                raise SchemaViolation(f"{where}.epsilon", "must be a finite number")
            eps = float(eps)
        entries.append(ManifestEntry(item["index"], item["path"], item["role"], eps))

    try:
        return DatasetManifest(obj["source"], obj["fps_num"], obj["fps_den"],
                               obj["width"], obj["height"], tuple(entries))
    except SchemaViolation as exc:
        raise SchemaViolation("$." + exc.key_path, str(exc).split(": ", 1)[1]) from None


def dumps_manifest(manifest: DatasetManifest) -> str:
    return json.dumps(manifest.to_json(), indent=2) + "\n"


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps_manifest(manifest), encoding="utf-8")
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from exc


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from exc
    except UnicodeDecodeError:
        raise SchemaViolation("$", "manifest is not UTF-8 text") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation("$", f"invalid JSON: {exc.msg}") from None
    return manifest_from_json(obj)


def extract_video(y4m_path: str | Path, out_dir: str | Path) -> DatasetManifest:
    """Split a Y4M file into ``out_dir/clean/frame_%06d.ppm`` plus ``manifest.json``."""
    y4m_path, out_dir = Path(y4m_path), Path(out_dir)
    try:
        data = y4m_path.read_bytes()
    except OSError as exc:
        raise IoError(y4m_path, exc.strerror or str(exc)) from exc
    header, frames = parse_y4m(data)
    entries = []
    for fr in frames:
        rel = f"clean/{clean_name(fr.index)}"
        save_frame(fr, out_dir / rel)
        entries.append(ManifestEntry(fr.index, rel, "clean"))
    manifest = DatasetManifest(y4m_path.name, header.fps_num, header.fps_den,
                               header.width, header.height, tuple(entries))
    write_manifest(manifest, out_dir / "manifest.json")
    return manifest
