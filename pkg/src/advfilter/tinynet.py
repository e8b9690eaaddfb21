"""Compact seeded CNN used as the gradient source for FGSM.

Architecture (input 3x64x64):

    conv3x3(3->8, pad 1) -> ReLU -> avgpool 2x2
    conv3x3(8->16, pad 1) -> ReLU -> avgpool 2x2
    flatten (16*16*16 = 4096, channel-major) -> dense(4096->10) -> softmax

Weights are never trained; they are drawn once from a SplitMix64 stream so
every number downstream is reproducible without shipping a weights file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, ShapeMismatch
from .frame_io import Frame

INPUT_SIZE = 64
N_CLASSES = 10
_MASK64 = (1 << 64) - 1

# (name, shape, fan_in, fan_out); the PRNG is consumed in this order
LAYER_SHAPES = (
    ("conv1_w", (8, 3, 3, 3), 3 * 9, 8 * 9),
    ("conv2_w", (16, 8, 3, 3), 8 * 9, 16 * 9),
    ("dense_w", (N_CLASSES, 16 * 16 * 16), 16 * 16 * 16, N_CLASSES),
)


class SplitMix64:
    """Sebastiano Vigna's SplitMix64 generator."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ModelParams:
    seed: int
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    dense_w: np.ndarray
    dense_b: np.ndarray

    def __post_init__(self):
        expected = {"conv1_w": (8, 3, 3, 3), "conv1_b": (8,), "conv2_w": (16, 8, 3, 3),
                    "conv2_b": (16,), "dense_w": (N_CLASSES, 4096), "dense_b": (N_CLASSES,)}
        for name, shape in expected.items():
            arr = _frozen(getattr(self, name))
            if arr.shape != shape:
                raise ShapeMismatch(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite weights")
            object.__setattr__(self, name, arr)

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b,
                self.dense_w, self.dense_b)

    def replace(self, **arrays) -> "ModelParams":
        fields = dict(seed=self.seed, conv1_w=self.conv1_w, conv1_b=self.conv1_b,
                      conv2_w=self.conv2_w, conv2_b=self.conv2_b,
                      dense_w=self.dense_w, dense_b=self.dense_b)
        fields.update(arrays)
        return ModelParams(**fields)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.seed == other.seed and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    __hash__ = None


def init_params(seed: int) -> ModelParams:
    """Xavier-uniform weights, zero biases, drawn conv1 -> conv2 -> dense in row-major order."""
    rng = SplitMix64(seed)
    weights = {}
    for name, shape, fan_in, fan_out in LAYER_SHAPES:
        a = xavier_bound(fan_in, fan_out)
        n = int(np.prod(shape))
        u = np.array([rng.next_float() for _ in range(n)])
        weights[name] = ((2.0 * u - 1.0) * a).reshape(shape)
    return ModelParams(
        seed=seed & _MASK64,
        conv1_w=weights["conv1_w"], conv1_b=np.zeros(8),
        conv2_w=weights["conv2_w"], conv2_b=np.zeros(16),
        dense_w=weights["dense_w"], dense_b=np.zeros(N_CLASSES),
    )


def dump_params(params: ModelParams) -> bytes:
    """Seed as u64 followed by every weight as little-endian f64, in layer order."""
    body = np.concatenate([a.ravel() for a in params.arrays()]).astype("<f8")
    return struct.pack("<Q", params.seed) + body.tobytes()


def load_params(data: bytes) -> ModelParams:
    sizes = [8 * 27, 8, 16 * 72, 16, N_CLASSES * 4096, N_CLASSES]
    if len(data) != 8 + 8 * sum(sizes):
        raise FormatError(f"params blob has {len(data)} bytes, expected {8 + 8 * sum(sizes)}")
    (seed,) = struct.unpack_from("<Q", data)
    flat = np.frombuffer(data, dtype="<f8", offset=8).astype(np.float64)
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    return ModelParams(seed, parts[0].reshape(8, 3, 3, 3), parts[1],
                       parts[2].reshape(16, 8, 3, 3), parts[3],
                       parts[4].reshape(N_CLASSES, 4096), parts[5])


def save_params(params: ModelParams, path: str | Path) -> None:
    Path(path).write_bytes(dump_params(params))


# --- input preparation --------------------------------------------------------

def box_resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Area-weighted averaging matrix of shape (n_out, n_in)."""
    scale = n_in / n_out
    edges_out = np.arange(n_out + 1) * scale
    lo = edges_out[:-1, None]
    hi = edges_out[1:, None]
    j = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, j + 1) - np.maximum(lo, j), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ModelInput:
    tensor: np.ndarray

    def __post_init__(self):
        t = _frozen(self.tensor)
        if t.shape != (3, INPUT_SIZE, INPUT_SIZE):
            raise ShapeMismatch(f"model input must be 3x{INPUT_SIZE}x{INPUT_SIZE}, got {t.shape}")
        if not np.all(np.isfinite(t)) or t.min() < 0.0 or t.max() > 1.0:
            raise ValueError("model input intensities must lie in [0, 1]")
        object.__setattr__(self, "tensor", t)

    @classmethod
    def from_frame(cls, frame: Frame) -> "ModelInput":
        ry = box_resample_matrix(frame.height, INPUT_SIZE)
        rx = box_resample_matrix(frame.width, INPUT_SIZE)
        chw = np.transpose(frame.pixels, (2, 0, 1))
        out = ry @ chw @ rx.T
        return cls(np.clip(out, 0.0, 1.0))


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    probabilities: np.ndarray
    label: int


# --- layers -------------------------------------------------------------------

def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Stride-1, zero-pad-1 cross-correlation: (C,H,W) x (O,C,3,3) -> (O,H,W)."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # C,H,W,3,3
    out = np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))
    if b is not None:
        out += b[:, None, None]
    return out


def conv3x3_input_grad(gy: np.ndarray, w: np.ndarray) -> np.ndarray:
    # transpose of a same-padded correlation is a correlation with the flipped, channel-swapped kernel
    return conv3x3(gy, w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))


def avgpool2(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def avgpool2_grad(gy: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(gy, 2, axis=1), 2, axis=2) * 0.25


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


def _check_input(x) -> np.ndarray:
    if isinstance(x, ModelInput):
        return x.tensor
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (3, INPUT_SIZE, INPUT_SIZE):
        raise ShapeMismatch(f"model input must be 3x{INPUT_SIZE}x{INPUT_SIZE}, got {x.shape}")
    return x


def _forward(params: ModelParams, x: np.ndarray):
    z1 = conv3x3(x, params.conv1_w, params.conv1_b)
    a1 = np.maximum(z1, 0.0)
    p1 = avgpool2(a1)
    z2 = conv3x3(p1, params.conv2_w, params.conv2_b)
    a2 = np.maximum(z2, 0.0)
    p2 = avgpool2(a2)
    logits = params.dense_w @ p2.ravel() + params.dense_b
    return logits, (z1, z2, p2.shape)


def forward(params: ModelParams, x: ModelInput | np.ndarray) -> Prediction:
    logits, _ = _forward(params, _check_input(x))
    probs = softmax(logits)
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return Prediction(logits, probs, int(np.argmax(logits)))


def loss_and_input_grad(params: ModelParams, x: ModelInput | np.ndarray,
                        target_label: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of ``target_label`` and its exact gradient w.r.t. the input."""
    if not 0 <= target_label < N_CLASSES:
        raise ValueError(f"target_label must be in 0..{N_CLASSES - 1}")
    x = _check_input(x)
    logits, (z1, z2, p2_shape) = _forward(params, x)
    z = logits - logits.max()
    log_norm = np.log(np.exp(z).sum())
    loss = float(log_norm - z[target_label])

    g_logits = np.exp(z - log_norm)
    g_logits[target_label] -= 1.0
    g = (params.dense_w.T @ g_logits).reshape(p2_shape)
    g = avgpool2_grad(g) * (z2 > 0)
    g = conv3x3_input_grad(g, params.conv2_w)
    g = avgpool2_grad(g) * (z1 > 0)
    g = conv3x3_input_grad(g, params.conv1_w)
    return loss, g


def activation_pattern(params: ModelParams, x: ModelInput | np.ndarray) -> np.ndarray:
    """Concatenated ReLU on/off masks; the loss is smooth wherever this is constant."""
    _, (z1, z2, _) = _forward(params, _check_input(x))
    return np.concatenate([(z1 > 0).ravel(), (z2 > 0).ravel()])
