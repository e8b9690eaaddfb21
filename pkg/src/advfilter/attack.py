"""FGSM perturbation of frames and of whole datasets."""

from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .frame_io import (
    DatasetManifest,
    Frame,
    ManifestEntry,
    adversarial_name,
    load_frame,
    save_frame,
)
from .parallel import ordered_map
from .tinynet import INPUT_SIZE, ModelInput, ModelParams, forward, init_params, loss_and_input_grad

DEFAULT_EPSILONS = (0.01, 0.02, 0.05, 0.1, 0.2)


@dataclass(frozen=True)
class AttackConfig:
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    clip_min: float = 0.0
    clip_max: float = 1.0
    seed: int = 42

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        object.__setattr__(self, "epsilons", eps)
        for e in eps:
            if not 0.0 < e <= 1.0:
                raise ValueError(f"epsilon {e} outside (0, 1]")
        if any(b <= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly increasing")
        if not self.clip_min < self.clip_max:
            raise ValueError("clip_min must be below clip_max")


def gradient_sign(params: ModelParams, frame: Frame) -> np.ndarray:
    """sign(dJ/dx) at model resolution, nearest-neighbour upsampled to (H, W, 3).

    The target label is the model's own prediction on the frame.
    """
    x = ModelInput.from_frame(frame)
    label = forward(params, x).label
    _, grad = loss_and_input_grad(params, x, label)
    s = np.sign(grad)  # sign(0) == 0
    rows = (np.arange(frame.height) * INPUT_SIZE) // frame.height
    cols = (np.arange(frame.width) * INPUT_SIZE) // frame.width
    return np.transpose(s[:, rows][:, :, cols], (1, 2, 0))


def perturb(frame: Frame, sign: np.ndarray, epsilon: float,
            clip_min: float = 0.0, clip_max: float = 1.0) -> Frame:
    if epsilon == 0:
        return frame
    return frame.with_pixels(np.clip(frame.pixels + epsilon * sign, clip_min, clip_max))


def fgsm(params: ModelParams, frame: Frame, epsilon: float) -> Frame:
    """``clip(x + epsilon * sign(grad_x J), 0, 1)``; ``epsilon == 0`` returns the input."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if epsilon == 0:
        return frame
    return perturb(frame, gradient_sign(params, frame), epsilon)


def fgsm_levels(params: ModelParams, frame: Frame, epsilons: Sequence[float],
                clip_min: float = 0.0, clip_max: float = 1.0) -> list[Frame]:
    # the gradient does not depend on epsilon, so compute it once per frame
    sign = gradient_sign(params, frame)
    return [perturb(frame, sign, e, clip_min, clip_max) for e in epsilons]


@functools.lru_cache(maxsize=4)
def _params_for(seed: int) -> ModelParams:
    return init_params(seed)


def _attack_task(args) -> list[np.ndarray]:
    path, index, config = args
    frame = load_frame(path, index)
    levels = fgsm_levels(_params_for(config.seed), frame, config.epsilons,
                         config.clip_min, config.clip_max)
    return [f.pixels for f in levels]


def attack_dataset(manifest: DatasetManifest, config: AttackConfig, root: str | Path,
                   workers: int = 1) -> DatasetManifest:
    """Write one adversarial PPM per clean frame and epsilon under ``root/adversarial``.

    Returns the union manifest, ``clean * (1 + len(epsilons))`` entries.
    """
    root = Path(root)
    clean = [e for e in manifest.entries if e.role == "clean"]
    if len(clean) != len(manifest.entries):
        raise ValueError("attack_dataset expects a manifest of clean frames only")
    if not config.epsilons:
        return manifest
    tasks = [(root / e.path, e.index, config) for e in clean]
    results = ordered_map(_attack_task, tasks, workers)

    entries = list(manifest.entries)
    for entry, levels in zip(clean, results):
        for eps, pixels in zip(config.epsilons, levels):
            rel = f"adversarial/{adversarial_name(entry.index, eps)}"
            save_frame(Frame(entry.index, pixels), root / rel)
            entries.append(ManifestEntry(entry.index, rel, "adversarial", eps))
    return manifest.with_entries(entries)
