"""Seeded synthetic scenes for fixtures and demos.

A fixed-camera view: smooth sky/road gradient, a few soft coloured blobs
moving back and forth, and an illumination change, all on one shared cycle
of at most ``max_period`` frames, so a warmup of that
length sees the full range of clean content. Mild sensor noise is added.
"""

from __future__ import annotations

import numpy as np

from .frame_io import Frame


def synthetic_frames(n_frames: int = 200, width: int = 64, height: int = 64,
                     seed: int = 0, noise: float = 0.002, n_blobs: int = 3,
                     max_period: int = 40) -> list[Frame]:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    v = yy / max(height - 1, 1)
    u = xx / max(width - 1, 1)

    sky = rng.uniform(0.45, 0.75, 3)
    road = rng.uniform(0.15, 0.35, 3)
    horizon = rng.uniform(0.35, 0.55)
    blend = 1.0 / (1.0 + np.exp(-(v - horizon) * 12.0))
    base = (1 - blend)[..., None] * sky + blend[..., None] * road
    base = base + 0.08 * (u[..., None] - 0.5) * rng.uniform(-1, 1, 3)

    colours = rng.uniform(0.1, 0.9, (n_blobs, 3))
    radius = rng.uniform(0.08, 0.2, n_blobs)
    centre = rng.uniform(0.25, 0.75, (n_blobs, 2))
    amplitude = rng.uniform(0.05, 0.2, (n_blobs, 2))
    # a shared cycle keeps the joint scene state periodic, not just each blob
    period = rng.uniform(max_period / 2, max_period)
    phase = rng.uniform(0, 2 * np.pi, n_blobs)

    frames = []
    for t in range(n_frames):
        img = base * (1.0 + 0.05 * np.sin(2 * np.pi * t / period))
        for k in range(n_blobs):
            cx, cy = centre[k] + amplitude[k] * np.sin(2 * np.pi * t / period + phase[k])
            d2 = (u - cx) ** 2 + (v - cy) ** 2
            alpha = 0.8 * np.exp(-d2 / (2 * radius[k] ** 2))
            img = img * (1 - alpha[..., None]) + colours[k] * alpha[..., None]
        if noise:
            img = img + rng.normal(0.0, noise, img.shape)
        frames.append(Frame(t, np.clip(img, 0.0, 1.0)))
    return frames
