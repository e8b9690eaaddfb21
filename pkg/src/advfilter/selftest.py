"""Built-in oracle checks run by ``advfilter selftest``."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import isoforest
from .evaluation import ConfusionMatrix, metrics
from .tinynet import activation_pattern, forward, init_params, loss_and_input_grad

FD_STEP = 1e-4
GRAD_TOL = 1e-3
# relative error is taken against max(|analytic|, |numeric|, this floor)
GRAD_FLOOR = 1e-8


def gradient_check(seed: int, n_coords: int = 64, h: float = FD_STEP) -> float:
    """Max relative error of the analytic input gradient vs central differences.

    Coordinates whose +-h stencil flips any ReLU are resampled: across a kink
    the central difference is not an estimate of the derivative.
    """
    params = init_params(seed)
    rng = np.random.default_rng(seed)
    x = rng.random((3, 64, 64))
    label = forward(params, x).label
    _, grad = loss_and_input_grad(params, x, label)
    worst = 0.0
    checked = 0
    while checked < n_coords:
        i = (int(rng.integers(3)), int(rng.integers(64)), int(rng.integers(64)))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        if not np.array_equal(activation_pattern(params, xp), activation_pattern(params, xm)):
            continue
        numeric = (loss_and_input_grad(params, xp, label)[0]
                   - loss_and_input_grad(params, xm, label)[0]) / (2 * h)
        denom = max(abs(grad[i]), abs(numeric), GRAD_FLOOR)
        worst = max(worst, abs(grad[i] - numeric) / denom)
        checked += 1
    return worst


def planted_outlier_rank(seed: int) -> bool:
    """99 points on a tight 28-D grid plus one point at distance 10: is it scored highest?"""
    rng = np.random.default_rng(seed)
    cluster = rng.choice(np.linspace(0.0, 1.0, 5), size=(99, 28))
    direction = rng.normal(size=28)
    outlier = cluster.mean(axis=0) + 10.0 * direction / np.linalg.norm(direction)
    X = np.vstack([cluster, outlier])
    forest = isoforest.fit(X, seed=seed)
    s = isoforest.score_samples(forest, X)
    return bool(s[-1] > s[:-1].max())


def singleton_isolation(seed: int) -> bool:
    X = np.array([0.0] * 50 + [1000.0])[:, None]
    forest = isoforest.fit(X, seed=seed)
    h = isoforest.mean_path_lengths(forest, X)
    return bool(h[-1] < h[:-1].mean())


REFERENCE_MATRIX = ConfusionMatrix(tp=77, fp=13, tn=109, fn=0, positive_class="attacked")


def metric_reproduction() -> bool:
    a = metrics(REFERENCE_MATRIX)
    c = metrics(REFERENCE_MATRIX.swapped())
    close = lambda v, ref: abs(v - ref) <= 1e-3  # noqa: E731
    return (close(a.acc, 0.935) and close(a.err, 0.065) and close(c.acc, 0.935)
            and close(c.err, 0.065) and close(c.sn, 0.893) and close(c.sp, 1.0)
            and close(c.prec, 1.0) and close(c.f1, 0.943))


def run(echo: Callable[[str], None] = print) -> bool:
    checks: list[tuple[str, Callable[[], tuple[bool, str]]]] = []

    def grad():
        errs = [gradient_check(s) for s in range(1, 6)]
        return max(errs) <= GRAD_TOL, f"max rel err {max(errs):.2e}"

    def outlier():
        hits = sum(planted_outlier_rank(s) for s in range(20))
        return hits == 20, f"{hits}/20 seeds"

    def singleton():
        hits = sum(singleton_isolation(s) for s in range(20))
        return hits == 20, f"{hits}/20 seeds"

    def c_and_score():
        c2 = isoforest.average_path_length(2)
        ok = math.isclose(c2, 2 * isoforest.EULER_GAMMA - 1, abs_tol=1e-15)
        ok &= isoforest.score_from_path_length(isoforest.average_path_length(256), 256) == 0.5
        return ok, f"c(2)={c2:.6f}"

    def reference_metrics():
        return metric_reproduction(), "ACC/ERR/SN/SP/PREC/F1"

    checks = [("gradient vs finite differences", grad),
              ("planted outlier ranked highest", outlier),
              ("singleton isolated faster than cluster", singleton),
              ("c(2) and score(c(psi)) identities", c_and_score),
              ("reference metric values", reference_metrics)]
    all_ok = True
    for name, fn in checks:
        ok, detail = fn()
        all_ok &= ok
        echo(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok
