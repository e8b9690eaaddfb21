import numpy as np
import pytest

from advfilter.frame_io import Frame
from advfilter.pipeline import DetectionRecord
from advfilter.synth import synthetic_frames


def reference_records(seed: int = 0) -> list[DetectionRecord]:
    """199 frames: 77 attacked (all flagged), 13 clean flagged, 109 clean passed."""
    rng = np.random.default_rng(seed)
    kinds = ["tp"] * 77 + ["fp"] * 13 + ["tn"] * 109
    kinds = [kinds[i] for i in rng.permutation(len(kinds))]
    threshold = 0.6
    out = []
    for i, kind in enumerate(kinds):
        flagged = kind != "tn"
        score = 0.6 + 0.3 * rng.random() + 1e-3 if flagged else 0.4 + 0.19 * rng.random()
        out.append(DetectionRecord(i, score, threshold, flagged,
                                   "attacked" if kind == "tp" else "clean",
                                   0.05 if kind == "tp" else None))
    return out


@pytest.fixture(scope="session")
def reference_run():
    return reference_records()


@pytest.fixture(scope="session")
def video():
    return synthetic_frames(200, 64, 64, seed=0)


def random_frame(rng, h=8, w=8, index=0) -> Frame:
    return Frame(index, rng.random((h, w, 3)))
