import numpy as np

from advfilter.synth import synthetic_frames


def test_deterministic_and_seed_dependent():
    a = synthetic_frames(20, 16, 12, seed=5)
    assert a == synthetic_frames(20, 16, 12, seed=5)
    assert a != synthetic_frames(20, 16, 12, seed=6)


def test_shape_range_and_indices():
    frames = synthetic_frames(15, 20, 10, seed=1)
    assert [f.index for f in frames] == list(range(15))
    for f in frames:
        assert f.pixels.shape == (10, 20, 3)
        assert f.pixels.min() >= 0 and f.pixels.max() <= 1


def test_noise_free_content_moves_smoothly():
    frames = synthetic_frames(12, 32, 32, seed=0, noise=0.0)
    diffs = [np.abs(frames[i + 1].pixels - frames[i].pixels).mean() for i in range(10)]
    assert min(diffs) > 0
    assert max(diffs) < 0.05
