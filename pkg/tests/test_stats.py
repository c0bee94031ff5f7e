import numpy as np
import pytest

from osp_influence.stats import batch_bounds, confidence_interval, overlap


def test_confidence_interval_basic() -> None:
    samples = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    mean, half = confidence_interval(samples)
    assert mean == pytest.approx(3.0)
    # t(0.975, 4) = 2.776445, s = sqrt(2.5)
    assert half == pytest.approx(2.776445 * np.sqrt(2.5) / np.sqrt(5), rel=1e-5)


def test_confidence_interval_keeps_trailing_shape() -> None:
    samples = np.stack([np.eye(3) * k for k in range(1, 5)])
    mean, half = confidence_interval(samples)
    assert mean.shape == (3, 3)
    assert half.shape == (3, 3)
    np.testing.assert_allclose(np.diag(mean), [2.5] * 3)
    assert half[0, 1] == 0.0
    assert half[0, 0] > 0


def test_confidence_interval_wider_at_higher_confidence() -> None:
    samples = np.random.default_rng(0).normal(size=20)
    _, narrow = confidence_interval(samples, 0.9)
    _, wide = confidence_interval(samples, 0.99)
    assert wide > narrow


def test_single_observation_has_no_half_width() -> None:
    mean, half = confidence_interval(np.array([[0.5, 0.25]]))
    np.testing.assert_allclose(mean, [0.5, 0.25])
    assert np.all(np.isnan(half))


@pytest.mark.parametrize(
    "n_events, n_batches, expected",
    [
        (100, 4, [0, 25, 50, 75]),
        (10, 3, [0, 3, 6]),
        (5, 5, [0, 1, 2, 3, 4]),
    ],
)
def test_batch_bounds(n_events: int, n_batches: int, expected: list[int]) -> None:
    assert batch_bounds(n_events, n_batches) == expected


def test_overlap() -> None:
    result = overlap(np.array([1.0, 1.0]), np.array([0.1, 0.1]), np.array([1.15, 1.3]), np.array([0.1, 0.1]))
    assert result.tolist() == [True, False]
