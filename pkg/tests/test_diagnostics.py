import math

import numpy as np
import pytest

from dran import diagnostics as diag
from dran.data import SeriesPanel, ShiftSpec, synth_generate
from dran.tensor import Tensor


def test_single_sample_peak_height():
    # one kernel at 0 with h=0.1 peaks at 1/(0.1*sqrt(2*pi))
    est = diag.kde([0.0], h=0.1)
    peak = est.density.max()
    assert peak == pytest.approx(1.0 / (0.1 * math.sqrt(2 * math.pi)), rel=1e-3)


def test_density_integrates_to_one():
    r = np.random.default_rng(0)
    for _ in range(5):
        est = diag.kde(r.normal(size=200), h=0.1)
        total = np.trapezoid(est.density, est.grid)
        assert abs(total - 1.0) < 1e-3


def test_printed_constant_does_not_normalize():
    # 1/(2*pi) in place of 1/sqrt(2*pi) shrinks the curve by sqrt(2*pi)^-1
    normed = diag.kde([0.0, 1.0], h=0.1)
    printed = diag.kde([0.0, 1.0], h=0.1, printed_constant=True)
    ratio = np.trapezoid(printed.density, printed.grid) / \
        np.trapezoid(normed.density, normed.grid)
    assert ratio == pytest.approx(1.0 / math.sqrt(2 * math.pi), rel=1e-12)


def test_even_function_for_symmetric_samples():
    est = diag.kde([-1.0, 1.0], h=0.1, grid_size=513)
    np.testing.assert_allclose(est.density, est.density[::-1], atol=1e-12)


def test_kde_permutation_invariant():
    r = np.random.default_rng(1)
    s = r.normal(size=64)
    a = diag.kde(s, h=0.1)
    b = diag.kde(r.permutation(s), h=0.1)
    np.testing.assert_allclose(a.density, b.density, atol=1e-12)
    np.testing.assert_array_equal(a.grid, b.grid)


def test_kde_empty_errors():
    with pytest.raises(ValueError):
        diag.kde([])


def test_kl_identical_sets_is_zero():
    s = np.random.default_rng(2).normal(size=500)
    p, q = diag.kde(s, 0.1), diag.kde(s, 0.1)
    assert abs(diag.kl_divergence(p, q)) < 1e-9


def test_kl_gaussian_closed_form():
    # KL(N(0,1) || N(1,1)) = 0.5
    r = np.random.default_rng(3)
    p = diag.kde(r.normal(0.0, 1.0, size=10_000), h=0.1)
    q = diag.kde(r.normal(1.0, 1.0, size=10_000), h=0.1)
    assert diag.kl_divergence(p, q) == pytest.approx(0.5, abs=0.05)


def test_kl_nonnegative_up_to_quadrature():
    r = np.random.default_rng(4)
    for _ in range(10):
        p = diag.kde(r.normal(size=100), h=0.1)
        q = diag.kde(r.normal(r.uniform(-1, 1), 1.0, size=100), h=0.1)
        assert diag.kl_divergence(p, q) >= -1e-9


def make_panel(values):
    values = np.asarray(values, dtype=np.float64)
    t, n, _ = values.shape
    return SeriesPanel(Tensor(values), np.arange(t, dtype=np.int64),
                       [f"n{i}" for i in range(n)])


def test_detect_shift_same_window_not_shifted():
    panel = make_panel(np.random.default_rng(5).normal(size=(50, 2, 1)))
    v = diag.detect_shift(panel, 0, (0, 25), (0, 25), delta=0.05)
    assert not v.shifted
    assert v.kl < 1e-9


def test_detect_shift_mean_jump():
    spec = ShiftSpec(shift_at=100, mean_jump=5.0)
    panel = synth_generate(4, 200, spec, seed=7)
    v = diag.detect_shift(panel, 0, (0, 80), (120, 200), delta=0.1)
    assert v.shifted
    assert v.kl > 0.1


def test_detect_shift_infinite_delta():
    panel = make_panel(np.random.default_rng(6).normal(size=(40, 2, 1)))
    v = diag.detect_shift(panel, 1, (0, 20), (20, 40), delta=math.inf)
    assert not v.shifted


def test_detect_shift_bad_node():
    panel = make_panel(np.zeros((10, 2, 1)) + 1.0)
    with pytest.raises(IndexError):
        diag.detect_shift(panel, 5, (0, 5), (5, 10))


def test_mae_mape_trivial_cases():
    assert diag.mae([2.0], [1.0]) == pytest.approx(1.0)
    assert diag.mape([2.0], [1.0]) == pytest.approx(100.0)
    assert diag.mae([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert diag.mape([1.0, 2.0], [1.0, 2.0]) == 0.0


def test_mae_translation():
    x = np.random.default_rng(8).normal(size=(4, 5))
    assert diag.mae(x + 0.37, x) == pytest.approx(0.37, abs=1e-12)


def test_metrics_match_loop_oracle():
    r = np.random.default_rng(9)
    pred = r.normal(size=(3, 4))
    target = r.normal(size=(3, 4)) + 2.0  # keep clear of the mape floor
    tot = 0.0
    for i in range(3):
        for j in range(4):
            tot += abs(pred[i, j] - target[i, j])
    assert diag.mae(pred, target) == pytest.approx(tot / 12, abs=1e-12)

    tot, cnt = 0.0, 0
    for i in range(3):
        for j in range(4):
            if abs(target[i, j]) >= 1e-3:
                tot += abs((pred[i, j] - target[i, j]) / target[i, j])
                cnt += 1
    assert diag.mape(pred, target) == pytest.approx(100 * tot / cnt, abs=1e-12)


def test_mape_floor_skips_small_targets():
    pred = np.array([1.0, 1.0])
    target = np.array([1e-4, 2.0])
    # only the second element participates
    assert diag.mape(pred, target) == pytest.approx(50.0)


def test_mape_all_below_floor_errors():
    with pytest.raises(ValueError, match="no valid elements"):
        diag.mape([1.0], [1e-9])
