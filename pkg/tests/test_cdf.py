import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from waqr.cdf import (
    CdfConfig,
    evaluate_cdf,
    fit_conditional_cdf,
    local_linear_weights,
    n_bins,
    select_leaf_size,
)
from waqr.dataset import Dataset
from waqr.errors import DegeneracyError, GridError, ParameterError, ShapeError, SizeError

FAST = CdfConfig(n_trees=25, leaf_size=10)


def _linear_data(T, seed, noise=1.0, p=2):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((T, p))
    y = x @ np.linspace(1.0, 0.2, p) + noise * rng.standard_normal(T)
    return Dataset(x, y)


@pytest.fixture(scope="module")
def model():
    return fit_conditional_cdf(_linear_data(400, 0), FAST, rng_seed=3)


def test_bin_count():
    assert n_bins(200) == 6
    assert n_bins(50) == 4
    assert n_bins(20) == 4
    assert n_bins(2000) == 8
    assert n_bins(999, override=3) == 3


def test_bin_count_in_model():
    m = fit_conditional_cdf(_linear_data(200, 1), FAST)
    assert len(m.bins) == 6
    lo, hi = m.training_bounds
    assert_allclose(m.edges[[0, -1]], [lo, hi])


def test_boundary_conditions(model):
    lo, hi = model.training_bounds
    x = np.random.default_rng(5).standard_normal((7, 2))
    f = model.evaluate(x, np.array([lo - 1.0, lo - 1e-9, hi, hi + 3.0]))
    assert np.all(f[:, :2] == 0.0)
    assert np.all(f[:, 2:] == 1.0)


def test_output_in_unit_interval(model):
    rng = np.random.default_rng(8)
    x = 3.0 * rng.standard_normal((50, 2))
    grid = np.sort(rng.uniform(-8, 8, 300))
    f = evaluate_cdf(model, x, grid)
    assert f.shape == (50, 300)
    assert np.all((f >= 0.0) & (f <= 1.0))


def test_piecewise_constant_between_training_values(model):
    ys = model.y_sorted
    mids = (ys[:-1] + ys[1:]) / 2.0
    same = np.flatnonzero(model.bin_of(ys[:-1]) == model.bin_of(mids))[::25]
    assert same.size > 5
    x = np.random.default_rng(2).standard_normal((3, 2))
    f_left = model.evaluate(x, ys[same])
    f_mid = model.evaluate(x, mids[same])
    assert np.array_equal(f_left, f_mid)


@settings(max_examples=25, deadline=None)
@given(q=st.lists(st.floats(-4, 4), min_size=2, max_size=2))
def test_forest_weights_are_probabilities(model, q):
    for b in range(len(model.bins)):
        w = model.forest_weights(np.array(q), b)
        assert np.all(w >= 0.0)
        assert abs(w.sum() - 1.0) < 1e-9


def test_local_linear_rows_sum_to_one(model):
    rng = np.random.default_rng(1)
    xq = rng.standard_normal((20, 2))
    w = model.forest_weights(xq, 2)
    ell = local_linear_weights(w, model.x_train, xq)
    assert_allclose(ell.sum(axis=1), 1.0, atol=1e-9)


def test_uniform_weights_intercept_only():
    rng = np.random.default_rng(2)
    y = rng.standard_normal(80)
    v = (y <= 0.3).astype(float)
    w = np.full((1, 80), 1.0 / 80)
    ell = local_linear_weights(w, np.empty((80, 0)), np.empty((1, 0)))
    assert_allclose(ell @ v, [v.mean()], atol=1e-15)
    # with a covariate, uniform weights queried at the covariate mean give the same answer
    x = rng.standard_normal((80, 1))
    ell = local_linear_weights(w, x, x.mean(axis=0, keepdims=True))
    assert_allclose(ell @ v, [v.mean()], atol=1e-12)


def test_local_linear_reproduces_linear_response():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((60, 2))
    w = rng.uniform(0, 1, (3, 60))
    w /= w.sum(axis=1, keepdims=True)
    xq = rng.standard_normal((3, 2))
    v = 0.4 + x @ np.array([0.1, -0.3])
    ell = local_linear_weights(w, x, xq, ridge=0.0)
    assert_allclose(ell @ v, 0.4 + xq @ np.array([0.1, -0.3]), atol=1e-10)


def test_deterministic_response_gives_step():
    rng = np.random.default_rng(6)
    x = rng.uniform(-2, 2, (500, 1))
    y = 2.0 * x[:, 0]
    m = fit_conditional_cdf(Dataset(x, y), CdfConfig(n_trees=50, leaf_size=5), rng_seed=1)
    width = m.edges[1] - m.edges[0]
    grid = np.linspace(y.min(), y.max(), 400)
    for xq in (-1.2, -0.3, 0.5, 1.4):
        f = m.evaluate(np.array([xq]), grid)
        step = grid[np.argmax(f >= 0.5)]
        assert abs(step - 2.0 * xq) <= width
    # at the bin centres each forest was grown on exactly that indicator, so
    # away from the step the estimate is 0 or 1 to rounding
    xq = np.linspace(-1.9, 1.9, 39)[:, None]
    f = m.evaluate(xq, m.bins)
    away = np.abs(2.0 * xq - m.bins[None, :]) > 0.1
    assert np.max(np.minimum(f, 1.0 - f)[away]) < 1e-9


def test_independent_covariates_give_marginal():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2000, 2))
    y = rng.standard_normal(2000)
    m = fit_conditional_cdf(Dataset(x, y), CdfConfig(n_trees=50), rng_seed=2)
    grid = np.linspace(-2.5, 2.5, 101)
    emp = (y[:, None] <= grid[None, :]).mean(axis=0)
    f = m.evaluate(rng.uniform(-1, 1, (20, 2)), grid)
    assert np.max(np.abs(f - emp)) < 0.1


def test_determinism():
    d = _linear_data(300, 9)
    grid = np.linspace(-3, 3, 41)
    xq = np.random.default_rng(0).standard_normal((5, 2))
    a = fit_conditional_cdf(d, CdfConfig(n_trees=20), rng_seed=4).evaluate(xq, grid)
    b = fit_conditional_cdf(d, CdfConfig(n_trees=20), rng_seed=4).evaluate(xq, grid)
    assert np.array_equal(a, b)
    c = fit_conditional_cdf(d, CdfConfig(n_trees=20), rng_seed=5).evaluate(xq, grid)
    assert not np.array_equal(a, c)


def test_column_rescaling_leaves_estimate_unchanged():
    d = _linear_data(300, 10)
    grid = np.linspace(-3, 3, 31)
    xq = np.random.default_rng(1).standard_normal((4, 2))
    scale = np.array([1.0, 8.0])
    a = fit_conditional_cdf(d, FAST, 0).evaluate(xq, grid)
    b = fit_conditional_cdf(Dataset(d.x * scale, d.y), FAST, 0).evaluate(xq * scale, grid)
    assert_allclose(a, b, atol=1e-9)


def test_constant_columns_are_ignored():
    d = _linear_data(200, 11)
    with_const = Dataset(np.column_stack([np.ones(200), d.x]), d.y)
    grid = np.linspace(-2, 2, 21)
    xq = np.random.default_rng(3).standard_normal((3, 2))
    a = fit_conditional_cdf(d, FAST, 0).evaluate(xq, grid)
    b = fit_conditional_cdf(with_const, FAST, 0).evaluate(np.column_stack([np.ones(3), xq]), grid)
    assert_allclose(a, b, atol=1e-12)


def test_no_usable_covariates():
    rng = np.random.default_rng(12)
    y = rng.standard_normal(100)
    m = fit_conditional_cdf(Dataset(np.ones((100, 1)), y), FAST, 0)
    f = m.evaluate(np.ones((2, 1)), np.array([0.0]))
    assert f[0, 0] == f[1, 0]
    assert abs(f[0, 0] - np.mean(y <= 0.0)) < 0.15


def test_errors(model):
    with pytest.raises(ShapeError):
        model.evaluate(np.zeros(3), np.array([0.0]))
    with pytest.raises(GridError):
        model.evaluate(np.zeros(2), np.array([1.0, 0.0]))
    rng = np.random.default_rng(0)
    with pytest.raises(DegeneracyError):
        fit_conditional_cdf(Dataset(rng.standard_normal((60, 1)), np.ones(60)), FAST)
    with pytest.raises(SizeError):
        fit_conditional_cdf(_linear_data(40, 0), FAST)
    with pytest.raises(SizeError):
        fit_conditional_cdf(_linear_data(60, 0), CdfConfig(n_trees=5, leaf_size=40))
    with pytest.raises(ParameterError):
        select_leaf_size(_linear_data(100, 0), [], FAST)
    with pytest.raises(ParameterError):
        CdfConfig(n_trees=0)


def test_single_candidate():
    assert select_leaf_size(_linear_data(100, 0), [20], FAST) == 20


@pytest.mark.slow
def test_leaf_selection_tracks_signal_strength():
    cands = [5, 10, 25, 50, 100]
    cfg = CdfConfig(n_trees=15)
    noise_large, signal_small = 0, 0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        x = rng.standard_normal((400, 2))
        y_noise = rng.standard_normal(400)
        y_signal = 5.0 * x[:, 0] + 0.1 * rng.standard_normal(400)
        noise_large += select_leaf_size(Dataset(x, y_noise), cands, cfg, seed) >= 50
        signal_small += select_leaf_size(Dataset(x, y_signal), cands, cfg, seed) <= 10
    assert noise_large >= 35
    assert signal_small >= 35
