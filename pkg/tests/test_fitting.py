import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from molmimo.channel import (ModelParams, link_distance, parametric_response, taps_from_curve,
                             taps_from_model)
from molmimo.fitting import (DegenerateCurveError, FitProblem, ParamDataset, build_dataset,
                             fit_channel, fit_case, levenberg_marquardt)
from molmimo.geometry import CuboidSpec, SystemParams
from molmimo.sim import ChannelCurve, SimConfig, simulate_channel
from molmimo.workbench import generate_grid

T = np.arange(1, 1501) * 1e-3


def _synthetic(sys_, kind, b, t=T):
    return parametric_response(t, *b, link_distance(sys_, kind), sys_.R, sys_.D)


@pytest.mark.parametrize("kind", [11, 21])
@pytest.mark.parametrize("b", [(1.0, 0.5, 0.5), (0.8, 0.45, 0.6), (1.3, 0.6, 0.4), (0.5, 0.3, 0.9)])
def test_recovers_noiseless_curve(kind, b):
    sys_ = SystemParams(4, 1, 5, 50)
    res = fit_channel(FitProblem(T, _synthetic(sys_, kind, b), kind, sys_))
    assert res.converged
    np.testing.assert_allclose(res.params, b, atol=1e-6)
    assert res.rmse == pytest.approx(np.sqrt(res.rss / T.size))


def test_fit_idempotent():
    sys_ = SystemParams(6, 1, 5, 100)
    y = _synthetic(sys_, 11, (0.9, 0.5, 0.5)) + 0.002 * np.sin(40 * T)
    first = fit_channel(FitProblem(T, y, 11, sys_))
    again = fit_channel(FitProblem(T, y, 11, sys_, initial_guess=tuple(first.params)))
    assert again.iterations <= 2
    assert abs(again.rss - first.rss) <= 1e-12


def test_history_monotone_and_bounds_respected():
    sys_ = SystemParams(2, 1, 3, 100)
    y = 2.5 * _synthetic(sys_, 11, (1.0, 0.5, 0.5))  # amplitude beyond the upper bound
    res = fit_channel(FitProblem(T, y, 11, sys_))
    assert np.all(np.diff(res.history) <= 0)
    lo, hi = np.array([1e-6, 0.05, 0.05]), np.array([2.0, 1.99, 1.99])
    assert np.all(res.params >= lo) and np.all(res.params <= hi)
    assert res.params[0] == pytest.approx(2.0)


def test_lm_on_linear_least_squares():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(30, 3))
    y = A @ np.array([0.3, -0.2, 0.5]) + 0.01 * rng.normal(size=30)
    x, cost, _, conv, hist = levenberg_marquardt(lambda b: A @ b - y, lambda b: A, np.zeros(3),
                                                  -np.ones(3), np.ones(3), 200, 1e-14)
    ref = np.linalg.lstsq(A, y, rcond=None)[0]
    np.testing.assert_allclose(x, ref, atol=1e-7)
    assert conv and np.all(np.diff(hist) <= 0)


def test_degenerate_and_invalid_problems():
    sys_ = SystemParams(4, 1, 5, 50)
    with pytest.raises(DegenerateCurveError):
        fit_channel(FitProblem(T, np.zeros_like(T), 11, sys_))
    with pytest.raises(ValueError):
        FitProblem(T[:5], T[:5], 11, sys_)
    with pytest.raises(ValueError):
        FitProblem(T, T, 12, sys_)
    with pytest.raises(ValueError):
        FitProblem(T, T, 11, sys_, initial_guess=(3.0, 0.5, 0.5))
    with pytest.raises(ValueError):
        FitProblem(T, T, 11, sys_, bounds=((1, 0), (0, 1), (0, 1)))


def test_fit_case_records_failure():
    sys_ = SystemParams(4, 1, 5, 50)
    s11 = ChannelCurve(T, _synthetic(sys_, 11, (1, 0.5, 0.5)), 1, 1)
    s21 = ChannelCurve(T, np.zeros_like(T), 2, 1)
    row = fit_case(sys_, s11, s21)
    assert not row.ok and "F21" in row.error
    assert np.all(np.isfinite(row.coeffs[:3])) and np.all(np.isnan(row.coeffs[3:]))
    assert len(ParamDataset([row]).usable()) == 0


def test_build_dataset_sizes_and_order():
    tds, vds = generate_grid("tds"), generate_grid("vds")
    assert len(tds) == 90 and len(vds) == 90
    assert sorted({s.d for s in vds}) == [2, 4, 6, 8, 10]

    def fake(i, sys_):
        p = (1.0, 0.5, 0.5)
        return (ChannelCurve(T, _synthetic(sys_, 11, p), 1, 1),
                ChannelCurve(T, _synthetic(sys_, 21, p), 2, 1))

    data = build_dataset(tds, SimConfig(), simulate=fake, workers=2)
    assert len(data) == 90 and len(data.usable()) == 90
    assert [r.sys for r in data.rows] == tds
    np.testing.assert_allclose(data.targets(), np.tile([1, 0.5, 0.5, 1, 0.5, 0.5], (90, 1)), atol=1e-6)
    assert len(build_dataset([], SimConfig())) == 0
    assert data.inputs().shape == (90, 4)


def test_build_dataset_isolates_simulation_errors():
    def boom(i, sys_):
        raise RuntimeError("simulated crash")

    data = build_dataset(generate_grid("custom", d=[2], h=[1], R=[3], D=[100]), SimConfig(), simulate=boom)
    assert len(data) == 1 and "simulated crash" in data.rows[0].error


def test_simulated_near_case_fit_quality():
    sys_ = SystemParams(2, 1, 3, 100)
    s11, s21 = simulate_channel(sys_, SimConfig(n_molecules=1000, n_replications=50, rng_seed=3,
                                                body=CuboidSpec(enabled=True)))
    row = fit_case(sys_, s11, s21)
    assert row.ok and row.converged11 and row.converged21
    assert row.rmse11 < 0.01 and row.rmse21 < 0.01


def test_taps_from_fit_match_simulated_taps():
    sys_ = SystemParams(6, 1, 5, 100)
    cfg = SimConfig(n_molecules=1000, n_replications=20, t_end=3.0, rng_seed=8,
                    body=CuboidSpec(enabled=True))
    s11, s21 = simulate_channel(sys_, cfg)
    row = fit_case(sys_, s11, s21)
    p = ModelParams.from_array(row.coeffs)
    for curve, which in ((s11, 11), (s21, 21)):
        emp = taps_from_curve(curve, 0.5, 5).taps
        mod = taps_from_model(p, sys_, 0.5, 5, which).taps
        assert np.max(np.abs(emp - mod)) < 0.01


@settings(max_examples=100, deadline=None)
@given(b1=st.floats(0.2, 1.8), b2=st.floats(0.3, 0.7), b3=st.floats(0.3, 0.7),
       idx=st.integers(0, 179), kind=st.sampled_from([11, 21]))
def test_fit_property_bounds_and_monotone_history(b1, b2, b3, idx, kind):
    grid = generate_grid("tds") + generate_grid("vds")
    sys_ = grid[idx]
    y = _synthetic(sys_, kind, (b1, b2, b3))
    if not np.any(y > 0):
        return
    res = fit_channel(FitProblem(T[::10], y[::10], kind, sys_))
    assert np.all(np.diff(res.history) <= 0)
    assert np.all(res.params >= [1e-6, 0.05, 0.05]) and np.all(res.params <= [2, 1.99, 1.99])
    assert res.rss <= np.sum(y[::10] ** 2)
