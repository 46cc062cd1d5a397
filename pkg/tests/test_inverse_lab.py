from __future__ import annotations

import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carleman_lab.errors import ParameterError, PreconditionError, ValidationError
from carleman_lab.fields import bump_field, sine_mode, sine_power
from carleman_lab.geometry import Domain, anisotropic_field, identity_field
from carleman_lab.inverse_lab import (
    DataMap,
    ObservationSetup,
    add_noise,
    adjoint_map,
    choose_alpha,
    dot_product_test,
    forward_map,
    initial_ensemble,
    inverse_crime_check,
    interval_shift,
    lipschitz_sweep,
    observability_sweep,
    parallel_map,
    reconstruct,
    source_ensemble,
    worker_count,
)
from carleman_lab.memory_kernels import decaying_kernel, zero_kernel


def _setup_1d(cells=32, T=1.6, kernel=None, r_amplitude=0.5):
    dom = Domain.unit(1, cells)
    return ObservationSetup(dom, identity_field(1), kernel or zero_kernel(1), T, (-0.5,),
                            r_amplitude=r_amplitude)


def _setup_2d(cells=12, kernel=None, field=None):
    dom = Domain.unit(2, cells)
    T = 1.05 * math.sqrt(2.5)
    return ObservationSetup(dom, field or anisotropic_field(0.2), kernel or decaying_kernel(2), T, (-0.5, 0.5))


def test_setup_checks_observation_time():
    with pytest.raises(PreconditionError):
        _setup_1d(T=1.5)
    with pytest.raises(ParameterError):
        ObservationSetup(Domain.unit(1, 8), identity_field(1), zero_kernel(1), 2.0, (-0.5,), data_order=4)
    assert _setup_1d().faces == ("right",)
    assert set(_setup_2d().faces) == {"right", "top", "bottom"}


# ---------------------------------------------------------------------------
# forward map and its transpose


def test_zero_source_gives_zero_trace():
    setup = _setup_2d()
    assert np.all(forward_map(np.zeros(setup.domain.size), setup).values == 0)
    dmap = DataMap(setup)
    assert np.all(dmap.adjoint(np.zeros((dmap.steps + 1, dmap.rows.shape[0]))) == 0)


@given(a=st.floats(-4, 4), b=st.floats(-4, 4))
@settings(max_examples=10)
def test_forward_map_is_linear(a, b):
    setup = _setup_2d(8)
    dmap = DataMap(setup)
    rng = np.random.default_rng(3)
    f, g = rng.standard_normal((2, setup.domain.size))
    lhs = dmap.forward(a * f + b * g).values
    rhs = a * dmap.forward(f).values + b * dmap.forward(g).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-10 * (1 + np.max(np.abs(rhs))))


def test_duhamel_closed_form_trace():
    # u_tt = u_xx + sin(pi x): u = sin(pi x) (1 - cos(pi t)) / pi^2, so d_x u(1, t) = -(1 - cos(pi t)) / pi
    errs = []
    for cells in (32, 64):
        setup = _setup_1d(cells, r_amplitude=0.0)
        tr = forward_map(sine_mode(setup.domain, [1]), setup)
        exact = -(1 - np.cos(np.pi * tr.times)) / np.pi
        errs.append(np.max(np.abs(tr.values[:, 0] - exact)))
    assert errs[1] < 1e-3
    assert math.log2(errs[0] / errs[1]) > 1.8


@pytest.mark.parametrize("kernel", [zero_kernel(2), decaying_kernel(2)])
def test_dot_product_identity(kernel):
    dmap = DataMap(_setup_2d(10, kernel))
    rng = np.random.default_rng(0)
    assert max(dot_product_test(dmap, rng) for _ in range(5)) <= 1e-10


@pytest.mark.parametrize("setup", [_setup_1d(12, T=1.6, kernel=decaying_kernel(1)), _setup_2d(6)],
                         ids=["1d", "2d"])
def test_adjoint_equals_transpose_of_explicit_matrix(setup):
    dmap = DataMap(setup)
    M = dmap.explicit_matrix()
    inner = np.flatnonzero(dmap.ops.interior)
    rng = np.random.default_rng(1)
    g = rng.standard_normal((dmap.steps + 1, dmap.rows.shape[0]))
    wg = (g * dmap.weights[None, :] * dmap.time_weights[:, None]).ravel()
    want = M.T @ wg / dmap.cell
    np.testing.assert_allclose(dmap.adjoint(g)[inner], want, rtol=1e-10, atol=1e-12)
    with pytest.raises(ValidationError):
        dmap.adjoint(g[1:])


def test_normal_operator_is_positive():
    setup = _setup_2d(8)
    dmap = DataMap(setup)
    rng = np.random.default_rng(2)
    for _ in range(3):
        f = dmap.ops.project(rng.standard_normal(dmap.ops.size))
        assert dmap.field_inner(f, adjoint_map(dmap.forward(f), setup, dmap)) >= 0


# ---------------------------------------------------------------------------
# reconstruction


def test_zero_data_reconstructs_zero():
    setup = _setup_1d(16)
    dmap = DataMap(setup)
    data = dmap.trace(np.zeros((dmap.steps + 1, dmap.rows.shape[0])))
    res = reconstruct(data, setup, dmap=dmap)
    assert res.converged and np.all(res.f == 0)
    with pytest.raises(ParameterError):
        reconstruct(data, setup, alpha=-1.0, dmap=dmap)


def test_one_dimensional_bump_reconstruction():
    setup = _setup_1d(64)
    dmap = DataMap(setup)
    truth = bump_field(setup.domain, (0.5,), 0.3).sample(setup.domain).ravel()
    res = reconstruct(dmap.forward(truth), setup, max_iters=200, tol=1e-10, truth=truth, dmap=dmap)
    err = np.array(res.error_l2)
    print(f"1-D bump: iterations={res.iterations} final error={err[-1]:.3e}")
    # CGLS with consistent data decreases the error norm monotonically
    assert np.all(np.diff(err) <= 1e-10)
    assert np.all(np.diff(res.residual) <= 1e-12 * res.residual[0])
    assert err[-1] <= 0.05


def test_regularization_helps_with_noise():
    setup = _setup_2d(10)
    dmap = DataMap(setup)
    truth = sine_power(setup.domain, 2).sample(setup.domain).ravel()
    data = add_noise(dmap.forward(truth), 0.01, np.random.default_rng(4))
    assert data.norm(0) > 0
    errs = {}
    for a in (0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2):
        res = reconstruct(data, setup, alpha=a, max_iters=200, truth=truth, dmap=dmap)
        errs[a] = res.error_l2[-1]
    print("noisy errors by alpha:", errs)
    assert min(v for a, v in errs.items() if a > 0) < errs[0.0]
    alpha, res = choose_alpha(data, setup, [1e-6, 1e-4, 1e-2], 0.01, dmap=dmap)
    assert alpha in (1e-6, 1e-4, 1e-2)


def test_regularized_solution_independent_of_start():
    setup = _setup_2d(8)
    dmap = DataMap(setup)
    truth = sine_power(setup.domain, 2).sample(setup.domain).ravel()
    data = dmap.forward(truth)
    rng = np.random.default_rng(8)
    sols = []
    for _ in range(2):
        res = reconstruct(data, setup, alpha=1e-3, max_iters=500, tol=1e-12, dmap=dmap,
                          start=rng.standard_normal(setup.domain.size))
        assert res.converged
        assert np.all(np.diff(res.residual) <= 1e-12 * res.residual[0])
        sols.append(res.f)
    assert np.max(np.abs(sols[0] - sols[1])) <= 1e-8 * np.max(np.abs(sols[0]))


def test_inverse_crime_guard():
    mismatch = []
    for cells in (16, 32):
        setup = _setup_1d(cells)
        rep = inverse_crime_check(setup, bump_field(setup.domain, (0.5,), 0.3), max_iters=100, target_error=0.05)
        mismatch.append(rep["data_mismatch"])
        assert rep["error_same_grid"] <= 0.05 and rep["factor"] == 2
    # fine-grid data differ from same-grid data at the order of the scheme
    assert math.log2(mismatch[0] / mismatch[1]) > 1.8
    with pytest.raises(ParameterError):
        inverse_crime_check(_setup_1d(8), bump_field(Domain.unit(1, 8), (0.5,), 0.3), factor=1)


# ---------------------------------------------------------------------------
# stability ensembles


def test_observability_single_mode_closed_form():
    # y = sin(pi x) cos(pi t): |d_x y| = pi |cos(pi t)| at both ends
    setup = _setup_1d(128)
    rep = observability_sweep(setup, [sine_mode(setup.domain, [1])], order=2)
    T, p = setup.T, math.pi
    c2 = T / 2 + math.sin(2 * p * T) / (4 * p)
    s2 = T / 2 - math.sin(2 * p * T) / (4 * p)
    full_sq = 2 * (p**2 * c2 + p**4 * s2 + p**6 * c2)
    norm_a = math.sqrt((1 + p**2 + p**4 + p**6) / 2)
    assert rep.upper[0] == pytest.approx(math.sqrt(full_sq) / norm_a, rel=1e-2)
    assert rep.observed_ratio[0] == pytest.approx(math.sqrt(full_sq / 2) / norm_a, rel=1e-2)


def test_zero_sample_is_skipped():
    setup = _setup_1d(16)
    dom = setup.domain
    zero = sine_mode(dom, [1]).scaled(0.0)
    rep = observability_sweep(setup, [zero, sine_mode(dom, [1])], order=1)
    assert rep.to_dict()["skipped"] == 1
    assert rep.upper.size == 1


def test_interval_shift_of_identical_reports_is_zero():
    setup = _setup_2d(10)
    rep = observability_sweep(setup, initial_ensemble(setup.domain, 2, 0, 3), order=1)
    assert all(v == 0 for v in interval_shift(rep, rep).values())
    lo, hi = rep.interval("upper")
    assert 0 < lo <= hi


def test_lipschitz_ratios_scale_invariant():
    setup = _setup_2d(10)
    f = source_ensemble(setup.domain, 1, 7, 3)[0]
    arr = f.sample(setup.domain).ravel()
    a = lipschitz_sweep(setup, [arr], order=1)
    b = lipschitz_sweep(setup, [2 * arr], order=1)
    assert b.upper[0] == pytest.approx(a.upper[0], rel=1e-10)
    assert b.lower[0] == pytest.approx(a.lower[0], rel=1e-10)


@pytest.mark.parametrize("kernel", [zero_kernel(2), decaying_kernel(2)])
def test_lipschitz_bounds_positive_with_and_without_memory(kernel):
    setup = _setup_2d(10, kernel)
    rep = lipschitz_sweep(setup, source_ensemble(setup.domain, 2, 1, 3), order=1)
    assert np.all(rep.upper > 0) and np.all(np.isfinite(rep.lower)) and np.all(rep.lower > 0)


# ---------------------------------------------------------------------------
# threading


def test_parallel_map_preserves_order_and_results(monkeypatch):
    seen = set()

    def f(x):
        seen.add(threading.get_ident())
        return x * x

    items = list(range(20))
    assert parallel_map(f, items, 1) == parallel_map(f, items, 4) == [x * x for x in items]
    monkeypatch.setenv("CARLEMAN_LAB_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("CARLEMAN_LAB_THREADS", "oops")
    assert worker_count() == 1


def test_ensemble_independent_of_thread_count():
    setup = _setup_2d(8)
    ens = initial_ensemble(setup.domain, 3, 5, 3)
    a = observability_sweep(setup, ens, order=1, threads=1)
    b = observability_sweep(setup, ens, order=1, threads=3)
    np.testing.assert_array_equal(a.full_traces, b.full_traces)
    np.testing.assert_array_equal(a.observed_traces, b.observed_traces)
