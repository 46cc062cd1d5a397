from __future__ import annotations

import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from carleman_lab.errors import DomainError, ParameterError, PreconditionError, ValidationError
from carleman_lab.geometry import (
    CarlemanWeight,
    CutoffFunction,
    Domain,
    SamplingSpec,
    anisotropic_field,
    calibrate_cutoff_levels,
    check_pseudo_convexity,
    constant_field,
    double_bracket,
    graded_field,
    identity_field,
    min_observation_time,
    observation_boundary,
    principal_symbol,
    sheared_field,
    weight_eval,
)

SQUARE = Domain.unit(2, 16)
X0 = (-0.5, 0.5)


# ---------------------------------------------------------------------------
# sympy oracle for the iterated Poisson bracket


def _sympy_bracket(matrix_expr, x0):
    """Return a numeric function (x, xi) -> {a, {a, d}} built symbolically."""
    x1, x2, k1, k2 = sp.symbols("x1 x2 k1 k2", real=True)
    X, K = (x1, x2), (k1, k2)
    A = matrix_expr(x1, x2)
    a = sum(A[i, j] * K[i] * K[j] for i in range(2) for j in range(2))
    d = (x1 - x0[0]) ** 2 + (x2 - x0[1]) ** 2

    def pb(p, q):
        return sum(sp.diff(p, K[i]) * sp.diff(q, X[i]) - sp.diff(p, X[i]) * sp.diff(q, K[i]) for i in range(2))

    expr = sp.simplify(pb(a, pb(a, d)))
    return sp.lambdify((x1, x2, k1, k2), expr, "numpy")


def _aniso_sym(s):
    return lambda x1, x2: sp.Matrix(
        [[1 + s * x1, s * (1 + x1 * x2) / 2], [s * (1 + x1 * x2) / 2, sp.Rational(13, 10) + s * x2 / 2]]
    )


@pytest.mark.parametrize("field_factory, sym", [
    (lambda: anisotropic_field(0.2), _aniso_sym(sp.Rational(1, 5))),
    (lambda: graded_field(2, 0.3), lambda x1, x2: sp.diag(1 + sp.Rational(3, 10) * x1, 1 + sp.Rational(3, 10) * x2)),
    (lambda: sheared_field(2.0, 0.5), lambda x1, x2: sp.exp(2 * x1) * sp.Matrix([[1, sp.Rational(1, 2)], [sp.Rational(1, 2), 1]])),
])
def test_double_bracket_matches_sympy_oracle(field_factory, sym):
    field = field_factory()
    oracle = _sympy_bracket(sym, X0)
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 1, (25, 2))
    xis = rng.standard_normal((25, 2))
    got = double_bracket(field.matrix(pts), field.gradient(pts), pts - np.array(X0), xis)
    want = np.array([oracle(p[0], p[1], k[0], k[1]) for p, k in zip(pts, xis)], dtype=float)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_identity_ratio_is_eight_on_both_derivative_paths():
    for mode, tol in (("analytic", 1e-12), ("fd", 1e-8)):
        rep = check_pseudo_convexity(identity_field(2), SQUARE, X0, SamplingSpec(derivative=mode))
        assert rep.min_ratio == pytest.approx(8.0, abs=tol)
        assert rep.passed


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0, 3.0])
def test_constant_scalar_metric_ratio_oracle(c):
    # sympy: {a,{a,d}} = 8 c^2 |xi|^2 and |A^{-1} xi|^2 = |xi|^2 / c^2
    oracle = _sympy_bracket(lambda x1, x2: sp.eye(2) * c, X0)
    assert oracle(0.3, 0.7, 1.0, 0.0) == pytest.approx(8 * c**2)
    rep = check_pseudo_convexity(constant_field(np.eye(2) * c), SQUARE, X0)
    assert rep.min_ratio == pytest.approx(8 * c**4, rel=1e-12)


def test_sheared_metric_fails_pseudo_convexity():
    rep = check_pseudo_convexity(sheared_field(5.0, 0.5), SQUARE, (2.0, 0.5))
    assert rep.min_ratio < 0
    assert not rep.passed


def test_anisotropic_field_passes():
    rep = check_pseudo_convexity(anisotropic_field(0.2), SQUARE, X0)
    assert rep.passed and rep.min_ratio > 0
    d = rep.to_dict()
    assert set(d) == {"min_ratio", "mu1", "pass", "worst_x", "worst_xi"}


def test_analytic_and_fd_gradients_agree():
    f = anisotropic_field(0.2)
    pts = SQUARE.points.reshape(-1, 2)
    np.testing.assert_allclose(f.gradient(pts, "analytic"), f.gradient(pts, "fd"), atol=1e-8)


def test_pseudo_convexity_rejects_interior_observer():
    with pytest.raises(PreconditionError):
        check_pseudo_convexity(identity_field(2), SQUARE, (0.5, 0.5))


@given(lam=st.floats(0.01, 100.0), seed=st.integers(0, 10_000))
def test_bracket_ratio_is_homogeneous_in_xi(lam, seed):
    rng = np.random.default_rng(seed)
    f = anisotropic_field(0.2)
    x = rng.uniform(0, 1, (1, 2))
    xi = rng.standard_normal((1, 2))
    a, da, r = f.matrix(x), f.gradient(x), x - np.array(X0)
    b1 = double_bracket(a, da, r, xi)
    b2 = double_bracket(a, da, r, lam * xi)
    assert b2[0] == pytest.approx(lam**2 * b1[0], rel=1e-10, abs=1e-12)
    ainv = np.linalg.inv(a[0])
    r1 = b1[0] / np.sum((ainv @ xi[0]) ** 2)
    r2 = b2[0] / np.sum((ainv @ (lam * xi[0])) ** 2)
    assert r2 == pytest.approx(r1, rel=1e-10, abs=1e-12)


# ---------------------------------------------------------------------------
# principal symbol


def test_principal_symbol_examples():
    assert principal_symbol(identity_field(2), (0.2, 0.3), (3.0, 4.0)) == pytest.approx(25.0)
    assert principal_symbol(constant_field(np.diag([2.0, 1.0])), (0.2, 0.3), (1.0, 1.0)) == pytest.approx(3.0)
    assert principal_symbol(graded_field(2, 0.1), (0.5, 0.5), (1.0, 0.0)) == pytest.approx(1.05)
    with pytest.raises(DomainError):
        principal_symbol(identity_field(2), (1.5, 0.3), (1.0, 0.0), SQUARE)


def test_non_elliptic_field_is_rejected():
    from carleman_lab.errors import EllipticityError

    with pytest.raises(EllipticityError):
        constant_field(np.diag([1.0, -1.0])).validate(SQUARE)
    with pytest.raises(ValidationError):
        constant_field(np.array([[1.0, 0.2], [0.0, 1.0]])).validate(SQUARE)


# ---------------------------------------------------------------------------
# observation boundary and threshold


@pytest.mark.parametrize("x0, faces", [
    ((-0.5, 0.5), {"right", "top", "bottom"}),
    ((0.5, -0.5), {"left", "right", "top"}),
])
def test_observation_boundary_fixtures(x0, faces):
    assert set(observation_boundary(SQUARE, x0).faces) == faces


def test_observation_boundary_one_dimensional():
    dom = Domain.unit(1, 16)
    gamma = observation_boundary(dom, (-0.5,))
    assert gamma.faces == ("right",)
    assert np.flatnonzero(gamma.mask).tolist() == [16]


def test_observation_boundary_brute_force_sign():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x0 = rng.uniform(-2, 3, 2)
        if SQUARE.contains(x0, tol=1e-3):
            continue
        got = set(observation_boundary(SQUARE, x0).faces)
        want = set()
        for f in SQUARE.faces:
            idx = SQUARE.face_index(f)
            pts = SQUARE.points[idx]
            if np.all((pts - x0) @ f.normal(2) >= 0):
                want.add(f.name)
        assert got == want


def test_min_observation_time_fixtures():
    assert min_observation_time(SQUARE, X0, 1.0) == pytest.approx(math.sqrt(2.5), abs=1e-12)
    assert min_observation_time(SQUARE, X0, 4.0) == pytest.approx(math.sqrt(2.5) / 2, abs=1e-12)
    assert min_observation_time(Domain.unit(1, 8), (-1.0,), 1.0) == pytest.approx(2.0)
    with pytest.raises(ParameterError):
        min_observation_time(SQUARE, X0, 0.0)


def test_min_observation_time_brute_force():
    fine = np.linspace(0, 1, 401)
    xx, yy = np.meshgrid(fine, fine)
    brute = math.sqrt(np.max((xx + 0.5) ** 2 + (yy - 0.5) ** 2))
    assert min_observation_time(SQUARE, X0, 1.0) == pytest.approx(brute, abs=1e-12)


# ---------------------------------------------------------------------------
# weight and cut-off


def test_weight_eval_examples():
    w = CarlemanWeight((0.0, 0.0), beta=1.0, gamma=1.0)
    assert weight_eval(w, (1.0, 0.0), 0.0) == pytest.approx((1.0, math.e))
    w2 = CarlemanWeight((0.0, 0.0), beta=1.0, gamma=2.0)
    assert weight_eval(w2, (0.0, 1.0), 1.0) == pytest.approx((0.0, 1.0))
    psi, phi = weight_eval(w, (1.5, math.sqrt(0.25)), 1.6)
    assert psi < 0 and phi < 1


def test_normalized_weight_maps_psi0_into_unit_interval():
    w = CarlemanWeight.normalized(SQUARE, X0)
    psi0 = w.psi(SQUARE.points, 0.0)
    assert psi0.max() == pytest.approx(1.0)
    assert psi0.min() > 0
    assert w.Phi(SQUARE) == pytest.approx(math.e)


def test_cutoff_plateau_support_and_derivatives():
    c = CutoffFunction(1.7, 0.1)
    t = np.linspace(-2, 2, 4001)
    chi = c.chi(t)
    assert np.all(chi[np.abs(t) <= 1.5] == 1.0)
    assert np.all(chi[np.abs(t) >= 1.6] == 0.0)
    assert c.chi(0.0) == 1.0 and c.dchi(0.0) == 0.0
    outside = (np.abs(t) < 1.5) | (np.abs(t) > 1.6)
    assert np.all(c.dchi(t)[outside] == 0) and np.all(c.d2chi(t)[outside] == 0)
    # derivatives against central differences
    tt = np.linspace(1.505, 1.595, 19)
    step = 1e-6
    fd1 = (c.chi(tt + step) - c.chi(tt - step)) / (2 * step)
    fd2 = (c.dchi(tt + step) - c.dchi(tt - step)) / (2 * step)
    np.testing.assert_allclose(c.dchi(tt), fd1, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(c.d2chi(tt), fd2, rtol=1e-5, atol=1e-4)
    # chi falls from 1 to 0 across the band: int chi' = -1
    fine = np.linspace(1.5, 1.6, 20001)
    assert np.trapezoid(c.dchi(fine), fine) == pytest.approx(-1.0, abs=1e-8)
    with pytest.raises(ParameterError):
        CutoffFunction(1.0, 0.6)


def test_cutoff_levels_concrete_pair():
    # phi is largest at the inner edge |t| = T - 2 eps and at the far corner |x - x0|^2 = 2.5
    w = CarlemanWeight.normalized(SQUARE, X0)
    levels = calibrate_cutoff_levels(w, SQUARE, 1.7, 0.05)
    delta = math.exp((2.5 - 1.6**2) / 2.5)
    assert levels.delta == pytest.approx(delta, rel=1e-12)
    assert levels.eps0 == pytest.approx(1 - delta, rel=1e-10)
    assert levels.inner_min == pytest.approx(math.exp((0.25 - 0.1**2) / 2.5), rel=1e-12)
    assert levels.valid


def test_cutoff_levels_small_eps_and_threshold():
    w = CarlemanWeight.normalized(SQUARE, X0)
    thr = min_observation_time(SQUARE, X0, 1.0)
    levels = calibrate_cutoff_levels(w, SQUARE, 1.05 * thr, 1e-3)
    assert levels.valid and levels.eps0 > 0
    # far above the threshold the band level drops so low that 1 + eps0 exceeds phi(., 0)
    assert not calibrate_cutoff_levels(w, SQUARE, 1.2 * thr, 1e-3).valid
    with pytest.raises(PreconditionError):
        calibrate_cutoff_levels(w, SQUARE, 0.9 * thr, 0.05)


def test_domain_validation():
    with pytest.raises(ValidationError):
        Domain((0.0,), (1.0,), 0.3)
    with pytest.raises(ValidationError):
        Domain((1.0,), (0.0,), 0.1)
    dom = Domain.unit(2, 4)
    owner = dom.face_owner()
    # every boundary node has exactly one owning face
    boundary = ~dom.interior_mask
    assert np.all(owner[boundary] >= 0) and np.all(owner[~boundary] < 0)


@pytest.mark.parametrize("direction", [(-1.0, 0.0), (-1.0, -0.3), (0.4, 1.0), (1.0, 1.0)])
def test_observation_boundary_along_a_receding_ray(direction):
    # a face stays observed iff 0.5 - r (d . nu) > 0, so the set only loses faces as r grows
    d = np.asarray(direction) / np.linalg.norm(direction)
    normals = {"left": (-1, 0), "right": (1, 0), "bottom": (0, -1), "top": (0, 1)}
    prev = None
    for r in (0.8, 1.2, 2.0, 5.0, 50.0):
        x0 = tuple(np.array([0.5, 0.5]) + r * d)
        gamma = observation_boundary(SQUARE, x0)
        assert gamma.mask.any()
        assert set(gamma.faces) == {f for f, nu in normals.items() if 0.5 - r * float(d @ nu) > 0}
        if prev is not None:
            assert np.all(prev[gamma.mask])  # nested, non-increasing
        prev = gamma.mask
    assert set(gamma.faces) == {f for f, nu in normals.items() if float(d @ nu) <= 0}
