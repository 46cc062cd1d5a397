"""Numerical scans of Carleman-type weighted inequalities over the large parameter s.

Every weighted integral is accumulated in log space,

    log int s^a gamma^b phi^c |g|^2 e^{2 s phi}
        = a log s + b log gamma + logsumexp(2 s phi + c log phi, weights = |g|^2 * quad),

so no intermediate quantity overflows.  A scan returns a :class:`RatioCurve`
of LHS / RHS and a verdict from the slope of ``log(ratio)`` against ``s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .errors import ParameterError, PreconditionError, ValidationError
from .fields import multi_indices
from .forward_solver import BoundaryTrace, time_difference, trace_from_history
from .geometry import CarlemanWeight, CutoffFunction, Domain
from .operators import GridOperators

# slope of log(ratio) against s above which a curve counts as growing
GROWTH_SLOPE = 0.05
# relative tolerance of the boundary-flatness gate on F
FLATNESS_TOL = 0.05


def default_s_grid(lo: float = 1.0, hi: float = 40.0, count: int = 12) -> np.ndarray:
    return np.geomspace(lo, hi, count)


@dataclass(frozen=True)
class WeightedIntegralSpec:
    """``s^a gamma^b phi^c |integrand|^2 e^{2 s phi}`` over a region."""

    s_power: float = 0.0
    gamma_power: float = 0.0
    phi_power: float = 0.0
    region: str = "Q"  # "Q", "Q+" (t >= 0) or "Sigma"

    def __post_init__(self):
        if self.region not in ("Q", "Q+", "Sigma"):
            raise ValidationError(f"unknown region {self.region!r}")


class WeightedData:
    """Squared integrand samples with quadrature weights and ``phi`` on the same points."""

    def __init__(self, values_sq: np.ndarray, quad: np.ndarray, phi: np.ndarray):
        self.values_sq = np.asarray(values_sq, float)
        self.quad = np.asarray(quad, float)
        self.phi = np.asarray(phi, float)
        self.log_phi = np.log(self.phi)

    def log_integral(self, s: float, spec: WeightedIntegralSpec, gamma: float) -> float:
        if s <= 0:
            raise ParameterError("s must be positive")
        b = self.values_sq * self.quad
        if not np.any(b > 0):
            return -math.inf
        a = 2 * s * self.phi + spec.phi_power * self.log_phi
        return float(logsumexp(a, b=b) + spec.s_power * math.log(s) + spec.gamma_power * math.log(gamma))


def space_time_quadrature(domain: Domain, times: np.ndarray, region: str = "Q") -> np.ndarray:
    """Trapezoid weights on ``times x nodes``, shape ``(len(times), size)``."""
    dt = times[1] - times[0]
    wt = np.full(len(times), dt)
    wt[0] = wt[-1] = 0.5 * dt
    if region == "Q+":
        wt = np.where(times >= -1e-12, wt, 0.0)
        i0 = int(np.argmin(np.abs(times)))
        wt[i0] = 0.5 * dt
    return wt[:, None] * domain.weights.ravel()[None, :]


def phi_on_grid(w: CarlemanWeight, domain: Domain, times: np.ndarray) -> np.ndarray:
    return w.on_grid(domain, times).reshape(len(times), -1)


def phi_on_trace(w: CarlemanWeight, domain: Domain, trace: BoundaryTrace) -> np.ndarray:
    pts = domain.points.reshape(-1, domain.n)[trace.nodes]
    r2 = np.sum((pts - np.asarray(w.x0)) ** 2, axis=-1)
    psi = (r2[None, :] - w.beta * trace.times[:, None] ** 2) / w.scale
    return np.exp(w.gamma * psi)


def trace_quadrature(trace: BoundaryTrace) -> np.ndarray:
    return trace.time_weights()[:, None] * trace.weights[None, :]


def weighted_integral(
    values: np.ndarray,
    spec: WeightedIntegralSpec,
    w: CarlemanWeight,
    s: float,
    domain: Optional[Domain] = None,
    times: Optional[np.ndarray] = None,
    trace: Optional[BoundaryTrace] = None,
    log: bool = False,
) -> float:
    """Trapezoid quadrature of ``s^a gamma^b phi^c |values|^2 e^{2 s phi}``.

    For ``region="Sigma"`` pass the trace (``values`` is then ignored unless
    given, in which case it replaces the trace values).
    """
    if spec.region == "Sigma":
        if trace is None or domain is None:
            raise ValidationError("boundary integrals need the trace and domain")
        vals = trace.values if values is None else values
        data = WeightedData(np.abs(vals) ** 2, trace_quadrature(trace), phi_on_trace(w, domain, trace))
    else:
        if domain is None or times is None:
            raise ValidationError("space-time integrals need domain and times")
        quad = space_time_quadrature(domain, times, spec.region)
        data = WeightedData(np.abs(values) ** 2, quad, phi_on_grid(w, domain, times))
    val = data.log_integral(s, spec, w.gamma)
    return val if log else math.exp(val) if val > -math.inf else 0.0


def direct_weighted_integral(values, spec, w, s, domain, times) -> float:
    """Straightforward evaluation (no log space); for cross-checks only."""
    phi = phi_on_grid(w, domain, times)
    quad = space_time_quadrature(domain, times, spec.region)
    integrand = s**spec.s_power * w.gamma**spec.gamma_power * phi**spec.phi_power
    return float(np.sum(integrand * np.abs(values) ** 2 * np.exp(2 * s * phi) * quad))


# ---------------------------------------------------------------------------


@dataclass
class RatioCurve:
    s: np.ndarray
    log_lhs: np.ndarray
    log_rhs_terms: dict
    verdict: str = "bounded"
    slope: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def log_rhs(self) -> np.ndarray:
        terms = np.array(list(self.log_rhs_terms.values()))
        return logsumexp(terms, axis=0) if len(terms) else np.full(len(self.s), -np.inf)

    @property
    def lhs(self) -> np.ndarray:
        return np.exp(self.log_lhs)

    @property
    def rhs(self) -> np.ndarray:
        return np.exp(self.log_rhs)

    @property
    def ratio(self) -> np.ndarray:
        ll, lr = self.log_lhs, self.log_rhs
        out = np.zeros(len(self.s))
        ok = np.isfinite(ll)
        out[ok] = np.exp(ll[ok] - lr[ok])
        return out

    def share(self, name: str) -> np.ndarray:
        """Fraction of the RHS contributed by one term."""
        return np.exp(self.log_rhs_terms[name] - self.log_rhs)

    def rows(self):
        names = list(self.log_rhs_terms)
        for i, s in enumerate(self.s):
            terms = [float(np.exp(self.log_rhs_terms[n][i])) for n in names]
            terms += [0.0] * (3 - len(terms))
            yield [float(s), float(self.lhs[i])] + terms[:3] + [float(self.ratio[i])]

    def to_dict(self) -> dict:
        out = {
            "verdict": self.verdict,
            "slope": self.slope,
            "s": [float(v) for v in self.s],
            "ratio": [float(v) for v in self.ratio],
            "rhs_terms": list(self.log_rhs_terms),
        }
        out.update(self.extra)
        return out


CSV_HEADER = ["s", "lhs", "rhs_term1", "rhs_term2", "rhs_term3", "ratio"]


def finalize(curve: RatioCurve, threshold: float = GROWTH_SLOPE) -> RatioCurve:
    """Set the verdict from the fitted slope of ``log(ratio)`` against ``s``."""
    ll, lr = curve.log_lhs, curve.log_rhs
    ok = np.isfinite(ll) & np.isfinite(lr)
    if ok.sum() < 2:
        curve.slope, curve.verdict = 0.0, "bounded"
        if np.any(np.isfinite(ll) & ~np.isfinite(lr)):
            curve.verdict = "growing"
        return curve
    slope = float(np.polyfit(curve.s[ok], ll[ok] - lr[ok], 1)[0])
    curve.slope = slope
    curve.verdict = "growing" if slope > threshold else "bounded"
    return curve


def _check_grid(s_grid) -> np.ndarray:
    s_grid = np.asarray(s_grid, float)
    if s_grid.size == 0:
        raise ParameterError("empty s grid")
    if np.any(s_grid <= 0):
        raise ParameterError("s values must be positive")
    return s_grid


_FULL_CACHE: dict = {}


def full_operator(ops: GridOperators):
    """``sum_ij d_i(a_ij d_j .)`` on every node with the one-sided stencils of
    :meth:`GridOperators.full_derivative`, so weighted integrals of ``|A u|^2``
    and of ``|D^2 u|^2`` see the same differences up to the boundary."""
    key = id(ops)
    if key not in _FULL_CACHE or _FULL_CACHE[key][0] is not ops:
        n = ops.n
        a = ops.coefficient_nodes
        da = ops.field.gradient(ops.domain.points).reshape(ops.size, n, n, n)
        mat = None
        for i in range(n):
            for j in range(n):
                ei = tuple(int(m == i) for m in range(n))
                ej = tuple(int(m == j) for m in range(n))
                eij = tuple(x + y for x, y in zip(ei, ej))
                term = sp.diags(a[:, i, j]) @ ops.full_derivative(eij) + sp.diags(da[:, i, j, i]) @ ops.full_derivative(ej)
                mat = term if mat is None else mat + term
        _FULL_CACHE.clear()
        _FULL_CACHE[key] = (ops, mat.tocsr())
    return _FULL_CACHE[key][1]


class SpaceTimeData:
    """A history on a time grid with cached derivative samples."""

    def __init__(self, ops: GridOperators, times: np.ndarray, U: np.ndarray):
        self.ops = ops
        self.domain = ops.domain
        self.times = np.asarray(times, float)
        self.U = np.asarray(U, float)
        self.dt = float(self.times[1] - self.times[0])

    def dt_k(self, k: int) -> np.ndarray:
        return time_difference(self.U, self.dt, k)

    def dx(self, alpha, values: Optional[np.ndarray] = None) -> np.ndarray:
        vals = self.U if values is None else values
        if sum(alpha) == 0:
            return vals
        return (self.ops.full_derivative(alpha) @ vals.T).T

    def grad_sq(self, values: Optional[np.ndarray] = None) -> np.ndarray:
        vals = self.U if values is None else values
        total = np.zeros_like(vals)
        for i in range(self.ops.n):
            e = tuple(int(m == i) for m in range(self.ops.n))
            total += self.dx(e, vals) ** 2
        return total

    def apply_A(self, values: np.ndarray) -> np.ndarray:
        return (full_operator(self.ops) @ values.T).T


def _log_boundary(trace: BoundaryTrace, domain: Domain, w: CarlemanWeight, s: float,
                  orders: int = 0, s_power: float = 1.0, phi_power: float = 1.0) -> float:
    sq = sum(trace.derivative(k) ** 2 for k in range(orders + 1))
    data = WeightedData(sq, trace_quadrature(trace), phi_on_trace(w, domain, trace))
    return data.log_integral(s, WeightedIntegralSpec(s_power, 0.0, phi_power, "Sigma"), w.gamma)


def _log_raw_boundary(trace: BoundaryTrace, orders: int = 0) -> float:
    val = trace.norm(orders) ** 2
    return math.log(val) if val > 0 else -math.inf


BOUNDARY_MODES = ("weighted", "raw")


def _select_boundary(curve: RatioCurve, weighted: np.ndarray, raw_log: float, mode: str, C: float) -> None:
    """Put the chosen boundary convention into the RHS; keep the others in ``extra``."""
    if mode not in BOUNDARY_MODES:
        raise ValidationError(f"unknown boundary mode {mode!r}")
    with_c = raw_log + C * curve.s
    if mode == "raw":
        curve.log_rhs_terms["boundary"] = with_c
    else:
        curve.log_rhs_terms["boundary"] = weighted
    curve.extra.update({
        "boundary_mode": mode,
        "boundary_C": C,
        "boundary_raw": float(np.exp(raw_log)),
        "boundary_weighted": [float(np.exp(v)) for v in weighted],
    })


def hyperbolic_carleman_scan(
    data: SpaceTimeData,
    trace: BoundaryTrace,
    w: CarlemanWeight,
    s_grid: Sequence[float],
    boundary: str = "weighted",
    boundary_C: float = 0.0,
) -> RatioCurve:
    """LHS ``int (s gamma phi |grad_{x,t} v|^2 + s^3 gamma^3 phi^3 |v|^2) e^{2s phi}``
    against ``int |(d_t^2 - A) v|^2 e^{2s phi}`` plus the boundary term.

    With ``boundary="weighted"`` the boundary term is
    ``int_Sigma s phi |d_nu v|^2 e^{2 s phi}``; with ``"raw"`` it is
    ``e^{C s} |d_nu v|^2_{L^2(Sigma)}``.  Both are reported.
    """
    s_grid = _check_grid(s_grid)
    dom = data.domain
    quad = space_time_quadrature(dom, data.times)
    phi = phi_on_grid(w, dom, data.times)
    grad = WeightedData(data.grad_sq() + data.dt_k(1) ** 2, quad, phi)
    zero = WeightedData(data.U**2, quad, phi)
    resid = data.dt_k(2) - data.apply_A(data.U)
    res = WeightedData(resid**2, quad, phi)
    log_lhs, log_res, log_bd = [], [], []
    for s in s_grid:
        l1 = grad.log_integral(s, WeightedIntegralSpec(1, 1, 1), w.gamma)
        l2 = zero.log_integral(s, WeightedIntegralSpec(3, 3, 3), w.gamma)
        log_lhs.append(np.logaddexp(l1, l2))
        log_res.append(res.log_integral(s, WeightedIntegralSpec(), w.gamma))
        log_bd.append(_log_boundary(trace, dom, w, s))
    curve = RatioCurve(s_grid, np.array(log_lhs), {"residual": np.array(log_res)})
    _select_boundary(curve, np.array(log_bd), _log_raw_boundary(trace), boundary, boundary_C)
    return finalize(curve)


def elliptic_terms(data: SpaceTimeData, w: CarlemanWeight, p: float):
    """The three LHS pieces as ``(WeightedData, spec)`` pairs."""
    dom = data.domain
    quad = space_time_quadrature(dom, data.times)
    phi = phi_on_grid(w, dom, data.times)
    hess = sum(data.dx(a) ** 2 for a in multi_indices(dom.n, 2, exact=True))
    return [
        (WeightedData(hess, quad, phi), WeightedIntegralSpec(p, 0, p)),
        (WeightedData(data.grad_sq(), quad, phi), WeightedIntegralSpec(p + 2, 2, p + 2)),
        (WeightedData(data.U**2, quad, phi), WeightedIntegralSpec(p + 4, 4, p + 4)),
    ]


def elliptic_carleman_scan(
    data: SpaceTimeData,
    trace: BoundaryTrace,
    w: CarlemanWeight,
    s_grid: Sequence[float],
    p_values: Sequence[float] = (-1.0, 0.0, 2.0),
    boundary: str = "weighted",
    boundary_C: float = 0.0,
) -> dict:
    """Curves per ``p``: ``int (s^p phi^p |D^2 y|^2 + s^{p+2} gamma^2 phi^{p+2} |grad y|^2
    + s^{p+4} gamma^4 phi^{p+4} |y|^2) e^{2 s phi}`` against
    ``int s^{p+1} phi^{p+1} |A y|^2 e^{2 s phi}`` plus ``int_Sigma (s phi)^{p+2} |d_nu y|^2 e^{2 s phi}``."""
    s_grid = _check_grid(s_grid)
    dom = data.domain
    quad = space_time_quadrature(dom, data.times)
    phi = phi_on_grid(w, dom, data.times)
    ay = WeightedData(data.apply_A(data.U) ** 2, quad, phi)
    curves = {}
    for p in p_values:
        terms = elliptic_terms(data, w, p)
        log_lhs, log_a, log_bd = [], [], []
        for s in s_grid:
            log_lhs.append(logsumexp([d.log_integral(s, sp, w.gamma) for d, sp in terms]))
            log_a.append(ay.log_integral(s, WeightedIntegralSpec(p + 1, 0, p + 1), w.gamma))
            log_bd.append(_log_boundary(trace, dom, w, s, 0, p + 2, p + 2))
        curve = RatioCurve(s_grid, np.array(log_lhs), {"operator": np.array(log_a)})
        curve.extra = {"p": p}
        _select_boundary(curve, np.array(log_bd), _log_raw_boundary(trace), boundary, boundary_C)
        curves[float(p)] = finalize(curve)
    return curves


# ---------------------------------------------------------------------------
# integral-term lemma


def _cumulative_from_zero(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """``int_0^t values deta`` (signed) on a time grid containing 0."""
    i0 = int(np.argmin(np.abs(times)))
    if abs(times[i0]) > 1e-9:
        raise ValidationError("time grid must contain t = 0")
    dt = times[1] - times[0]
    out = np.zeros_like(values)
    for k in range(i0 + 1, len(times)):
        out[k] = out[k - 1] + 0.5 * dt * (values[k] + values[k - 1])
    for k in range(i0 - 1, -1, -1):
        out[k] = out[k + 1] - 0.5 * dt * (values[k] + values[k + 1])
    return out


@dataclass
class MemoryWeightReport:
    s: float
    lhs: float
    rhs_pointwise: float
    rhs_cutoff: float
    ratio: float
    min_s_phi: float
    precondition_ok: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def memory_weight_check(
    w_values: np.ndarray,
    times: np.ndarray,
    domain: Domain,
    q: float,
    cutoff: CutoffFunction,
    cw: CarlemanWeight,
    s: float,
) -> MemoryWeightReport:
    """Both sides of the weighted estimate for ``int_0^t |w| deta`` (constant ``C = 1``)."""
    if q < 0:
        raise ParameterError("q must be non-negative")
    if s <= 0:
        raise ParameterError("s must be positive")
    gamma = cw.gamma
    phi = phi_on_grid(cw, domain, times)
    quad = space_time_quadrature(domain, times)
    chi = cutoff.chi(times)[:, None]
    dchi2 = np.abs(2 * cutoff.chi(times) * cutoff.dchi(times))[:, None]
    absint = _cumulative_from_zero(np.abs(w_values), times)
    sqint = np.abs(_cumulative_from_zero(w_values**2, times))
    min_s_phi = float(s * np.min(phi))
    lhs = WeightedData((chi * absint) ** 2, quad, phi).log_integral(s, WeightedIntegralSpec(q, 0, q), gamma)
    spec = WeightedIntegralSpec(q - 1, -1, q - 1)
    r1 = WeightedData(chi**2 * w_values**2, quad, phi).log_integral(s, spec, gamma)
    r2 = WeightedData(dchi2 * sqint, quad, phi).log_integral(s, spec, gamma)
    rhs = np.logaddexp(r1, r2)
    ratio = float(np.exp(lhs - rhs)) if np.isfinite(lhs) and np.isfinite(rhs) else 0.0
    ex = lambda v: (math.exp(v) if v < 709.0 else math.inf) if np.isfinite(v) else 0.0  # noqa: E731
    return MemoryWeightReport(float(s), ex(lhs), ex(r1), ex(r2), ratio, min_s_phi, min_s_phi >= 1.0)


def memory_weight_scan(w_values, times, domain, q, cutoff, cw, s_grid) -> RatioCurve:
    s_grid = _check_grid(s_grid)
    reps = [memory_weight_check(w_values, times, domain, q, cutoff, cw, s) for s in s_grid]
    log = lambda v: math.log(v) if v > 0 else -math.inf  # noqa: E731
    curve = RatioCurve(
        s_grid,
        np.array([log(r.lhs) for r in reps]),
        {"pointwise": np.array([log(r.rhs_pointwise) for r in reps]),
         "cutoff": np.array([log(r.rhs_cutoff) for r in reps])},
    )
    curve.extra = {"q": q, "precondition_ok": all(r.precondition_ok for r in reps)}
    return finalize(curve)


# ---------------------------------------------------------------------------
# main estimate


MAIN_FORMS = ("v_form", "first_order", "second_order")


def check_boundary_flatness(F: np.ndarray, ops: GridOperators, tol: float = FLATNESS_TOL) -> dict:
    """Boundary size of ``F`` relative to ``max |F|`` and of its conormal
    derivative relative to ``max |a grad F|`` over the whole grid."""
    F = np.atleast_2d(F)
    scale = float(np.max(np.abs(F)))
    if scale == 0.0:
        return {"F_boundary": 0.0, "dnu_F_boundary": 0.0, "flat": True}
    fb = float(np.max(np.abs(F[:, ~ops.interior]))) / scale
    grad = 0.0
    for i in range(ops.n):
        e = tuple(int(m == i) for m in range(ops.n))
        grad = max(grad, float(np.max(np.abs(ops.full_derivative(e) @ F.T))))
    grad *= max(1.0, float(np.max(np.abs(ops.coefficient_nodes))))
    dnu = float(np.max(np.abs(ops.trace.matrix @ F.T))) / grad if grad > 0 else 0.0
    return {"F_boundary": fb, "dnu_F_boundary": dnu, "flat": bool(fb <= tol and dnu <= tol)}


def main_estimate_scan(
    data: SpaceTimeData,
    F: np.ndarray,
    w: CarlemanWeight,
    cutoff: CutoffFunction,
    delta: float,
    s_grid: Sequence[float],
    which: str = "first_order",
    faces: Optional[Sequence[str]] = None,
    flatness_tol: float = FLATNESS_TOL,
    boundary: str = "weighted",
    boundary_C: float = 0.0,
) -> RatioCurve:
    """LHS of the chosen form against the source, interior-energy and boundary terms.

    ``first_order``: ``sum_{|a|<=2} s^2 phi^2 |chi D^a u|^2 + |chi D^a d_t u|^2``;
    ``second_order`` adds ``|chi D^a d_t^2 u|^2``; ``v_form`` uses
    ``v = chi d_t^2 u - chi F`` with the hyperbolic LHS.  RHS terms are
    ``int |A F|^2 e^{2s phi}`` (plus ``|A d_t F|^2`` for ``second_order``),
    ``|u|^2_{H^k(-T,T;H^2)} s^2 Phi^2 e^{2 s delta}`` and the boundary term
    ``int_Sigma s phi sum_{j<=m} |d_t^j d_nu u|^2 e^{2 s phi}`` (or the raw
    ``e^{C s} |d_nu u|^2_{H^m(-T,T;L^2(Gamma))}`` with ``boundary="raw"``).
    """
    if which not in MAIN_FORMS:
        raise ValidationError(f"unknown form {which!r}")
    s_grid = _check_grid(s_grid)
    flat = check_boundary_flatness(F, data.ops, flatness_tol)
    if not flat["flat"]:
        raise PreconditionError(
            f"F is not flat on the boundary (F: {flat['F_boundary']:.2e}, "
            f"d_nu F: {flat['dnu_F_boundary']:.2e})"
        )
    dom = data.domain
    ops = data.ops
    times = data.times
    quad = space_time_quadrature(dom, times)
    phi = phi_on_grid(w, dom, times)
    chi = cutoff.chi(times)[:, None]
    alphas = multi_indices(dom.n, 2)
    time_order = 2 if which == "second_order" else 1
    bd_order = 3 if which == "second_order" else 2

    lhs_parts = []
    if which == "v_form":
        v = chi * (data.dt_k(2) - F)
        vd = SpaceTimeData(ops, times, v)
        lhs_parts.append((WeightedData(vd.grad_sq() + vd.dt_k(1) ** 2, quad, phi), WeightedIntegralSpec(1, 1, 1)))
        lhs_parts.append((WeightedData(v**2, quad, phi), WeightedIntegralSpec(3, 3, 3)))
    else:
        zero_sq = sum((chi * data.dx(a)) ** 2 for a in alphas)
        lhs_parts.append((WeightedData(zero_sq, quad, phi), WeightedIntegralSpec(2, 0, 2)))
        for k in range(1, time_order + 1):
            uk = data.dt_k(k)
            sq = sum((chi * data.dx(a, uk)) ** 2 for a in alphas)
            lhs_parts.append((WeightedData(sq, quad, phi), WeightedIntegralSpec()))

    af = data.apply_A(F) ** 2
    if which == "second_order":
        af = af + data.apply_A(time_difference(F, data.dt, 1)) ** 2
    src = WeightedData(af, quad, phi)

    wt = np.full(len(times), data.dt)
    wt[0] = wt[-1] = 0.5 * data.dt
    hnorm = 0.0
    wsp = dom.weights.ravel()
    for k in range(time_order + 1):
        uk = data.dt_k(k)
        for a in alphas:
            hnorm += float(wt @ ((data.dx(a, uk) ** 2) @ wsp))
    Phi = w.Phi(dom)

    trace = trace_from_history(ops, times, data.U, faces)

    log_lhs, log_src, log_mid, log_bd = [], [], [], []
    for s in s_grid:
        log_lhs.append(logsumexp([d.log_integral(s, sp, w.gamma) for d, sp in lhs_parts]))
        log_src.append(src.log_integral(s, WeightedIntegralSpec(), w.gamma))
        log_mid.append(math.log(hnorm) + 2 * math.log(s) + 2 * math.log(Phi) + 2 * s * delta
                       if hnorm > 0 else -math.inf)
        log_bd.append(_log_boundary(trace, dom, w, s, bd_order))
    curve = RatioCurve(s_grid, np.array(log_lhs), {"source": np.array(log_src), "interior": np.array(log_mid)})
    curve.extra = {"form": which, "delta": delta, "Phi": Phi, "flatness": flat}
    _select_boundary(curve, np.array(log_bd), _log_raw_boundary(trace, bd_order), boundary, boundary_C)
    return finalize(curve)


def gamma_sensitivity(scan, gammas=(0.5, 1.0, 2.0), w: Optional[CarlemanWeight] = None) -> dict:
    """Re-run ``scan(weight)`` for several ``gamma``; returns verdicts and slopes."""
    out = {}
    for g in gammas:
        curve = scan(w.with_gamma(g))
        out[str(g)] = {"verdict": curve.verdict, "slope": curve.slope}
    return out


def weight_monotone_in_time(w: CarlemanWeight, domain: Domain, times: np.ndarray) -> bool:
    """``phi(x, t) <= phi(x, 0)`` with equality only at ``t = 0``."""
    phi = phi_on_grid(w, domain, times)
    phi0 = phi_on_grid(w, domain, np.array([0.0]))[0]
    nz = np.abs(times) > 0
    return bool(np.all(phi[nz] < phi0[None, :]) and np.allclose(phi[~nz], phi0[None, :], rtol=0, atol=0))


def lebesgue_decay(s: float, gamma: float, beta: float, T: float, points: int = 4001) -> float:
    """``int_{-T}^{T} exp(2 s (exp(-gamma beta t^2) - 1)) dt`` (trapezoid)."""
    t = np.linspace(-T, T, points)
    return float(np.trapezoid(np.exp(2 * s * (np.exp(-gamma * beta * t**2) - 1)), t))
