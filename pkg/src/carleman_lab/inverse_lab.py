"""Boundary observation experiments and the linear inverse source problem.

The data map sends a spatial source ``f`` to the conormal trace on the
observed faces of the solution of ``u_tt = A u + memory + R(x, t) f`` with
zero initial data.  Its discrete transpose comes from the exact reverse
sweep of the leapfrog scheme, so dot-product tests hold to rounding.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dfield, replace
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ParameterError, PreconditionError, SetupError, ValidationError
from .fields import Field, random_sine_series, wave_packet
from .forward_solver import (
    BoundaryTrace,
    LeapfrogScheme,
    ProblemSpec,
    SeparatedSource,
    conormal_trace,
    default_R,
    derivative_system_simulate,
    resolve_time_step,
    simulate,
)
from .geometry import CoefficientField, Domain, min_observation_time, observation_boundary
from .memory_kernels import MemoryKernel
from .norms_energy import sobolev_norm
from .operators import GridOperators

log = logging.getLogger(__name__)


def worker_count() -> int:
    """Threads for ensemble loops, from ``CARLEMAN_LAB_THREADS`` (default 1)."""
    raw = os.environ.get("CARLEMAN_LAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parallel_map(func: Callable, items: Sequence, threads: Optional[int] = None) -> list:
    """Map preserving input order; results do not depend on the thread count."""
    threads = worker_count() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


@dataclass(frozen=True)
class ObservationSetup:
    """Everything that fixes the discrete data map."""

    domain: Domain
    field: CoefficientField = dfield(compare=False)
    kernel: MemoryKernel = dfield(compare=False)
    T: float
    x0: tuple
    beta: float = 1.0
    faces: Optional[tuple] = None  # observed faces; default from x0
    data_order: int = 3
    r_amplitude: float = 0.5
    dt: Optional[float] = None
    check_time: bool = True

    def __post_init__(self):
        if self.data_order not in (0, 1, 2, 3):
            raise ParameterError("data norm order must be between 0 and 3")
        if self.faces is None:
            object.__setattr__(self, "faces", observation_boundary(self.domain, self.x0).faces)
        if self.check_time and self.T <= self.threshold:
            raise PreconditionError(
                f"T={self.T:.4g} does not exceed the observation threshold {self.threshold:.4g}"
            )

    @property
    def threshold(self) -> float:
        return min_observation_time(self.domain, self.x0, self.beta)

    @cached_property
    def ops(self) -> GridOperators:
        return GridOperators(self.domain, self.field)

    @cached_property
    def source_factors(self) -> tuple:
        return default_R(self.domain, self.r_amplitude)

    def source(self, f: np.ndarray) -> SeparatedSource:
        r_spatial, r_time = self.source_factors
        return SeparatedSource(r_spatial, r_time, np.asarray(f, float))

    def problem(self, f: Optional[np.ndarray] = None, u0=None) -> ProblemSpec:
        src = None if f is None else self.source(f)
        return ProblemSpec(self.domain, self.field, self.kernel, self.T, src, u0, None, self.dt)

    def with_(self, **changes) -> "ObservationSetup":
        return replace(self, **changes)


class DataMap:
    """Discrete ``f -> d_nu u |_(Gamma x [0, T])`` with its exact transpose."""

    def __init__(self, setup: ObservationSetup):
        self.setup = setup
        self.ops = setup.ops
        spec = setup.problem(np.zeros(self.ops.size))
        spec.validate()
        self.dt, self.steps = resolve_time_step(spec)
        self.scheme = LeapfrogScheme(self.ops, setup.kernel, self.dt, self.steps)
        self.times = self.scheme.times
        tr = self.ops.trace
        keep = tr.mask_for(setup.faces)
        self.rows = tr.matrix[keep]
        self.weights = tr.weights[keep]
        self.face_of = tr.face_of[keep]
        self.nodes = tr.nodes[keep]
        self.face_names = tuple(f.name for f in tr.faces)
        wt = np.full(self.steps + 1, self.dt)
        wt[0] = wt[-1] = 0.5 * self.dt
        self.time_weights = wt
        r_spatial, r_time = setup.source_factors
        self._r = np.array([np.asarray(r, float) for r in r_spatial])
        self._tau = np.array([[float(tau(t)) for t in self.times] for tau in r_time])
        self.cell = self.ops.domain.h ** self.ops.n

    def R_at(self, k: int) -> np.ndarray:
        return self._tau[:, k] @ self._r

    def trace(self, values: np.ndarray) -> BoundaryTrace:
        return BoundaryTrace(self.times, values, self.weights, self.face_of, self.nodes, self.face_names)

    def forward(self, f: np.ndarray) -> BoundaryTrace:
        f = self.ops.project(np.asarray(f, float).ravel())
        zero = np.zeros(self.ops.size)
        U = self.scheme.run(zero, zero, lambda k: self.ops.project(self.R_at(k) * f))
        return self.trace((self.rows @ U.T).T)

    def adjoint(self, d: BoundaryTrace | np.ndarray) -> np.ndarray:
        """Transpose of :meth:`forward` in the trace and ``h^n``-weighted field inner products."""
        vals = d.values if isinstance(d, BoundaryTrace) else np.asarray(d, float)
        if vals.shape != (self.steps + 1, self.rows.shape[0]):
            raise ValidationError(
                f"trace has shape {vals.shape}, expected {(self.steps + 1, self.rows.shape[0])}"
            )
        E = (self.rows.T @ (vals * self.weights[None, :] * self.time_weights[:, None]).T).T
        lam = self.scheme.reverse(E)
        c = self.scheme.source_weights()
        grad = np.zeros(self.ops.size)
        for m in range(self.steps):
            grad += c[m] * self.R_at(m) * lam[m + 1]
        return self.ops.project(grad) / self.cell

    def field_inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return self.cell * float(np.dot(np.ravel(f), np.ravel(g)))

    def data_inner(self, a: BoundaryTrace, b: BoundaryTrace) -> float:
        return a.inner(b)

    def explicit_matrix(self) -> np.ndarray:
        """Dense forward matrix on interior nodes; for small grids only."""
        idx = np.flatnonzero(self.ops.interior)
        if len(idx) > 1200:
            raise ParameterError("explicit assembly is limited to small grids")
        cols = []
        for i in idx:
            e = np.zeros(self.ops.size)
            e[i] = 1.0
            cols.append(self.forward(e).values.ravel())
        return np.array(cols).T


def forward_map(f, setup: ObservationSetup, dmap: Optional[DataMap] = None) -> BoundaryTrace:
    dmap = dmap or DataMap(setup)
    return dmap.forward(_as_array(f, setup.domain))


def adjoint_map(trace, setup: ObservationSetup, dmap: Optional[DataMap] = None) -> np.ndarray:
    dmap = dmap or DataMap(setup)
    return dmap.adjoint(trace)


def _as_array(f, domain: Domain) -> np.ndarray:
    if isinstance(f, Field):
        return f.sample(domain).ravel()
    return np.asarray(f, float).ravel()


def dot_product_test(dmap: DataMap, rng: np.random.Generator) -> float:
    """Relative mismatch of ``<F f, g>`` and ``<f, F* g>`` for random ``f``, ``g``."""
    f = dmap.ops.project(rng.standard_normal(dmap.ops.size))
    g = rng.standard_normal((dmap.steps + 1, dmap.rows.shape[0]))
    lhs = dmap.data_inner(dmap.forward(f), dmap.trace(g))
    rhs = dmap.field_inner(f, dmap.adjoint(g))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


# ---------------------------------------------------------------------------
# reconstruction


@dataclass
class ReconstructionResult:
    f: np.ndarray
    converged: bool
    iterations: int
    residual: list  # Tikhonov residual sqrt(|F f - d|^2 + alpha |f|^2)
    misfit: list
    error_l2: list = dfield(default_factory=list)
    error_h2: list = dfield(default_factory=list)
    alpha: float = 0.0

    def to_dict(self) -> dict:
        out = {
            "converged": self.converged,
            "iterations": self.iterations,
            "alpha": self.alpha,
            "final_residual": self.residual[-1],
            "final_misfit": self.misfit[-1],
        }
        if self.error_l2:
            out["final_error_l2"] = self.error_l2[-1]
            out["final_error_h2"] = self.error_h2[-1]
        return out

    def history_rows(self):
        for i, (r, m) in enumerate(zip(self.residual, self.misfit)):
            e2 = self.error_l2[i] if self.error_l2 else float("nan")
            eh = self.error_h2[i] if self.error_h2 else float("nan")
            yield [i, r, m, e2, eh]


def reconstruct(
    data: BoundaryTrace,
    setup: ObservationSetup,
    alpha: float = 0.0,
    max_iters: int = 200,
    tol: float = 1e-8,
    truth: Optional[np.ndarray] = None,
    start: Optional[np.ndarray] = None,
    dmap: Optional[DataMap] = None,
    target_error: Optional[float] = None,
) -> ReconstructionResult:
    """CGLS for ``min |F f - d|^2 + alpha |f|^2``, i.e. CG on ``(F*F + alpha) f = F* d``.

    The recorded residual is that of the stacked least-squares system
    ``[F; sqrt(alpha) I] f = [d; 0]``, which CGLS decreases monotonically.
    Stops when the normal-equation residual falls below ``tol`` times its
    initial value, or (with ``truth``) when ``target_error`` is reached.
    Without convergence the best iterate (smallest residual) is returned.
    """
    if alpha < 0:
        raise ParameterError("alpha must be non-negative")
    dmap = dmap or DataMap(setup)
    ops = dmap.ops
    f = np.zeros(ops.size) if start is None else ops.project(np.asarray(start, float).ravel())
    d = data.values
    Ff = dmap.forward(f).values if np.any(f) else np.zeros_like(d)
    r = d - Ff  # data residual
    s = dmap.adjoint(r) - alpha * f  # normal residual
    p = s.copy()
    gamma = dmap.field_inner(s, s)
    gamma0 = gamma

    def _misfit(res):
        return math.sqrt(max(dmap.trace(res).inner(dmap.trace(res)), 0.0))

    truth_arr = None if truth is None else ops.project(np.asarray(truth, float).ravel())
    tnorm_l2 = tnorm_h2 = 1.0
    if truth_arr is not None:
        tnorm_l2 = math.sqrt(dmap.field_inner(truth_arr, truth_arr)) or 1.0
        tnorm_h2 = sobolev_norm(truth_arr, ops, 2) or 1.0

    hist = ReconstructionResult(f, False, 0, [], [], alpha=alpha)

    def record(f_cur, res):
        mis = _misfit(res)
        hist.misfit.append(mis)
        hist.residual.append(math.sqrt(mis**2 + alpha * dmap.field_inner(f_cur, f_cur)))
        if truth_arr is not None:
            e = f_cur - truth_arr
            hist.error_l2.append(math.sqrt(dmap.field_inner(e, e)) / tnorm_l2)
            hist.error_h2.append(sobolev_norm(e, ops, 2) / tnorm_h2)

    record(f, r)
    best = (hist.residual[-1], f.copy())
    if gamma0 == 0.0:
        hist.f, hist.converged = f, True
        return hist
    for it in range(1, max_iters + 1):
        q = dmap.forward(p).values
        qq = dmap.trace(q).inner(dmap.trace(q)) + alpha * dmap.field_inner(p, p)
        if qq <= 0.0:
            break
        step = gamma / qq
        f = f + step * p
        r = r - step * q
        s = dmap.adjoint(r) - alpha * f
        gamma_new = dmap.field_inner(s, s)
        record(f, r)
        hist.iterations = it
        if hist.residual[-1] < best[0]:
            best = (hist.residual[-1], f.copy())
        if gamma_new <= tol**2 * gamma0 or (
            target_error is not None and hist.error_l2 and hist.error_l2[-1] <= target_error
        ):
            hist.f, hist.converged = f, True
            return hist
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    hist.f = best[1]
    log.info("reconstruction stopped after %d iterations without convergence", hist.iterations)
    return hist


def inverse_crime_check(setup: ObservationSetup, truth: Field, alpha: float = 0.0, max_iters: int = 200,
                        tol: float = 1e-8, factor: int = 2, max_digits: float = 1.0,
                        target_error: Optional[float] = None) -> dict:
    """Reconstruct from data simulated on a ``factor``-times finer grid and compare
    with the same-grid (inverse-crime) reconstruction under the same stopping rule.

    Fine data are restricted to the coarse trace nodes and time levels.  The
    loss is ``log10(err_fine_data / err_same_grid)`` in relative L2 error.
    """
    if factor < 2:
        raise ParameterError("refinement factor must be at least 2")
    coarse = DataMap(setup)
    dom = setup.domain
    fine_dom = Domain(dom.lower, dom.upper, dom.h / factor)
    fine = DataMap(setup.with_(domain=fine_dom, dt=coarse.dt / factor))
    idx = np.array(np.unravel_index(coarse.nodes, dom.shape)) * factor
    fine_nodes = np.ravel_multi_index(tuple(idx), fine_dom.shape)
    lookup = {(int(f), int(n)): j for j, (f, n) in enumerate(zip(fine.face_of, fine.nodes))}
    try:
        cols = [lookup[(int(f), int(n))] for f, n in zip(coarse.face_of, fine_nodes)]
    except KeyError:
        raise SetupError("coarse trace nodes are not nodes of the refined trace") from None
    d_fine = fine.forward(truth.sample(fine_dom).ravel()).values[::factor][:, cols]
    f_true = coarse.ops.project(truth.sample(dom).ravel())
    kw = dict(alpha=alpha, max_iters=max_iters, tol=tol, truth=f_true, dmap=coarse, target_error=target_error)
    same = reconstruct(coarse.forward(f_true), setup, **kw)
    cross = reconstruct(coarse.trace(d_fine), setup, **kw)
    e_same, e_cross = same.error_l2[-1], cross.error_l2[-1]
    lost = math.log10(e_cross / e_same) if e_same > 0 and e_cross > 0 else 0.0
    return {
        "factor": factor,
        "error_same_grid": e_same,
        "error_fine_data": e_cross,
        "digits_lost": lost,
        "max_digits": max_digits,
        "within_threshold": bool(lost <= max_digits),
        "data_mismatch": float(np.linalg.norm(d_fine - coarse.forward(f_true).values)
                               / max(np.linalg.norm(d_fine), 1e-300)),
    }


def add_noise(trace: BoundaryTrace, level: float, rng: np.random.Generator) -> BoundaryTrace:
    """Gaussian noise with ``|noise| = level |trace|`` in the trace norm."""
    noise = rng.standard_normal(trace.values.shape)
    nt = BoundaryTrace(trace.times, noise, trace.weights, trace.face_of, trace.nodes, trace.face_names)
    scale = level * trace.norm(0) / max(nt.norm(0), 1e-300)
    return BoundaryTrace(trace.times, trace.values + scale * noise, trace.weights, trace.face_of,
                         trace.nodes, trace.face_names)


def choose_alpha(data: BoundaryTrace, setup: ObservationSetup, alphas: Sequence[float],
                 noise_level: float, tau: float = 1.1, dmap: Optional[DataMap] = None,
                 max_iters: int = 200) -> tuple[float, ReconstructionResult]:
    """Discrepancy principle: the largest ``alpha`` whose misfit is below ``tau * noise``."""
    dmap = dmap or DataMap(setup)
    delta = noise_level * data.norm(0)
    chosen = None
    for a in sorted(alphas, reverse=True):
        res = reconstruct(data, setup, a, max_iters, dmap=dmap)
        if res.misfit[-1] <= tau * delta:
            return a, res
        chosen = (a, res)
    return chosen


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class StabilityEnsembleReport:
    """Per-sample norms and the empirical two-sided ratio interval.

    ``upper`` is ``|trace on all faces| / |sample|`` and ``lower`` is
    ``|sample| / |trace on observed faces|``; both stay bounded when the
    two-sided inequality holds.
    """

    sample_norms: np.ndarray
    full_traces: np.ndarray
    observed_traces: np.ndarray
    labels: list
    refinement_trend: dict = dfield(default_factory=dict)
    extra: dict = dfield(default_factory=dict)

    @property
    def upper(self) -> np.ndarray:
        ok = self.sample_norms > 0
        return self.full_traces[ok] / self.sample_norms[ok]

    @property
    def lower(self) -> np.ndarray:
        ok = (self.sample_norms > 0) & (self.observed_traces > 0)
        return self.sample_norms[ok] / self.observed_traces[ok]

    @property
    def observed_ratio(self) -> np.ndarray:
        ok = self.sample_norms > 0
        return self.observed_traces[ok] / self.sample_norms[ok]

    def interval(self, which: str) -> tuple[float, float]:
        vals = self.upper if which == "upper" else self.lower
        if vals.size == 0:
            return (float("nan"), float("nan"))
        return float(vals.min()), float(vals.max())

    def to_dict(self) -> dict:
        up, lo = self.interval("upper"), self.interval("lower")
        out = {
            "samples": len(self.labels),
            "skipped": int(np.sum(self.sample_norms == 0)),
            "upper_min": up[0],
            "upper_max": up[1],
            "upper_spread": up[1] / up[0] if up[0] > 0 else float("inf"),
            "lower_min": lo[0],
            "lower_max": lo[1],
            "lower_spread": lo[1] / lo[0] if lo[0] > 0 else float("inf"),
            "refinement_trend": self.refinement_trend,
        }
        out.update(self.extra)
        return out

    def rows(self):
        for i, lab in enumerate(self.labels):
            yield [lab, float(self.sample_norms[i]), float(self.full_traces[i]), float(self.observed_traces[i])]


def interval_shift(coarse: StabilityEnsembleReport, fine: StabilityEnsembleReport) -> dict:
    """Relative movement of the interval endpoints between two resolutions."""
    out = {}
    for which in ("upper", "lower"):
        a, b = coarse.interval(which), fine.interval(which)
        out[f"{which}_min"] = abs(b[0] - a[0]) / abs(b[0])
        out[f"{which}_max"] = abs(b[1] - a[1]) / abs(b[1])
    return out


def initial_ensemble(domain: Domain, count: int, seed: int, max_mode: int = 8,
                     smoothness: int = 3) -> list[Field]:
    """Random ``H^3 cap H^1_0`` fields, unit exact ``H^3`` norm."""
    rng = np.random.default_rng(seed)
    return [random_sine_series(domain, rng, max_mode, smoothness + 1, normalize=3) for _ in range(count)]


def source_ensemble(domain: Domain, count: int, seed: int, max_mode: int = 8,
                    smoothness: int = 2) -> list[Field]:
    """Random ``H^2_0`` fields (clamped sine series), unit exact ``H^2`` norm."""
    rng = np.random.default_rng(seed)
    return [random_sine_series(domain, rng, max_mode, smoothness + 1, clamped=True, normalize=2)
            for _ in range(count)]


def packet_ensemble(domain: Domain, center: Sequence[float], modes: Sequence[float],
                    radius: float = 0.08) -> list[Field]:
    """High-frequency packets localized near ``center`` (negative controls)."""
    return [wave_packet(domain, center, radius, m) for m in modes]


def _trace_norms(spec: ProblemSpec, order: int, observed: tuple) -> tuple[float, float]:
    base = simulate(spec)
    full = conormal_trace(base)
    for k in range(1, order + 1):
        full.derivatives[k] = conormal_trace(derivative_system_simulate(spec, k)).values
    return full.norm(order), full.restrict(observed).norm(order)


def observability_sweep(setup: ObservationSetup, ensemble: Sequence[Field],
                        order: int = 2, threads: Optional[int] = None) -> StabilityEnsembleReport:
    """Trace norms of ``y_tt = A y + memory``, ``y(0) = a``, ``y_t(0) = 0`` against ``|a|_{H^3}``."""
    dom = setup.domain

    def one(item):
        i, a = item
        norm_a = a.sobolev_norm(dom, 3)
        if norm_a == 0.0:
            return 0.0, 0.0, 0.0
        spec = ProblemSpec(dom, setup.field, setup.kernel, setup.T, None, a, None, setup.dt)
        full, obs = _trace_norms(spec, order, setup.faces)
        return norm_a, full, obs

    res = parallel_map(one, list(enumerate(ensemble)), threads)
    arr = np.array(res)
    return StabilityEnsembleReport(arr[:, 0], arr[:, 1], arr[:, 2], list(range(len(ensemble))),
                                   extra={"T": setup.T, "order": order, "faces": list(setup.faces),
                                          "h": dom.h})


def lipschitz_sweep(setup: ObservationSetup, ensemble: Sequence, order: int = 3,
                    threads: Optional[int] = None) -> StabilityEnsembleReport:
    """``|f|_{H^2}`` against ``H^order`` traces of the source problem with zero data."""
    dom = setup.domain
    ops = setup.ops

    def one(item):
        i, f = item
        if isinstance(f, Field):
            norm_f = f.sobolev_norm(dom, 2)
            arr = f.sample(dom).ravel()
        else:
            arr = np.asarray(f, float).ravel()
            norm_f = sobolev_norm(arr, ops, 2)
        if norm_f == 0.0:
            return 0.0, 0.0, 0.0
        full, obs = _trace_norms(setup.problem(arr), order, setup.faces)
        return norm_f, full, obs

    res = parallel_map(one, list(enumerate(ensemble)), threads)
    arr = np.array(res)
    return StabilityEnsembleReport(arr[:, 0], arr[:, 1], arr[:, 2], list(range(len(ensemble))),
                                   extra={"T": setup.T, "order": order, "faces": list(setup.faces),
                                          "h": dom.h})


def check_source_setup(setup: ObservationSetup) -> None:
    """Raise if ``R(., 0)`` vanishes somewhere on the grid."""
    r_spatial, r_time = setup.source_factors
    r0 = sum(np.asarray(r) * float(tau(0.0)) for r, tau in zip(r_spatial, r_time))
    if np.min(np.abs(r0)) < 1e-8:
        raise SetupError("R(x, 0) vanishes on the grid")


def negative_control(setup: ObservationSetup, reference: StabilityEnsembleReport,
                     modes: Sequence[float] = (16, 20, 24), center: Sequence[float] = (0.1, 0.5),
                     radius: float = 0.2, factor: float = 0.5) -> dict:
    """Observation of localized high-mode packets with ``T = factor * threshold``.

    The packets sit next to an unobserved face.  ``collapse`` compares the
    smallest observed ratio of ``reference`` with that of the packets; the
    same packets observed over ``setup.T`` give ``collapse_same_packets``.
    """
    packets = packet_ensemble(setup.domain, center, modes, radius)
    short = setup.with_(T=factor * setup.threshold, check_time=False, dt=None)
    below = observability_sweep(short, packets)
    above = observability_sweep(setup, packets)
    low = float(below.observed_ratio.min())
    return {
        "T": short.T,
        "modes": list(modes),
        "center": list(center),
        "radius": radius,
        "ratios_short": [float(v) for v in below.observed_ratio],
        "ratios_long": [float(v) for v in above.observed_ratio],
        "collapse": float(reference.observed_ratio.min()) / low,
        "collapse_same_packets": float(above.observed_ratio.min()) / low,
    }
