"""Explicit leapfrog solver for the anisotropic wave equation with memory.

    d_t^2 u = sum_ij d_i(a_ij d_j u) + int_0^t sum_alpha b_alpha(x,t,eta) d^alpha u(eta) deta + F

with homogeneous Dirichlet data.  The scheme is

    u^1     = P[u^0 + dt v0 + dt^2/2 (A u^0 + F^0)]
    u^{k+1} = P[2u^k - u^{k-1} + dt^2 (A u^k + M^k + F^k)]

where ``M^k`` is the trapezoid memory integral and ``P`` zeroes boundary
nodes.  The same stepping also has an exact reverse-mode transpose, used
by the inverse-problem adjoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dfield, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CFLError, ParameterError, PreconditionError, SetupError, SimulationError, ValidationError
from .fields import Field, TimeFunction
from .geometry import CoefficientField, Domain
from .memory_kernels import (
    LiftedTemporalKernel,
    MemoryKernel,
    lift,
    trapezoid_weights,
)
from .operators import GridOperators

# tolerance for the zero-velocity check before even extension
VELOCITY_TOL = 1e-10


# ---------------------------------------------------------------------------
# sources


class Source:
    """Time-dependent forcing; ``evaluate(t, k)`` is ``d_t^k F`` on the flattened grid."""

    def evaluate(self, t: float, k: int = 0) -> np.ndarray:
        raise NotImplementedError

    def __add__(self, other: "Source") -> "SumSource":
        return SumSource((self, other))


@dataclass(frozen=True)
class SeparableSource(Source):
    spatial: np.ndarray
    time: TimeFunction

    def evaluate(self, t, k=0):
        return self.spatial * float(self.time(t, k))


@dataclass(frozen=True)
class SumSource(Source):
    parts: tuple

    def evaluate(self, t, k=0):
        return sum(p.evaluate(t, k) for p in self.parts)


@dataclass(frozen=True)
class CallableSource(Source):
    func: Callable[[float, int], np.ndarray]

    def evaluate(self, t, k=0):
        return np.asarray(self.func(t, k), float)


@dataclass(frozen=True)
class StepSource(Source):
    """Source given only at the scheme's time levels (no time derivatives)."""

    values: np.ndarray  # (steps, size)
    times: np.ndarray

    def evaluate(self, t, k=0):
        if k != 0:
            raise ValidationError("tabulated source has no time derivatives")
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValidationError(f"time {t} is not a tabulated level")
        return self.values[idx]


@dataclass(frozen=True)
class SeparatedSource(Source):
    """``R(x, t) f(x)`` with ``R = sum_m r_m(x) tau_m(t)``."""

    r_spatial: tuple  # flat arrays
    r_time: tuple  # TimeFunction
    f: np.ndarray

    def R(self, t, k=0) -> np.ndarray:
        return sum(r * float(tau(t, k)) for r, tau in zip(self.r_spatial, self.r_time))

    def evaluate(self, t, k=0):
        return self.R(t, k) * self.f

    def with_f(self, f: np.ndarray) -> "SeparatedSource":
        return SeparatedSource(self.r_spatial, self.r_time, np.asarray(f, float))


def default_R(domain: Domain, amplitude: float = 0.5) -> tuple[tuple, tuple]:
    """``R(x, t) = 1 + amplitude cos(t) g(x)`` with ``g = prod_i sin(pi x_i)``."""
    g = np.ones(domain.shape)
    for axis, lo, hi in zip(range(domain.n), domain.lower, domain.upper):
        g = g * np.sin(np.pi * (domain.mesh[axis] - lo) / (hi - lo))
    return (np.ones(domain.size), g.ravel()), (
        TimeFunction.constant(1.0),
        TimeFunction.cosine(1.0, amplitude),
    )


def _as_grid(value, domain: Domain) -> np.ndarray:
    if value is None:
        return np.zeros(domain.size)
    if isinstance(value, Field):
        return value.sample(domain).ravel()
    if callable(value):
        return np.asarray(value(domain.points), float).ravel()
    arr = np.asarray(value, float)
    if arr.size == 1:
        return np.full(domain.size, float(arr))
    if arr.size != domain.size:
        raise ValidationError(f"grid array has {arr.size} entries, expected {domain.size}")
    return arr.ravel().copy()


# ---------------------------------------------------------------------------
# problem and result


@dataclass(frozen=True)
class ProblemSpec:
    domain: Domain
    field: CoefficientField = dfield(compare=False)
    kernel: MemoryKernel = dfield(compare=False)
    T: float
    source: Optional[Source] = dfield(default=None, compare=False)
    u0: object = dfield(default=None, compare=False)
    v0: object = dfield(default=None, compare=False)
    dt: Optional[float] = None
    r_min: float = 1e-8

    @property
    def mode(self) -> str:
        if self.source is None:
            return "none"
        return "separated" if isinstance(self.source, SeparatedSource) else "general"

    def validate(self) -> None:
        if not self.T > 0:
            raise ParameterError("final time must be positive")
        self.field.validate(self.domain)
        if self.kernel.n != self.domain.n:
            raise ValidationError("kernel dimension does not match the domain")
        if isinstance(self.source, SeparatedSource):
            r0 = np.abs(self.source.R(0.0))
            if np.min(r0) < self.r_min:
                raise SetupError(f"|R(x, 0)| vanishes on the grid (min {np.min(r0):.3e})")

    def with_(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)


def cfl_limit(domain: Domain, field: CoefficientField) -> float:
    return 0.5 * domain.h / math.sqrt(field.max_spectral_radius(domain))


def resolve_time_step(spec: ProblemSpec) -> tuple[float, int]:
    limit = cfl_limit(spec.domain, spec.field)
    if spec.dt is None:
        steps = int(math.ceil(spec.T / limit - 1e-9))
        return spec.T / steps, steps
    if spec.dt > limit * (1 + 1e-12):
        raise CFLError(f"dt={spec.dt:.4g} exceeds the CFL limit {limit:.4g}")
    steps = int(round(spec.T / spec.dt))
    if abs(steps * spec.dt - spec.T) > 1e-9 * spec.T:
        raise ValidationError("dt must divide T")
    return spec.dt, steps


@dataclass
class SimulationResult:
    """Solution history on all nodes; ``u`` has shape ``(steps + 1, size)``."""

    domain: Domain
    times: np.ndarray
    u: np.ndarray
    ops: GridOperators = dfield(repr=False)
    spec: Optional[ProblemSpec] = dfield(default=None, repr=False)
    source_values: Optional[np.ndarray] = dfield(default=None, repr=False)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    def grid(self, k: int) -> np.ndarray:
        return self.u[k].reshape(self.domain.shape)

    def time_derivative(self, order: int = 1, values: Optional[np.ndarray] = None) -> np.ndarray:
        """Second-order differences in time along axis 0 (one-sided at the ends)."""
        return time_difference(self.u if values is None else values, self.dt, order)

    def spatial_derivative(self, alpha, values: Optional[np.ndarray] = None) -> np.ndarray:
        d = self.ops.full_derivative(alpha)
        vals = self.u if values is None else values
        return (d @ vals.T).T

    def v_field(self, cutoff) -> np.ndarray:
        """``chi d_t^2 u - chi F`` on the stored levels (needs stored source values)."""
        if self.source_values is None:
            raise PreconditionError("source values were not stored")
        chi = cutoff.chi(self.times)[:, None]
        return chi * (self.time_derivative(2) - self.source_values)


def time_difference(values: np.ndarray, dt: float, order: int) -> np.ndarray:
    if order == 0:
        return values
    if order == 1:
        return np.gradient(values, dt, axis=0, edge_order=2)
    if order == 2:
        out = np.empty_like(values)
        out[1:-1] = (values[2:] - 2 * values[1:-1] + values[:-2]) / dt**2
        out[0] = (2 * values[0] - 5 * values[1] + 4 * values[2] - values[3]) / dt**2
        out[-1] = (2 * values[-1] - 5 * values[-2] + 4 * values[-3] - values[-4]) / dt**2
        return out
    return np.gradient(time_difference(values, dt, order - 1), dt, axis=0, edge_order=2)


# ---------------------------------------------------------------------------
# the scheme


@dataclass
class _MemoryTerm:
    g: np.ndarray
    D: object
    decay: Optional[float]
    weights: Optional[np.ndarray]  # (steps+1, steps+1) trapezoid table


class LeapfrogScheme:
    """Discrete solution operator for fixed grid, kernel and time levels."""

    def __init__(self, ops: GridOperators, kernel: MemoryKernel, dt: float, steps: int):
        self.ops = ops
        self.kernel = kernel
        self.dt = dt
        self.steps = steps
        self.times = dt * np.arange(steps + 1)
        self.A = ops.A
        self.AT = self.A.T.tocsr()
        self.mask = ops.interior
        self.terms: list[_MemoryTerm] = []
        for term in kernel.terms:
            if term.temporal.name == "zero":
                continue
            g = ops.spatial(term.spatial)
            if not np.any(g):
                continue
            D = ops.derivative(term.alpha)
            if term.temporal.decay is not None and not isinstance(term.temporal, LiftedTemporalKernel):
                self.terms.append(_MemoryTerm(g, D, float(term.temporal.decay), None))
            else:
                table = np.zeros((steps + 1, steps + 1))
                for k in range(1, steps + 1):
                    table[k, : k + 1] = trapezoid_weights(term.temporal, self.times, k)
                self.terms.append(_MemoryTerm(g, D, None, table))

    @property
    def has_memory(self) -> bool:
        return bool(self.terms)

    def _p(self, u):
        u[~self.mask] = 0.0
        return u

    def run(self, u0: np.ndarray, v0: np.ndarray, source, check_every: int = 25) -> np.ndarray:
        """Full history ``(steps+1, size)``; ``source(k)`` returns ``F^k`` (flat)."""
        dt, N = self.dt, self.steps
        size = self.ops.size
        U = np.zeros((N + 1, size))
        U[0] = self._p(np.array(u0, float))
        F0 = source(0)
        U[1] = self._p(U[0] + dt * v0 + 0.5 * dt**2 * (self.A @ U[0] + F0))
        running = [np.array(U[0]) if t.decay is not None else None for t in self.terms]
        for t_idx, t in enumerate(self.terms):
            if t.decay is not None:
                running[t_idx] = math.exp(-t.decay * dt) * running[t_idx] + U[1]
        for k in range(1, N):
            rhs = self.A @ U[k] + source(k)
            for t_idx, term in enumerate(self.terms):
                if term.decay is not None:
                    z = dt * (running[t_idx] - 0.5 * math.exp(-term.decay * self.times[k]) * U[0] - 0.5 * U[k])
                else:
                    z = term.weights[k, : k + 1] @ U[: k + 1]
                rhs += term.g * (term.D @ z)
            U[k + 1] = self._p(2 * U[k] - U[k - 1] + dt**2 * rhs)
            for t_idx, term in enumerate(self.terms):
                if term.decay is not None:
                    running[t_idx] = math.exp(-term.decay * dt) * running[t_idx] + U[k + 1]
            if (k % check_every == 0 or k == N - 1) and not np.all(np.isfinite(U[k + 1])):
                raise SimulationError(f"non-finite values at step {k + 1}", step=k + 1)
        return U

    def memory_at(self, U: np.ndarray, k: int) -> np.ndarray:
        """Memory term ``M^k`` computed directly from a history."""
        out = np.zeros(self.ops.size)
        if k == 0:
            return out
        for term in self.terms:
            if term.decay is not None:
                w = self.dt * np.exp(-term.decay * (self.times[k] - self.times[: k + 1]))
                w[0] *= 0.5
                w[-1] *= 0.5
            else:
                w = term.weights[k, : k + 1]
            out += term.g * (term.D @ (w @ U[: k + 1]))
        return out

    def reverse(self, E: np.ndarray) -> np.ndarray:
        """Transpose sweep.

        ``E[k]`` is the gradient of a linear functional with respect to the
        computed ``u^k`` (k = 0..N).  Returns ``lam`` with ``lam[k] = P ubar^k``,
        the total adjoint of level ``k`` (entry 0 unused).  The gradient with
        respect to ``F^m`` is ``c_m lam[m+1]`` with ``c_0 = dt^2/2`` and
        ``c_m = dt^2`` otherwise.
        """
        dt, N = self.dt, self.steps
        size = self.ops.size
        lam = np.zeros((N + 2, size))
        Z = [np.zeros((N + 1, size)) if t.decay is None else None for t in self.terms]
        Q = [np.zeros(size) if t.decay is not None else None for t in self.terms]
        zeta_cur = [np.zeros(size) for _ in self.terms]
        for k in range(N, 0, -1):
            ub = np.array(E[k], float)
            if k <= N - 1:
                ub += 2 * lam[k + 1] + dt**2 * (self.AT @ lam[k + 1])
                # memory adjoint: equation for u^{k+1} contributes zeta^k
                for t_idx, term in enumerate(self.terms):
                    zeta = dt**2 * (term.D.T @ (term.g * lam[k + 1]))
                    zeta_cur[t_idx] = zeta
                    if term.decay is not None:
                        Q[t_idx] = zeta + math.exp(-term.decay * dt) * Q[t_idx]
                    else:
                        Z[t_idx][k] = zeta
            if k <= N - 2:
                ub -= lam[k + 2]
            for t_idx, term in enumerate(self.terms):
                if k > N - 1:
                    continue
                if term.decay is not None:
                    ub += dt * (Q[t_idx] - 0.5 * zeta_cur[t_idx])
                else:
                    col = term.weights[k:N, k]
                    ub += col @ Z[t_idx][k:N]
            lam[k] = self._p(ub)
        return lam[: N + 1]

    def source_weights(self) -> np.ndarray:
        c = np.full(self.steps, self.dt**2)
        c[0] = 0.5 * self.dt**2
        return c


def simulate(spec: ProblemSpec, scheme: Optional[LeapfrogScheme] = None,
             store_source: bool = False) -> SimulationResult:
    """Run the leapfrog scheme for ``spec``."""
    spec.validate()
    dt, steps = resolve_time_step(spec)
    ops = scheme.ops if scheme is not None else GridOperators(spec.domain, spec.field)
    if scheme is None:
        scheme = LeapfrogScheme(ops, spec.kernel, dt, steps)
    times = scheme.times
    src_vals = None
    if spec.source is None:
        zero = np.zeros(ops.size)
        source = lambda k: zero  # noqa: E731
    else:
        src_vals = np.array([ops.project(spec.source.evaluate(t)) for t in times])
        source = lambda k: src_vals[k]  # noqa: E731
    u0 = _as_grid(spec.u0, spec.domain)
    v0 = ops.project(_as_grid(spec.v0, spec.domain))
    U = scheme.run(u0, v0, source)
    return SimulationResult(spec.domain, times, U, ops, spec, src_vals if store_source else None)


# ---------------------------------------------------------------------------
# traces


@dataclass
class BoundaryTrace:
    """Conormal derivative on a set of face nodes, per time level.

    ``values`` has shape ``(steps+1, count)``.  ``derivatives`` optionally
    holds accurate time derivatives ``{k: array}`` from derivative systems.
    """

    times: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    face_of: np.ndarray
    nodes: np.ndarray
    face_names: tuple
    derivatives: dict = dfield(default_factory=dict)

    @property
    def count(self) -> int:
        return self.values.shape[1]

    def restrict(self, names) -> "BoundaryTrace":
        names = set(names)
        keep = np.array([self.face_names[i] in names for i in self.face_of])
        return BoundaryTrace(
            self.times,
            self.values[:, keep],
            self.weights[keep],
            self.face_of[keep],
            self.nodes[keep],
            self.face_names,
            {k: v[:, keep] for k, v in self.derivatives.items()},
        )

    @property
    def faces(self) -> tuple:
        return tuple(sorted({self.face_names[i] for i in self.face_of}, key=self.face_names.index))

    def time_weights(self) -> np.ndarray:
        dt = self.times[1] - self.times[0]
        w = np.full(len(self.times), dt)
        w[0] = w[-1] = 0.5 * dt
        return w

    def derivative(self, k: int) -> np.ndarray:
        if k == 0:
            return self.values
        if k in self.derivatives:
            return self.derivatives[k]
        return time_difference(self.values, self.times[1] - self.times[0], k)

    def inner(self, other: "BoundaryTrace") -> float:
        return float(self.time_weights() @ ((self.values * other.values) @ self.weights))

    def norm(self, order: int = 0) -> float:
        """``H^order(0, T; L^2(faces))`` norm."""
        wt = self.time_weights()
        total = 0.0
        for k in range(order + 1):
            d = self.derivative(k)
            total += float(wt @ ((d**2) @ self.weights))
        return math.sqrt(total)

    def scaled(self, c: float) -> "BoundaryTrace":
        return BoundaryTrace(self.times, c * self.values, self.weights, self.face_of, self.nodes,
                             self.face_names, {k: c * v for k, v in self.derivatives.items()})

    def to_rows(self):
        for k, t in enumerate(self.times):
            for e in range(self.count):
                yield float(t), int(self.nodes[e]), float(self.values[k, e])


def trace_from_history(ops: GridOperators, times: np.ndarray, U: np.ndarray, faces=None) -> BoundaryTrace:
    tr = ops.trace
    trace = BoundaryTrace(
        times,
        (tr.matrix @ U.T).T,
        tr.weights,
        tr.face_of,
        tr.nodes,
        tuple(f.name for f in tr.faces),
    )
    return trace if faces is None else trace.restrict(faces)


def conormal_trace(result: SimulationResult, faces: Optional[Sequence[str]] = None) -> BoundaryTrace:
    """``sum_ij a_ij d_j u nu_i`` on the requested faces (all faces by default)."""
    return trace_from_history(result.ops, result.times, result.u, faces)


# ---------------------------------------------------------------------------
# even extension and derivative systems


def initial_velocity_residual(result: SimulationResult) -> float:
    """Discrete velocity at t = 0 implied by the Taylor start (max norm)."""
    U = result.u
    dt = result.dt
    F0 = result.source_values[0] if result.source_values is not None else (
        result.ops.project(result.spec.source.evaluate(0.0))
        if result.spec is not None and result.spec.source is not None
        else np.zeros(result.ops.size)
    )
    v = (U[1] - U[0]) / dt - 0.5 * dt * (result.ops.A @ U[0] + F0)
    return float(np.max(np.abs(result.ops.project(v))))


def even_extend(result: SimulationResult) -> SimulationResult:
    """Mirror the history to ``(-T, T)``; requires zero initial velocity."""
    vel = initial_velocity_residual(result)
    scale = max(1.0, float(np.max(np.abs(result.u[:2]))) / result.dt)
    if vel > VELOCITY_TOL * scale:
        raise PreconditionError(f"initial velocity is nonzero (max {vel:.3e})")
    times = np.concatenate([-result.times[:0:-1], result.times])
    U = np.concatenate([result.u[:0:-1], result.u], axis=0)
    src = None
    if result.source_values is not None:
        src = np.concatenate([result.source_values[:0:-1], result.source_values], axis=0)
    return SimulationResult(result.domain, times, U, result.ops, result.spec, src)


@dataclass(frozen=True)
class _InitialKernelSource(Source):
    """``g(x) kappa(t, 0) d^alpha a`` with its time derivatives."""

    spatial: np.ndarray
    temporal: object
    scale: float

    def evaluate(self, t, k=0):
        val = self.temporal.dt(np.asarray(t, float), np.asarray(0.0), k, scale=self.scale)
        return self.spatial * float(val)


@dataclass(frozen=True)
class _ShiftedSource(Source):
    base: Source
    shift: int

    def evaluate(self, t, k=0):
        return self.base.evaluate(t, k + self.shift)


def lifted_problem(spec: ProblemSpec, level: int, ops: Optional[GridOperators] = None) -> ProblemSpec:
    """Problem solved by ``d_t^level u``.

    Initial data and forcing follow from differentiating the equation; the
    memory contributes ``b^(l+1)(t, 0) d^alpha u_l(0)`` to the forcing of
    level ``l + 1``.
    """
    if level not in (1, 2, 3):
        raise ParameterError(f"derivative level must be 1, 2 or 3, got {level}")
    if spec.kernel.level != 0:
        raise ParameterError("derivative systems start from a base kernel")
    if isinstance(spec.source, StepSource):
        raise ValidationError("tabulated sources cannot be differentiated in time")
    ops = ops or GridOperators(spec.domain, spec.field)
    a = ops.project(_as_grid(spec.u0, spec.domain))
    v = ops.project(_as_grid(spec.v0, spec.domain))
    src: Optional[Source] = spec.source
    for ell in range(level):
        f0 = ops.project(src.evaluate(0.0)) if src is not None else np.zeros(ops.size)
        new_a = v
        new_v = ops.project(ops.A @ a + f0)
        parts = [] if src is None else [_ShiftedSource(src, 1)]
        if np.any(a):
            lifted = lift(spec.kernel, ell + 1)
            for term in lifted.terms:
                if term.temporal.name == "zero":
                    continue
                g = ops.spatial(term.spatial) * (ops.derivative(term.alpha) @ a)
                if np.any(g):
                    parts.append(_InitialKernelSource(g, term.temporal, spec.T))
        src = SumSource(tuple(parts)) if parts else None
        a, v = new_a, new_v
    return replace(spec, kernel=lift(spec.kernel, level), source=src, u0=a, v0=v)


def derivative_system_simulate(spec: ProblemSpec, level: int) -> SimulationResult:
    """Simulate the lifted system for ``d_t^level u`` directly."""
    ops = GridOperators(spec.domain, spec.field)
    lifted = lifted_problem(spec, level, ops)
    return simulate(lifted)


def trace_with_derivatives(spec: ProblemSpec, order: int, faces=None) -> BoundaryTrace:
    """Conormal trace plus time derivatives up to ``order`` from derivative systems."""
    base = simulate(spec)
    trace = conormal_trace(base, faces)
    for k in range(1, order + 1):
        res = derivative_system_simulate(spec, k)
        trace.derivatives[k] = conormal_trace(res, faces).values
    return trace


# ---------------------------------------------------------------------------
# manufactured solutions


def apply_principal_exact(field: CoefficientField, X: Field, points: np.ndarray) -> np.ndarray:
    """``sum_ij d_i(a_ij d_j X)`` from analytic derivatives."""
    n = field.n
    a = field.matrix(points)
    da = field.gradient(points)
    out = np.zeros(points.shape[:-1])
    for i in range(n):
        for j in range(n):
            ej = tuple(int(m == j) for m in range(n))
            eij = tuple(int(m == i) + int(m == j) for m in range(n))
            out += da[..., i, j, i] * X.derivative(points, ej) + a[..., i, j] * X.derivative(points, eij)
    return out


class ManufacturedSource(Source):
    """Forcing that makes ``X(x) tau(t)`` an exact solution of the continuous problem."""

    def __init__(self, domain: Domain, field: CoefficientField, kernel: MemoryKernel,
                 X: Field, tau: TimeFunction):
        from .fields import time_integral

        self.domain = domain
        self.tau = tau
        pts = domain.points
        self.x = X.sample(domain).ravel()
        self.ax = apply_principal_exact(field, X, pts).ravel()
        self.mem = []
        for term in kernel.terms:
            if term.temporal.name == "zero":
                continue
            g = np.asarray(term.spatial(pts), float).ravel()
            self.mem.append((g * X.derivative(pts, term.alpha).ravel(), term.temporal))
        self._integral = lambda kappa, t: float(time_integral(kappa, tau, np.array([t]))[0])

    def memory_integral(self, kappa, t: float, k: int) -> float:
        if k == 0:
            return self._integral(kappa, t)
        step = 1e-3
        offsets = np.arange(-2, 3)
        w = {1: np.array([1, -8, 0, 8, -1]) / 12.0,
             2: np.array([-1, 16, -30, 16, -1]) / 12.0,
             3: np.array([-1, 2, 0, -2, 1]) / 2.0}[k]
        vals = np.array([self._integral(kappa, t + o * step) for o in offsets])
        return float(w @ vals) / step**k

    def evaluate(self, t, k=0):
        out = self.x * float(self.tau(t, k + 2)) - self.ax * float(self.tau(t, k))
        for gx, kappa in self.mem:
            out = out - gx * self.memory_integral(kappa, t, k)
        return out

    def exact(self, t) -> np.ndarray:
        return self.x * float(self.tau(t))
