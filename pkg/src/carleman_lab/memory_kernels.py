"""Memory kernels ``b_alpha(x, t, eta)`` and their recursive lifts.

A kernel is a finite sum of separable terms ``g(x) * kappa(t, eta)``
attached to a multi-index ``alpha`` with ``|alpha| <= 2``.  The memory
operator applied to a history ``u`` is

    sum_terms g(x) * int_0^t kappa(t, eta) d^alpha u(x, eta) deta.

Lifted kernels follow the recursion

    b^(1)(t, eta)   = b(t, t) + int_eta^t d_t b(t, z) dz
    b^(k+1)(t, eta) = b^(k)(t, t) + int_eta^t d_t b^(k)(t, z) dz,

which unrolls to the closed form

    b^(k)(t, eta) = d_t^k int_eta^t b(t, z) (z - eta)^(k-1) / (k-1)! dz.

Convolution kernels ``kappa(t - eta)`` are fixed points of the lift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ParameterError, StateError, ValidationError

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def central_weights(order: int, half_width: int) -> np.ndarray:
    """Central finite-difference weights for the ``order``-th derivative on
    offsets ``-half_width..half_width`` (unit spacing)."""
    offsets = np.arange(-half_width, half_width + 1, dtype=float)
    m = len(offsets)
    vander = np.vander(offsets, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(vander, rhs)


class TemporalKernel:
    """Scalar kernel ``kappa(t, eta)``.

    ``convolution`` marks kernels of the form ``kappa(t - eta)``, and
    ``decay`` marks the exponential family ``exp(-decay (t - eta))`` for which
    the memory integral has an O(1) recursive update.
    """

    def __init__(
        self,
        func: Callable[[np.ndarray, np.ndarray], np.ndarray],
        name: str = "custom",
        convolution: bool = False,
        decay: Optional[float] = None,
        dt: Optional[Callable[[np.ndarray, np.ndarray, int], np.ndarray]] = None,
    ):
        self.func = func
        self.name = name
        self.convolution = convolution or decay is not None
        self.decay = decay
        self._dt = dt

    def __call__(self, t, eta) -> np.ndarray:
        t, eta = np.broadcast_arrays(np.asarray(t, float), np.asarray(eta, float))
        return np.asarray(self.func(t, eta), dtype=float) * np.ones_like(t)

    def dt(self, t, eta, k: int = 1, scale: float = 1.0) -> np.ndarray:
        """``d_t^k kappa``; analytic when supplied, central FD with step 1e-4*scale otherwise."""
        if k == 0:
            return self(t, eta)
        if self._dt is not None:
            return np.asarray(self._dt(np.asarray(t, float), np.asarray(eta, float), k), float)
        step = 1e-4 * scale
        w = central_weights(k, max(1, (k + 1) // 2) + 1)
        hw = (len(w) - 1) // 2
        t = np.asarray(t, float)
        return sum(w[i] * self(t + (i - hw) * step, eta) for i in range(len(w))) / step**k


def zero_temporal() -> TemporalKernel:
    return TemporalKernel(
        lambda t, e: np.zeros_like(t),
        "zero",
        convolution=True,
        dt=lambda t, e, k: np.zeros(np.broadcast(t, e).shape),
    )


def exponential_temporal(lam: float) -> TemporalKernel:
    """``exp(-lam (t - eta))``; ``lam = 0`` gives the constant kernel."""
    lam = float(lam)
    if lam < 0:
        raise ParameterError("decay rate must be non-negative")
    return TemporalKernel(
        lambda t, e: np.exp(-lam * (t - e)),
        f"exp({lam:g})",
        decay=lam,
        dt=lambda t, e, k: (-lam) ** k * np.exp(-lam * (t - e)),
    )


class LiftedTemporalKernel(TemporalKernel):
    """Level-``k`` lift of a temporal kernel evaluated from the closed form.

    The inner integral uses 16-point Gauss-Legendre quadrature; the outer
    ``d_t^k`` uses a 10th-order central difference with step ``h``.
    """

    def __init__(self, base: TemporalKernel, level: int, step: float = 0.02):
        if level not in (1, 2, 3):
            raise ParameterError(f"lift level must be 1, 2 or 3, got {level}")
        self.base = base
        self.level = level
        self.step = step
        super().__init__(self._evaluate, f"lift{level}({base.name})")
        self._weights = central_weights(level, 5 + (level + 1) // 2)
        self._memo: dict = {}

    def _g(self, t, eta):
        # int_eta^t kappa(t, z) (z - eta)^(k-1)/(k-1)! dz, vectorised
        half = 0.5 * (t - eta)
        mid = 0.5 * (t + eta)
        z = mid[..., None] + half[..., None] * _GL_NODES
        vals = self.base(t[..., None], z) * (z - eta[..., None]) ** (self.level - 1)
        return half * (vals @ _GL_WEIGHTS) / math.factorial(self.level - 1)

    def _evaluate(self, t, eta):
        hw = (len(self._weights) - 1) // 2
        out = np.zeros(np.broadcast(t, eta).shape)
        for i, wi in enumerate(self._weights):
            out = out + wi * self._g(t + (i - hw) * self.step, eta)
        return out / self.step**self.level

    def table(self, times: np.ndarray) -> np.ndarray:
        """Lower-triangular table ``kappa^(k)(t_i, t_j)``, memoised per time grid."""
        key = (len(times), float(times[0]), float(times[-1]))
        if key not in self._memo:
            ti, tj = np.meshgrid(times, times, indexing="ij")
            tab = np.where(tj <= ti + 1e-15, self(ti, tj), 0.0)
            self._memo[key] = tab
        return self._memo[key]


def lift_temporal(kappa: TemporalKernel, level: int) -> TemporalKernel:
    if level not in (0, 1, 2, 3):
        raise ParameterError(f"lift level must be in 0..3, got {level}")
    if level == 0 or kappa.convolution:
        return kappa
    return LiftedTemporalKernel(kappa, level)


# ---------------------------------------------------------------------------


SpatialFactor = Callable[[np.ndarray], np.ndarray]


def bump(center: Sequence[float], width: float, amplitude: float = 1.0) -> SpatialFactor:
    """Smooth compactly supported bump ``amplitude * exp(1 - 1/(1 - r^2))``, ``r = |x-c|/width``."""
    center = np.asarray(center, dtype=float)

    def g(x):
        r2 = np.sum((x - center) ** 2, axis=-1) / width**2
        out = np.zeros(r2.shape)
        inside = r2 < 1.0
        out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
        return out

    return g


def constant_spatial(c: float) -> SpatialFactor:
    return lambda x: np.full(x.shape[:-1], float(c))


@dataclass(frozen=True)
class KernelTerm:
    alpha: tuple[int, ...]
    spatial: SpatialFactor = field(compare=False)
    temporal: TemporalKernel = field(compare=False)

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(int(a) for a in self.alpha))
        if any(a < 0 for a in self.alpha) or sum(self.alpha) > 2:
            raise ValidationError(f"multi-index {self.alpha} must satisfy |alpha| <= 2")

    def at(self, x, t, eta) -> np.ndarray:
        x = np.asarray(x, float)
        return self.spatial(x) * self.temporal(t, eta)


@dataclass(frozen=True)
class MemoryKernel:
    """Finite sum of separable terms; ``level`` > 0 marks a lifted kernel."""

    n: int
    terms: tuple[KernelTerm, ...] = ()
    name: str = "custom"
    level: int = 0

    def __post_init__(self):
        for term in self.terms:
            if len(term.alpha) != self.n:
                raise ValidationError(f"multi-index {term.alpha} does not match dimension {self.n}")

    @property
    def is_zero(self) -> bool:
        return all(t.temporal.name == "zero" for t in self.terms)

    def b(self, alpha, x, t, eta) -> np.ndarray:
        """``b_alpha(x, t, eta)`` summed over the matching terms."""
        alpha = tuple(alpha)
        x = np.asarray(x, float)
        out = np.zeros(np.broadcast(x[..., 0], np.asarray(t), np.asarray(eta)).shape)
        for term in self.terms:
            if term.alpha == alpha:
                out = out + term.at(x, t, eta)
        return out

    def alphas(self) -> list[tuple[int, ...]]:
        return sorted({t.alpha for t in self.terms})

    def lift(self, k: int) -> "MemoryKernel":
        return lift(self, k)


def lift(kernel: MemoryKernel, k: int) -> MemoryKernel:
    """Kernel of the system satisfied by ``d_t^k u``."""
    if kernel.level != 0:
        raise ParameterError("lift expects a base kernel")
    if k not in (1, 2, 3):
        raise ParameterError(f"lift level must be 1, 2 or 3, got {k}")
    terms = tuple(KernelTerm(t.alpha, t.spatial, lift_temporal(t.temporal, k)) for t in kernel.terms)
    return MemoryKernel(kernel.n, terms, kernel.name, level=k)


def lifted_initial_kernel(kernel: MemoryKernel, x, t) -> dict:
    """``c_alpha(x, t) = b_alpha^(3)(x, t, 0)`` per multi-index."""
    lifted = kernel if kernel.level == 3 else lift(kernel, 3)
    return {a: lifted.b(a, x, t, np.zeros_like(np.asarray(t, float))) for a in lifted.alphas()}


def kernel_at_diagonal(kernel: MemoryKernel, x, t) -> dict:
    """``b_alpha(x, t, t)`` per multi-index."""
    return {a: kernel.b(a, x, t, t) for a in kernel.alphas()}


# ---------------------------------------------------------------------------
# Presets


def _unit(n: int) -> tuple[int, ...]:
    return (0,) * n


def zero_kernel(n: int) -> MemoryKernel:
    return MemoryKernel(n, (), "zero")


def stationary_kernel(
    n: int, c: float = 0.5, center=None, width: float = 0.4, alpha=None
) -> MemoryKernel:
    """Time-independent ``b_alpha(x) = c * bump(x)``."""
    center = [0.5] * n if center is None else center
    alpha = _unit(n) if alpha is None else tuple(alpha)
    term = KernelTerm(alpha, bump(center, width, c), exponential_temporal(0.0))
    return MemoryKernel(n, (term,), "stationary")


def decaying_kernel(
    n: int, c: float = 0.5, lam: float = 1.0, center=None, width: Optional[float] = None, alpha=None
) -> MemoryKernel:
    """Relaxation kernel ``c * exp(-lam (t - eta)) * g(x)``; ``g = 1`` without a width."""
    alpha = _unit(n) if alpha is None else tuple(alpha)
    if width is None:
        g = constant_spatial(c)
    else:
        g = bump([0.5] * n if center is None else center, width, c)
    return MemoryKernel(n, (KernelTerm(alpha, g, exponential_temporal(lam)),), "decaying")


KERNEL_PRESETS = {
    "zero": zero_kernel,
    "stationary": stationary_kernel,
    "decaying": decaying_kernel,
}


def make_kernel(preset: str, n: int, **params) -> MemoryKernel:
    if preset not in KERNEL_PRESETS:
        raise ValidationError(f"unknown kernel preset {preset!r}")
    return KERNEL_PRESETS[preset](n, **params)


# ---------------------------------------------------------------------------
# Discrete memory integral


def trapezoid_weights(kappa: TemporalKernel, times: np.ndarray, k: int) -> np.ndarray:
    """Weights ``C[k, j]`` with ``int_0^{t_k} kappa(t_k, eta) u(eta) ~ sum_j C[k, j] u_j``."""
    if k == 0:
        return np.zeros(1)
    dt = times[1] - times[0]
    tj = times[: k + 1]
    w = np.full(k + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    if isinstance(kappa, LiftedTemporalKernel):
        vals = kappa.table(times)[k, : k + 1]
    else:
        vals = kappa(np.full(k + 1, times[k]), tj)
    return w * vals


def apply_memory(kernel: MemoryKernel, history: np.ndarray, k: int, dt: float, ops) -> np.ndarray:
    """Memory integral at step ``k`` on every grid node (zero on the boundary).

    ``history`` has shape ``(steps, size)`` and uniform step ``dt``; ``ops``
    is an :class:`~carleman_lab.operators.GridOperators`.
    """
    history = np.asarray(history, float)
    if k < 0 or k >= history.shape[0]:
        raise StateError(f"history holds {history.shape[0]} steps, step {k} requested")
    times = dt * np.arange(history.shape[0])
    out = np.zeros(history.shape[1])
    if k == 0:
        return out
    for term in kernel.terms:
        z = trapezoid_weights(term.temporal, times, k) @ history[: k + 1]
        out += ops.spatial(term.spatial) * (ops.derivative(term.alpha) @ z)
    return out
