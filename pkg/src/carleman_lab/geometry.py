"""Box domains, anisotropic coefficient fields and Carleman weight functions.

Conventions
-----------
Grids are node-centred and include the boundary.  Grid arrays have shape
``domain.shape`` and are indexed ``[i0, i1, ...]`` (``indexing="ij"``).
Point arrays carry the coordinate on the last axis, shape ``(..., n)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import (
    DomainError,
    EllipticityError,
    ParameterError,
    PreconditionError,
    ValidationError,
)

FACE_NAMES = {
    1: (("left", "right"),),
    2: (("left", "right"), ("bottom", "top")),
}

# relative step for finite-difference derivatives of a_ij
COEFFICIENT_FD_STEP = 1e-4


@dataclass(frozen=True)
class Face:
    axis: int
    side: int  # 0 = lower, 1 = upper
    name: str

    @property
    def sign(self) -> float:
        return 1.0 if self.side == 1 else -1.0

    def normal(self, n: int) -> np.ndarray:
        nu = np.zeros(n)
        nu[self.axis] = self.sign
        return nu


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``prod_i (lower_i, upper_i)`` with a uniform grid of spacing ``h``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    h: float

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != len(self.upper) or len(self.lower) not in (1, 2):
            raise ValidationError("domain dimension must be 1 or 2")
        if not self.h > 0:
            raise ValidationError(f"grid spacing must be positive, got {self.h}")
        for lo, hi in zip(self.lower, self.upper):
            if not lo < hi:
                raise ValidationError(f"empty interval ({lo}, {hi})")
            cells = (hi - lo) / self.h
            if abs(cells - round(cells)) > 1e-8 * max(1.0, cells) or round(cells) < 2:
                raise ValidationError(
                    f"spacing h={self.h} does not divide the interval ({lo}, {hi})"
                )

    @classmethod
    def unit(cls, n: int, cells: int) -> "Domain":
        return cls((0.0,) * n, (1.0,) * n, 1.0 / cells)

    @property
    def n(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(round((hi - lo) / self.h)) + 1 for lo, hi in zip(self.lower, self.upper))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(
            np.linspace(lo, hi, m) for lo, hi, m in zip(self.lower, self.upper, self.shape)
        )

    @cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, n)``."""
        return np.stack(self.mesh, axis=-1)

    @cached_property
    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lower, self.upper))))

    @cached_property
    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[(slice(1, -1),) * self.n] = True
        return mask

    @cached_property
    def weights(self) -> np.ndarray:
        """Tensor trapezoid quadrature weights on the nodes."""
        w = np.ones(self.shape)
        for axis, m in enumerate(self.shape):
            w1 = np.full(m, self.h)
            w1[0] = w1[-1] = 0.5 * self.h
            w = w * w1.reshape([-1 if a == axis else 1 for a in range(self.n)])
        return w

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in zip(self.lower, self.upper)]))

    @cached_property
    def faces(self) -> tuple[Face, ...]:
        return tuple(
            Face(axis, side, FACE_NAMES[self.n][axis][side])
            for axis in range(self.n)
            for side in (0, 1)
        )

    def face(self, name: str) -> Face:
        for f in self.faces:
            if f.name == name:
                return f
        raise ValidationError(f"unknown face {name!r}")

    def face_index(self, face: Face) -> tuple[np.ndarray, ...]:
        """Multi-index arrays of every node on ``face``, corners included."""
        ranges = [np.arange(m) for m in self.shape]
        ranges[face.axis] = np.array([0 if face.side == 0 else self.shape[face.axis] - 1])
        grids = np.meshgrid(*ranges, indexing="ij")
        return tuple(g.ravel() for g in grids)

    def face_weights(self, face: Face) -> np.ndarray:
        """Trapezoid weights along the face (half weights at its end nodes)."""
        if self.n == 1:
            return np.ones(1)
        tangential = [a for a in range(self.n) if a != face.axis]
        w = np.ones(1)
        for a in tangential:
            w1 = np.full(self.shape[a], self.h)
            w1[0] = w1[-1] = 0.5 * self.h
            w = np.multiply.outer(w, w1).ravel()
        return w

    def face_owner(self) -> np.ndarray:
        """Map every node to the index (into ``faces``) of its owning face, -1 inside.

        Corners belong to the face of lowest axis index.
        """
        owner = np.full(self.shape, -1, dtype=int)
        for k in reversed(range(len(self.faces))):
            owner[self.face_index(self.faces[k])] = k
        return owner

    def normals(self) -> np.ndarray:
        """Outward unit normal per node by the ownership convention (zero inside)."""
        owner = self.face_owner()
        nu = np.zeros(self.shape + (self.n,))
        for k, f in enumerate(self.faces):
            nu[owner == k, f.axis] = f.sign
        return nu

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(
            np.all(x >= np.array(self.lower) - tol) and np.all(x <= np.array(self.upper) + tol)
        )

    def distance(self, x0) -> float:
        """Euclidean distance from ``x0`` to the closed box."""
        x0 = np.asarray(x0, dtype=float)
        nearest = np.clip(x0, self.lower, self.upper)
        return float(np.linalg.norm(x0 - nearest))

    def max_distance_sq(self, x0) -> float:
        """max over the closed box of |x - x0|^2 (attained at a corner)."""
        return float(np.max(np.sum((self.corners - np.asarray(x0, float)) ** 2, axis=1)))


def _require_exterior(domain: Domain, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (domain.n,):
        raise ValidationError(f"x0 must have {domain.n} components")
    if domain.distance(x0) <= 0.0:
        raise PreconditionError(f"x0={x0.tolist()} lies in the closed domain")
    return x0


# ---------------------------------------------------------------------------
# Coefficients
# ---------------------------------------------------------------------------


class CoefficientField:
    """Symmetric matrix field ``A0(x) = (a_ij(x))``.

    ``matrix`` maps points ``(..., n)`` to ``(..., n, n)``.  ``gradient``, when
    given, maps points to ``(..., n, n, n)`` with the derivative direction on
    the last axis; otherwise central differences are used.
    """

    def __init__(
        self,
        n: int,
        matrix: Callable[[np.ndarray], np.ndarray],
        gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        name: str = "custom",
        params: Optional[dict] = None,
    ):
        self.n = n
        self._matrix = matrix
        self._gradient = gradient
        self.name = name
        self.params = dict(params or {})
        self._grid_cache: dict = {}

    @property
    def has_analytic_gradient(self) -> bool:
        return self._gradient is not None

    def matrix(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.asarray(self._matrix(x), dtype=float)
        return np.broadcast_to(out, x.shape[:-1] + (self.n, self.n))

    def gradient(self, x, method: str = "auto") -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if method == "analytic" or (method == "auto" and self._gradient is not None):
            if self._gradient is None:
                raise ValidationError(f"field {self.name!r} has no analytic gradient")
            out = np.asarray(self._gradient(x), dtype=float)
            return np.broadcast_to(out, x.shape[:-1] + (self.n, self.n, self.n))
        grad = np.empty(x.shape[:-1] + (self.n, self.n, self.n))
        for k in range(self.n):
            step = COEFFICIENT_FD_STEP * np.maximum(1.0, np.abs(x[..., k]))
            e = np.zeros(self.n)
            e[k] = 1.0
            xp = x + step[..., None] * e
            xm = x - step[..., None] * e
            grad[..., k] = (self.matrix(xp) - self.matrix(xm)) / (2 * step[..., None, None])
        return grad

    def on_grid(self, domain: Domain) -> np.ndarray:
        key = (domain.lower, domain.upper, domain.h)
        if key not in self._grid_cache:
            self._grid_cache[key] = np.array(self.matrix(domain.points))
        return self._grid_cache[key]

    def validate(self, domain: Domain, tol: float = 1e-12) -> float:
        """Check symmetry and ellipticity on the grid; return ``mu0``."""
        a = self.on_grid(domain)
        asym = np.max(np.abs(a - np.swapaxes(a, -1, -2)))
        if asym > tol * max(1.0, float(np.max(np.abs(a)))):
            raise ValidationError(f"coefficient field {self.name!r} is not symmetric")
        mu0 = float(np.min(np.linalg.eigvalsh(a)))
        if not mu0 > 0:
            raise EllipticityError(f"coefficient field {self.name!r} has mu0={mu0:.3e} <= 0")
        return mu0

    def mu0(self, domain: Domain) -> float:
        return self.validate(domain)

    def max_spectral_radius(self, domain: Domain) -> float:
        return float(np.max(np.linalg.eigvalsh(self.on_grid(domain))))


def _const(n: int, mat) -> CoefficientField:
    mat = np.asarray(mat, dtype=float)
    return CoefficientField(
        n,
        lambda x: np.broadcast_to(mat, x.shape[:-1] + (n, n)),
        lambda x: np.zeros(x.shape[:-1] + (n, n, n)),
        name="constant",
        params={"matrix": mat.tolist()},
    )


def identity_field(n: int) -> CoefficientField:
    f = _const(n, np.eye(n))
    f.name = "identity"
    f.params = {}
    return f


def constant_field(matrix) -> CoefficientField:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    return _const(matrix.shape[0], matrix)


def graded_field(n: int, slope: float = 0.1) -> CoefficientField:
    """Diagonal field ``a_ii = 1 + slope * x_i``."""

    def mat(x):
        out = np.zeros(x.shape[:-1] + (n, n))
        for i in range(n):
            out[..., i, i] = 1.0 + slope * x[..., i]
        return out

    def grad(x):
        out = np.zeros(x.shape[:-1] + (n, n, n))
        for i in range(n):
            out[..., i, i, i] = slope
        return out

    return CoefficientField(n, mat, grad, name="graded", params={"slope": slope})


def anisotropic_field(strength: float = 0.2) -> CoefficientField:
    """Smooth fully anisotropic 2-D field with off-diagonal coupling.

    a11 = 1 + s x1,  a22 = 1.3 + s/2 x2,  a12 = s (1 + x1 x2) / 2.
    """
    s = strength

    def mat(x):
        x1, x2 = x[..., 0], x[..., 1]
        a11 = 1.0 + s * x1
        a22 = 1.3 + 0.5 * s * x2
        a12 = 0.5 * s * (1.0 + x1 * x2)
        return np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)

    def grad(x):
        x1, x2 = x[..., 0], x[..., 1]
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 0] = s
        out[..., 1, 1, 1] = 0.5 * s
        out[..., 0, 1, 0] = out[..., 1, 0, 0] = 0.5 * s * x2
        out[..., 0, 1, 1] = out[..., 1, 0, 1] = 0.5 * s * x1
        return out

    return CoefficientField(2, mat, grad, name="anisotropic", params={"strength": s})


def sheared_field(rate: float = 5.0, shear: float = 0.5) -> CoefficientField:
    """Sheared metric ``exp(rate x1) [[1, shear], [shear, 1]]``.

    For large ``rate`` the speed grows so fast away from an observer on the
    left that pseudo-convexity fails.
    """
    base = np.array([[1.0, shear], [shear, 1.0]])

    def mat(x):
        return np.exp(rate * x[..., 0])[..., None, None] * base

    def grad(x):
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0] = rate * np.exp(rate * x[..., 0])[..., None, None] * base
        return out

    return CoefficientField(2, mat, grad, name="sheared", params={"rate": rate, "shear": shear})


COEFFICIENT_PRESETS = {
    "identity": lambda n, **kw: identity_field(n),
    "constant": lambda n, matrix: constant_field(matrix),
    "graded": lambda n, slope=0.1: graded_field(n, slope),
    "anisotropic": lambda n, strength=0.2: anisotropic_field(strength),
    "sheared": lambda n, rate=5.0, shear=0.5: sheared_field(rate, shear),
}


def make_coefficient_field(preset: str, n: int, **params) -> CoefficientField:
    if preset not in COEFFICIENT_PRESETS:
        raise ValidationError(f"unknown coefficient preset {preset!r}")
    if preset in ("anisotropic", "sheared") and n != 2:
        raise ValidationError(f"preset {preset!r} is two-dimensional")
    return COEFFICIENT_PRESETS[preset](n, **params)


def principal_symbol(field: CoefficientField, x, xi, domain: Optional[Domain] = None) -> float:
    """``a(x, xi) = A0(x) xi . xi``."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if domain is not None and not domain.contains(x, tol=1e-12):
        raise DomainError(f"point {x.tolist()} is outside the domain")
    return float(xi @ field.matrix(x) @ xi)


def double_bracket(a: np.ndarray, da: np.ndarray, r: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``{a, {a, d}}`` for ``d = |x - x0|^2`` at points with ``r = x - x0``.

    ``a``: (..., n, n); ``da``: (..., n, n, n) with derivative index last;
    ``r``: (..., n); ``xi``: (..., n).  Closed form of the iterated Poisson
    bracket for a quadratic symbol::

        8 |A xi|^2 + 8 sum_j (A xi)_j r.(d_j A) xi - 4 sum_j xi.(d_j A) xi (A r)_j
    """
    a_xi = np.einsum("...ij,...j->...i", a, xi)
    a_r = np.einsum("...ij,...j->...i", a, r)
    dA_xi = np.einsum("...mkj,...k->...mj", da, xi)  # (d_j A xi)_m
    r_dA_xi = np.einsum("...m,...mj->...j", r, dA_xi)
    xi_dA_xi = np.einsum("...m,...mj->...j", xi, dA_xi)
    return (
        8.0 * np.sum(a_xi**2, axis=-1)
        + 8.0 * np.sum(a_xi * r_dA_xi, axis=-1)
        - 4.0 * np.sum(xi_dA_xi * a_r, axis=-1)
    )


@dataclass(frozen=True)
class SamplingSpec:
    n_xi: int = 64
    derivative: str = "auto"  # "analytic" | "fd" | "auto"
    margin: float = 1e-6
    scale: float = 1.0  # d(x) = |x - x0|^2 / scale


@dataclass(frozen=True)
class PseudoConvexityReport:
    min_ratio: float
    mu1: float
    passed: bool
    worst_x: tuple[float, ...]
    worst_xi: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "min_ratio": self.min_ratio,
            "mu1": self.mu1,
            "pass": self.passed,
            "worst_x": list(self.worst_x),
            "worst_xi": list(self.worst_xi),
        }


def unit_covectors(n: int, count: int = 64) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    theta = 2 * np.pi * np.arange(count) / count
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def check_pseudo_convexity(
    field: CoefficientField,
    domain: Domain,
    x0,
    sampling: SamplingSpec = SamplingSpec(),
) -> PseudoConvexityReport:
    """Sample ``{a,{a,d}}(x, xi) / |A0(x)^-1 xi|^2`` over grid nodes and unit covectors."""
    x0 = _require_exterior(domain, x0)
    field.validate(domain)
    pts = domain.points.reshape(-1, domain.n)
    a = field.matrix(pts)
    if np.min(np.abs(np.linalg.det(a))) == 0.0:
        raise EllipticityError("singular coefficient matrix on the grid")
    da = field.gradient(pts, method=sampling.derivative)
    xis = unit_covectors(domain.n, sampling.n_xi)
    r = pts - x0
    ainv = np.linalg.inv(a)
    # (points, covectors)
    bb = double_bracket(a[:, None], da[:, None], r[:, None], xis[None, :]) / sampling.scale
    ainv_xi = np.einsum("pij,qj->pqi", ainv, xis)
    ratio = bb / np.sum(ainv_xi**2, axis=-1)
    flat = int(np.argmin(ratio))  # first minimum in C order: schedule independent
    p, q = np.unravel_index(flat, ratio.shape)
    mn = float(ratio[p, q])
    return PseudoConvexityReport(
        min_ratio=mn,
        mu1=mn,
        passed=bool(mn > sampling.margin),
        worst_x=tuple(float(v) for v in pts[p]),
        worst_xi=tuple(float(v) for v in xis[q]),
    )


# ---------------------------------------------------------------------------
# Observation boundary and time threshold
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObservationBoundary:
    faces: tuple[str, ...]
    mask: np.ndarray = field(compare=False, repr=False)

    def to_dict(self) -> dict:
        return {"faces": list(self.faces), "nodes": int(self.mask.sum())}


def observation_boundary(domain: Domain, x0) -> ObservationBoundary:
    """Boundary part where ``(x - x0) . nu(x) >= 0``.

    On an axis-aligned face the sign is constant, so the test is exact per face;
    the node mask follows the corner ownership convention.
    """
    x0 = _require_exterior(domain, x0)
    owner = domain.face_owner()
    nu = domain.normals()
    dots = np.sum((domain.points - x0) * nu, axis=-1)
    mask = (owner >= 0) & (dots >= 0)
    faces = []
    for f in domain.faces:
        coord = domain.lower[f.axis] if f.side == 0 else domain.upper[f.axis]
        if f.sign * (coord - x0[f.axis]) >= 0:
            faces.append(f.name)
    return ObservationBoundary(tuple(faces), mask)


def min_observation_time(domain: Domain, x0, beta: float) -> float:
    """``max_{x in closed Omega} |x - x0| / sqrt(beta)``."""
    if not beta > 0:
        raise ParameterError(f"beta must be positive, got {beta}")
    return math.sqrt(domain.max_distance_sq(x0)) / math.sqrt(beta)


# ---------------------------------------------------------------------------
# Weight and cut-off
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CarlemanWeight:
    """``psi = (|x - x0|^2 - beta t^2) / scale`` and ``phi = exp(gamma psi)``."""

    x0: tuple[float, ...]
    beta: float = 1.0
    gamma: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        if not self.beta > 0:
            raise ParameterError("beta must be positive")
        if not self.gamma > 0:
            raise ParameterError("gamma must be positive")
        if not self.scale > 0:
            raise ParameterError("scale must be positive")

    @classmethod
    def normalized(cls, domain: Domain, x0, beta: float = 1.0, gamma: float = 1.0):
        """Weight with ``psi(., 0)`` rescaled into (0, 1] on the closed domain."""
        x0 = _require_exterior(domain, x0)
        return cls(tuple(x0), beta, gamma, domain.max_distance_sq(x0))

    def with_gamma(self, gamma: float) -> "CarlemanWeight":
        return CarlemanWeight(self.x0, self.beta, gamma, self.scale)

    def psi(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r2 = np.sum((x - np.asarray(self.x0)) ** 2, axis=-1)
        return (r2 - self.beta * np.asarray(t, dtype=float) ** 2) / self.scale

    def phi(self, x, t) -> np.ndarray:
        return np.exp(self.gamma * self.psi(x, t))

    def Phi(self, domain: Domain) -> float:
        """max of phi over the closed space-time cylinder (attained at t = 0)."""
        return math.exp(self.gamma * domain.max_distance_sq(self.x0) / self.scale)

    def on_grid(self, domain: Domain, times) -> np.ndarray:
        """phi sampled on ``times x nodes``, shape ``(len(times), *domain.shape)``."""
        times = np.asarray(times, dtype=float)
        r2 = np.sum((domain.points - np.asarray(self.x0)) ** 2, axis=-1)
        psi = (r2[None] - self.beta * times.reshape((-1,) + (1,) * domain.n) ** 2) / self.scale
        return np.exp(self.gamma * psi)


def weight_eval(w: CarlemanWeight, x, t) -> tuple[float, float]:
    psi = float(w.psi(x, t))
    return psi, math.exp(w.gamma * psi)


def _smooth_step(tau):
    """C-infinity step S(tau) (0 for tau <= 0, 1 for tau >= 1) and its first two derivatives."""
    tau = np.asarray(tau, dtype=float)

    def f(z):
        z = np.asarray(z, dtype=float)
        out0, out1, out2 = (np.zeros_like(z) for _ in range(3))
        m = z > 1e-3  # below this exp(-1/z) < 1e-434 and underflows
        zm = z[m]
        e = np.exp(-1.0 / zm)
        out0[m] = e
        out1[m] = e / zm**2
        out2[m] = e * (1.0 / zm**4 - 2.0 / zm**3)
        return out0, out1, out2

    a, a1, a2 = f(tau)
    b, b1, b2 = f(1.0 - tau)
    b1, b2 = -b1, b2  # chain rule for z = 1 - tau
    den = a + b
    s = a / den
    num = a1 * b - a * b1
    s1 = num / den**2
    num1 = a2 * b - a * b2
    den1 = 2 * den * (a1 + b1)
    s2 = (num1 * den**2 - num * den1) / den**4
    return s, s1, s2


@dataclass(frozen=True)
class CutoffFunction:
    """Smooth ``chi(t)``: 1 on ``|t| <= T - 2 eps`` and 0 on ``|t| >= T - eps``."""

    T: float
    eps: float

    def __post_init__(self):
        if not (self.T > 0 and 0 < self.eps < self.T / 2):
            raise ParameterError(f"need T > 0 and 0 < eps < T/2, got T={self.T}, eps={self.eps}")

    def _tau(self, t):
        return (np.abs(np.asarray(t, dtype=float)) - (self.T - 2 * self.eps)) / self.eps

    def chi(self, t) -> np.ndarray:
        s, _, _ = _smooth_step(self._tau(t))
        return 1.0 - s

    def dchi(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        _, s1, _ = _smooth_step(self._tau(t))
        return -s1 * np.sign(t) / self.eps

    def d2chi(self, t) -> np.ndarray:
        _, _, s2 = _smooth_step(self._tau(t))
        return -s2 / self.eps**2


@dataclass(frozen=True)
class CutoffLevels:
    delta: float
    eps0: float
    valid: bool
    inner_min: float  # min of phi over |t| <= 2 eps

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "eps0": self.eps0,
            "valid": self.valid,
            "inner_min_phi": self.inner_min,
        }


def calibrate_cutoff_levels(
    w: CarlemanWeight, domain: Domain, T: float, eps: float, n_time: int = 401
) -> CutoffLevels:
    """Grid maximisation of phi over ``T - 2 eps <= |t| <= T - eps``.

    Returns ``delta``, ``eps0 = 1 - delta`` and whether ``phi >= 1 + eps0``
    holds on ``|t| <= 2 eps``.
    """
    threshold = min_observation_time(domain, w.x0, w.beta)
    if not T > threshold:
        raise PreconditionError(f"T={T} does not exceed the observation threshold {threshold:.6g}")
    if not 0 < eps < T / 4:
        raise ParameterError(f"need 0 < eps < T/4, got eps={eps}")
    band = np.linspace(T - 2 * eps, T - eps, n_time)
    band = np.concatenate([-band, band])
    delta = float(np.max(w.on_grid(domain, band)))
    eps0 = 1.0 - delta
    inner = np.linspace(-2 * eps, 2 * eps, n_time)
    inner_min = float(np.min(w.on_grid(domain, inner)))
    valid = bool(0 < delta < 1 and inner_min >= 1.0 + eps0)
    return CutoffLevels(delta, eps0, valid, inner_min)
