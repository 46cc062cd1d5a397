"""Analytic spatial fields and time profiles with exact derivatives.

These are used as sources, initial data, manufactured solutions and random
ensembles.  Sobolev norms are computed by composite Gauss-Legendre
quadrature of the analytic derivatives.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .geometry import Domain


# ---------------------------------------------------------------------------
# one-dimensional building blocks


class Function1D:
    def __call__(self, x, k: int = 0) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Trig1D(Function1D):
    """``sin`` or ``cos`` of ``mode * pi * (x - lo) / length``."""

    kind: str
    mode: float
    lo: float = 0.0
    length: float = 1.0

    def __call__(self, x, k: int = 0):
        w = self.mode * math.pi / self.length
        theta = w * (np.asarray(x, float) - self.lo) + k * math.pi / 2
        base = np.sin(theta) if self.kind == "sin" else np.cos(theta)
        return w**k * base


@dataclass(frozen=True)
class PolyBump1D(Function1D):
    """``(1 - s^2)^power`` for ``|s| < 1``, ``s = (x - center) / radius``; zero outside."""

    center: float
    radius: float
    power: int = 4

    def __call__(self, x, k: int = 0):
        x = np.asarray(x, float)
        poly = np.polynomial.Polynomial([1.0, 0.0, -1.0]) ** self.power
        poly = poly.deriv(k) if k else poly
        s = (x - self.center) / self.radius
        return np.where(np.abs(s) < 1.0, poly(s) / self.radius**k, 0.0)


@dataclass(frozen=True)
class Const1D(Function1D):
    value: float = 1.0

    def __call__(self, x, k: int = 0):
        x = np.asarray(x, float)
        return np.full(x.shape, self.value if k == 0 else 0.0)


@dataclass(frozen=True)
class Product1D(Function1D):
    left: Function1D
    right: Function1D

    def __call__(self, x, k: int = 0):
        return sum(math.comb(k, j) * self.left(x, j) * self.right(x, k - j) for j in range(k + 1))


# ---------------------------------------------------------------------------
# multi-dimensional fields


class Field:
    """Spatial function with analytic partial derivatives."""

    n: int

    def __call__(self, x) -> np.ndarray:
        return self.derivative(x, (0,) * self.n)

    def derivative(self, x, alpha) -> np.ndarray:
        raise NotImplementedError

    def __add__(self, other: "Field") -> "SumField":
        return SumField((self, other))

    def scaled(self, c: float) -> "Field":
        return ScaledField(self, float(c))

    def sample(self, domain: Domain) -> np.ndarray:
        return np.asarray(self(domain.points), float)

    def sobolev_norm(self, domain: Domain, m: int, panels: int = 8) -> float:
        """Exact-quadrature ``H^m(Omega)`` norm: all derivatives of order <= m."""
        pts, w = quadrature(domain, panels)
        total = 0.0
        for alpha in multi_indices(self.n, m):
            total += float(np.sum(w * self.derivative(pts, alpha) ** 2))
        return math.sqrt(total)


@dataclass(frozen=True)
class SeparableField(Field):
    factors: tuple
    coef: float = 1.0

    @property
    def n(self) -> int:
        return len(self.factors)

    def derivative(self, x, alpha):
        x = np.asarray(x, float)
        out = np.full(x.shape[:-1], self.coef)
        for i, (f, a) in enumerate(zip(self.factors, alpha)):
            out = out * f(x[..., i], a)
        return out


@dataclass(frozen=True)
class SumField(Field):
    parts: tuple

    @property
    def n(self) -> int:
        return self.parts[0].n

    def derivative(self, x, alpha):
        return sum(p.derivative(x, alpha) for p in self.parts)


@dataclass(frozen=True)
class ScaledField(Field):
    base: Field
    factor: float

    @property
    def n(self) -> int:
        return self.base.n

    def derivative(self, x, alpha):
        return self.factor * self.base.derivative(x, alpha)


@dataclass(frozen=True)
class ZeroField(Field):
    n: int

    def derivative(self, x, alpha):
        return np.zeros(np.asarray(x).shape[:-1])


def multi_indices(n: int, order: int, exact: bool = False) -> list[tuple[int, ...]]:
    out = [a for a in itertools.product(range(order + 1), repeat=n) if sum(a) <= order]
    if exact:
        out = [a for a in out if sum(a) == order]
    return sorted(out, key=lambda a: (sum(a), tuple(-v for v in a)))


def quadrature(domain: Domain, panels: int = 8, order: int = 16):
    """Composite tensor Gauss-Legendre nodes ``(..., n)`` and weights."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    axes, weights = [], []
    for lo, hi in zip(domain.lower, domain.upper):
        edges = np.linspace(lo, hi, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        axes.append((mid[:, None] + half[:, None] * xg).ravel())
        weights.append((half[:, None] * wg).ravel())
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    w = weights[0]
    for wi in weights[1:]:
        w = np.multiply.outer(w, wi)
    return pts, w


# ---------------------------------------------------------------------------
# named constructions


def _sin(domain: Domain, axis: int, mode: float) -> Trig1D:
    lo, hi = domain.lower[axis], domain.upper[axis]
    return Trig1D("sin", mode, lo, hi - lo)


def sine_mode(domain: Domain, modes: Sequence[int], coef: float = 1.0) -> SeparableField:
    """``coef * prod_i sin(m_i pi x_i)`` on the box."""
    return SeparableField(tuple(_sin(domain, i, m) for i, m in enumerate(modes)), coef)


def sine_power(domain: Domain, power: int = 4, coef: float = 1.0) -> SeparableField:
    """``coef * prod_i sin(pi x_i)^power``: vanishes with its first ``power-1`` normal derivatives."""
    factors = []
    for i in range(domain.n):
        f: Function1D = _sin(domain, i, 1)
        g = f
        for _ in range(power - 1):
            g = Product1D(g, f)
        factors.append(g)
    return SeparableField(tuple(factors), coef)


def bump_field(domain: Domain, center: Sequence[float], radius: float, power: int = 4,
               coef: float = 1.0) -> SeparableField:
    """Tensor polynomial bump; supported in a box of half-width ``radius``."""
    return SeparableField(tuple(PolyBump1D(c, radius, power) for c in center), coef)


def wave_packet(domain: Domain, center: Sequence[float], radius: float, mode: float,
                axis: int = 0, power: int = 4) -> SeparableField:
    """Bump modulated by ``sin(mode pi x_axis)`` along one axis."""
    factors = []
    for i, c in enumerate(center):
        b: Function1D = PolyBump1D(c, radius, power)
        if i == axis:
            b = Product1D(b, _sin(domain, i, mode))
        factors.append(b)
    return SeparableField(tuple(factors))


def random_sine_series(
    domain: Domain,
    rng: np.random.Generator,
    max_mode: int = 8,
    smoothness: int = 3,
    clamped: bool = False,
    normalize: Optional[int] = None,
    min_mode: int = 1,
) -> SumField:
    """Random sine series with coefficients ``N(0,1) (1 + |m|^2)^{-(smoothness+1)/2}``.

    Every term vanishes on the boundary.  With ``clamped`` each term is
    multiplied by ``prod_i sin(pi x_i)`` so the normal derivative vanishes
    too.  ``normalize=k`` rescales to unit exact ``H^k`` norm.
    """
    terms = []
    for modes in itertools.product(range(min_mode, max_mode + 1), repeat=domain.n):
        m2 = sum(m * m for m in modes)
        c = rng.standard_normal() * (1.0 + m2) ** (-(smoothness + 1) / 2)
        factors = []
        for i, m in enumerate(modes):
            f: Function1D = _sin(domain, i, m)
            if clamped:
                f = Product1D(_sin(domain, i, 1), f)
            factors.append(f)
        terms.append(SeparableField(tuple(factors), float(c)))
    field = SumField(tuple(terms))
    if normalize is not None:
        norm = field.sobolev_norm(domain, normalize)
        field = SumField(tuple(SeparableField(t.factors, t.coef / norm) for t in terms))
    return field


# ---------------------------------------------------------------------------
# time profiles


class TimeFunction:
    """Scalar time profile with derivatives: ``tau(t, k)`` is ``d^k tau / dt^k``."""

    def __init__(self, func, name: str = "custom"):
        self._func = func
        self.name = name

    def __call__(self, t, k: int = 0) -> np.ndarray:
        return np.asarray(self._func(np.asarray(t, float), k), float)

    @staticmethod
    def constant(c: float = 1.0) -> "TimeFunction":
        return TimeFunction(lambda t, k: np.full(np.shape(t), c if k == 0 else 0.0), f"const({c:g})")

    @staticmethod
    def cosine(omega: float = 1.0, amplitude: float = 1.0, phase: float = 0.0) -> "TimeFunction":
        return TimeFunction(
            lambda t, k: amplitude * omega**k * np.cos(omega * t + phase + k * math.pi / 2),
            f"cos({omega:g})",
        )

    @staticmethod
    def polynomial(coefs: Sequence[float]) -> "TimeFunction":
        p = np.polynomial.Polynomial(coefs)
        return TimeFunction(lambda t, k: (p.deriv(k) if k else p)(t), "poly")

    @staticmethod
    def exponential(rate: float) -> "TimeFunction":
        return TimeFunction(lambda t, k: rate**k * np.exp(rate * t), f"exp({rate:g})")

    def plus(self, other: "TimeFunction") -> "TimeFunction":
        return TimeFunction(lambda t, k: self(t, k) + other(t, k), f"{self.name}+{other.name}")

    def times(self, c: float) -> "TimeFunction":
        return TimeFunction(lambda t, k: c * self(t, k), f"{c:g}*{self.name}")


def time_integral(kappa, tau: TimeFunction, times: np.ndarray, panels: int = 8) -> np.ndarray:
    """``int_0^t kappa(t, eta) tau(eta) deta`` for each ``t`` in ``times``."""
    xg, wg = np.polynomial.legendre.leggauss(16)
    out = np.zeros(len(times))
    for i, t in enumerate(times):
        if t == 0:
            continue
        edges = np.linspace(0.0, t, panels + 1)
        half = 0.5 * np.diff(edges)
        eta = (0.5 * (edges[1:] + edges[:-1]))[:, None] + half[:, None] * xg
        vals = kappa(np.full(eta.shape, t), eta) * tau(eta)
        out[i] = float(np.sum(half[:, None] * wg * vals))
    return out


def field_from_spec(domain: Domain, spec: dict, rng: Optional[np.random.Generator] = None) -> Field:
    """Build a field from a small config dictionary."""
    kind = spec.get("kind", "bump")
    params = {k: v for k, v in spec.items() if k != "kind"}
    if kind == "zero":
        return ZeroField(domain.n)
    if kind == "sine":
        return sine_mode(domain, params.get("modes", [1] * domain.n), params.get("coef", 1.0))
    if kind == "sine_power":
        return sine_power(domain, params.get("power", 4), params.get("coef", 1.0))
    if kind == "bump":
        center = params.get("center", [0.5] * domain.n)
        return bump_field(domain, center, params.get("radius", 0.3), params.get("power", 4),
                          params.get("coef", 1.0))
    if kind == "random":
        if rng is None:
            raise ValidationError("random field requires a generator")
        return random_sine_series(
            domain, rng, params.get("max_mode", 8), params.get("smoothness", 3),
            params.get("clamped", False), params.get("normalize"),
        )
    raise ValidationError(f"unknown field kind {kind!r}")
