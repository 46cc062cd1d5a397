"""Discrete Sobolev norms, energies and energy-estimate verifiers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InconsistencyError, ParameterError, PreconditionError, ValidationError
from .fields import multi_indices
from .forward_solver import (
    BoundaryTrace,
    ProblemSpec,
    SeparatedSource,
    SimulationResult,
    conormal_trace,
    derivative_system_simulate,
    simulate,
    time_difference,
)
from .operators import GridOperators

# a ratio above this is reported as unbounded growth
GROWTH_LIMIT = 1e6


@dataclass(frozen=True)
class NormReport:
    norm: str
    value: float
    h: float
    shape: tuple

    def to_dict(self) -> dict:
        return {"norm": self.norm, "value": self.value, "h": self.h, "shape": list(self.shape)}


def sobolev_norm(u: np.ndarray, ops: GridOperators, order: int) -> float:
    """Discrete ``H^order(Omega)`` norm: differences up to ``order``, trapezoid quadrature."""
    u = np.asarray(u, float).ravel()
    w = ops.domain.weights.ravel()
    total = 0.0
    for alpha in multi_indices(ops.n, order):
        d = ops.full_derivative(alpha) @ u if sum(alpha) else u
        total += float(w @ d**2)
    return math.sqrt(total)


def space_time_norm(U: np.ndarray, ops: GridOperators, dt: float, order: int = 0) -> float:
    """``L^2(0, T; H^order(Omega))`` norm of a history with rows per time level."""
    wt = np.full(U.shape[0], dt)
    wt[0] = wt[-1] = 0.5 * dt
    return math.sqrt(sum(wt[k] * sobolev_norm(U[k], ops, order) ** 2 for k in range(U.shape[0])))


def norm(u, ops: GridOperators, kind: str, dt: Optional[float] = None) -> NormReport:
    """Norm by id: ``L2``, ``H1``, ``H2``, ``H3`` (space), ``L2Q`` (space-time)."""
    if kind in ("L2", "H0", "H1", "H2", "H3"):
        order = 0 if kind in ("L2", "H0") else int(kind[1])
        value = sobolev_norm(u, ops, order)
    elif kind == "L2Q":
        if dt is None:
            raise ParameterError("space-time norm needs dt")
        value = space_time_norm(np.asarray(u), ops, dt)
    else:
        raise ValidationError(f"unknown norm {kind!r}")
    return NormReport(kind, value, ops.domain.h, ops.domain.shape)


def trace_norm(trace: BoundaryTrace, order: int) -> NormReport:
    return NormReport(f"H{order}(0,T;L2)", trace.norm(order), float("nan"), (trace.count,))


# ---------------------------------------------------------------------------
# energies


@dataclass(frozen=True)
class EnergyTrace:
    times: np.ndarray
    kinetic: np.ndarray
    elastic: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.kinetic + self.elastic


def _elastic(u: np.ndarray, ops: GridOperators) -> float:
    return -float(u @ (ops.A @ u)) * ops.domain.h**ops.n


def energy_trace(result: SimulationResult) -> EnergyTrace:
    """``E(t_k) = int |d_t u|^2 + a_ij d_i u d_j u`` with central velocities."""
    vel = time_difference(result.u, result.dt, 1)
    wsp = result.domain.h**result.domain.n
    kin = np.array([wsp * float(v @ v) for v in vel])
    ela = np.array([_elastic(u, result.ops) for u in result.u])
    return EnergyTrace(result.times, kin, ela)


def energy(result: SimulationResult, k: int) -> float:
    if not 0 <= k <= result.steps:
        raise ParameterError(f"step {k} out of range 0..{result.steps}")
    if 0 < k < result.steps:
        vel = (result.u[k + 1] - result.u[k - 1]) / (2 * result.dt)
    elif k == 0:
        vel = (-3 * result.u[0] + 4 * result.u[1] - result.u[2]) / (2 * result.dt)
    else:
        vel = (3 * result.u[k] - 4 * result.u[k - 1] + result.u[k - 2]) / (2 * result.dt)
    wsp = result.domain.h**result.domain.n
    return wsp * float(vel @ vel) + _elastic(result.u[k], result.ops)


def discrete_energy(result: SimulationResult) -> np.ndarray:
    """Staggered energy conserved exactly by memoryless, unforced leapfrog.

    ``E_{k+1/2} = |(u^{k+1} - u^k)/dt|^2 - <u^{k+1}, A u^k>``.
    """
    U, dt = result.u, result.dt
    wsp = result.domain.h**result.domain.n
    A = result.ops.A
    out = np.empty(result.steps)
    for k in range(result.steps):
        d = (U[k + 1] - U[k]) / dt
        out[k] = wsp * (float(d @ d) - float(U[k + 1] @ (A @ U[k])))
    return out


def source_history(result: SimulationResult) -> np.ndarray:
    if result.source_values is not None:
        return result.source_values
    spec = result.spec
    if spec is None or spec.source is None:
        return np.zeros_like(result.u)
    return np.array([result.ops.project(spec.source.evaluate(t)) for t in result.times])


def source_norm_sq(result: SimulationResult, F: Optional[np.ndarray] = None) -> np.ndarray:
    """Running ``int_0^{t_k} |F|^2`` (trapezoid), length ``steps + 1``."""
    F = source_history(result) if F is None else F
    wsp = result.domain.h**result.domain.n
    per = wsp * np.sum(F**2, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (per[1:] + per[:-1]) * result.dt)])
    return cum


@dataclass
class EnergyReport:
    ratio_sup: float
    ratios: np.ndarray
    times: np.ndarray
    growth_rate: float
    bounded: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "ratio_sup": self.ratio_sup,
            "growth_rate": self.growth_rate,
            "bounded": self.bounded,
        }
        out.update(self.extra)
        return out

    def curve_rows(self):
        return [(float(t), float(r)) for t, r in zip(self.times, self.ratios)]


def _growth_rate(times: np.ndarray, ratios: np.ndarray) -> float:
    """Smallest ``C >= 0`` with ``ratio(t) <= max(1, ratio(0)) e^{C t}`` on the samples."""
    base = max(1.0, float(ratios[0]))
    t = times[1:]
    r = np.maximum(ratios[1:], 1e-300)
    return float(max(0.0, np.max(np.log(r / base) / t)))


def gronwall_fit(times: np.ndarray, E: np.ndarray) -> tuple[float, float]:
    """Envelope ``E(t) <= A e^{C t}``: ``C`` is the least-squares slope of ``log E``,
    ``A`` the smallest constant that puts the curve under the envelope."""
    times, E = np.asarray(times, float), np.asarray(E, float)
    ok = E > 0
    if ok.sum() < 2:
        return 0.0, 0.0
    C = float(np.polyfit(times[ok], np.log(E[ok]), 1)[0])
    A = float(np.max(E * np.exp(-C * times)))
    return A, C


def verify_energy_estimate(result: SimulationResult, F: Optional[np.ndarray] = None) -> EnergyReport:
    """``sup_t E(t) / (E(0) + |F|^2_{L^2(Q)})`` with a Gronwall growth-rate fit."""
    E = energy_trace(result).total
    fnorm = float(source_norm_sq(result, F)[-1])
    denom = E[0] + fnorm
    if denom <= 0.0:
        if np.max(np.abs(result.u)) > 0:
            raise InconsistencyError("nonzero solution with zero data and source")
        zeros = np.zeros_like(E)
        return EnergyReport(0.0, zeros, result.times, 0.0, True, {"skipped": True})
    ratios = E / denom
    rate = _growth_rate(result.times, ratios)
    sup = float(np.max(ratios))
    A, C = gronwall_fit(result.times, E)
    return EnergyReport(sup, ratios, result.times, rate, bool(np.isfinite(sup) and sup < GROWTH_LIMIT),
                        {"E0": float(E[0]), "source_norm_sq": fnorm, "gronwall_A": A, "gronwall_C": C})


def verify_higher_energy(spec: ProblemSpec, f_norm_order: int = 2) -> EnergyReport:
    """``sup_t sum_{k<=2} |d_t^k u(t)|_{H^2} / |f|_{H^2}`` for a separated source."""
    if not isinstance(spec.source, SeparatedSource):
        raise PreconditionError("higher energy check needs a separated source R f")
    ops = GridOperators(spec.domain, spec.field)
    fn = sobolev_norm(spec.source.f, ops, f_norm_order)
    base = simulate(spec)
    if fn == 0.0:
        zeros = np.zeros(len(base.times))
        return EnergyReport(0.0, zeros, base.times, 0.0, True, {"skipped": True})
    histories = [base.u] + [derivative_system_simulate(spec, k).u for k in (1, 2)]
    total = np.zeros(len(base.times))
    for U in histories:
        total += np.array([sobolev_norm(u, ops, 2) for u in U])
    ratios = total / fn
    sup = float(np.max(ratios))
    return EnergyReport(sup, ratios, base.times, _growth_rate(base.times, np.maximum(ratios, 1e-300)),
                        bool(np.isfinite(sup) and sup < GROWTH_LIMIT), {"f_norm": fn})


def verify_trace_bound(result: SimulationResult, F: Optional[np.ndarray] = None) -> EnergyReport:
    """``|d_nu w|^2_{L^2(0,T;L^2(dOmega))} / (E(0) + |G|^2_{L^2(Q)})``."""
    trace = conormal_trace(result)
    num = trace.norm(0) ** 2
    E0 = energy(result, 0)
    denom = E0 + float(source_norm_sq(result, F)[-1])
    if denom <= 0.0:
        return EnergyReport(0.0, np.zeros(1), result.times[-1:], 0.0, True, {"skipped": True})
    ratio = num / denom
    return EnergyReport(ratio, np.array([ratio]), result.times[-1:], 0.0,
                        bool(np.isfinite(ratio) and ratio < GROWTH_LIMIT),
                        {"trace_norm_sq": num, "E0": E0})


def verify_reverse_energy(result: SimulationResult, F: Optional[np.ndarray] = None) -> EnergyReport:
    """``E(0) / (E(t) + int_0^t |G|^2)`` for every ``t``."""
    E = energy_trace(result).total
    cum = source_norm_sq(result, F)
    denom = E + cum
    if E[0] <= 0.0 and np.all(denom <= 0.0):
        return EnergyReport(0.0, np.zeros_like(E), result.times, 0.0, True, {"skipped": True})
    with np.errstate(divide="ignore"):
        ratios = np.where(denom > 0, E[0] / np.where(denom > 0, denom, 1.0), np.inf)
    sup = float(np.max(ratios))
    return EnergyReport(sup, ratios, result.times, 0.0, bool(np.isfinite(sup) and sup < GROWTH_LIMIT),
                        {"E0": float(E[0])})


def refinement_trend(values: Sequence[float]) -> list[float]:
    """Relative change between consecutive refinement levels."""
    v = list(values)
    return [abs(b - a) / max(abs(b), 1e-300) for a, b in zip(v[:-1], v[1:])]
