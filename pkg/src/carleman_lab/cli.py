"""Command-line front end.

Every command reads one YAML config, writes ``resolved_config.yaml``,
``report.json`` and any CSV / array outputs into the output directory, and
exits with 0 (checks passed), 1 (a check failed) or 2 (invalid config or
violated precondition).
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import carleman_verifier as cv
from . import inverse_lab as inv
from .config import Config, Resolved, dump_config, load_config, resolve, with_seed
from .errors import (
    CarlemanLabError,
    ConfigError,
    DomainError,
    ParameterError,
    PreconditionError,
    ValidationError,
)
from .fields import TimeFunction, field_from_spec, random_sine_series, sine_power
from .forward_solver import (
    ManufacturedSource,
    ProblemSpec,
    SeparatedSource,
    conormal_trace,
    default_R,
    resolve_time_step,
    simulate,
)
from .geometry import (
    CutoffFunction,
    SamplingSpec,
    calibrate_cutoff_levels,
    check_pseudo_convexity,
    observation_boundary,
)
from .io import write_array, write_csv, write_json
from .memory_kernels import zero_kernel
from .norms_energy import (
    discrete_energy,
    energy_trace,
    verify_energy_estimate,
    verify_reverse_energy,
    verify_trace_bound,
)
from .operators import GridOperators

log = logging.getLogger("carleman_lab")

USAGE_ERRORS = (ConfigError, ValidationError, ParameterError, PreconditionError, DomainError)


def config_hash(cfg: Config) -> str:
    """sha256 of the resolved YAML config, stored with persisted arrays."""
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


def time_from_spec(spec: dict) -> TimeFunction:
    kind = spec.get("kind", "cosine")
    if kind == "cosine":
        return TimeFunction.cosine(spec.get("omega", 1.0), spec.get("amplitude", 1.0), spec.get("phase", 0.0))
    if kind == "constant":
        return TimeFunction.constant(spec.get("value", 1.0))
    if kind == "polynomial":
        return TimeFunction.polynomial(spec.get("coefs", [1.0]))
    raise ConfigError(f"unknown time profile {kind!r}")


def build_problem(res: Resolved, rng: np.random.Generator) -> tuple[ProblemSpec, Optional[ManufacturedSource]]:
    src_cfg = res.config.source
    dom = res.domain
    if src_cfg.mode == "manufactured":
        X = field_from_spec(dom, src_cfg.f, rng)
        tau = time_from_spec(src_cfg.time)
        ms = ManufacturedSource(dom, res.field, res.kernel, X, tau)
        u0 = X.sample(dom).ravel() * float(tau(0.0))
        v0 = X.sample(dom).ravel() * float(tau(0.0, 1))
        return ProblemSpec(dom, res.field, res.kernel, res.T, ms, u0, v0, res.dt), ms
    u0 = field_from_spec(dom, src_cfg.initial, rng)
    source = None
    if src_cfg.mode == "separated":
        f = field_from_spec(dom, src_cfg.f, rng).sample(dom).ravel()
        r_spatial, r_time = default_R(dom, src_cfg.r_amplitude)
        source = SeparatedSource(r_spatial, r_time, f)
    return ProblemSpec(dom, res.field, res.kernel, res.T, source, u0, None, res.dt), None


# ---------------------------------------------------------------------------
# commands


def cmd_check_geometry(res: Resolved, out: Path) -> tuple[dict, bool]:
    cfg = res.config
    dom = res.domain
    scale = dom.max_distance_sq(res.x0)
    raw = check_pseudo_convexity(res.field, dom, res.x0, SamplingSpec(n_xi=cfg.experiment.n_xi))
    gamma = observation_boundary(dom, res.x0)
    report = {
        "pseudo_convexity": raw.to_dict(),
        "mu1_normalized": raw.min_ratio / scale,
        "normalization": scale,
        "observation_boundary": gamma.to_dict(),
        "threshold": res.threshold,
        "T": res.T,
    }
    ok = raw.passed
    if res.T > res.threshold:
        levels = calibrate_cutoff_levels(res.weight(), dom, res.T, res.eps)
        report["cutoff"] = levels.to_dict()
        ok = ok and levels.valid
    else:
        report["cutoff"] = {"valid": False, "reason": "T does not exceed the threshold"}
        ok = False
    return report, ok


def cmd_simulate(res: Resolved, out: Path) -> tuple[dict, bool]:
    rng = np.random.default_rng(res.config.seed)
    spec, ms = build_problem(res, rng)
    result = simulate(spec)
    et = energy_trace(result)
    report = {
        "steps": result.steps,
        "dt": result.dt,
        "T": float(result.times[-1]),
        "max_abs_u": float(np.max(np.abs(result.u))),
        "energy_initial": float(et.total[0]),
        "energy_final": float(et.total[-1]),
    }
    if ms is not None:
        err = float(np.max(np.abs(result.u[-1] - ms.exact(result.times[-1]))))
        report["max_error_final"] = err
    if not result.spec.kernel.terms or result.spec.kernel.is_zero:
        de = discrete_energy(result)
        report["discrete_energy_drift"] = float(np.max(np.abs(de - de[0])) / max(abs(de[0]), 1e-300))
    write_csv(out / "energy.csv", ["t", "kinetic", "elastic", "total"],
              zip(et.times, et.kinetic, et.elastic, et.total))
    trace = conormal_trace(result)
    write_csv(out / "trace.csv", ["t", "node", "value"], trace.to_rows())
    if res.config.output.arrays:
        write_array(out / "arrays", "u", result.u, dt=result.dt, h=res.domain.h,
                    grid_shape=list(res.domain.shape), config_sha256=config_hash(res.config))
    return report, bool(np.all(np.isfinite(result.u)))


def cmd_energy_report(res: Resolved, out: Path) -> tuple[dict, bool]:
    rng = np.random.default_rng(res.config.seed)
    spec, _ = build_problem(res, rng)
    result = simulate(spec, store_source=True)
    est = verify_energy_estimate(result)
    trace = verify_trace_bound(result)
    rev = verify_reverse_energy(result)
    write_csv(out / "energy_ratio.csv", ["t", "ratio"], est.curve_rows())
    report = {
        "energy_estimate": est.to_dict(),
        "ratio_curve_csv_path": "energy_ratio.csv",
        "trace_bound": trace.to_dict(),
        "reverse_energy": rev.to_dict(),
    }
    if res.config.experiment.refine:
        finer = Resolved(res.config, _refined(res), res.field, res.kernel, res.x0, res.threshold, res.T, None,
                         res.eps)
        spec2, _ = build_problem(finer, np.random.default_rng(res.config.seed))
        est2 = verify_energy_estimate(simulate(spec2, store_source=True))
        report["refinement_trend"] = abs(est2.ratio_sup - est.ratio_sup) / max(abs(est2.ratio_sup), 1e-300)
    limit = res.config.experiment.bound_limit
    ok = all(r.bounded and r.ratio_sup < limit for r in (est, trace, rev))
    return report, ok


def _manufactured_history(res: Resolved):
    """Symmetric-time samples of ``u = X tau`` and the exact forcing ``F``."""
    dom = res.domain
    src_cfg = res.config.source
    rng = np.random.default_rng(res.config.seed)
    X = field_from_spec(dom, src_cfg.f, rng) if src_cfg.mode == "manufactured" else sine_power(dom, 4)
    tau = time_from_spec(src_cfg.time)
    ms = ManufacturedSource(dom, res.field, res.kernel, X, tau)
    spec = ProblemSpec(dom, res.field, res.kernel, res.T, None, None, None, res.dt)
    dt, steps = resolve_time_step(spec)
    times = dt * np.arange(-steps, steps + 1)
    ops = GridOperators(dom, res.field)
    U = np.array([ms.exact(t) for t in times])
    F = np.array([ops.project(ms.evaluate(t)) for t in times])
    return ops, times, U, F


def cmd_carleman_scan(res: Resolved, out: Path) -> tuple[dict, bool]:
    ex = res.config.experiment
    dom = res.domain
    w = res.weight()
    cutoff = CutoffFunction(res.T, res.eps)
    levels = calibrate_cutoff_levels(w, dom, res.T, res.eps)
    ops, times, U, F = _manufactured_history(res)
    data = cv.SpaceTimeData(ops, times, U)
    faces = observation_boundary(dom, res.x0).faces
    s_grid = cv.default_s_grid(ex.s_min, ex.s_max, ex.s_points)
    report: dict = {"cutoff": levels.to_dict(), "T": res.T, "faces": list(faces), "forms": {}}
    ok = True
    for form in ex.forms:
        curve = cv.main_estimate_scan(data, F, w, cutoff, levels.delta, s_grid, form, faces,
                                      boundary=ex.boundary, boundary_C=ex.boundary_C)
        share = cv.main_estimate_scan(data, F, w, cutoff, levels.delta, [8.0, 40.0], form, faces,
                                      boundary=ex.boundary).share("interior")
        entry = curve.to_dict()
        entry["interior_share_s8"] = float(share[0])
        entry["interior_share_s40"] = float(share[1])
        entry["csv"] = f"scan_{form}.csv"
        write_csv(out / f"scan_{form}.csv", cv.CSV_HEADER, curve.rows())
        report["forms"][form] = entry
        ok = ok and curve.verdict == "bounded" and share[1] < share[0]
    # integral-term lemma on random smooth fields
    rng = np.random.default_rng(res.config.seed)
    mem = []
    s_mem = np.geomspace(ex.memory_s[0], ex.memory_s[1], 8)
    for i in range(ex.memory_samples):
        g = random_sine_series(dom, rng, 4, 2).sample(dom).ravel()
        a, b = rng.standard_normal(2)
        wv = (np.cos(3 * times + a) + b * times**2)[:, None] * g[None, :]
        curve = cv.memory_weight_scan(wv, times, dom, ex.memory_q, cutoff, w, s_mem)
        mem.append(curve.to_dict())
        ok = ok and curve.verdict == "bounded"
    report["memory_lemma"] = mem
    report["gamma_sensitivity"] = cv.gamma_sensitivity(
        lambda ww: cv.main_estimate_scan(data, F, ww, cutoff, levels.delta, s_grid, "first_order", faces,
                                         boundary=ex.boundary),
        ex.gammas, w,
    )
    report["weight_monotone_in_time"] = cv.weight_monotone_in_time(w, dom, times)
    beta, gamma = res.config.weight.beta, res.config.weight.gamma
    report["lebesgue"] = {
        "s25": cv.lebesgue_decay(25.0, gamma, beta, res.T),
        "s100": cv.lebesgue_decay(100.0, gamma, beta, res.T),
    }
    return report, ok


def _setup(res: Resolved, data_order: int, domain=None, check_time: bool = True) -> inv.ObservationSetup:
    dom = res.domain if domain is None else domain
    return inv.ObservationSetup(dom, res.field, res.kernel, res.T, res.x0, res.config.weight.beta,
                                data_order=data_order, r_amplitude=res.config.source.r_amplitude,
                                dt=res.dt, check_time=check_time)


def _refined(res: Resolved):
    d = res.domain
    return d.__class__(d.lower, d.upper, d.h / 2)


def cmd_observability(res: Resolved, out: Path) -> tuple[dict, bool]:
    ex = res.config.experiment
    setup = _setup(res, 2)
    ens = inv.initial_ensemble(res.domain, ex.ensemble_size, res.config.seed, ex.max_mode)
    rep = inv.observability_sweep(setup, ens, order=2)
    write_csv(out / "observability.csv", ["sample", "a_h3", "trace_all_h2", "trace_gamma_h2"], rep.rows())
    report = {"sweep": rep.to_dict()}
    lo, up = rep.interval("lower"), rep.interval("upper")
    ok = all(math.isfinite(v) and v > 0 for v in lo + up)
    if ex.refine:
        fine_dom = _refined(res)
        fine = inv.observability_sweep(_setup(res, 2, fine_dom),
                                       inv.initial_ensemble(fine_dom, ex.ensemble_size, res.config.seed,
                                                            ex.max_mode), order=2)
        shift = inv.interval_shift(rep, fine)
        report["refinement_trend"] = shift
        report["sweep_refined"] = fine.to_dict()
        ok = ok and max(shift.values()) <= 0.15
    if ex.negative_control:
        cells = ex.control_cells or res.config.domain.cells
        cdom = res.domain.__class__(res.domain.lower, res.domain.upper,
                                    (res.domain.upper[0] - res.domain.lower[0]) / cells)
        report["negative_control"] = inv.negative_control(_setup(res, 2, cdom), rep)
    return report, ok


def cmd_reconstruct(res: Resolved, out: Path) -> tuple[dict, bool]:
    ex = res.config.experiment
    rng = np.random.default_rng(res.config.seed)
    setup = _setup(res, ex.data_order)
    dmap = inv.DataMap(setup)
    truth = field_from_spec(res.domain, res.config.source.f, rng).sample(res.domain).ravel()
    truth = dmap.ops.project(truth)
    data = dmap.forward(truth)
    report: dict = {"noise": ex.noise}
    if ex.noise > 0:
        data = inv.add_noise(data, ex.noise, rng)
    if ex.noise > 0 and ex.alphas:
        alpha, _ = inv.choose_alpha(data, setup, ex.alphas, ex.noise, dmap=dmap, max_iters=ex.max_iters)
        report["alpha_rule"] = "discrepancy"
    else:
        alpha = ex.alpha
    target = ex.target_error if ex.noise == 0 else None
    result = inv.reconstruct(data, setup, alpha, ex.max_iters, ex.tol, truth=truth, dmap=dmap,
                             target_error=target)
    report["reconstruction"] = result.to_dict()
    report["first_iteration_below_target"] = next(
        (i for i, e in enumerate(result.error_l2) if e <= ex.target_error), None
    )
    if ex.crime_check:
        # reported only: data from a 2x finer grid against same-grid data, same stopping rule
        truth_field = field_from_spec(res.domain, res.config.source.f, np.random.default_rng(res.config.seed))
        report["inverse_crime"] = inv.inverse_crime_check(setup, truth_field, alpha, ex.max_iters, ex.tol,
                                                          max_digits=ex.crime_digits, target_error=target)
    write_csv(out / "history.csv", ["iteration", "residual", "misfit", "error_l2", "error_h2"],
              result.history_rows())
    if res.config.output.arrays:
        digest = config_hash(res.config)
        write_array(out / "arrays", "f_hat", result.f.reshape(res.domain.shape), h=res.domain.h,
                    config_sha256=digest)
        write_array(out / "arrays", "f_true", truth.reshape(res.domain.shape), h=res.domain.h,
                    config_sha256=digest)
    ok = result.error_l2[-1] <= ex.target_error
    return report, ok


def cmd_stability_sweep(res: Resolved, out: Path) -> tuple[dict, bool]:
    ex = res.config.experiment
    setup = _setup(res, ex.data_order)
    ens = inv.source_ensemble(res.domain, ex.ensemble_size, res.config.seed, ex.max_mode)
    rep = inv.lipschitz_sweep(setup, ens, order=ex.data_order)
    base = inv.lipschitz_sweep(setup.with_(kernel=zero_kernel(res.domain.n)), ens, order=ex.data_order)
    arrays = [f.sample(res.domain).ravel() for f in ens[:3]]
    r1 = inv.lipschitz_sweep(setup, arrays, order=ex.data_order)
    r2 = inv.lipschitz_sweep(setup, [3.7 * a for a in arrays], order=ex.data_order)
    invariance = float(max(np.max(np.abs(r1.upper / r2.upper - 1)), np.max(np.abs(r1.lower / r2.lower - 1))))
    write_csv(out / "stability.csv", ["sample", "f_h2", "trace_all", "trace_gamma"], rep.rows())
    write_csv(out / "stability_zero_kernel.csv", ["sample", "f_h2", "trace_all", "trace_gamma"], base.rows())
    report = {"sweep": rep.to_dict(), "zero_kernel": base.to_dict(), "scale_invariance": invariance}
    ok = invariance < 1e-12
    for r in (rep, base):
        lo, up = r.interval("lower"), r.interval("upper")
        ok = ok and all(math.isfinite(v) and v > 0 for v in lo + up)
    if ex.negative_control:
        short = setup.with_(T=0.5 * setup.threshold, check_time=False)
        neg = inv.lipschitz_sweep(short, ens, order=ex.data_order)
        report["negative_control"] = {"T": short.T, "observed_ratio_min": float(neg.observed_ratio.min()),
                                      "reference_min": float(rep.observed_ratio.min())}
    return report, ok


COMMANDS = {
    "check-geometry": cmd_check_geometry,
    "simulate": cmd_simulate,
    "energy-report": cmd_energy_report,
    "carleman-scan": cmd_carleman_scan,
    "observability": cmd_observability,
    "reconstruct": cmd_reconstruct,
    "stability-sweep": cmd_stability_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carleman-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="YAML experiment config")
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
        p.add_argument("--quiet", action="store_true", help="only print errors")
    return parser


def run(command: str, cfg: Config, out: Path) -> tuple[dict, bool]:
    res = resolve(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.yaml").write_text(dump_config(cfg))
    report, ok = COMMANDS[command](res, out)
    report = {"command": command, "passed": bool(ok), "seed": cfg.seed, "result": report}
    write_json(out / "report.json", report)
    return report, ok


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = with_seed(load_config(args.config), args.seed)
        out = args.out if args.out is not None else Path(cfg.output.directory)
        _, ok = run(args.command, cfg, out)
    except USAGE_ERRORS as exc:
        log.error("error: %s", exc)
        return 2
    except CarlemanLabError as exc:
        log.error("failed: %s", exc)
        return 1
    log.info("%s: %s (report in %s)", args.command, "pass" if ok else "fail", out / "report.json")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
