"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the summary lines.
"""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np
import yaml

from carleman_lab import carleman_verifier as cv
from carleman_lab.cli import COMMANDS, main
from carleman_lab.fields import TimeFunction, bump_field, random_sine_series, sine_mode, sine_power
from carleman_lab.forward_solver import (
    ManufacturedSource,
    ProblemSpec,
    SeparableSource,
    cfl_limit,
    simulate,
)
from carleman_lab.geometry import (
    CarlemanWeight,
    CutoffFunction,
    Domain,
    SamplingSpec,
    anisotropic_field,
    calibrate_cutoff_levels,
    check_pseudo_convexity,
    identity_field,
    min_observation_time,
    observation_boundary,
)
from carleman_lab.inverse_lab import (
    DataMap,
    ObservationSetup,
    dot_product_test,
    initial_ensemble,
    interval_shift,
    lipschitz_sweep,
    negative_control,
    observability_sweep,
    reconstruct,
    source_ensemble,
)
from carleman_lab.memory_kernels import decaying_kernel, zero_kernel
from carleman_lab.norms_energy import discrete_energy, verify_energy_estimate
from carleman_lab.operators import GridOperators

X0 = (-0.5, 0.5)
THRESHOLD = math.sqrt(2.5)


def report(number: int, ok: bool, detail: str) -> None:
    print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {detail}")


# ---------------------------------------------------------------------------


def test_criterion_01_identity_pseudo_convexity():
    dom = Domain.unit(2, 32)
    t0 = time.perf_counter()
    analytic = check_pseudo_convexity(identity_field(2), dom, X0, SamplingSpec(derivative="analytic"))
    fd = check_pseudo_convexity(identity_field(2), dom, X0, SamplingSpec(derivative="fd"))
    elapsed = time.perf_counter() - t0
    err_a, err_fd = abs(analytic.min_ratio - 8.0), abs(fd.min_ratio - 8.0)
    ok = err_a <= 1e-8 and err_fd <= 1e-5 and elapsed < 1.0
    report(1, ok, f"ratio analytic={analytic.min_ratio:.12f} fd={fd.min_ratio:.9f} time={elapsed:.3f}s")
    assert err_a <= 1e-8
    assert err_fd <= 1e-5
    assert elapsed < 1.0


def test_criterion_02_geometry_fixtures():
    dom = Domain.unit(2, 32)
    faces = set(observation_boundary(dom, X0).faces)
    thr = min_observation_time(dom, X0, 1.0)
    ok = faces == {"right", "top", "bottom"} and abs(thr - THRESHOLD) <= 1e-12
    report(2, ok, f"faces={sorted(faces)} threshold={thr:.15f}")
    assert faces == {"right", "top", "bottom"}
    assert abs(thr - THRESHOLD) <= 1e-12


def test_criterion_03_solver_convergence_and_energy_drift():
    t0 = time.perf_counter()
    field, kernel = anisotropic_field(0.2), decaying_kernel(2, lam=1.0)
    errs = []
    for cells in (32, 64, 128):
        dom = Domain.unit(2, cells)
        X, tau = sine_mode(dom, [1, 1]), TimeFunction.cosine(1.0)
        ms = ManufacturedSource(dom, field, kernel, X, tau)
        res = simulate(ProblemSpec(dom, field, kernel, 0.5, ms, X.sample(dom).ravel()))
        errs.append(float(np.max(np.abs(res.u[-1] - ms.exact(res.times[-1])))))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    dom = Domain.unit(2, 64)
    u0 = random_sine_series(dom, np.random.default_rng(0), 6).sample(dom).ravel()
    de = discrete_energy(simulate(ProblemSpec(dom, field, zero_kernel(2), 1.0, None, u0)))
    drift = float(np.max(np.abs(de - de[0])) / de[0])
    elapsed = time.perf_counter() - t0
    ok = min(orders) >= 1.8 and drift <= 1e-8 and elapsed < 120
    report(3, ok, f"orders={orders[0]:.3f},{orders[1]:.3f} drift={drift:.2e} time={elapsed:.1f}s")
    assert min(orders) >= 1.8
    assert drift <= 1e-8
    assert elapsed < 120


def test_criterion_04_memory_energy_estimate_refinement():
    sups = []
    for cells in (64, 128):
        dom = Domain.unit(2, cells)
        u0 = bump_field(dom, (0.5, 0.5), 0.3).sample(dom).ravel()
        src = SeparableSource(bump_field(dom, (0.4, 0.6), 0.2).sample(dom).ravel(), TimeFunction.cosine(2.0))
        res = simulate(ProblemSpec(dom, anisotropic_field(0.2), decaying_kernel(2), 1.0, src, u0),
                       store_source=True)
        sups.append(verify_energy_estimate(res).ratio_sup)
    change = abs(sups[1] - sups[0]) / abs(sups[1])
    ok = all(math.isfinite(s) for s in sups) and change <= 0.10
    report(4, ok, f"sup ratio h=1/64: {sups[0]:.6f} h=1/128: {sups[1]:.6f} change={change:.2e}")
    assert all(math.isfinite(s) for s in sups)
    assert change <= 0.10


def _weight_setting(cells):
    dom = Domain.unit(2, cells)
    T = 1.05 * THRESHOLD
    eps = (T - THRESHOLD) / 3
    return dom, T, eps, CarlemanWeight.normalized(dom, X0)


def test_criterion_05_integral_term_lemma():
    dom, T, eps, w = _weight_setting(32)
    cut = CutoffFunction(T, eps)
    times = (T / 200) * np.arange(-200, 201)
    rng = np.random.default_rng(2024)
    verdicts, slopes = [], []
    for _ in range(3):
        g = random_sine_series(dom, rng, 4, 2).sample(dom).ravel()
        a, b = rng.standard_normal(2)
        wv = (np.cos(3 * times + a) + b * times**2)[:, None] * g[None, :]
        curve = cv.memory_weight_scan(wv, times, dom, 1.0, cut, w, np.geomspace(8, 64, 8))
        verdicts.append(curve.verdict)
        slopes.append(curve.slope)
    ok = all(v == "bounded" for v in verdicts)
    report(5, ok, f"verdicts={verdicts} slopes={[round(s, 4) for s in slopes]}")
    assert ok


def test_criterion_06_main_estimate_scan():
    dom, T, eps, w = _weight_setting(64)
    field, kernel = identity_field(2), decaying_kernel(2)
    ms = ManufacturedSource(dom, field, kernel, sine_power(dom, 4), TimeFunction.cosine(1.0))
    ops = GridOperators(dom, field)
    steps = int(math.ceil(T / cfl_limit(dom, field)))
    times = (T / steps) * np.arange(-steps, steps + 1)
    U = np.array([ms.exact(t) for t in times])
    F = np.array([ops.project(ms.evaluate(t)) for t in times])
    flat = cv.check_boundary_flatness(F, ops)
    levels = calibrate_cutoff_levels(w, dom, T, eps)
    cut = CutoffFunction(T, eps)
    data = cv.SpaceTimeData(ops, times, U)
    faces = observation_boundary(dom, X0).faces
    lines, ok = [], flat["flat"] and levels.valid
    for form in cv.MAIN_FORMS:
        curve = cv.main_estimate_scan(data, F, w, cut, levels.delta, cv.default_s_grid(), form, faces)
        share = cv.main_estimate_scan(data, F, w, cut, levels.delta, [8.0, 40.0], form, faces).share("interior")
        ok = ok and curve.verdict == "bounded" and share[1] < share[0]
        lines.append(f"{form}:{curve.verdict}(slope {curve.slope:+.3f}, share {share[0]:.1e}->{share[1]:.1e})")
    report(6, ok, " ".join(lines))
    assert ok


def test_criterion_07_adjoint_dot_product():
    worst = {}
    for cells in (32, 64):
        setup = ObservationSetup(Domain.unit(2, cells), anisotropic_field(0.2), decaying_kernel(2),
                                 1.05 * THRESHOLD, X0)
        dmap = DataMap(setup)
        rng = np.random.default_rng(cells)
        worst[cells] = max(dot_product_test(dmap, rng) for _ in range(20))
    ok = max(worst.values()) <= 1e-10
    report(7, ok, f"max discrepancy 32^2={worst[32]:.2e} 64^2={worst[64]:.2e}")
    assert ok


def _obs_setup(cells):
    return ObservationSetup(Domain.unit(2, cells), anisotropic_field(0.2), decaying_kernel(2),
                            1.05 * THRESHOLD, X0, data_order=2)


def test_criterion_08_observability_and_negative_control():
    reps = {}
    for cells in (32, 64):
        setup = _obs_setup(cells)
        reps[cells] = observability_sweep(setup, initial_ensemble(setup.domain, 20, 0, 8), order=2)
    shift = interval_shift(reps[32], reps[64])
    up, lo = reps[64].interval("upper"), reps[64].interval("lower")
    positive = all(math.isfinite(v) and v > 0 for v in up + lo)
    control = negative_control(_obs_setup(128), reps[32])
    ok = positive and max(shift.values()) <= 0.15 and control["collapse"] >= 10
    report(8, ok, f"upper=[{up[0]:.3f},{up[1]:.3f}] lower=[{lo[0]:.3f},{lo[1]:.3f}] "
                  f"max shift={max(shift.values()):.3f} collapse={control['collapse']:.1f}x "
                  f"(same packets {control['collapse_same_packets']:.1f}x)")
    assert positive
    assert max(shift.values()) <= 0.15
    assert control["collapse"] >= 10


def test_criterion_09_reconstruction_and_lipschitz():
    # calibration on the 1-D closed form: d_x u(1, t) = -(1 - cos(pi t)) / pi for f = sin(pi x), R = 1
    one = ObservationSetup(Domain.unit(1, 64), identity_field(1), zero_kernel(1), 1.6, (-0.5,), r_amplitude=0.0)
    tr = DataMap(one).forward(sine_mode(one.domain, [1]).sample(one.domain).ravel())
    calib_err = float(np.max(np.abs(tr.values[:, 0] + (1 - np.cos(np.pi * tr.times)) / np.pi)))
    truth1 = bump_field(one.domain, (0.5,), 0.3).sample(one.domain).ravel()
    r1 = reconstruct(DataMap(one).forward(truth1), one, max_iters=200, truth=truth1, target_error=0.05)
    # 2-D reconstruction at 64^2
    setup = ObservationSetup(Domain.unit(2, 64), anisotropic_field(0.2), decaying_kernel(2), 1.05 * THRESHOLD, X0)
    dmap = DataMap(setup)
    truth = dmap.ops.project(bump_field(setup.domain, (0.45, 0.55), 0.3).sample(setup.domain).ravel())
    r2 = reconstruct(dmap.forward(truth), setup, max_iters=200, truth=truth, dmap=dmap, target_error=0.05)
    err2 = r2.error_l2[-1]
    # Lipschitz ratios over a 20-member ensemble and their scale invariance
    lip_setup = ObservationSetup(Domain.unit(2, 32), anisotropic_field(0.2), decaying_kernel(2),
                                 1.05 * THRESHOLD, X0)
    ens = source_ensemble(lip_setup.domain, 20, 0, 6)
    rep = lipschitz_sweep(lip_setup, ens, order=3)
    arrays = [f.sample(lip_setup.domain).ravel() for f in ens[:3]]
    a = lipschitz_sweep(lip_setup, arrays, order=3)
    b = lipschitz_sweep(lip_setup, [3.7 * x for x in arrays], order=3)
    invariance = float(max(np.max(np.abs(a.upper / b.upper - 1)), np.max(np.abs(a.lower / b.lower - 1))))
    up, lo = rep.interval("upper"), rep.interval("lower")
    bounded = all(math.isfinite(v) and v > 0 for v in up + lo)
    ok = (calib_err < 1e-3 and r1.error_l2[-1] <= 0.05 and err2 <= 0.05 and r2.iterations <= 200
          and invariance < 1e-12 and bounded)
    report(9, ok, f"1-D calib err={calib_err:.1e} 1-D rec={r1.error_l2[-1]:.3f} "
                  f"2-D rec={err2:.4f} in {r2.iterations} it; invariance={invariance:.1e} "
                  f"upper=[{up[0]:.3f},{up[1]:.3f}] lower=[{lo[0]:.3f},{lo[1]:.3f}]")
    assert calib_err < 1e-3 and r1.error_l2[-1] <= 0.05
    assert err2 <= 0.05 and r2.iterations <= 200
    assert invariance < 1e-12
    assert bounded


DETERMINISM_CONFIGS = {
    "check-geometry": {"domain": {"n": 2, "cells": 16}, "coefficients": {"preset": "anisotropic"}},
    "simulate": {"domain": {"n": 2, "cells": 16}, "kernel": {"preset": "decaying"}, "time": {"T": 0.5},
                 "source": {"mode": "manufactured", "f": {"kind": "sine"}}},
    "energy-report": {"domain": {"n": 2, "cells": 16}, "kernel": {"preset": "decaying"}, "time": {"T": 0.5},
                      "source": {"mode": "separated", "initial": {"kind": "random", "max_mode": 4}},
                      "experiment": {"refine": True}},
    "carleman-scan": {"domain": {"n": 1, "lower": [0.0], "upper": [1.0], "cells": 64}, "weight": {"x0": [-0.5]},
                      "kernel": {"preset": "decaying"},
                      "source": {"mode": "manufactured", "f": {"kind": "sine_power"}}},
    "observability": {"domain": {"n": 2, "cells": 12}, "kernel": {"preset": "decaying"},
                      "experiment": {"ensemble_size": 4, "max_mode": 4, "refine": True,
                                     "negative_control": True, "control_cells": 16}},
    "reconstruct": {"domain": {"n": 2, "cells": 12}, "kernel": {"preset": "decaying"},
                    "source": {"f": {"kind": "random", "max_mode": 3}},
                    "experiment": {"data_order": 0, "noise": 0.01, "alphas": [1e-4, 1e-2], "max_iters": 30}},
    "stability-sweep": {"domain": {"n": 2, "cells": 12}, "kernel": {"preset": "decaying"},
                        "experiment": {"ensemble_size": 3, "max_mode": 4, "data_order": 1,
                                       "negative_control": True}},
}


def _snapshot(directory: Path) -> dict:
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_criterion_10_cli_determinism(tmp_path, monkeypatch):
    assert set(DETERMINISM_CONFIGS) == set(COMMANDS)
    mismatched, codes = [], {}
    for command, data in DETERMINISM_CONFIGS.items():
        cfg = tmp_path / f"{command}.yaml"
        cfg.write_text(yaml.safe_dump({**data, "seed": 7}))
        snaps = []
        for run, threads in enumerate(("1", "1", "3")):
            monkeypatch.setenv("CARLEMAN_LAB_THREADS", threads)
            out = tmp_path / f"{command}-{run}"
            codes[command] = main([command, "--config", str(cfg), "--out", str(out), "--quiet"])
            snaps.append(_snapshot(out))
        if not (snaps[0] == snaps[1] == snaps[2] and "report.json" in snaps[0]):
            mismatched.append(command)
    ok = not mismatched and all(c == 0 for c in codes.values())
    report(10, ok, f"commands={len(codes)} exit codes={codes} mismatched={mismatched}")
    assert not mismatched
    assert all(c == 0 for c in codes.values())
