"""Experiment kinds: each turns a resolved config into output tables and a summary.

Every runner returns an :class:`ExperimentOutcome`; nothing here touches
the filesystem, so the CLI can validate, compute, and only then write.
Output text depends on the config alone, never on the worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .configurations import corner_distance, sample_config
from .finite_volume import (
    delta2_recipe,
    form_comparison_batch,
    ground_state_decay_profile,
    positivity_experiment,
    single_site_form_margin,
)
from .manifest import csv_text, dumps_json, two_column_text
from .onedim import critical_energy_scan
from .parallel import parallel_map
from .single_site import (
    DichotomyCase,
    ground_energy,
    landscape_scan,
    linear_growth_constant,
    quadrant_grid,
    sign_pattern_check,
    spectral_constants,
)
from .statistics import (
    box_ground_energies,
    ids_curve,
    lifshitz_curve_from_energies,
    lifshitz_exponent_fit,
    vanhove_exponent_fit,
    wegner_count_table,
)


class InconclusiveError(RuntimeError):
    """The statistics could not support a conclusion (e.g. no qualifying trials)."""


@dataclass
class ExperimentOutcome:
    files: dict[str, str] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    inconclusive: bool = False


def corner_energy(q, n: int, mode: str) -> float:
    return ground_energy(q, np.full(q.dim, q.d_max), n, mode)


def _landscape_rows(samples, d):
    header = [f"a{k + 1}" for k in range(d)] + ["E0"] + [f"grad{k + 1}" for k in range(d)] + ["gap"]
    rows = [list(s.a) + [s.E0] + list(s.grad_fh) + [s.gap] for s in samples]
    return header, rows


def run_landscape(cfg: ExperimentConfig, workers: int) -> ExperimentOutcome:
    q, p, n, mode = cfg.potential.build(), cfg.params, cfg.grid.n, cfg.grid.mode
    pts = quadrant_grid(q.d_max, p.points, q.dim, off_axis=p.off_axis)
    samples = landscape_scan(q, pts, n, mode, with_fd=p.with_fd, workers=workers)
    header, rows = _landscape_rows(samples, q.dim)
    if p.with_fd:
        header += [f"fd{k + 1}" for k in range(q.dim)]
        for r, s in zip(rows, samples):
            r.extend(s.grad_fd)
    E0 = corner_energy(q, n, mode)
    E = np.array([s.E0 for s in samples])
    D = corner_distance(pts, q.d_max)
    summary = {
        "samples": len(samples),
        "E0_corner": E0,
        "E0_max": float(E.max()),
        "argmax": list(pts[int(np.argmax(E))]),
        "argmin": list(pts[int(np.argmin(E))]),
        "linear_growth_constant": linear_growth_constant(samples, E0, q.d_max),
    }
    if p.off_axis:
        rep = sign_pattern_check(samples, scale=q.sup_norm)
        summary["sign_pattern"] = {"holds": rep.holds, "worst_margin": rep.worst_margin,
                                   "branch": rep.branch, "violations": rep.violations}
    order = np.argsort(D, kind="stable")
    return ExperimentOutcome(
        {"landscape.csv": csv_text(header, rows), "landscape_distance.dat": two_column_text(D[order], E[order] - E0)},
        summary,
    )


def run_dichotomy(cfg: ExperimentConfig, workers: int) -> ExperimentOutcome:
    q, p, n, mode = cfg.potential.build(), cfg.params, cfg.grid.n, cfg.grid.mode
    pts = quadrant_grid(q.d_max, p.points, q.dim, off_axis=True)
    samples = landscape_scan(q, pts, n, mode, workers=workers)
    header, rows = _landscape_rows(samples, q.dim)
    E = np.array([s.E0 for s in samples])
    G = np.array([s.grad_fh for s in samples])
    scale = q.sup_norm
    rep = sign_pattern_check(samples, scale=scale)
    summary = {
        "sup_norm": scale,
        "max_abs_E0_rel": float(np.abs(E).max() / scale),
        "max_abs_grad_rel": float(np.abs(G).max() / scale),
        "branch": rep.branch,
        "flat": bool(np.abs(E).max() < 1e-6 * scale and np.abs(G).max() < 1e-5 * scale),
    }
    D = corner_distance(pts, q.d_max)
    order = np.argsort(D, kind="stable")
    return ExperimentOutcome(
        {"dichotomy.csv": csv_text(header, rows), "dichotomy_distance.dat": two_column_text(D[order], E[order])},
        summary,
    )


def _single_site_margin(args):
    q, a, n, E0, mode = args
    return single_site_form_margin(q, a, n, E0, mode)


def run_formcmp(cfg: ExperimentConfig, workers: int) -> ExperimentOutcome:
    q, p, n, mode = cfg.potential.build(), cfg.params, cfg.grid.n, cfg.grid.mode
    dist = cfg.distribution.build()
    E0 = corner_energy(q, n, mode)
    pts = quadrant_grid(q.d_max, p.single_site_points, q.dim, off_axis=True)
    singles = parallel_map(_single_site_margin, [(q, a, n, E0, mode) for a in pts], workers)
    s_rows = [list(a) + [r.t_star, r.min_eig_at_t] for a, r in zip(pts, singles)]
    s_header = [f"a{k + 1}" for k in range(q.dim)] + ["t_star", "min_eig_at_t"]
    batch_rows, batch_min = [], {}
    for L in p.L_list:
        reps = form_comparison_batch(q, dist, L, n, E0, p.trials, cfg.seed, mode, workers)
        for t, r in enumerate(reps):
            batch_rows.append([L, t, r.t_star, r.min_eig_at_t])
        batch_min[L] = min(r.t_star for r in reps)
    mins = np.array(list(batch_min.values()))
    summary = {
        "E0": E0,
        "single_site_min_t_star": float(min(r.t_star for r in singles)),
        "batch_min_t_star": {str(L): v for L, v in batch_min.items()},
        "batch_min_ratio": float(mins.max() / mins.min()) if mins.min() > 0 else float("inf"),
        "violations": int(sum(r.violation for r in singles)) + int(np.sum(mins <= 0)),
    }
    return ExperimentOutcome(
        {
            "formcmp_single_site.csv": csv_text(s_header, s_rows),
            "formcmp_trials.csv": csv_text(["L", "trial", "t_star", "min_eig_at_t"], batch_rows),
            "formcmp_batch_min.dat": two_column_text(list(batch_min), mins),
        },
        summary,
    )


def run_fieldpos(cfg: ExperimentConfig, workers: int) -> ExperimentOutcome:
    q, p, n, mode = cfg.potential.build(), cfg.params, cfg.grid.n, cfg.grid.mode
    dist = cfg.distribution.build()
    consts = spectral_constants(q, n, points=p.constants_points, mode=mode, workers=workers)
    delta2 = p.delta2 if p.delta2 is not None else delta2_recipe(consts)
    delta2 *= p.delta2_factor
    rep = positivity_experiment(q, dist, p.L, n, p.trials, delta2, consts, cfg.seed, mode, workers)
    rows = [[t.trial, t.lambda_min, t.lambda_min - consts.E0_min, t.qualifying, t.corner, t.value]
            for t in rep.trials]
    qual = rep.qualifying
    summary = {
        "constants": consts.to_dict(),
        "delta2_used": delta2,
        "qualifying": len(qual),
        "delta1_hat": rep.delta1_hat,
        "violations": rep.violations,
        "quartiles": list(rep.quartiles()),
    }
    out = ExperimentOutcome(
        {
            "fieldpos_trials.csv": csv_text(
                ["trial", "lambda_min", "excess", "qualifying", "corner", "value"], rows),
            "fieldpos_values.dat": two_column_text([t.lambda_min - consts.E0_min for t in qual],
                                                   [t.value for t in qual]),
        },
        summary,
    )
    if not qual:
        out.inconclusive = True
        summary["note"] = "no qualifying non-corner trials; raise trials or move the distribution closer to the minimizer"
    return out


def _depth(q, n, mode) -> float:
    return ground_energy(q, np.zeros(q.dim), n, mode) - corner_energy(q, n, mode)


def run_lifshitz(cfg: ExperimentConfig, workers: int) -> ExperimentOutcome:
    q, p, n, mode = cfg.potential.build(), cfg.params, cfg.grid.n, cfg.grid.mode
    dist = cfg.distribution.build()
    E0 = corner_energy(q, n, mode)
    C1 = p.C1 if p.C1 is not None else p.C1_depth_factor * _depth(q, n, mode)
    energies = {int(L): box_ground_energies(q, dist, int(L), n, p.trials, cfg.seed, mode, workers)
                for L in p.L_list}
    curve = lifshitz_curve_from_energies(energies, E0, C1, q.dim)
    # C1 is a free parameter; rerun the threshold on the same energies to show its influence
    sensitivity = {}
    for factor in (0.5, 2.0):
        alt = lifshitz_curve_from_energies(energies, E0, factor * C1, q.dim)
        sensitivity[f"{factor:g}"] = {"C1": factor * C1, "counts": [int(k) for k in alt.counts],
                                      "slope": alt.fit["slope"], "slope_upper95": alt.fit["slope_upper95"]}
    rows = [[int(L), int(k), int(m), est, lo, hi]
            for L, k, m, est, lo, hi in zip(curve.abscissae, curve.counts, curve.trials, curve.estimates,
                                            curve.lower, curve.upper)]
    summary = dict(curve.fit) | {"notes": list(curve.notes), "C1_sensitivity": sensitivity}
    return ExperimentOutcome(
        {
            "lifshitz.csv": csv_text(["L", "count", "trials", "estimate", "lower", "upper"], rows),
            "lifshitz_log_probability.dat": two_column_text(
                curve.abscissae, np.log((curve.counts + 0.5) / (curve.trials + 1.0))),
        },
        summary,
    )


def run_wegner(cfg: ExperimentConfig, workers: int) -> ExperimentOutcome:
    q, p, n, mode = cfg.potential.build(), cfg.params, cfg.grid.n, cfg.grid.mode
    dist = cfg.distribution.build()
    consts = spectral_constants(q, n, mode=mode, workers=workers)
    delta2 = delta2_recipe(consts)
    E_center = consts.E0_min + p.center_fraction * delta2 / 2
    scale = p.energy_scale if p.energy_scale is not None else 4.0 * q.dim * n * n
    eps = [f * scale for f in p.eps_factors]
    table = wegner_count_table(q, dist, E_center, eps, p.L_list, p.trials, n, cfg.seed, mode, workers)
    rows = [[int(L), e, m, lo, hi, int(t)]
            for (L, e), m, lo, hi, t in zip(table.abscissae, table.estimates, table.lower, table.upper,
                                             table.trials)]
    summary = dict(table.fit) | {"E_center": E_center, "delta2": delta2, "energy_scale": scale,
                                 "notes": list(table.notes)}
    out = ExperimentOutcome(
        {"wegner.csv": csv_text(["L", "eps", "mean_count", "lower", "upper", "trials"], rows)}, summary)
    out.inconclusive = not table.fit
    return out


def run_ids(cfg: ExperimentConfig, workers: int) -> ExperimentOutcome:
    q, p, n, mode = cfg.potential.build(), cfg.params, cfg.grid.n, cfg.grid.mode
    dist = cfg.distribution.build()
    E0 = corner_energy(q, n, mode)
    E = E0 + np.geomspace(p.e_min, p.e_max, p.points)
    files, summary = {}, {"E0": E0}
    for closure in p.closures:
        c = ids_curve(q, dist, E, p.L, p.trials, n, cfg.seed, closure, mode, workers)
        files[f"ids_{closure}.csv"] = csv_text(
            ["E", "ids", "lower", "upper", "trials"],
            [[e, m, lo, hi, int(t)] for e, m, lo, hi, t in zip(E, c.estimates, c.lower, c.upper, c.trials)])
        files[f"ids_{closure}.dat"] = two_column_text(E - E0, c.estimates)
        # fraction of all states, so that 0 < N < 1
        fit = lifshitz_exponent_fit(E, c.estimates / n**q.dim, E0)
        summary[f"lifshitz_exponent_{closure}"] = fit.to_dict()
    return ExperimentOutcome(files, summary)


def run_lyapunov(cfg: ExperimentConfig, workers: int) -> ExperimentOutcome:
    q, p = cfg.potential.build(), cfg.params
    dist = cfg.distribution.build()
    scan = critical_energy_scan(q, dist, p.offsets, p.n_cells, cfg.seed, p.batches, p.steps)
    rows = [[e.energy, e.energy - scan.E0, e.gamma, e.stderr] for e in scan.estimates]
    i = scan.center_index
    summary = {
        "E0": scan.E0,
        "dip_at_E0": scan.dip_at_E0(),
        "gamma_E0": scan.estimates[i].gamma,
        "stderr_E0": scan.estimates[i].stderr,
        "max_det_error": max(e.max_det_error for e in scan.estimates),
        "min_gamma_over_stderr": float(min(e.gamma / e.stderr for e in scan.estimates)),
    }
    return ExperimentOutcome(
        {"lyapunov.csv": csv_text(["E", "offset", "gamma", "stderr"], rows),
         "lyapunov.dat": two_column_text(scan.energies, scan.gammas)},
        summary,
    )


def run_vanhove(cfg: ExperimentConfig, workers: int) -> ExperimentOutcome:
    q, p, n, mode = cfg.potential.build(), cfg.params, cfg.grid.n, cfg.grid.mode
    dist = cfg.distribution.build()
    E = np.geomspace(p.e_min, p.e_max, p.points)
    c = ids_curve(q, dist, E, p.L, p.trials, n, cfg.seed, "neumann", mode, workers)
    vol = (2 * p.L + 1) ** q.dim
    fit = vanhove_exponent_fit(E, c.estimates, 0.0, min_value=p.min_count / vol)
    rows = [[e, m, lo, hi] for e, m, lo, hi in zip(E, c.estimates, c.lower, c.upper)]
    out = ExperimentOutcome(
        {"vanhove.csv": csv_text(["E", "ids", "lower", "upper"], rows), "vanhove.dat": two_column_text(E, c.estimates)},
        {"fit": fit.to_dict(), "expected_exponent": q.dim / 2},
    )
    out.inconclusive = not fit.conclusive
    return out


def run_decay(cfg: ExperimentConfig, workers: int) -> ExperimentOutcome:
    q, p, n, mode = cfg.potential.build(), cfg.params, cfg.grid.n, cfg.grid.mode
    dist = cfg.distribution.build()
    jobs = [(q, dist, p.L, n, cfg.seed, t, mode) for t in range(p.trials)]
    profiles = parallel_map(_decay_profile, jobs, workers)
    d = q.dim
    header = ["trial"] + [f"i{k + 1}" for k in range(d)] + ["mass"]
    rows = []
    for t, prof in enumerate(profiles):
        for idx in np.ndindex(prof.shape):
            rows.append([t] + [int(i) - p.L for i in idx] + [float(prof[idx])])
    # mass against distance from the heaviest cell, averaged over trials
    dist_mass = {}
    for prof in profiles:
        peak = np.array(np.unravel_index(np.argmax(prof), prof.shape))
        for idx in np.ndindex(prof.shape):
            r = int(np.max(np.abs(np.array(idx) - peak)))
            dist_mass.setdefault(r, []).append(prof[idx])
    radii = sorted(dist_mass)
    return ExperimentOutcome(
        {"decay.csv": csv_text(header, rows),
         "decay_profile.dat": two_column_text(radii, [float(np.mean(dist_mass[r])) for r in radii])},
        {"trials": p.trials},
    )


def _decay_profile(args):
    q, dist, L, n, seed, trial, mode = args
    return ground_state_decay_profile(q, sample_config(dist, L, seed, q.dim, q.d_max, trial), n, mode)


RUNNERS = {
    "landscape": run_landscape, "dichotomy": run_dichotomy, "formcmp": run_formcmp, "fieldpos": run_fieldpos,
    "lifshitz": run_lifshitz, "wegner": run_wegner, "ids": run_ids, "lyapunov": run_lyapunov,
    "vanhove": run_vanhove, "decay": run_decay,
}


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentOutcome:
    try:
        out = RUNNERS[cfg.kind](cfg, workers)
    except DichotomyCase as err:
        raise InconclusiveError(f"flat landscape, corner analysis does not apply: {err}") from None
    out.files["summary.json"] = dumps_json(out.summary)
    out.files["config.toml"] = cfg.to_toml()
    return out

