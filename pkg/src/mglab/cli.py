"""Command line harness: one config file in, CSV/JSON/figure artifacts out.

Exit codes: 0 on success, 1 when a verification check fails, 2 on config
errors.  Every CSV gets a JSON manifest with the resolved config, the seed
list and the code version, so any artifact can be regenerated exactly.
Figures are rendered next to the data by default; --no-figures skips them.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from .artifacts import write_csv, write_json, write_manifest
from .config import ConfigError, ExperimentConfig, config_to_dict, load_config
from .discrete import increment_moments, run_discrete
from .ergodicity import (
    LlnReport,
    VeretennikovReport,
    calibrate_m_prime,
    lln_suite,
    make_initial_condition,
    probe_radii,
    radial_drift_check,
    scenario_rescale,
    waiting_time_bound,
)
from .rng import STREAM_MCSAMPLER, STREAM_PROBES, make_rng
from .sde import DriftSpec, drift, integrate_ensemble
from .stationarity import (
    ScalingReport,
    StationarityReport,
    alpha_sweep,
    detect_waiting_time,
    scaling_experiment,
)
from .strategies import GameParams, compute_overlaps, sample_strategies

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_CONFIG = 2


def _payload(cfg: ExperimentConfig, command: str, seeds, **extra) -> dict:
    body = {"command": command, "config": config_to_dict(cfg), "seeds": list(seeds)}
    body.update(extra)
    return body


# --- plot-data emission ---------------------------------------------------


def emit_plot_data(report, out_dir, payload: dict) -> dict:
    """Write the tidy CSVs for one report; returns {name: written path or None}.

    Empty sections produce no file; every manifest that is written carries
    the full list of omitted section names ("omitted" key).
    """
    out_dir = Path(out_dir)
    sections = []

    if isinstance(report, StationarityReport):
        seed = report.meta.get("seed", "")
        rows = [(t, tv, seed) for t, tv in zip(report.tv_times, report.tv_values)]
        sections.append((f"tv_curve_seed{seed}.csv", ("t", "tv", "seed"), rows))
    elif isinstance(report, ScalingReport):
        cell_rows = [
            (
                c.n_agents,
                c.t_hat,
                c.seed,
                c.verdict,
                c.alpha,
                c.gamma_rate,
                c.y0_norm2,
                c.noise_floor,
                c.decay_slope,
            )
            for c in report.cells
        ]
        sections.append(
            (
                "scaling_cells.csv",
                ("N", "T_hat", "seed", "verdict", "alpha", "gamma_rate", "y0_norm2", "noise_floor", "decay_slope"),
                cell_rows,
            )
        )
        tv_rows = [
            (t, tv, c.n_agents, c.seed, report.scenario)
            for c in report.cells
            for t, tv in zip(c.tv_times, c.tv_values)
        ]
        sections.append(("scaling_tv_curves.csv", ("t", "tv", "N", "seed", "scenario"), tv_rows))
    elif isinstance(report, VeretennikovReport):
        rows = [
            (p.radius, p.pass_fraction, p.min_margin, p.mean_margin, p.mean_radial_over_n)
            for p in report.profiles
        ]
        sections.append(
            (
                "dissipativity_profile.csv",
                ("radius", "pass_fraction", "min_margin", "mean_margin", "mean_radial_over_n"),
                rows,
            )
        )
    elif isinstance(report, LlnReport):
        decay_rows = [(n, b, o, d) for n, b, o, d in report.stat_rows()]
        sections.append(
            (
                "lln_decay.csv",
                ("N", "rms_bias_overlap", "rms_offdiag_rowsum", "mean_diag_dev"),
                decay_rows,
            )
        )
        cell_rows = [
            (c.n_agents, c.seed, c.pop_bias_overlap, c.pop_offdiag_rowsum, c.max_diag_dev)
            for c in report.cells
        ]
        sections.append(
            (
                "lln_cells.csv",
                ("N", "seed", "pop_bias_overlap", "pop_offdiag_rowsum", "max_diag_dev"),
                cell_rows,
            )
        )
    else:
        raise TypeError(f"no plot-data emitter for {type(report).__name__}")

    note = dict(payload, omitted=sorted(name for name, _, rows in sections if not rows))
    written = {}
    for name, columns, rows in sections:
        if not rows:
            written[name] = None
            continue
        path = write_csv(out_dir / name, columns, rows)
        write_manifest(path, note)
        written[name] = path
    return written


# --- subcommands ------------------------------------------------------------


def _traj_columns(n_agents: int):
    return ["tau"] + [f"y_{i + 1}" for i in range(n_agents)]


def cmd_simulate_discrete(cfg, seeds, out, jobs, render) -> int:
    g = cfg.game
    for seed in seeds:
        params = GameParams.from_alpha(g.n_agents, g.alpha, g.gamma_rate, seed)
        table = sample_strategies(params)
        y0 = None
        if cfg.discrete.use_scenario_start:
            y0 = make_initial_condition(cfg.scenario_spec(), g.n_agents, seed)
        traj = run_discrete(params, table, cfg.discrete.n_steps, cfg.discrete.record_every, y0=y0)
        rows = [(t, *vals) for t, vals in zip(traj.times, traj.values)]
        path = write_csv(out / f"discrete_seed{seed}.csv", _traj_columns(g.n_agents), rows)
        write_manifest(path, _payload(cfg, "simulate-discrete", seeds, seed=seed, meta=traj.meta))
    return EXIT_OK


def cmd_simulate_sde(cfg, seeds, out, jobs, render) -> int:
    g, it = cfg.game, cfg.integrator
    scenario = cfg.scenario_spec()
    rc = scenario_rescale(scenario, g.n_agents)
    for seed in seeds:
        params = GameParams.from_alpha(g.n_agents, g.alpha, g.gamma_rate, seed)
        table = sample_strategies(params)
        y0 = make_initial_condition(scenario, g.n_agents, seed)
        state0 = rc.c * y0 if it.rescaled else y0
        ens = integrate_ensemble(
            params,
            table,
            state0,
            it.dt,
            it.t_end,
            n_replicas=it.n_replicas,
            record_every=it.record_every,
            rescaled=it.rescaled,
            c=rc.c if it.rescaled else 1.0,
            sigma2_model=it.sigma2_model,
            factor_method=it.factor_method,
        )
        traj = ens.replica(0)
        rows = [(t, *vals) for t, vals in zip(traj.times, traj.values)]
        path = write_csv(out / f"sde_seed{seed}.csv", _traj_columns(g.n_agents), rows)
        write_manifest(
            path,
            _payload(
                cfg,
                "simulate-sde",
                seeds,
                seed=seed,
                scenario=scenario.kind,
                c=rc.c,
                k=rc.k_default,
                l=rc.l_default,
                dt=it.dt,
                meta=traj.meta,
            ),
        )
    return EXIT_OK


def cmd_verify_lln(cfg, seeds, out, jobs, render) -> int:
    g, lb = cfg.game, cfg.lln
    report = lln_suite(g.alpha, g.gamma_rate, lb.n_grid, seeds, lb.n_probes)
    payload = _payload(cfg, "verify-lln", seeds)
    emit_plot_data(report, out, payload)
    lo, hi = lb.slope_window
    diag_at_top = report.stat_diag[max(report.n_grid)]
    checks = {
        "slope_bias_in_window": lo <= report.slope_bias <= hi,
        "slope_offdiag_in_window": lo <= report.slope_offdiag <= hi,
        "diag_dev_within_tolerance": diag_at_top <= lb.diag_tolerance,
    }
    write_json(
        out / "lln_report.json",
        dict(
            payload,
            slopes={
                "bias_overlap": report.slope_bias,
                "offdiag_rowsum": report.slope_offdiag,
                "diag_dev": report.slope_diag,
            },
            slope_window=[lo, hi],
            diag_dev_at_largest_n=diag_at_top,
            diag_tolerance=lb.diag_tolerance,
            checks=checks,
            passed=all(checks.values()),
        ),
    )
    if render:
        from . import figures

        figures.render_lln_decay(report, out / "lln_decay.png")
    for name, ok in checks.items():
        print(f"verify-lln: {name}: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if all(checks.values()) else EXIT_CHECK


def cmd_verify_dissipativity(cfg, seeds, out, jobs, render) -> int:
    g, db = cfg.game, cfg.dissipativity
    seed = seeds[0]
    params = GameParams.from_alpha(g.n_agents, g.alpha, g.gamma_rate, seed)
    table = sample_strategies(params)
    spec = DriftSpec(compute_overlaps(table))
    scenario = cfg.scenario_spec()
    rc = scenario_rescale(scenario, g.n_agents)
    radii = probe_radii(scenario, g.n_agents, db.coord_mags, rc.c)
    report = radial_drift_check(spec, scenario, radii, n_probes=db.n_probes, seed=seed, rescale=rc)
    payload = _payload(cfg, "verify-dissipativity", seeds, seed=seed)
    emit_plot_data(report, out, payload)

    fractions = report.threshold_fractions(db.threshold)
    above_m0 = [f for r, f in fractions if report.m0_empirical is not None and r >= report.m0_empirical]
    checks = {
        "rate_exceeds_required": report.r_achieved > report.r_required,
        "m0_found": report.m0_empirical is not None,
        "inequality_pass_fraction": report.passes(db.min_pass_fraction),
        "radial_threshold_beyond_m0": bool(above_m0) and min(above_m0) >= db.min_pass_fraction,
    }
    write_json(
        out / "dissipativity_report.json",
        dict(
            payload,
            n_agents=report.n_agents,
            scenario=report.scenario,
            c=report.c,
            k=report.k,
            l=report.l,
            r_required=report.r_required,
            r_achieved=report.r_achieved,
            target_radial=report.target_radial,
            m0_empirical=report.m0_empirical,
            pass_fraction=report.pass_fraction,
            threshold=db.threshold,
            threshold_fractions=[[r, f] for r, f in fractions],
            checks=checks,
            passed=all(checks.values()),
        ),
    )
    if render:
        from . import figures

        figures.render_dissipativity(report, out / "dissipativity_profile.png")
    for name, ok in checks.items():
        print(f"verify-dissipativity: {name}: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if all(checks.values()) else EXIT_CHECK


def cmd_drift_oracle(cfg, seeds, out, jobs, render) -> int:
    g, ob = cfg.game, cfg.drift_oracle
    seed = seeds[0]
    params = GameParams.from_alpha(g.n_agents, g.alpha, g.gamma_rate, seed)
    table = sample_strategies(params)
    spec = DriftSpec(compute_overlaps(table))
    rng = make_rng(seed, STREAM_PROBES, 1)
    points = [np.zeros(g.n_agents)]
    for _ in range(ob.n_points - 1):
        points.append(ob.y_scale * rng.uniform(-1.0, 1.0, g.n_agents))

    rows = []
    n_match = 0
    for idx, y in enumerate(points):
        predicted = -(params.gamma_rate / params.n_agents) * drift(spec, y)
        measured, sem = increment_moments(table, params, y, ob.n_draws, stream=(STREAM_MCSAMPLER, idx))
        ok = np.abs(measured - predicted) <= ob.se_multiple * np.maximum(sem, 1e-300)
        n_match += int(ok.sum())
        for i in range(g.n_agents):
            rows.append(
                {
                    "point": idx,
                    "coord": i,
                    "predicted": predicted[i],
                    "measured": measured[i],
                    "sem": sem[i],
                    "match": bool(ok[i]),
                }
            )
    fraction = n_match / (len(points) * g.n_agents)
    payload = _payload(cfg, "drift-oracle", seeds, seed=seed)
    path = write_csv(
        out / "drift_match.csv",
        ("point", "coord", "predicted", "measured", "sem", "match"),
        [(r["point"], r["coord"], r["predicted"], r["measured"], r["sem"], r["match"]) for r in rows],
    )
    write_manifest(path, payload)
    passed = fraction >= ob.min_match_fraction
    write_json(
        out / "drift_oracle_report.json",
        dict(
            payload,
            n_points=len(points),
            n_draws=ob.n_draws,
            se_multiple=ob.se_multiple,
            match_fraction=fraction,
            min_match_fraction=ob.min_match_fraction,
            passed=passed,
        ),
    )
    if render:
        from . import figures

        figures.render_drift_match(rows, out / "drift_match.png")
    print(f"drift-oracle: match fraction {fraction:.4f} (need >= {ob.min_match_fraction}): "
          f"{'pass' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_CHECK


def cmd_waiting_time(cfg, seeds, out, jobs, render) -> int:
    g, it, est, wt = cfg.game, cfg.integrator, cfg.estimator, cfg.waiting
    scenario = cfg.scenario_spec()
    rc = scenario_rescale(scenario, g.n_agents)
    k = wt.k if wt.k is not None else rc.k_default
    l = wt.l if wt.l is not None else rc.l_default
    payload = _payload(cfg, "waiting-time", seeds, c=rc.c, k=k, l=l)
    per_seed = []
    all_converged = True
    for seed in seeds:
        params = GameParams.from_alpha(g.n_agents, g.alpha, g.gamma_rate, seed)
        table = sample_strategies(params)
        y0 = make_initial_condition(scenario, g.n_agents, seed)
        y0_norm = float(np.linalg.norm(y0))
        ens = integrate_ensemble(
            params,
            table,
            y0,
            it.dt,
            it.t_end,
            n_replicas=it.n_replicas,
            record_every=it.record_every,
            sigma2_model=it.sigma2_model,
            factor_method=it.factor_method,
        )
        report = detect_waiting_time(
            ens,
            epsilon_target=est.epsilon_target,
            window=est.window,
            confirm=est.confirm,
            n_bins=est.n_bins,
            marginal=est.marginal,
            tail_fraction=est.tail_fraction,
        )
        emit_plot_data(report, out, dict(payload, seed=seed))
        envelope = None
        try:
            pairs = list(zip(params.gamma_rate * report.tv_times, report.tv_values))
            fit = calibrate_m_prime(pairs, k, l, rc.c, y0_norm)
            envelope = {
                "m_prime": fit.m_prime,
                "violation_fraction": fit.violation_fraction,
                "holds_on_95pct": fit.violation_fraction <= 0.05,
            }
            m_prime = fit.m_prime
        except ValueError as exc:
            envelope = {"error": str(exc)}
            m_prime = wt.m_prime
        entry = {
            "seed": seed,
            "t_hat": report.t_hat,
            "verdict": report.verdict,
            "noise_floor": report.noise_floor,
            "decay_slope": None if math.isnan(report.decay_slope) else report.decay_slope,
            "y0_norm": y0_norm,
            "envelope": envelope,
            "bound_t_measured_epsilon": waiting_time_bound(
                est.epsilon_target, g.gamma_rate, y0_norm, rc.c, k, l, m_prime
            ),
            "bound_t_config_epsilon": waiting_time_bound(
                wt.epsilon, g.gamma_rate, y0_norm, rc.c, k, l, m_prime
            ),
        }
        per_seed.append(entry)
        all_converged = all_converged and report.verdict == "converged"
        if render:
            from . import figures

            figures.render_single_tv_curve(report, out / f"tv_curve_seed{seed}.png")
        print(
            f"waiting-time: seed {seed}: verdict {report.verdict}"
            + (f", t_hat={report.t_hat:.4g}" if report.t_hat is not None else "")
        )
    write_json(out / "waiting_report.json", dict(payload, results=per_seed))
    return EXIT_OK if all_converged else EXIT_CHECK


def cmd_scaling(cfg, seeds, out, jobs, render) -> int:
    g, it, est, sw = cfg.game, cfg.integrator, cfg.estimator, cfg.sweep
    scenario = cfg.scenario_spec()
    try:
        report = scaling_experiment(
            sw.n_grid,
            g.alpha,
            g.gamma_rate,
            scenario,
            seeds,
            epsilon_target=est.epsilon_target,
            dt=it.dt,
            t_end_base=sw.t_end_base,
            t_end_per_agent=sw.t_end_per_agent,
            record_every=it.record_every,
            n_replicas=it.n_replicas,
            window=est.window if est.window is not None else 12.0,
            confirm=est.confirm,
            marginal=est.marginal,
            sigma2_model=it.sigma2_model,
            jobs=jobs,
        )
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    payload = _payload(cfg, "scaling", seeds)
    emit_plot_data(report, out, payload)

    sweep_summary = None
    if len(sw.alphas) >= 2:
        asw = alpha_sweep(
            g.n_agents,
            sw.alphas,
            g.gamma_rate,
            scenario,
            seeds,
            jobs=jobs,
            epsilon_target=est.epsilon_target,
            window=est.window if est.window is not None else 12.0,
            confirm=est.confirm,
            marginal=est.marginal,
            dt=it.dt,
            record_every=it.record_every,
            n_replicas=it.n_replicas,
            sigma2_model=it.sigma2_model,
        )
        rows = [(c.alpha, c.t_hat, c.seed, c.verdict) for c in asw.cells]
        path = write_csv(out / "alpha_sweep.csv", ("alpha", "T_hat", "seed", "verdict"), rows)
        write_manifest(path, payload)
        sweep_summary = {
            "alphas": asw.alphas,
            "per_alpha_median": {str(a): m for a, m in asw.per_alpha_median.items()},
            "medians_non_decreasing": asw.medians_non_decreasing,
            "n_open": asw.n_open,
        }
        if render:
            from . import figures

            figures.render_alpha_sweep(asw, out / "alpha_sweep.png")

    checks = {
        "fit_vs_n_r2": bool(np.isfinite(report.fit_vs_n["r2"]) and report.fit_vs_n["r2"] >= 0.9),
        "fit_vs_n_slope_positive": bool(
            np.isfinite(report.fit_vs_n["slope"]) and report.fit_vs_n["slope"] > 0
        ),
    }
    if sweep_summary is not None:
        checks["alpha_medians_non_decreasing"] = sweep_summary["medians_non_decreasing"]
    write_json(
        out / "scaling_fit.json",
        dict(
            payload,
            fit_vs_n=report.fit_vs_n,
            fit_vs_y0sq=report.fit_vs_y0sq,
            per_n_median={str(n): m for n, m in report.per_n_median.items()},
            n_open=report.n_open,
            alpha_sweep=sweep_summary,
            checks=checks,
            passed=all(checks.values()),
        ),
    )
    if render:
        from . import figures

        figures.render_scaling(report, out / "scaling.png")
        figures.render_tv_curves(
            report.cells, report.epsilon_target, out / "scaling_tv_curves.png"
        )
    for name, ok in checks.items():
        print(f"scaling: {name}: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if all(checks.values()) else EXIT_CHECK


COMMANDS = {
    "simulate-discrete": cmd_simulate_discrete,
    "simulate-sde": cmd_simulate_sde,
    "verify-lln": cmd_verify_lln,
    "verify-dissipativity": cmd_verify_dissipativity,
    "drift-oracle": cmd_drift_oracle,
    "waiting-time": cmd_waiting_time,
    "scaling": cmd_scaling,
}


def _seed_list(text: str):
    try:
        return [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mglab", description="Minority-game SDE laboratory: simulate, verify, measure."
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="experiment config (YAML)")
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("--jobs", type=int, default=None, help="worker processes")
    seeds = common.add_mutually_exclusive_group()
    seeds.add_argument("--seeds", type=_seed_list, default=None, help="comma-separated seed list")
    seeds.add_argument("--seed-count", type=int, default=None, help="use seeds 0..M-1")
    common.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {name} pipeline")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config is not None else ExperimentConfig()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.seeds is not None:
        if not args.seeds:
            print("config error: --seeds list is empty", file=sys.stderr)
            return EXIT_CONFIG
        seeds = args.seeds
    elif args.seed_count is not None:
        if args.seed_count < 1:
            print("config error: --seed-count must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        seeds = list(range(args.seed_count))
    else:
        seeds = cfg.resolved_seeds()

    out = args.out or cfg.output_dir or os.environ.get("MGLAB_OUT") or "mglab-out"
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = args.jobs if args.jobs is not None else cfg.jobs
    if jobs < 1:
        print("config error: jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    return COMMANDS[args.command](cfg, seeds, out, jobs, render=not args.no_figures)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
