"""``heavytail-ou <experiment> --config FILE [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 failed validation, 2 configuration or input error.
CSV tables are written with a header row; numbers use ``repr`` round-trip
formatting and anything non-finite becomes ``nan`` with a status column
saying why, so identical configs produce byte-identical tables.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import acceptance
from . import config as cfgmod
from . import excursions as exc
from . import instanton as ins
from . import rare_events as mc
from .errors import ConfigError, InvalidInputError
from .ou import TimeGrid, sample_path, time_average
from .rng import derive_seed

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else "nan"
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _status(*values, ok="ok"):
    bad = [v for v in values if isinstance(v, float) and not math.isfinite(v)]
    return "non_finite" if bad else ok


# ---------------------------------------------------------------------------
# experiments; each returns (exit code, list of written files)


def run_simulate(cfg: cfgmod.RunConfig, out: Path):
    b = cfg.budgets
    seed = derive_seed(cfg.seed, "simulate")
    rows = []
    for T in b.horizons:
        grid = TimeGrid.over(T, b.excursion_dt)
        for r in range(b.n_paths):
            path = sample_path(cfg.model, grid, seed=seed, replicate_id=r)
            L = time_average(path, cfg.model.p)
            rows.append([T, r, grid.dt, float(path.values[-1]), L, _status(L)])
    write_csv(out / "simulate.csv", ["T", "replicate", "dt", "x_T", "L_T", "status"], rows)
    return EXIT_OK, ["simulate.csv"]


def run_excursions(cfg: cfgmod.RunConfig, out: Path):
    b = cfg.budgets
    g = cfg.model.gamma
    eps0 = b.eps0 or exc.default_eps0(g)
    seed = derive_seed(cfg.seed, "excursions")
    rows = []
    for T in b.horizons:
        grid = TimeGrid.over(T, b.excursion_dt)
        for r in range(b.n_paths):
            path = sample_path(cfg.model, grid, seed=seed, replicate_id=r)
            _, st = exc.detect_excursions(path, eps0, cfg.model.p)
            recon = math.fsum(st.cycle_integrals) + st.remainder_integral
            err = abs(recon - st.total_integral)
            rows.append([T, r, st.n_cycles, st.mean_duration, math.fsum(st.cycle_integrals),
                         st.remainder_integral, st.total_integral, err,
                         "no_cycles" if st.n_cycles == 0 else _status(st.mean_duration)])
    write_csv(out / "excursions.csv",
              ["T", "replicate", "n_cycles", "mean_duration", "sum_cycle_integrals",
               "remainder_integral", "total_integral", "decomposition_error", "status"], rows)
    cyc = exc.simulate_cycles(cfg.model, eps0, b.n_cycles, derive_seed(cfg.seed, "cycles"),
                              b.excursion_dt)
    d = cyc.durations[np.isfinite(cyc.durations)]
    ts = exc.tau_statistics(d)
    write_csv(out / "tau.csv",
              ["eps0", "dt", "n_cycles", "truncated", "mean_tau", "mean_tau_ci_low",
               "mean_tau_ci_high", "var_tau", "mgf_at_1", "mean_C1", "mean_C1_se", "status"],
              [[eps0, b.excursion_dt, b.n_cycles, cyc.truncated, ts.mean_tau, ts.mean_ci[0],
                ts.mean_ci[1], ts.var_tau, ts.mgf_at_1, float(cyc.integrals.mean()),
                float(cyc.integrals.std(ddof=1) / math.sqrt(cyc.integrals.size)),
                "ok" if cyc.truncated == 0 else "truncated_cycles"]])
    return EXIT_OK, ["excursions.csv", "tau.csv"]


def _thresholds(cfg: cfgmod.RunConfig):
    b = cfg.budgets
    if b.thresholds:
        return list(b.thresholds), "configured"
    mid = sorted(b.horizons)[len(b.horizons) // 2]
    x = mc.calibrate_threshold(cfg.model, mid, b.target_probability, b.n_pilot,
                               derive_seed(cfg.seed, "calibrate"), b.dt)
    return [x], f"calibrated_at_T={mid!r}"


TAIL_HEADER = ["x", "T", "n_samples", "n_hits", "p_hat", "ci_low", "ci_high", "scaled_rate",
               "scaled_rate_se", "rate_is_bound", "threshold_source", "status"]


def run_tails(cfg: cfgmod.RunConfig, out: Path):
    b = cfg.budgets
    xs, source = _thresholds(cfg)
    rows = []
    for T in sorted(b.horizons):
        ests = mc.estimate_tails(cfg.model, xs, T, b.n_samples, derive_seed(cfg.seed, "tail", T),
                                 b.dt, b.workers)
        for e in ests:
            status = "bound_only" if e.rate_is_bound else _status(e.scaled_rate)
            rows.append([e.threshold_x, e.horizon_T, e.n_samples, e.n_hits, e.p_hat, e.ci_low,
                         e.ci_high, e.scaled_rate, e.scaled_rate_se, e.rate_is_bound, source,
                         status])
    rows.sort(key=lambda r: (r[0], r[1]))
    write_csv(out / "tails.csv", TAIL_HEADER, rows)
    return EXIT_OK, ["tails.csv"]


def run_instanton(cfg: cfgmod.RunConfig, out: Path):
    b = cfg.budgets
    g = cfg.model.gamma
    H_list = sorted(b.instanton_horizons)
    status_global = "ok"
    try:
        pre = ins.extrapolate_Jinf(cfg.model, H_list, b.instanton_dt)
        sols = pre.solutions
    except ins.ExtrapolationError as err:
        status_global = f"extrapolation_failed: {err}"
        pre = None
        sols = [ins.solve_finite_horizon(cfg.model, H, max(100, int(round(H / b.instanton_dt))))
                for H in H_list]
    rows = []
    for s in sols:
        status = "ok" if s.converged else "not_converged"
        rows.append([s.horizon_H, s.grid.dt, s.grid.n_steps, s.action, s.constraint_abs,
                     s.constraint_signed, s.multiplier, s.el_residual, s.el_residual_continuum,
                     float(s.phi.min()), s.converged, status])
    write_csv(out / "instanton.csv",
              ["H", "dt", "n_grid", "J_H", "constraint_abs", "constraint_signed", "multiplier",
               "el_residual", "el_residual_continuum", "min_phi", "converged", "status"], rows)
    paths = [[float(t), *[float(s.phi[i]) for s in sols if i < s.phi.size]]
             for i, t in enumerate(sols[-1].times)]
    # one column per horizon, padded with nan past the shorter horizons
    width = len(sols)
    paths = [r + [float("nan")] * (width + 1 - len(r)) for r in paths]
    write_csv(out / "instanton_paths.csv", ["t", *[f"phi_H={s.horizon_H!r}" for s in sols]], paths)
    info = {"gamma": g, "p": cfg.model.p, "status": status_global,
            "J_inf": pre.J_inf if pre else None,
            "tolerance_achieved": pre.tolerance_achieved if pre else None,
            "extrapolation_model": pre.extrapolation_model if pre else None,
            "per_horizon": [[s.horizon_H, s.action] for s in sols]}
    (out / "jinf.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    return (EXIT_OK if pre else EXIT_FAIL), ["instanton.csv", "instanton_paths.csv", "jinf.json"]


def run_report(cfg: cfgmod.RunConfig, out: Path):
    tails_path, jinf_path = out / "tails.csv", out / "jinf.json"
    if not tails_path.exists() or not jinf_path.exists():
        raise ConfigError(f"report needs tails.csv and jinf.json in {out}; run 'tails' and "
                          "'instanton' first")
    info = json.loads(jinf_path.read_text(encoding="utf-8"))
    if info.get("J_inf") is None:
        raise ConfigError("jinf.json carries no J_inf (instanton run failed)")
    if (info["gamma"], info["p"]) != (cfg.model.gamma, cfg.model.p):
        raise ConfigError("jinf.json was computed for different model parameters")
    rows = []
    with tails_path.open(encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            x, T = float(rec["x"]), float(rec["T"])
            rate = float(rec["scaled_rate"])
            theory = ins.rate_function(x, float(info["J_inf"]), cfg.model)
            gap = (rate - theory) / theory if theory > 0 and math.isfinite(rate) else float("nan")
            status = "bound_only" if rec["rate_is_bound"] == "true" else _status(rate, gap)
            rows.append([x, T, rate, theory, gap, status])
    rows.sort(key=lambda r: (r[0], r[1]))
    write_csv(out / "report.csv", ["x", "T", "mc_scaled_rate", "theory_rate", "gap_relative",
                                   "status"], rows)
    return EXIT_OK, ["report.csv"]


def run_validate(cfg: cfgmod.RunConfig, out: Path, echo=print):
    results = acceptance.run_all(cfg.validate.criteria, cfg.seed, cfg.validate.tolerances, echo)
    rows = [[r.number, r.title, r.passed, json.dumps(r.measured, sort_keys=True, default=float),
             json.dumps(r.tolerance, sort_keys=True)] for r in results]
    write_csv(out / "validate.csv", ["criterion", "title", "passed", "measured", "tolerance"], rows)
    n_fail = sum(not r.passed for r in results)
    echo(f"{len(results) - n_fail}/{len(results)} criteria passed")
    return (EXIT_FAIL if n_fail else EXIT_OK), ["validate.csv"]


RUNNERS = {
    "simulate": run_simulate,
    "excursions": run_excursions,
    "tails": run_tails,
    "instanton": run_instanton,
    "report": run_report,
    "validate": run_validate,
}


def _versions():
    out = {"python": platform.python_version()}
    for name in ("numpy", "scipy", "numba", "artifact"):
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = "unknown"
    return out


def run(cfg: cfgmod.RunConfig) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    code, files = RUNNERS[cfg.experiment](cfg, out)
    manifest = {
        "experiment": cfg.experiment,
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - t0,
        "outputs": sorted(files),
        "exit_code": code,
    }
    (out / f"manifest_{cfg.experiment}.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="heavytail-ou",
                                 description="Heavy-tailed large deviations of OU time averages.")
    ap.add_argument("experiment", choices=cfgmod.EXPERIMENTS)
    ap.add_argument("--config", required=True, help="TOML configuration file")
    ap.add_argument("--seed", type=int, default=None, help="override the master seed")
    ap.add_argument("--out", default=None, help="override the output directory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config, experiment=args.experiment, seed=args.seed,
                          output_dir=args.out)
        return run(cfg)
    except (ConfigError, InvalidInputError) as err:
        print(f"heavytail-ou: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
