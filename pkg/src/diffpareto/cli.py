"""Command-line entry point: ``diffpareto {validate,simulate,sweep,fixed-point}``.

Exit codes: 0 success, 1 validation failure (bad configuration or a hard
check failing), 2 numerical failure (divergence, non-convergence, unstable
recursion).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis
from .config import ConfigError, Experiment, ExperimentConfig, load_config
from .costs import hessian_bounds
from .io import format_block_vector, topology_document
from .operators import FixedPointError, iterate_fixed_point, power
from .strategies import noise_free_map, run_monte_carlo
from .topology import TopologyError, is_regular, left_perron_vector, validate_combination_set

log = logging.getLogger("diffpareto")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2
DIFFUSION = ("atc", "cta", "general")


class NumericalFailure(RuntimeError):
    pass


def _db(x) -> float:
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(x))


def _header(cfg: ExperimentConfig, **items) -> str:
    lines = [f"config_hash: {cfg.hash}"]
    lines += [f"{k}: {v}" for k, v in items.items()]
    return "\n".join(lines)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def write_table(rows: list[dict], columns: list[str], header: str) -> str:
    buf = io.StringIO()
    for line in header.splitlines():
        buf.write(f"# {line}\n")
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})
    return buf.getvalue()


def read_table(text: str) -> tuple[dict, list[dict]]:
    """Parse a table written by this tool; returns ``(header items, rows)``."""
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, val = line[2:].partition(": ")
            meta[key] = val
        elif line:
            body.append(line)
    return meta, list(csv.DictReader(body))


# ---------------------------------------------------------------- validate

@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""
    hard: bool = True

    def line(self) -> str:
        tag = "PASS" if self.ok else ("FAIL" if self.hard else "WARN")
        return f"{tag} {self.name}" + (f": {self.detail}" if self.detail else "")


def validation_checks(exp: Experiment) -> list[Check]:
    """All structural and step-size checks for the configured strategies."""
    checks = []
    topo = exp.topology
    checks.append(Check("connectivity", topo.is_connected(), f"{topo.n_nodes} nodes, {len(topo.edges())} edges"))
    lam_min, lam_max = hessian_bounds(exp.costs)
    for variant in exp.config.strategies:
        if variant == "centralized":
            continue
        cs = exp.triple(variant)
        problems = validate_combination_set(cs, topo)
        checks.append(Check(f"{variant}: combination matrices (A1, A2 left-stochastic, C right-stochastic, sparse)",
                            not problems, "; ".join(problems[:5])))
        p = cs.a2.T @ cs.a1.T
        regular = is_regular(p)
        checks.append(Check(f"{variant}: A2^T A1^T regular", regular))
        s_min, s_max = cs.c.T @ lam_min, cs.c.T @ lam_max
        checks.append(Check(f"{variant}: sum_l c_lk lambda_l,min > 0", bool(np.all(s_min > 0)),
                            f"min {s_min.min():.4g}"))
        limit = 2.0 / s_max
        bad = np.flatnonzero(~((exp.mu > 0) & (exp.mu < limit)))
        checks.append(Check(f"{variant}: 0 < mu_k < 2/sigma_k,max", bad.size == 0,
                            f"violated at nodes {bad.tolist()} (limit {limit.min():.4g})" if bad.size
                            else f"mu_max {exp.mu.max():.4g} < {limit.min():.4g}"))
        if variant == "consensus":
            continue
        alpha, _ = analysis.noise_constants(exp.costs)
        mss = analysis.step_size_limit_mss(exp.costs, cs.c, alpha)
        bad = np.flatnonzero(exp.mu >= mss)
        checks.append(Check(f"{variant}: mu_k below the mean-square stability limit", bad.size == 0,
                            f"violated at nodes {bad.tolist()} (limit {mss.min():.4g}); the limit is sufficient only"
                            if bad.size else f"limit {mss.min():.4g}", hard=False))
        if regular:
            theta = left_perron_vector(p)
            zb = analysis.check_zero_bias_condition(theta, cs.a2, exp.mu, cs.c)
            checks.append(Check(f"{variant}: theta^T A2^T Omega C^T = c0 1^T", zb.holds,
                                f"c0 = {zb.c0:.6g}" if zb.holds else "bias is O(mu_max), not O(mu_max^2)",
                                hard=False))
    return checks


def cmd_validate(cfg: ExperimentConfig, out: Path | None, quiet: bool) -> int:
    try:
        exp = cfg.build()
    except TopologyError as exc:
        print(f"FAIL {exc}")
        return EXIT_INVALID
    checks = validation_checks(exp)
    if not quiet:
        for c in checks:
            print(c.line())
    else:
        for c in checks:
            if not c.ok and c.hard:
                print(c.line())
    if out is not None:
        mats = {"A": exp.a, "A1": exp.a1, "A2": exp.a2, "C": exp.c}
        _write(out / "topology.yaml", f"# config_hash: {cfg.hash}\n" + topology_document(exp.topology, mats))
    return EXIT_OK if all(c.ok or not c.hard for c in checks) else EXIT_INVALID


def _require_valid(exp: Experiment):
    failed = [c for c in validation_checks(exp) if c.hard and not c.ok]
    if failed:
        raise ConfigError("; ".join(c.line() for c in failed))


# ---------------------------------------------------------------- simulate

def cmd_simulate(cfg: ExperimentConfig, out: Path, quiet: bool) -> int:
    exp = cfg.build()
    _require_valid(exp)
    curves = {}
    for variant in cfg.strategies:
        curve = run_monte_carlo(exp.costs, exp.strategy(variant), exp.w_o)
        if not np.all(np.isfinite(curve.mse_nodes)):
            raise NumericalFailure(f"{variant}: learning curve diverged")
        curves[variant] = curve
        header = _header(cfg, strategy=variant, mu=exp.mu.tolist(), runs=curve.runs, horizon=curve.horizon,
                         steady_state_db=repr(curve.steady_state_db()))
        _write(out / f"curve_{variant}.csv", curve.to_csv(header))
        if not quiet:
            print(f"{variant:12s} steady-state MSE {curve.steady_state_db():8.3f} dB")
    horizon = next(iter(curves.values())).horizon
    rows = [{"iteration": i, **{f"{v}_mse_db": c.mse_network_db[i] for v, c in curves.items()}}
            for i in range(horizon)]
    cols = ["iteration"] + [f"{v}_mse_db" for v in curves]
    _write(out / "comparison.csv", write_table(rows, cols, _header(cfg, mu=exp.mu.tolist())))
    return EXIT_OK


# ---------------------------------------------------------------- sweep

SWEEP_COLUMNS = ["mu", "strategy", "sim_mse_db", "sim_mse_se_db", "pred_mse_db", "bias_power_db",
                 "msp_sim_db", "msp_ub_db", "msp_o_mu_db", "error"]


def _fixed_point(exp: Experiment, cfg_s, tol, max_iters):
    start = np.tile(exp.w_o, (exp.n_nodes, 1)) if cfg_s.variant != "centralized" else exp.w_o.copy()
    w, steps = iterate_fixed_point(noise_free_map(exp.costs, cfg_s), start, tol, max_iters)
    if cfg_s.variant == "centralized":
        w = np.tile(w, (exp.n_nodes, 1))
    return w, steps


def sweep_point(cfg: ExperimentConfig, mu: float) -> list[dict]:
    """Simulation and theory for every strategy at one step-size."""
    exp = cfg.build(mu=mu)
    fp = cfg.data["fixed_point"]
    rows = []
    for variant in cfg.strategies:
        row = {k: "" for k in SWEEP_COLUMNS}
        row.update(mu=float(mu), strategy=variant)
        errors = []
        cfg_s = exp.strategy(variant)
        w_inf = None
        try:
            w_inf, _ = _fixed_point(exp, cfg_s, fp["tol"], fp["max_iters"])
            row["bias_power_db"] = _db(np.mean(power(w_inf - exp.w_o)))
        except FixedPointError as exc:
            errors.append(f"fixed point: {exc}")
        if variant in DIFFUSION:
            cs = exp.triple(variant)
            try:
                report = analysis.performance_report(exp.costs, cs.a1, cs.a2, cs.c, exp.mu, exp.w_o)
                row["pred_mse_db"] = _db(report.mse_network)
                if report.msp_ub is not None:
                    row["msp_ub_db"] = _db(np.mean(report.msp_ub))
                if report.msp_o_mu is not None:
                    row["msp_o_mu_db"] = _db(report.msp_o_mu)
                errors += report.notes
            except (analysis.InstabilityError, np.linalg.LinAlgError) as exc:
                errors.append(f"theory: {exc}")
        target = w_inf[0] if (w_inf is not None and variant == "centralized") else w_inf
        curve = run_monte_carlo(exp.costs, cfg_s, exp.w_o, fixed_point=target)
        if np.all(np.isfinite(curve.mse_nodes)):
            ss = curve.run_steady_state
            row["sim_mse_db"] = curve.steady_state_db()
            se = ss.std(ddof=1) / np.sqrt(ss.size) if ss.size > 1 else 0.0
            row["sim_mse_se_db"] = float(10.0 / np.log(10.0) * se / curve.steady_state())
            if curve.msp_nodes is not None:
                row["msp_sim_db"] = _db(np.mean(curve.steady_state_msp()))
        else:
            errors.append("simulation diverged")
        row["error"] = "; ".join(errors)
        rows.append(row)
    return rows


def cmd_sweep(cfg: ExperimentConfig, out: Path, quiet: bool) -> int:
    exp = cfg.build()
    _require_valid(exp)
    values = cfg.sweep_values
    jobs = int(cfg.sim.get("jobs", 1))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(sweep_point, [cfg] * len(values), values))
    else:
        results = [sweep_point(cfg, mu) for mu in values]
    rows = [r for block in results for r in block]
    if not quiet:
        for r in rows:
            fields = [f"{r['mu']:.4g}", f"{r['strategy']:12s}"]
            for key in ("sim_mse_db", "pred_mse_db", "bias_power_db"):
                fields.append(f"{key}={r[key]:.2f}" if r[key] != "" else f"{key}=-")
            print("  ".join(fields) + (f"  [{r['error']}]" if r["error"] else ""))
    _write(out / "sweep.csv", write_table(rows, SWEEP_COLUMNS, _header(cfg, runs=cfg.sim["runs"],
                                                                        horizon=cfg.sim["horizon"])))
    return EXIT_OK


# ---------------------------------------------------------------- fixed point

FP_COLUMNS = ["mu", "strategy", "steps", "error_power", "error_power_db", "formula_error_power",
              "relative_agreement", "status"]


def cmd_fixed_point(cfg: ExperimentConfig, out: Path, quiet: bool) -> int:
    fp = cfg.data["fixed_point"]
    values = cfg.sweep_values if fp["sweep"] else [None]
    rows, failed = [], False
    for mu in values:
        exp = cfg.build(mu=mu)
        _require_valid(exp)
        for variant in cfg.strategies:
            row = {k: "" for k in FP_COLUMNS}
            row.update(mu=float(exp.mu.max()), strategy=variant)
            try:
                w_inf, steps = _fixed_point(exp, exp.strategy(variant), fp["tol"], fp["max_iters"])
            except FixedPointError as exc:
                row["status"] = f"failed: {exc}"
                failed = True
                rows.append(row)
                continue
            err = exp.w_o - w_inf
            row.update(steps=steps, error_power=float(np.mean(power(err))),
                       error_power_db=_db(np.mean(power(err))), status="converged")
            if variant in DIFFUSION:
                cs = exp.triple(variant)
                formula = analysis.bias_fixed_point(exp.costs, cs.a1, cs.a2, cs.c, exp.mu, exp.w_o, hessian="exact")
                row["formula_error_power"] = float(np.mean(power(formula)))
                scale = np.linalg.norm(err)
                row["relative_agreement"] = float(np.linalg.norm(formula - err) / scale) if scale > 0 else 0.0
            _write(out / f"w_inf_{variant}_mu{row['mu']:.6g}.txt", format_block_vector(w_inf))
            rows.append(row)
            if not quiet:
                extra = f"  formula agreement {row['relative_agreement']:.2e}" if row["relative_agreement"] != "" else ""
                print(f"mu={row['mu']:.4g} {variant:12s} error power {row['error_power_db']:9.3f} dB"
                      f"  ({steps} steps){extra}")
    _write(out / "fixed_point.csv", write_table(rows, FP_COLUMNS, _header(cfg, tol=fp["tol"])))
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------- main

COMMANDS = {"validate": cmd_validate, "simulate": cmd_simulate, "sweep": cmd_sweep, "fixed-point": cmd_fixed_point}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffpareto", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", type=Path, help="YAML configuration (defaults used when omitted)")
    parser.add_argument("--out", type=Path, help="output directory (default: output.dir of the config)")
    parser.add_argument("--seed", type=int, help="override simulation.seed")
    parser.add_argument("--runs", type=int, help="override simulation.runs")
    parser.add_argument("--quiet", action="store_true", help="print failures only")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config)
        sim = {}
        if args.seed is not None:
            sim["seed"] = args.seed
        if args.runs is not None:
            sim["runs"] = args.runs
        if sim:
            cfg = cfg.override(simulation=sim)
    except ConfigError as exc:
        print(f"FAIL configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = args.out if args.out is not None else Path(cfg.data["output"]["dir"])
    command = COMMANDS[args.command]
    try:
        if args.command == "validate":
            return command(cfg, args.out, args.quiet)
        return command(cfg, out, args.quiet)
    except (ConfigError, TopologyError) as exc:
        print(f"FAIL {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalFailure, FixedPointError, analysis.InstabilityError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
