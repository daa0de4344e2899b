"""Command line front end.

    radner --config scenario.json --out results/ --command solve

Writes ``report.json`` plus one CSV per table into ``--out``.  Errors are
reported on stderr as a JSON object with a ``category`` field, and the exit
status encodes the category (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, constants
from .agents import certainty_equivalent
from .bsde import solve_system_direct
from .certificates import certify
from .config import build_population, make_tree, parse_config, separable_parts, xi_candidate
from .equilibrium import (
    EquilibriumResult,
    picard_solve,
    pre_pareto_check,
    separable_equilibrium,
    solve_direct,
    verify_equilibrium,
)
from .errors import ConvergenceError, RadnerError, ValidationError
from .lattice import bmo_norm, build_tree
from .oracle import STRATEGY_BUDGET, brute_force_equilibrium, optimal_strategy_dp, strategy_value

COMMANDS = ("solve", "verify", "certify", "pareto", "oracle-compare", "convergence-study")
EXIT_CODES = {"ok": 0, "error": 1, "validation": 2, "capacity": 3, "convergence": 4, "domain": 5, "monotonicity": 6}


def _num(x):
    """JSON-safe float: non-finite values become strings so the document stays valid."""
    if x is None or isinstance(x, bool):
        return x
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (float, int, np.floating, np.integer)) and not isinstance(obj, bool):
        return _num(obj)
    return obj


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return "" if x is None else str(x)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _lambda_rows(tree, lam):
    rows = []
    for t, l in enumerate(lam):
        B, W = tree.state(t)
        for k in range(l.size):
            rows.append((t, k, B[k], W[k], l[k]))
    return rows


def _summary(tree, pop, res: EquilibriumResult):
    ver = verify_equilibrium(res, pop)
    return {
        "method": res.method,
        "iterations": res.iterations,
        "lambda_root": float(res.lam[0][0]),
        "lambda_bmo": ver["lambda_bmo"],
        "clearing_residual": ver["clearing_residual"],
        "fixed_point_residual": ver["fixed_point_residual"],
        "max_cross": ver["max_cross"],
        "Y_root": [float(y[0]) for y in res.system.Y[0]],
    }, ver


def _solve(cfg, tree, pop, threads):
    if cfg.solver.method == "direct":
        return solve_direct(pop)
    return picard_solve(pop, cfg.solver.lambda0, cfg.solver.tol, cfg.solver.max_iter, threads=threads)


def _trace_rows(res):
    tr = res.trace
    rows = []
    for k, r in enumerate(tr["residual"]):
        ratio = tr["ratio"][k - 1] if 0 < k <= len(tr["ratio"]) else None
        rows.append((k, r, ratio, tr["norm"][k]))
    return rows


def cmd_solve(cfg, out, threads, verify=False):
    tree = make_tree(cfg)
    pop = build_population(cfg, tree)
    res = _solve(cfg, tree, pop, threads)
    summary, ver = _summary(tree, pop, res)
    report = {"equilibrium": summary}
    write_csv(out / "lambda.csv", ["level", "node", "B", "W", "lambda"], _lambda_rows(tree, res.lam))
    write_csv(out / "iterations.csv", ["iteration", "residual_bmo", "ratio", "lambda_bmo"], _trace_rows(res))
    if verify:
        oracle = 4**tree.N <= STRATEGY_BUDGET
        ver = verify_equilibrium(res, pop, oracle_check=oracle)
        ver["oracle_checked"] = oracle
        report["verification"] = ver
        rows = [(k, v) for k, v in sorted(ver.items()) if not isinstance(v, list)]
        write_csv(out / "verification.csv", ["quantity", "value"], rows)
    return report


def cmd_certify(cfg, out, threads):
    tree = make_tree(cfg)
    pop = build_population(cfg, tree)
    rep = certify(pop, xi_candidate(cfg, tree), cfg.certificate.kappa,
                  chi0=cfg.certificate.chi0, delta0=cfg.certificate.delta0)
    rows = [(c.name, c.value, c.threshold, c.passed) for c in rep.items()]
    write_csv(out / "certificates.csv", ["certificate", "value", "threshold", "passed"], rows)
    write_csv(out / "thresholds.csv", ["name", "value"], sorted(constants.ALL.items()))
    return {"certificates": rep.to_dict()}


def cmd_pareto(cfg, out, threads):
    tree = make_tree(cfg)
    pop = build_population(cfg, tree)
    an = pre_pareto_check(pop)
    report = {"pareto": {
        "verdict": an.verdict,
        "replication_residual": an.residual,
        "residuals": an.residuals,
        "y": an.y,
        "lambda_root": float(an.lam[0][0]),
        "final_allocation_pareto": None if an.final_check is None else bool(an.final_check.ok),
        "notes": an.notes,
    }}
    rows = [(i, an.residuals[i], None if an.y is None else an.y[i]) for i in range(pop.size)]
    write_csv(out / "pareto.csv", ["agent", "replication_residual", "y"], rows)
    parts = separable_parts(tree, cfg)
    if parts is not None:
        sep = separable_equilibrium(pop, *parts)
        report["separable"] = {
            "lambda_root": float(sep.lam[0][0]),
            "fixed_point_residual": sep.extras["fixed_point_residual"],
            "direct_gap": sep.extras["direct_gap"],
            "exponential_gap": sep.extras["exponential_gap"],
        }
    return report


def cmd_oracle_compare(cfg, out, threads):
    rows = []
    for N in cfg.oracle_compare.steps:
        tree = build_tree(cfg.horizon, N)
        pop = build_population(cfg, tree)
        direct = solve_system_direct(tree, pop.G, pop.alpha)
        orc = brute_force_equilibrium(pop)
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(direct.lam, orc.lam))
        gaps = []
        for i in range(pop.size):
            best = optimal_strategy_dp(tree, direct.lam, pop.G[i])
            mine = strategy_value(tree, direct.lam, pop.G[i], [l - m[i] for l, m in zip(direct.lam, direct.mu)])
            gaps.append(float(best.value[0][0] - mine[0][0]))
        rows.append((N, tree.dt, diff, max(gaps), orc.residual))
    write_csv(out / "oracle_compare.csv", ["steps", "dt", "max_lambda_diff", "max_optimality_gap", "oracle_clearing"], rows)
    return {"oracle_compare": [dict(zip(["steps", "dt", "max_lambda_diff", "max_optimality_gap", "oracle_clearing"], r))
                               for r in rows]}


def cmd_convergence(cfg, out, threads):
    rows = []
    for N in cfg.convergence_study.steps:
        tree = make_tree(cfg, N)
        pop = build_population(cfg, tree)
        sol = solve_system_direct(tree, pop.G, pop.alpha)
        dev = None
        if pop.size == 1:
            ce = certainty_equivalent(tree, pop.G[0])
            dev = max(float(np.max(np.abs(l - m))) for l, m in zip(sol.lam, ce.m))
        rows.append((N, tree.dt, float(sol.lam[0][0]), bmo_norm(tree, sol.lam), sol.max_cross(), dev))
    header = ["steps", "dt", "lambda_root", "lambda_bmo", "max_cross", "max_abs_lambda_minus_mG"]
    write_csv(out / "convergence.csv", header, rows)
    return {"convergence_study": [dict(zip(header, r)) for r in rows]}


HANDLERS = {
    "solve": lambda c, o, t: cmd_solve(c, o, t),
    "verify": lambda c, o, t: cmd_solve(c, o, t, verify=True),
    "certify": cmd_certify,
    "pareto": cmd_pareto,
    "oracle-compare": cmd_oracle_compare,
    "convergence-study": cmd_convergence,
}


def run(command: str, config_text: str, out_dir, steps_override=None, seed=None, threads=None) -> dict:
    """Run one command and write its outputs; returns the report dictionary."""
    if command not in HANDLERS:
        raise ValidationError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    cfg = parse_config(config_text)
    if steps_override is not None:
        if steps_override < 1:
            raise ValidationError("--steps-override must be >= 1")
        cfg = cfg.model_copy(update={"steps": int(steps_override)})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    body = HANDLERS[command](cfg, out, threads)
    report = {
        "command": command,
        "version": __version__,
        "horizon": cfg.horizon,
        "steps": cfg.steps,
        "agents": len(cfg.agents),
        "seed": seed,
        "thresholds": dict(constants.ALL),
        **body,
        "timing_seconds": time.perf_counter() - start,
    }
    report = _clean(report)
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def _parser():
    p = argparse.ArgumentParser(prog="radner", description="Radner equilibria on a binary-tree Brownian filtration.")
    p.add_argument("--config", required=True, help="scenario JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--command", required=True, choices=COMMANDS)
    p.add_argument("--steps-override", type=int, default=None, help="replace the number of time steps")
    p.add_argument("--seed", type=int, default=None, help="seed recorded for randomized fixtures")
    p.add_argument("--threads", type=int, default=None, help="worker threads for per-agent sweeps")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        text = Path(args.config).read_text()
        report = run(args.command, text, args.out, args.steps_override, args.seed, args.threads)
    except RadnerError as exc:
        payload = {"category": exc.category, "message": str(exc)}
        if isinstance(exc, ValidationError):
            payload["problems"] = exc.problems
        if isinstance(exc, ConvergenceError) and exc.trace:
            payload["trace"] = _clean(exc.trace)
        if getattr(exc, "diagnostics", None):
            payload["diagnostics"] = _clean(exc.diagnostics)
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except OSError as exc:
        print(json.dumps({"category": "error", "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps({"command": report["command"], "out": str(args.out), "status": "ok"}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
