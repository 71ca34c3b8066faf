"""Command-line entry point: ``iegsopt solve`` and ``iegsopt compare``.

Exit codes: 0 solved or converged, 1 input error, 2 no convergence (or no
feasible reference point).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path
from typing import Any

from . import admm, oracle
from .formulation import BIDIRECTIONAL, UNIDIRECTIONAL, InvalidNetwork, assemble_centralized, decompose
from .model import NetworkError, load_network
from .networks import DIR as FIXTURE_DIR

__all__ = ["main", "build_parser", "opt_gap", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NOCONV = 0, 1, 2


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # flag errors are input errors, not a convergence failure
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--network", required=True, help="network JSON file (or the name of a shipped fixture)")
    p.add_argument("--weymouth", choices=[UNIDIRECTIONAL, BIDIRECTIONAL], default=UNIDIRECTIONAL)
    p.add_argument("--penalty", type=float, default=1.0, help="ADMM penalty d")
    p.add_argument("--tol-pri", type=float, default=1e-4)
    p.add_argument("--tol-dual", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--trace", type=Path, help="write the ADMM iteration trace as CSV")
    p.add_argument("--summary", type=Path, help="write the run summary as JSON")
    p.add_argument("--paper-stop", action="store_true", help="stop when either residual is below its tolerance")
    p.add_argument(
        "--deterministic",
        action="store_true",
        help="omit wall-clock times from outputs so repeated runs are byte-identical",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iegsopt", description="Distributed optimal energy flow for electricity-gas systems.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    solve = sub.add_parser("solve", help="solve one network")
    solve.add_argument("--mode", choices=["central", "distributed"], default="distributed")
    _add_common(solve)
    compare = sub.add_parser("compare", help="distributed solve checked against the centralized reference")
    _add_common(compare)
    return parser


def opt_gap(obj: float, ref: float) -> float:
    """Relative gap to the reference; absolute when the reference is (near) zero."""
    if abs(ref) < 1e-12:
        return abs(obj - ref)
    return abs(obj - ref) / abs(ref)


def _resolve(network: str) -> Path:
    p = Path(network)
    if p.is_file():
        return p
    shipped = FIXTURE_DIR / p.name
    if not p.is_absolute() and p.parent == Path(".") and shipped.is_file():
        return shipped
    raise InputError(f"file not found: {network}")


def _config(args) -> admm.AdmmConfig:
    try:
        return admm.AdmmConfig(
            d=args.penalty,
            eps_pri=args.tol_pri,
            eps_dual=args.tol_dual,
            max_iter=args.max_iter,
            stop_on_either=args.paper_stop,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _load(args):
    path = _resolve(args.network)
    try:
        spec = load_network(path)
        central = assemble_centralized(spec, args.weymouth)
        dec = decompose(spec, args.weymouth)
    except FileNotFoundError as exc:
        raise InputError(f"file not found: {args.network}") from exc
    except (NetworkError, InvalidNetwork) as exc:
        raise InputError(f"invalid network {path}: {exc}") from exc
    return path, spec, central, dec


def _num(v: float | None) -> float | None:
    if v is None or not math.isfinite(v):
        return None
    return float(v)


def _summary(mode: str, args, path: Path, cfg: admm.AdmmConfig, **vals: Any) -> dict[str, Any]:
    out: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "mode": mode,
        "network": str(args.network),
        "weymouth": args.weymouth,
        "status": vals["status"],
        "iterations": vals.get("iterations", 0),
        "objective_raw": _num(vals.get("objective_raw")),
        "objective_projected": _num(vals.get("objective_projected")),
        "oracle_objective": _num(vals.get("oracle_objective")),
        "opt_gap": _num(vals.get("opt_gap")),
        "max_violation": _num(vals.get("max_violation")),
        "kkt_residual": _num(vals.get("kkt_residual")),
        "wall_time_ms": None if args.deterministic else round(1000.0 * vals["wall_time"], 3),
        "config": {
            "penalty": cfg.d,
            "tol_pri": cfg.eps_pri,
            "tol_dual": cfg.eps_dual,
            "max_iter": cfg.max_iter,
            "stop_on_either": cfg.stop_on_either,
        },
    }
    for key in ("directions", "failure", "pri_res", "dual_res"):
        if key in vals:
            out[key] = vals[key]
    return out


def _distributed(dec, cfg) -> tuple[admm.AdmmResult, dict[str, Any]]:
    res = admm.run(dec, cfg)
    vals: dict[str, Any] = {
        "status": res.status,
        "iterations": res.iterations,
        "objective_raw": res.objective_raw,
        "objective_projected": res.objective_projected,
        "max_violation": res.max_violation,
        "kkt_residual": res.kkt_residual,
        "pri_res": res.trace[-1].pri_res if res.trace else None,
        "dual_res": res.trace[-1].dual_res if res.trace else None,
    }
    if res.failure is not None:
        vals["failure"] = {"agent": res.failure.agent, "iteration": res.failure.iteration, "message": res.failure.message}
    return res, vals


def _reference(central) -> tuple[oracle.ReferenceSolution | None, str]:
    try:
        return oracle.solve_reference(central), "solved"
    except oracle.OracleInfeasible as exc:
        print(f"reference solver: {exc}", file=sys.stderr)
        return None, "infeasible"


def _write(args, summary: dict[str, Any], result: admm.AdmmResult | None) -> None:
    if args.trace is not None and result is not None:
        admm.write_trace_csv(args.trace, result.trace, deterministic=args.deterministic)
    if args.summary is not None:
        args.summary.write_text(json.dumps(summary, indent=2) + "\n")


def _report(summary: dict[str, Any]) -> None:
    keys = ("mode", "status", "iterations", "objective_projected", "oracle_objective", "opt_gap", "max_violation", "kkt_residual")
    width = max(map(len, keys))
    for k in keys:
        v = summary.get(k)
        if v is not None:
            print(f"{k:<{width}}  {v:.6g}" if isinstance(v, float) else f"{k:<{width}}  {v}")


def cmd_solve(args) -> int:
    cfg = _config(args)
    path, _, central, dec = _load(args)
    t0 = time.perf_counter()
    if args.mode == "central":
        ref, status = _reference(central)
        vals: dict[str, Any] = {"status": status}
        if ref is not None:
            vals.update(
                objective_raw=ref.objective,
                objective_projected=ref.objective,
                oracle_objective=ref.objective,
                max_violation=ref.max_violation,
                kkt_residual=admm.kkt_residual(central, ref.x),
            )
            if ref.directions is not None:
                vals["directions"] = ref.directions
        vals["wall_time"] = time.perf_counter() - t0
        summary = _summary("central", args, path, cfg, **vals)
        _write(args, summary, None)
        _report(summary)
        return EXIT_OK if ref is not None else EXIT_NOCONV
    res, vals = _distributed(dec, cfg)
    vals["wall_time"] = time.perf_counter() - t0
    summary = _summary("distributed", args, path, cfg, **vals)
    _write(args, summary, res)
    _report(summary)
    return EXIT_OK if res.converged else EXIT_NOCONV


def cmd_compare(args) -> int:
    cfg = _config(args)
    path, _, central, dec = _load(args)
    t0 = time.perf_counter()
    res, vals = _distributed(dec, cfg)
    ref, ref_status = _reference(central)
    if ref is not None:
        vals["oracle_objective"] = ref.objective
        vals["opt_gap"] = opt_gap(res.objective_projected, ref.objective)
        if ref.directions is not None:
            vals["directions"] = ref.directions
    vals["wall_time"] = time.perf_counter() - t0
    summary = _summary("compare", args, path, cfg, **vals)
    summary["oracle_status"] = ref_status
    _write(args, summary, res)
    _report(summary)
    return EXIT_OK if res.converged and ref is not None else EXIT_NOCONV


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            return cmd_solve(args)
        return cmd_compare(args)
    except InputError as exc:
        print(f"iegsopt: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
