# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
"""Batch front-end.

Exit codes: 0 success, 1 invalid model or artifact, 2 no convergence, 3 I/O or usage error.
Markov policy files list tables in time-to-go order: the action at jump k of an
N-jump run comes from table N-1-k.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from .artifacts import (
    grid_of,
    read_policy,
    write_convergence,
    write_h_csv,
    write_policy,
    write_summary,
)
from .config import SolverRuntimeConfig, get_runtime_cfg
from .exponential import compare_paths, solve_exponential, solve_exponential_finite
from .headers import HeaderError, build_header, parse_grid_spec
from .model import (
    ModelFormatError,
    ModelValidationError,
    NoCertificate,
    SmdpModel,
    certify_assumption1,
    load_model,
    require_valid,
    validate,
)
from .numerics import GridError, build_grid, build_quadrature, export_csv, write_csv
from .simulate import estimate_value
from .solver_finite import solve_finite
from .solver_infinite import NonConvergence, policy_iteration, solve_infinite
from .tracing import IterationTrace
from .utility import ExponentialUtility, LinearUtility, UtilityDomainError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NONCONVERGENCE = 2
EXIT_USAGE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise UsageError(message)


def _add_iteration_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--quad", type=int, help="quadrature atoms M per transition")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--threads", type=int, help="worker cap (fallback SMDP_RISK_THREADS)")


def _add_numeric_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", help="grid size as WxL (default from SMDP_RISK_GRID_W/L)")
    p.add_argument("--w-min", type=float, dest="w_min")
    p.add_argument("--tail", choices=["pinch", "clamp"])
    p.add_argument("--delta", type=float, help="certificate delta (default: automatic)")
    _add_iteration_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smdp-risk", description="Risk-sensitive SMDP solver")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check a model file")
    p.add_argument("model")

    p = sub.add_parser("certify", help="compute a sojourn-time certificate")
    p.add_argument("model")
    p.add_argument("--delta", type=float)

    p = sub.add_parser("solve", help="finite or infinite horizon solve")
    p.add_argument("model")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--horizon", type=int)
    mode.add_argument("--infinite", action="store_true")
    path = p.add_mutually_exclusive_group()
    path.add_argument("--exponential", action="store_true", help="force the h-recursion")
    path.add_argument("--general", action="store_true", help="force the augmented solver")
    p.add_argument("--out", default="smdp-out")
    _add_numeric_flags(p)

    p = sub.add_parser("improve", help="policy iteration from a stationary policy file")
    p.add_argument("model")
    p.add_argument("--policy", required=True)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--out", default="smdp-out")
    _add_iteration_flags(p)

    p = sub.add_parser("simulate", help="Monte Carlo estimate under a policy file")
    p.add_argument("model")
    p.add_argument("--policy", required=True)
    p.add_argument("--n-traj", type=int, dest="n_traj", default=100_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--state", help="initial state (default: first state)")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--horizon", type=int)
    mode.add_argument("--infinite", action="store_true")
    p.add_argument("--out", default="smdp-out")
    p.add_argument("--tol", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--threads", type=int)

    p = sub.add_parser("compare", help="general vs exponential solver splitting check")
    p.add_argument("model")
    p.add_argument("--gamma", type=float, help="risk parameter (default: model utility)")
    p.add_argument("--out")
    _add_numeric_flags(p)
    return parser


def _runtime_cfg(args: argparse.Namespace) -> SolverRuntimeConfig:
    cfg = get_runtime_cfg()
    update: Dict[str, Any] = {}
    if getattr(args, "grid", None):
        try:
            update["grid_w"], update["grid_l"] = parse_grid_spec(args.grid)
        except HeaderError as e:
            raise UsageError(str(e)) from e
    for flag, name in (
        ("w_min", "w_min"),
        ("quad", "quad_m"),
        ("tol", "tol"),
        ("max_iter", "max_iter"),
        ("tail", "tail"),
        ("threads", "threads"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            update[name] = value
    cfg = cfg.model_copy(update=update)
    if cfg.grid_w < 2 or cfg.grid_l < 2 or cfg.quad_m < 1 or cfg.tol <= 0:
        raise UsageError("grid sizes must be >= 2, quad >= 1 and tol > 0")
    if cfg.max_iter < 1 or cfg.threads < 1:
        raise UsageError("max-iter and threads must be >= 1")
    return cfg


def _utility(model: SmdpModel):
    if model.utility is None:
        logger.warning("[CLI] model has no utility section; using the linear utility")
        return LinearUtility()
    return model.utility


def _cert(model: SmdpModel, delta: Optional[float]):
    return certify_assumption1(model, delta)


# -------------------------------
# Subcommands
# -------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    report = validate(model)
    if report.ok:
        print("OK")
        return EXIT_OK
    for line in report.lines():
        print(line, file=sys.stderr)
    return EXIT_INVALID


def cmd_certify(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    require_valid(model)
    cert = _cert(model, args.delta)
    print(
        json.dumps(
            {"delta": cert.delta, "epsilon": cert.epsilon, "rho": cert.rho(model.alpha)},
            sort_keys=True,
        )
    )
    return EXIT_OK


def _prepare(args: argparse.Namespace):
    cfg = _runtime_cfg(args)
    model = load_model(args.model)
    require_valid(model)
    grid = build_grid(model, cfg.grid_w, cfg.grid_l, cfg.w_min, cfg.tail)
    quad = build_quadrature(model, cfg.quad_m)
    header = build_header(model=model, grid=grid, quad_m=cfg.quad_m, tol=cfg.tol, seed=cfg.seed)
    return cfg, model, grid, quad, header


def cmd_solve(args: argparse.Namespace) -> int:
    if args.horizon is not None and args.horizon < 1:
        raise UsageError("--horizon must be >= 1")
    cfg, model, grid, quad, header = _prepare(args)
    utility = _utility(model)
    is_exp = isinstance(utility, ExponentialUtility)
    if args.exponential and not is_exp:
        raise UsageError("--exponential needs an exponential utility in the model")
    use_exp = is_exp and not args.general
    out = Path(args.out)
    solver_path = "exponential" if use_exp else "general"
    summary: Dict[str, Any] = {"solver": solver_path}

    if args.horizon is not None:
        N = args.horizon
        if use_exp:
            fin = solve_exponential_finite(
                model,
                utility.gamma,
                grid,
                quad,
                N,
                overflow_threshold=cfg.overflow_threshold,
                workers=cfg.threads,
            )
            for n, h in enumerate(fin.h):
                write_h_csv(out / f"h_{n}.csv", h, model, header)
            policies, J = fin.policies, [fin.J(i) for i in range(model.n_states)]
        else:
            sol = solve_finite(model, utility, grid, quad, N, workers=cfg.threads)
            for n, v in enumerate(sol.values):
                export_csv(v, model, out / f"value_{n}.csv", header)
            policies, J = sol.policies, [sol.J(i) for i in range(model.n_states)]
            summary["grid_budget"] = sol.grid_budget
        write_policy(out / "policy.json", policies, header, stationary=False)
        summary.update(mode="finite", horizon=N)
    else:
        cert = _cert(model, args.delta)
        trace = IterationTrace("solve")
        if use_exp:
            res = solve_exponential(
                model,
                utility.gamma,
                grid,
                quad,
                cert,
                cfg.tol,
                cfg.max_iter,
                overflow_threshold=cfg.overflow_threshold,
                workers=cfg.threads,
                trace=trace,
            )
            write_h_csv(out / "h.csv", res.h, model, header)
            gap = res.value_gap
        else:
            res = solve_infinite(
                model,
                utility,
                grid,
                quad,
                cert,
                cfg.tol,
                cfg.max_iter,
                workers=cfg.threads,
                trace=trace,
            )
            export_csv(res.value, model, out / "value.csv", header)
            gap = res.gap
        J = [res.J(i) for i in range(model.n_states)]
        write_policy(out / "policy.json", [res.policy], header, stationary=True)
        write_convergence(out / "convergence.csv", trace, header)
        summary.update(
            mode="infinite",
            gap=gap,
            iterations=res.n_iters,
            grid_budget=res.grid_budget,
            certificate=cert.model_dump(),
        )
    write_summary(out / "summary.json", header, J=dict(zip(model.states, J)), **summary)
    for name, value in zip(model.states, J):
        print(f"J({name}) = {value:.10g}")
    return EXIT_OK


def cmd_improve(args: argparse.Namespace) -> int:
    cfg = _runtime_cfg(args)
    model = load_model(args.model)
    require_valid(model)
    doc, tables = read_policy(args.policy, model)
    if doc.kind != "stationary":
        raise HeaderError("improve needs a stationary policy")
    grid = grid_of(doc)
    quad_m = args.quad if args.quad is not None else int(doc.header["quad_m"])
    tol = args.tol if args.tol is not None else float(doc.header["tol"])
    cfg = cfg.model_copy(update={"quad_m": quad_m, "tol": tol})
    quad = build_quadrature(model, quad_m)
    utility = _utility(model)
    result = policy_iteration(
        model,
        utility,
        grid,
        quad,
        tables[0],
        tol,
        max_rounds=args.rounds,
        margin=cfg.margin,
        max_iter=cfg.max_iter,
        workers=cfg.threads,
    )
    header = build_header(model=model, grid=grid, quad_m=quad_m, tol=tol, seed=cfg.seed)
    out = Path(args.out)
    write_policy(out / "policy.json", [result.policy], header, stationary=True)
    export_csv(result.value, model, out / "value.csv", header)
    J = [result.value.J(i) for i in range(model.n_states)]
    improved = len(result.policies) > 1
    write_summary(
        out / "summary.json",
        header,
        rounds=len(result.values),
        converged=result.converged,
        improved=improved,
        J=dict(zip(model.states, J)),
    )
    print(f"rounds={len(result.values)} improved={improved}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.horizon is not None and args.horizon < 1:
        raise UsageError("--horizon must be >= 1")
    if args.n_traj < 2:
        raise UsageError("--n-traj must be >= 2")
    cfg = _runtime_cfg(args)
    model = load_model(args.model)
    require_valid(model)
    doc, tables = read_policy(args.policy, model)
    utility = _utility(model)
    try:
        start = model.state_index(args.state) if args.state else 0
    except KeyError as e:
        raise UsageError(str(e)) from e
    if args.infinite:
        if doc.kind != "stationary":
            raise HeaderError("infinite-mode simulation needs a stationary policy")
        cert = _cert(model, args.delta)
        est = estimate_value(
            model,
            utility,
            tables[0],
            None,
            args.n_traj,
            cfg.seed,
            start_state=start,
            infinite=True,
            cert=cert,
            tol=cfg.tol,
            workers=cfg.threads,
        )
    else:
        policy = tables[0] if doc.kind == "stationary" else tables
        if doc.kind == "markov" and len(tables) < args.horizon:
            raise HeaderError(f"policy covers {len(tables)} jumps, need {args.horizon}")
        est = estimate_value(
            model,
            utility,
            policy,
            args.horizon,
            args.n_traj,
            cfg.seed,
            start_state=start,
            workers=cfg.threads,
        )
    header = dict(doc.header, seed=cfg.seed)
    out = Path(args.out)
    write_csv(
        out / "trajectories.csv",
        pd.DataFrame({"trajectory": np.arange(args.n_traj), "utility": est.samples}),
        header,
    )
    write_summary(out / "simulation.json", header, **est.summary())
    lo, hi = est.interval
    print(
        f"mean={est.mean:.10g} ci95=[{est.ci_low:.10g}, {est.ci_high:.10g}] "
        f"interval=[{lo:.10g}, {hi:.10g}]"
    )
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    cfg, model, grid, quad, header = _prepare(args)
    if args.gamma is not None:
        gamma = args.gamma
    elif isinstance(model.utility, ExponentialUtility):
        gamma = model.utility.gamma
    else:
        raise UsageError("compare needs --gamma or an exponential utility in the model")
    utility = ExponentialUtility(gamma=gamma)
    cert = _cert(model, args.delta)
    general = solve_infinite(
        model, utility, grid, quad, cert, cfg.tol, cfg.max_iter, workers=cfg.threads
    )
    exp = solve_exponential(
        model,
        gamma,
        grid,
        quad,
        cert,
        cfg.tol,
        cfg.max_iter,
        overflow_threshold=cfg.overflow_threshold,
        workers=cfg.threads,
    )
    report = compare_paths(general, exp, model)
    if args.out:
        write_summary(
            Path(args.out) / "compare.json", header, ok=report.ok, **report.model_dump()
        )
    if report.ok:
        print(f"splitting residual {report.residual:.3e} ≤ {report.budget:.3e}")
        return EXIT_OK
    print(f"splitting residual {report.residual:.3e} > {report.budget:.3e}", file=sys.stderr)
    return EXIT_INVALID


COMMANDS = {
    "validate": cmd_validate,
    "certify": cmd_certify,
    "solve": cmd_solve,
    "improve": cmd_improve,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ModelValidationError as e:
        for line in e.report.lines():
            print(line, file=sys.stderr)
        return EXIT_INVALID
    except (ModelFormatError, NoCertificate, HeaderError, UtilityDomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except NonConvergence as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except GridError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())
