"""Command-line surface: every calculator and verifier behind one argparse tree.

stdout carries only the report; logs and counterexample notices go to stderr.
Exit codes: 0 ok, 1 usage, 2 computation error, 3 counterexample or failed verification.
"""

import argparse
import logging
import sys
from contextlib import ExitStack
from typing import Any, Callable, Optional, Sequence

from pydantic import ValidationError

from .bounds.dps import DiffMethod, DpsParams, alice_dimension, diff_bound, filter_dimension, find_min_cutoff
from .bounds.heterodyne import HeterodyneSide, OverlapMethod, find_min_dimension, offdiag_sum
from .budget import (
    DpsPlanParams,
    HeterodyneParams,
    Protocol,
    SecurityBudget,
    plan_dimensions,
    scaling_report,
    security_labels,
    verify_plan,
)
from .config import config, override
from .database import open_audit_store
from .errors import QkdFilterError, VerificationError
from .hilbert import VerificationSummary, verify_beta, verify_lemma, verify_theorem1
from .reporting import Report, to_csv, to_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_COMPUTATION = 2
EXIT_COUNTEREXAMPLE = 3

_HETERO_METHODS = {
    "paper": OverlapMethod.PAPER,
    "polar": OverlapMethod.POLAR,
    "exact": OverlapMethod.EXACT,
    **{m.value: m for m in OverlapMethod},
}

# flags that shape where output goes, not what is computed
_UNECHOED = {"handler", "output", "audit_db", "verbose"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # on subparsers the defaults are suppressed so a flag given before the subcommand survives
    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--format", choices=["json", "csv"], default=default(None))
    parser.add_argument("--output", default=default(None), help="Write the report here instead of stdout")
    parser.add_argument("--verbose", action="store_true", default=default(False))
    parser.add_argument("--audit-db", default=default(None), help="SQLAlchemy URL of the audit store")
    parser.add_argument("--workers", type=int, default=default(None))
    parser.add_argument("--sum-rel-tol", type=float, default=default(None))
    parser.add_argument("--quad-tol", type=float, default=default(None))


def _add_plan_params(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--protocol", choices=[p.value for p in Protocol], required=True)
    parser.add_argument("--split", type=float, default=None)
    parser.add_argument("--vmax-a", type=float, default=None)
    parser.add_argument("--vmax-b", type=float, default=None)
    parser.add_argument("--gamma", type=float, default=None)
    parser.add_argument("--n0", type=int, default=None)
    parser.add_argument("--block-size", type=int, default=None)
    parser.add_argument("--method", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qkd-filter", description="Filter dimension bounds and finite-dimensional checks")
    _add_global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def command(name: str, handler: Callable, help: str) -> argparse.ArgumentParser:
        cmd = sub.add_parser(name, help=help)
        _add_global_flags(cmd, suppress=True)
        cmd.set_defaults(handler=handler)
        return cmd

    hetero = command("hetero", _run_hetero, "Off-diagonal weight of the heterodyne disk element")
    hetero.add_argument("--vmax", type=float, required=True)
    group = hetero.add_mutually_exclusive_group(required=True)
    group.add_argument("--d", type=int, action="append")
    group.add_argument("--budget", type=float)
    hetero.add_argument("--method", choices=sorted(_HETERO_METHODS) + ["all"], default=None)

    dps = command("dps", _run_dps, "Diff bound or minimal cutoff for the photon-number filter")
    dps.add_argument("--gamma", type=float, required=True)
    dps.add_argument("--n0", type=int, required=True)
    dps.add_argument("--block-size", type=int, required=True)
    group = dps.add_mutually_exclusive_group(required=True)
    group.add_argument("--m0", type=int)
    group.add_argument("--budget", type=float)
    dps.add_argument("--method", choices=[m.value for m in DiffMethod], default=None)
    dps.add_argument("--exact-fm", action="store_true")

    plan = command("plan", _run_plan, "Minimal filter dimensions for eps^3/N")
    _add_plan_params(plan)
    plan.add_argument("--epsilon", type=float, required=True)
    plan.add_argument("--n", type=int, required=True)
    plan.add_argument("--verify", action="store_true")

    budget = command("budget", _run_budget, "Security labels of both protocols")
    budget.add_argument("--delta", type=float, required=True)
    budget.add_argument("--eps-smooth", type=float, required=True)
    budget.add_argument("--eps-ir", type=float, required=True)
    budget.add_argument("--eps-pe", type=float, required=True)
    budget.add_argument("--leak-ir", type=float, default=0.0)

    theorem = command("verify-theorem1", _run_verify_theorem1, "Random checks of the N-system weight bound")
    theorem.add_argument("--dim", type=int, required=True)
    theorem.add_argument("--cutoff", type=int, required=True)
    theorem.add_argument("--n", type=int, required=True)
    theorem.add_argument("--trials", type=int, required=True)
    theorem.add_argument("--seed", type=int, required=True)
    theorem.add_argument("--env-dim", type=int, default=1)
    theorem.add_argument("--appendix", action="store_true")

    beta = command("verify-beta", _run_verify_beta, "Random checks of the filtered-state distance against 2|beta|")
    beta.add_argument("--dims", type=_int_list, required=True)
    beta.add_argument("--n", type=int, required=True)
    beta.add_argument("--trials", type=int, required=True)
    beta.add_argument("--seed", type=int, required=True)
    beta.add_argument("--cutoffs", type=_int_list, default=None)
    beta.add_argument("--outcomes", type=int, default=3)

    lemma = command("verify-lemma", _run_verify_lemma, "Random checks of the Cauchy-Schwarz lemma")
    lemma.add_argument("--dim", type=int, required=True)
    lemma.add_argument("--trials", type=int, required=True)
    lemma.add_argument("--seed", type=int, required=True)

    scaling = command("scaling", _run_scaling, "Plans over an (eps, N) grid with a fit against ln(N/eps^3)")
    _add_plan_params(scaling)
    scaling.add_argument("--eps-grid", type=_float_list, required=True)
    scaling.add_argument("--n-grid", type=_int_list, required=True)

    return parser


Outcome = tuple[list[dict[str, Any]], dict[str, Any], int]


def _run_hetero(args: argparse.Namespace) -> Outcome:
    side = HeterodyneSide(v_max=args.vmax, label="A")
    if args.method == "all":
        methods = list(OverlapMethod)
    else:
        methods = [OverlapMethod(_HETERO_METHODS.get(args.method) or config.heterodyne.default_method)]

    rows = []
    for method in methods:
        dims = [find_min_dimension(side, args.budget, method)] if args.budget is not None else args.d
        for d in dims:
            bound = offdiag_sum(side, d, method)
            rows.append({
                "method": method.value,
                "v_max": side.v_max,
                "d": d,
                "value": bound.value.value,
                "tail_bound": bound.value.tail_bound,
                "upper": bound.value.upper,
            })
    summary = {"count": len(rows)}
    if args.budget is not None:
        summary["budget"] = args.budget
    return rows, summary, EXIT_OK


def _run_dps(args: argparse.Namespace) -> Outcome:
    method = DiffMethod.EXACT_FM if args.exact_fm else DiffMethod(args.method or config.dps.default_method)
    if args.budget is not None:
        m0 = find_min_cutoff(args.gamma, args.n0, args.block_size, args.budget, method)
    else:
        m0 = args.m0
    params = DpsParams(gamma=args.gamma, n0=args.n0, block_size=args.block_size, m0=m0)
    bound = diff_bound(params, method)
    row = {
        "method": method.value,
        "gamma": params.gamma,
        "n0": params.n0,
        "block_size": params.block_size,
        "m0": m0,
        "value": bound.value,
        "tail_bound": bound.tail_bound,
        "upper": bound.upper,
        "filter_dimension": filter_dimension(m0, params.block_size),
        "alice_dimension": alice_dimension(params.block_size),
    }
    summary = {"m0": m0} if args.budget is None else {"m0": m0, "budget": args.budget}
    return [row], summary, EXIT_OK


def _plan_params(args: argparse.Namespace):
    protocol = Protocol(args.protocol)
    if protocol is Protocol.HETERODYNE:
        if args.vmax_a is None or args.vmax_b is None:
            raise UsageError("--protocol hetero needs --vmax-a and --vmax-b")
        method = _HETERO_METHODS.get(args.method) if args.method else None
        if args.method and method is None:
            raise UsageError(f"unknown heterodyne method {args.method!r}")
        return protocol, HeterodyneParams(v_max_a=args.vmax_a, v_max_b=args.vmax_b, method=method)
    if args.gamma is None or args.n0 is None or args.block_size is None:
        raise UsageError("--protocol dps needs --gamma, --n0 and --block-size")
    if args.method and args.method not in {m.value for m in DiffMethod}:
        raise UsageError(f"unknown DPS method {args.method!r}")
    return protocol, DpsPlanParams(gamma=args.gamma, n0=args.n0, block_size=args.block_size, method=args.method)


def _run_plan(args: argparse.Namespace) -> Outcome:
    protocol, params = _plan_params(args)
    plan = plan_dimensions(protocol, params, args.n, args.epsilon, args.split)
    row = plan.model_dump(mode="json")
    row["target"] = plan.target
    summary = {"d_A": plan.d_A, "d_B": plan.d_B, "margin": plan.margin, "regime_ok": plan.regime_ok}
    if args.verify:
        try:
            recomputed = verify_plan(plan)
        except VerificationError as e:
            logger.error("plan failed re-verification: %s", e)
            summary.update(verified=False, recomputed_upper=e.lhs)
            return [row], summary, EXIT_COUNTEREXAMPLE
        summary.update(verified=True, recomputed_upper=recomputed.upper)
    return [row], summary, EXIT_OK


def _run_budget(args: argparse.Namespace) -> Outcome:
    budget = SecurityBudget(
        delta=args.delta, eps_smooth=args.eps_smooth, eps_ir=args.eps_ir, eps_pe=args.eps_pe, leak_ir=args.leak_ir
    )
    labels = security_labels(budget)
    summary = {"epsilon": budget.epsilon, "label_gap": labels.protocol1 - labels.protocol2}
    return [labels.model_dump(mode="json")], summary, EXIT_OK


def _verification_outcome(summary: VerificationSummary) -> Outcome:
    rows = [c.model_dump(mode="json") for c in summary.counterexamples]
    totals = summary.model_dump(mode="json", exclude={"counterexamples"})
    totals["ok"] = summary.ok
    if summary.ok:
        return rows, totals, EXIT_OK
    for c in summary.counterexamples:
        print(f"counterexample: check={summary.check} seed={c.seed} trial={c.trial}", file=sys.stderr)
    return rows, totals, EXIT_COUNTEREXAMPLE


def _run_verify_theorem1(args: argparse.Namespace) -> Outcome:
    return _verification_outcome(
        verify_theorem1(
            args.dim, args.cutoff, args.n, args.trials, args.seed,
            env_dim=args.env_dim, appendix=args.appendix, workers=args.workers,
        )
    )


def _run_verify_beta(args: argparse.Namespace) -> Outcome:
    if len(args.dims) != 3:
        raise UsageError("--dims takes three values a,b,e")
    if args.cutoffs is not None and len(args.cutoffs) != 2:
        raise UsageError("--cutoffs takes two values a,b")
    return _verification_outcome(
        verify_beta(
            tuple(args.dims), args.n, args.trials, args.seed,
            cutoffs=tuple(args.cutoffs) if args.cutoffs else None, outcomes=args.outcomes, workers=args.workers,
        )
    )


def _run_verify_lemma(args: argparse.Namespace) -> Outcome:
    return _verification_outcome(verify_lemma(args.dim, args.trials, args.seed, workers=args.workers))


def _run_scaling(args: argparse.Namespace) -> Outcome:
    protocol, params = _plan_params(args)
    report = scaling_report(protocol, params, args.eps_grid, args.n_grid, args.split)
    rows = [r.model_dump(mode="json") for r in report.rows]
    return rows, report.model_dump(mode="json", exclude={"rows"}), EXIT_OK


def configure_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else getattr(logging, config.logging.level.upper(), logging.WARNING)
    logging.basicConfig(stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger("src").setLevel(level)


def _resolved_method(args: argparse.Namespace) -> Optional[str]:
    if args.subcommand == "hetero":
        if args.method == "all":
            return "all"
        return OverlapMethod(_HETERO_METHODS.get(args.method) or config.heterodyne.default_method).value
    if args.subcommand == "dps":
        return (DiffMethod.EXACT_FM if args.exact_fm else DiffMethod(args.method or config.dps.default_method)).value
    if args.protocol == Protocol.HETERODYNE.value:
        return OverlapMethod(_HETERO_METHODS.get(args.method) or config.heterodyne.default_method).value
    return DiffMethod(args.method or config.dps.default_method).value


def _resolved_config(args: argparse.Namespace) -> dict[str, Any]:
    echoed = {k: v for k, v in sorted(vars(args).items()) if k not in _UNECHOED}
    # unset flags are echoed with the value the run used
    echoed["format"] = args.format or config.cli.output_format
    echoed["workers"] = config.cli.workers
    echoed["sum_rel_tol"] = config.numerics.sum_rel_tol
    echoed["quad_tol"] = config.numerics.quad_tol
    if args.subcommand in ("hetero", "dps", "plan", "scaling"):
        echoed["method"] = _resolved_method(args)
    if args.subcommand in ("plan", "scaling"):
        if args.protocol == Protocol.DPS.value:
            echoed["split"] = 0.0
        elif args.split is None:
            echoed["split"] = config.heterodyne.split
    echoed["numerics"] = config.numerics.model_dump(mode="json")
    section = {
        "hetero": "heterodyne",
        "dps": "dps",
        "verify-theorem1": "hilbert",
        "verify-beta": "hilbert",
        "verify-lemma": "hilbert",
    }.get(args.subcommand)
    if section:
        echoed[section] = getattr(config, section).model_dump(mode="json")
    if args.subcommand in ("plan", "scaling"):
        echoed["budget"] = config.budget.model_dump(mode="json")
    return echoed


def _emit(report: Report, fmt: str, output: Optional[str]) -> None:
    text = to_csv(report) if fmt == "csv" else to_json(report) + "\n"
    if output:
        with open(output, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    configure_logging(args.verbose)
    if args.workers is not None and args.workers < 1:
        print("--workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE

    with ExitStack() as stack:
        stack.enter_context(override("numerics", sum_rel_tol=args.sum_rel_tol, quad_tol=args.quad_tol))
        if args.quad_tol is not None:
            stack.enter_context(override("numerics", quad_rel_tol=args.quad_tol))
        stack.enter_context(override("cli", workers=args.workers))
        try:
            rows, summary, code = args.handler(args)
        except UsageError as e:
            print(e, file=sys.stderr)
            return EXIT_USAGE
        except ValidationError as e:
            print(f"invalid parameters: {e}", file=sys.stderr)
            return EXIT_USAGE
        except VerificationError as e:
            print(f"verification failed: {e} (lhs={e.lhs!r}, rhs={e.rhs!r})", file=sys.stderr)
            return EXIT_COUNTEREXAMPLE
        except QkdFilterError as e:
            logger.debug("computation failed", exc_info=True)
            print(f"error: {e}", file=sys.stderr)
            return EXIT_COMPUTATION
        report = Report(config=_resolved_config(args), rows=rows, summary=summary)

    try:
        _emit(report, args.format or config.cli.output_format, args.output)
    except (QkdFilterError, OSError) as e:
        print(f"error: could not write report: {e}", file=sys.stderr)
        return EXIT_COMPUTATION

    store = open_audit_store(args.audit_db)
    if store is not None:
        run_id = store.log_run(args.subcommand, report.config, report.summary, code)
        if run_id is not None and args.subcommand.startswith("verify-"):
            for row in rows:
                store.log_counterexample(run_id, row["seed"], row["trial"], row["lhs"], row["rhs"])
    return code
