import argparse
import json
import re
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import yaml
from pydantic import ValidationError

from .analysis import LpNorm, SupNorm, approximate_identity_curve, convergence_sweep, young_inequality_check
from .config import get_settings
from .constructor import approximate_lp, approximate_uniform
from .densities import parse_density
from .errors import InvalidParameter, MixtureCraftError, ParseError
from .mixture import eval_mixture, parse_mixture, serialize_mixture
from .monitoring import get_logger, setup_logging
from .schemas import Box, ConstructionOptions

logger = get_logger(__name__)

NEGATIVE_VALUE = re.compile(r"^-[\d.]")


class UsageError(Exception):
    """Flag combination or value the parser cannot catch on its own"""


def _normalize_argv(argv: Sequence[str]) -> List[str]:
    """Join ``--flag -3,3`` into ``--flag=-3,3`` so negative lists parse as values."""
    out: List[str] = []
    i = 0
    while i < len(argv):
        token = argv[i]
        if token.startswith("--") and "=" not in token and i + 1 < len(argv) and NEGATIVE_VALUE.match(argv[i + 1]):
            out.append(f"{token}={argv[i + 1]}")
            i += 2
            continue
        out.append(token)
        i += 1
    return out


def positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def float_list(text: str) -> List[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_construction_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--margin", type=positive_float, default=1.0, help="Truncation margin around K")
    parser.add_argument("--tau", type=positive_float, help="Width of the smoothstep shell (default margin/2)")
    parser.add_argument("--k0", type=positive_float, default=1.0, help="First bandwidth tried")
    parser.add_argument("--k-cap", type=positive_float, default=1024.0, help="Largest bandwidth tried")
    parser.add_argument("--max-components", type=int, default=1_000_000, help="Component budget")
    parser.add_argument("--grid-points", type=int, help="Lattice points per axis for sup-norm measurement")
    parser.add_argument("--eta", type=positive_float, default=1e-4, help="Mass left outside the L_p capture cube")
    parser.add_argument("--scope", choices=["ball", "global"], default="ball", help="Remainder certificate scope")
    parser.add_argument("--anchor", action="store_true", help="Build in coordinates anchored at K's lower corner")
    parser.add_argument("--jobs", type=int, help="Worker threads for cell quadrature and sweeps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixturecraft", description="Certified finite-mixture approximation of densities")
    sub = parser.add_subparsers(dest="command", required=True)

    approx = sub.add_parser("approximate", help="Build a mixture approximating the target")
    approx.add_argument("--target", required=True, help="Target density, e.g. gaussian:0,1")
    approx.add_argument("--kernel", required=True, help="Kernel density, e.g. gaussian:0,1")
    approx.add_argument("--mode", choices=["uniform", "lp"], default="uniform")
    approx.add_argument("--K", type=float_list, help="Box bounds a1,b1[,a2,b2] (uniform mode)")
    approx.add_argument("--p", type=float, help="Norm exponent (lp mode)")
    approx.add_argument("--eps", type=positive_float, required=True, help="Error tolerance")
    approx.add_argument("--out", required=True, help="Mixture JSON output path")
    approx.add_argument("--report", help="Report JSON output path")
    approx.add_argument("--no-timing", action="store_true", help="Write elapsed_s as 0")
    _add_construction_flags(approx)

    sweep = sub.add_parser("sweep", help="Run the construction over (k, delta) settings")
    sweep.add_argument("--target", required=True)
    sweep.add_argument("--kernel", required=True)
    sweep.add_argument("--K", type=float_list)
    sweep.add_argument("--p", type=float)
    sweep.add_argument("--settings", help="Settings as k:delta pairs, e.g. 4:0.2,8:0.05")
    sweep.add_argument("--settings-file", help="YAML list of {k, delta} mappings")
    sweep.add_argument("--out", required=True, help="CSV output path")
    sweep.add_argument("--no-timing", action="store_true")
    _add_construction_flags(sweep)

    curve = sub.add_parser("identity-curve", help="Error of g_k * f against f for a list of k")
    curve.add_argument("--target", required=True)
    curve.add_argument("--kernel", required=True)
    curve.add_argument("--norm", choices=["sup", "lp"], default="sup")
    curve.add_argument("--K", type=float_list, help="Box for the sup norm")
    curve.add_argument("--p", type=float, default=1.0)
    curve.add_argument("--ks", type=float_list, required=True)
    curve.add_argument("--grid-points", type=int)
    curve.add_argument("--out", required=True)
    curve.add_argument("--no-timing", action="store_true")

    young = sub.add_parser("young-check", help="Check Young's convolution inequality numerically")
    young.add_argument("--f", required=True)
    young.add_argument("--g", required=True)
    young.add_argument("--p", type=float, required=True)
    young.add_argument("--form", choices=["lp", "sup"], default="lp")

    evaluate = sub.add_parser("eval", help="Evaluate a stored mixture at one point")
    evaluate.add_argument("--mixture", required=True)
    evaluate.add_argument("--at", type=float_list, required=True)

    return parser


def _options(args) -> ConstructionOptions:
    return ConstructionOptions(
        margin=args.margin,
        tau=args.tau,
        k0=args.k0,
        k_cap=args.k_cap,
        max_components=args.max_components,
        grid_points=args.grid_points,
        eta=args.eta,
        tail_scope=args.scope,
        anchor=args.anchor,
        n_jobs=args.jobs,
    )


def _box(values: Optional[List[float]]) -> Box:
    if values is None:
        raise UsageError("--K is required for this mode")
    try:
        return Box.from_flat(values)
    except ValueError as exc:
        raise UsageError(f"--K: {exc}") from None


def _write(path: str, data: bytes):
    Path(path).write_bytes(data)


def _json_bytes(document) -> bytes:
    return (json.dumps(document, indent=2) + "\n").encode("utf-8")


def _settings_pairs(args) -> List[dict]:
    if args.settings_file:
        try:
            loaded = yaml.safe_load(Path(args.settings_file).read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ParseError(f"--settings-file: {exc}") from None
        if not isinstance(loaded, list):
            raise ParseError("--settings-file must hold a list of {k, delta} mappings")
        return loaded
    if not args.settings:
        raise UsageError("give --settings or --settings-file")
    pairs = []
    for token in args.settings.split(","):
        k, sep, delta = token.partition(":")
        if not sep:
            raise ParseError(f"--settings entries look like k:delta, got {token!r}")
        pairs.append({"k": k, "delta": delta})
    return pairs


def cmd_approximate(args) -> int:
    f, g = parse_density(args.target), parse_density(args.kernel)
    opts = _options(args)
    if args.mode == "uniform":
        mixture, report = approximate_uniform(f, g, _box(args.K), args.eps, opts)
    else:
        if args.p is None:
            raise UsageError("--p is required in lp mode")
        mixture, report = approximate_lp(f, g, args.p, args.eps, opts)
    if args.no_timing:
        report = report.model_copy(update={"elapsed_s": 0.0})
    _write(args.out, serialize_mixture(mixture))
    if args.report:
        _write(args.report, _json_bytes(report.to_document()))
    return 0


def cmd_sweep(args) -> int:
    f, g = parse_density(args.target), parse_density(args.kernel)
    if (args.K is None) == (args.p is None):
        raise UsageError("give exactly one of --K (uniform sweep) or --p (L_p sweep)")
    K = _box(args.K) if args.K is not None else None
    table = convergence_sweep(f, g, _settings_pairs(args), K=K, p=args.p, opts=_options(args))
    if args.no_timing:
        for row in table.rows:
            row.elapsed_s = 0.0
    table.to_csv(args.out)
    return 0


def cmd_identity_curve(args) -> int:
    f, g = parse_density(args.target), parse_density(args.kernel)
    if args.norm == "sup":
        norm = SupNorm.on_box(_box(args.K), args.grid_points)
    else:
        norm = LpNorm(args.p)
    table = approximate_identity_curve(f, g, norm, args.ks)
    if args.no_timing:
        for row in table.rows:
            row.elapsed_s = 0.0
    table.to_csv(args.out)
    return 0


def cmd_young_check(args) -> int:
    result = young_inequality_check(parse_density(args.f), parse_density(args.g), args.p, form=args.form)
    print(json.dumps({"lhs": result.lhs, "rhs": result.rhs, "holds": result.holds, "form": result.form}))
    return 0


def cmd_eval(args) -> int:
    try:
        data = Path(args.mixture).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {args.mixture}: {exc.strerror}") from None
    print(repr(eval_mixture(parse_mixture(data), args.at)))
    return 0


COMMANDS = {
    "approximate": cmd_approximate,
    "sweep": cmd_sweep,
    "identity-curve": cmd_identity_curve,
    "young-check": cmd_young_check,
    "eval": cmd_eval,
}


def run(argv: Sequence[str]) -> int:
    """Entry point; returns 0 on success, 1 on engine failure, 2 on usage error."""
    parser = build_parser()
    try:
        args = parser.parse_args(_normalize_argv(list(argv)))
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0

    try:
        settings = get_settings()
    except InvalidParameter as exc:
        print(f"mixturecraft: {exc}", file=sys.stderr)
        return 2
    setup_logging(settings.log_level, settings.log_format)

    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mixturecraft: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"mixturecraft: invalid option: {exc.errors()[0]['msg']}", file=sys.stderr)
        return 2
    except MixtureCraftError as exc:
        logger.error("Command failed", command=args.command, error=str(exc))
        failure = {"error": type(exc).__name__, "message": str(exc), "report": exc.report}
        print(json.dumps(failure, indent=2, default=str), file=sys.stderr)
        return 1


def main() -> int:
    return run(sys.argv[1:])
