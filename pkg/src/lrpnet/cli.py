"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure,
3 verification-suite failure.  ``LRP_SEED`` in the environment overrides
``--seed``.  Relative output paths are resolved against ``--out-dir``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from lrpnet import estimation, identities, model, plot, renorm, solver

log = logging.getLogger("lrpnet")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_scales(text: str) -> tuple[int, ...]:
    """``16..256`` (powers of two between the ends) or ``16,32,48``."""
    text = text.strip()
    try:
        if ".." in text:
            a, b = (int(x) for x in text.split("..", 1))
            if a < 1 or b < a or a & (a - 1) or b & (b - 1):
                raise ValueError
            out, n = [], a
            while n <= b:
                out.append(n)
                n *= 2
            return tuple(out)
        out = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad scale list {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty scale list")
    return out


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _int_at_least(k):
    def conv(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
        if v < k:
            raise argparse.ArgumentTypeError(f"must be >= {k}: {text!r}")
        return v
    return conv


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out-dir", default=".", help="directory that relative output paths are resolved against")
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging verbosity")
    common.add_argument("--seed", type=_int_at_least(0), default=0,
                        help="master seed (LRP_SEED in the environment takes precedence)")

    p = _Parser(prog="lrpnet", description="Long-range percolation resistance experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sample", parents=[common], help="draw one LRP sample and write it as JSON")
    s.add_argument("--beta", type=_positive_float, required=True, help="edge intensity")
    s.add_argument("--n", type=_int_at_least(2), required=True, help="window [0, n-1], or radius with --contract")
    s.add_argument("--replicate", type=_int_at_least(0), default=0, help="replicate index")
    s.add_argument("--contract", action="store_true",
                   help="sample [-n, n] with the outside contracted into supernodes")
    s.add_argument("--split-sides", action="store_true", help="separate left and right supernodes")
    s.add_argument("--truncation", type=_int_at_least(1), default=None,
                   help="explicit cross-edge horizon (default 8n)")
    s.add_argument("--out", default="sample.json", help="output JSON path")

    r = sub.add_parser("resist", parents=[common], help="two-point effective resistance in a sampled window")
    r.add_argument("--beta", type=_positive_float, required=True, help="edge intensity")
    r.add_argument("--n", type=_int_at_least(2), required=True, help="window [0, n-1]")
    r.add_argument("--pair", type=int, nargs=2, required=True, metavar=("I", "J"), help="terminals")
    r.add_argument("--replicate", type=_int_at_least(0), default=0, help="replicate index")
    r.add_argument("--method", choices=["auto", "dense", "sparse", "cg"], default="auto", help="linear solver")
    r.add_argument("--emit-flow", action="store_true", help="include the unit flow in the output")
    r.add_argument("--out", default=None, help="output JSON path (default: stdout only)")

    v = sub.add_parser("verify", parents=[common], help="run randomised identity suites")
    v.add_argument("--suite", choices=["all", *identities.SUITES], default="all", help="suite to run")
    v.add_argument("--trials", type=_int_at_least(1), default=500, help="trials per suite")
    v.add_argument("--out", default=None, help="output JSON path (default: stdout only)")

    c = sub.add_parser("classify", parents=[common], help="classify blocks of a sampled window")
    c.add_argument("--beta", type=_positive_float, required=True, help="edge intensity")
    c.add_argument("--m", type=_int_at_least(2), required=True, help="block length")
    c.add_argument("--blocks", type=_int_at_least(3), required=True, help="number of blocks")
    c.add_argument("--replicate", type=_int_at_least(0), default=0, help="replicate index")
    c.add_argument("--M", dest="M", type=_int_at_least(0), default=8, help="boundary-count cap for M-good")
    c.add_argument("--delta", type=_positive_float, default=0.2, help="threshold exponent")
    c.add_argument("--alpha1", type=_positive_float, default=0.1, help="separation fraction")
    c.add_argument("--alpha2", type=_positive_float, default=0.05, help="threshold prefactor")
    c.add_argument("--out", default="classify.csv", help="output CSV path")

    g = sub.add_parser("scaling", parents=[common], help="Monte Carlo scaling campaign")
    g.add_argument("--beta", type=_positive_float, default=1.0, help="edge intensity")
    g.add_argument("--scales", type=parse_scales, default=(16, 32, 64, 128, 256, 512, 1024),
                   help="'16..1024' for powers of two, or a comma list")
    g.add_argument("--replicates", type=_int_at_least(2), default=200, help="replicates per scale")
    g.add_argument("--mult-replicates", type=_int_at_least(2), default=1000,
                   help="replicates for the multiplicativity ratios")
    g.add_argument("--truncation-factor", type=_positive_float, default=8.0,
                   help="explicit cross-edge horizon as a multiple of n")
    g.add_argument("--threads", type=_int_at_least(1), default=None, help="worker processes (default: all cores)")
    g.add_argument("--out", default="report.json", help="report JSON path")
    g.add_argument("--csv", default=None, help="optional series CSV path")

    q = sub.add_parser("report", parents=[common], help="render a series CSV as an SVG log-log plot")
    q.add_argument("--csv", required=True, help="input series CSV")
    q.add_argument("--out", default="plot.svg", help="output SVG path")
    q.add_argument("--title", default="", help="plot title")
    return p


def _resolve(out_dir: str, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(out_dir) / p


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cmd_sample(a):
    params = model.ModelParams(a.beta, a.seed)
    if a.contract:
        smp = model.sample_with_contracted_complement(params, a.n, a.truncation, replicate=a.replicate,
                                                      split_sides=a.split_sides)
    else:
        smp = model.sample_window(params, 0, a.n - 1, replicate=a.replicate)
    path = _resolve(a.out_dir, a.out)
    write_atomic(path, smp.to_json() + "\n")
    print(f"sample: {len(smp.edges)} edges on {list(smp.window)} -> {path}")
    return EXIT_OK


def _cmd_resist(a):
    params = model.ModelParams(a.beta, a.seed)
    smp = model.sample_window(params, 0, a.n - 1, replicate=a.replicate)
    res = solver.restricted_resistance(smp, (0, a.n - 1), a.pair[0], a.pair[1], a.method)
    doc = res.to_dict(emit_flow=a.emit_flow)
    doc["pair"] = list(a.pair)
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if a.out:
        write_atomic(_resolve(a.out_dir, a.out), text)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_verify(a):
    names = identities.SUITES if a.suite == "all" else (a.suite,)
    reports = [identities.run_suite(name, a.trials, a.seed) for name in names]
    text = json.dumps(reports, indent=1, sort_keys=True) + "\n"
    if a.out:
        write_atomic(_resolve(a.out_dir, a.out), text)
    sys.stdout.write(text)
    failures = sum(r["failures"] for r in reports)
    print(f"verify: {len(reports)} suite(s), {failures} failure(s)", file=sys.stderr)
    return EXIT_VERIFY if failures else EXIT_OK


CLASSIFY_COLUMNS = ("block_index", "xi", "eta", "m_good", "cond1", "cond2", "cond3", "very_good", "internal_energy")


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    return repr(float(x)) if isinstance(x, float) else str(x)


def _cmd_classify(a):
    cp = renorm.ClassifyParams(M=a.M, delta=a.delta, alpha1=a.alpha1, alpha2=a.alpha2)
    params = model.ModelParams(a.beta, a.seed)
    smp = model.sample_window(params, 0, a.m * a.blocks - 1, replicate=a.replicate)
    rows = renorm.classify(smp, a.m, cp)
    lines = [",".join(CLASSIFY_COLUMNS)]
    for r in rows:
        vals = (r.block, r.xi, r.eta, r.m_good, r.cond1, r.cond2, r.cond3, r.very_good, r.internal_energy)
        lines.append(",".join(_cell(x) for x in vals))
    path = _resolve(a.out_dir, a.out)
    write_atomic(path, "\n".join(lines) + "\n")
    vg = sum(1 for r in rows if r.very_good)
    print(f"classify: {len(rows)} blocks, {vg} very good -> {path}")
    return EXIT_OK


def _cmd_scaling(a):
    cfg = estimation.ScalingConfig(
        beta=a.beta, scales=a.scales, replicates=a.replicates, seed=a.seed,
        truncation_factor=a.truncation_factor, mult_replicates=a.mult_replicates,
        threads=a.threads or estimation.default_threads(),
    )
    rep = estimation.scaling_report(cfg)
    path = _resolve(a.out_dir, a.out)
    write_atomic(path, rep.to_json())
    if a.csv:
        write_atomic(_resolve(a.out_dir, a.csv), rep.series_csv())
    print(f"scaling: delta_hat={rep.delta_hat:.4f} stderr={rep.delta_stderr:.4f} r2={rep.r_squared:.4f} -> {path}")
    return EXIT_OK


def _cmd_report(a):
    src = _resolve(a.out_dir, a.csv)
    try:
        text = src.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {src}: {exc.strerror}") from None
    first, second = plot.parse_series(text)
    svg, slope = plot.render_svg(first, second, a.title)
    path = _resolve(a.out_dir, a.out)
    write_atomic(path, svg)
    print(f"report: slope={slope:.4f} -> {path}")
    return EXIT_OK


_COMMANDS = {"sample": _cmd_sample, "resist": _cmd_resist, "verify": _cmd_verify,
             "classify": _cmd_classify, "scaling": _cmd_scaling, "report": _cmd_report}


def _fail(code: int, kind: str, msg: str) -> int:
    print(f"error: {kind}: {' '.join(str(msg).split())}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        env_seed = os.environ.get("LRP_SEED")
        if env_seed is not None:
            try:
                args.seed = int(env_seed)
            except ValueError:
                raise UsageError(f"LRP_SEED must be an integer, got {env_seed!r}") from None
            if args.seed < 0:
                raise UsageError("LRP_SEED must be nonnegative")
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except plot.PlotRefused as exc:
        return _fail(EXIT_USAGE, "plot-refused", exc)
    except plot.ParseError as exc:
        return _fail(EXIT_USAGE, "parse", exc)
    except (solver.NumericError, solver.InfiniteResistance, ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc)
    except (ValueError, KeyError) as exc:
        return _fail(EXIT_USAGE, "config", exc)


if __name__ == "__main__":
    sys.exit(main())
