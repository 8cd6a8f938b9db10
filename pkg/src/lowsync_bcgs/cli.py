"""Command-line runner: ``qr-sweep``, ``gmres`` and ``matgen``.

Options may also come from a flat ``key=value`` file given with ``--config``;
flags on the command line win.  Exit codes: 0 success, 1 usage error,
2 I/O or parse error, 3 numerical breakdown (a GMRES run that halted).
"""
from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .bcgs import DEFAULT_SWITCH_CONST, VariantTag
from .core import BlockPartition, DimensionError
from .intraortho import IntraorthoKind
from .krylov import DEFAULT_TOL, BasisPolicy, sstep_gmres
from .testbed import (
    MatrixClassParams,
    ParseError,
    generate,
    kappa_sweep,
    measured_kappa,
    read_matrix_market,
    write_matrix_market,
)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_BREAKDOWN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_kappa_grid(text: str) -> list[float]:
    """``"1e2,1e4"`` or log-spaced ``"1e1..1e15:8"``."""
    text = text.strip()
    try:
        if ".." in text:
            span, _, count = text.partition(":")
            lo, hi = (float(t) for t in span.split(".."))
            n = int(count) if count else 8
            if n < 1 or lo <= 0 or hi <= 0:
                raise ValueError
            return [float(v) for v in np.geomspace(lo, hi, n)]
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad kappa grid {text!r}") from None
    if not vals or any(not v >= 1 for v in vals):
        raise UsageError(f"kappa values must be >= 1: {text!r}")
    return vals


def parse_variants(text: str) -> list[VariantTag]:
    if text.strip().lower() == "all":
        return list(VariantTag)
    try:
        return [VariantTag.parse(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _io_kind(text):
    try:
        return IntraorthoKind.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def read_config(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise UsageError(f"{path}:{no}: expected key=value")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lowsync-bcgs", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    q = sub.add_parser("qr-sweep", help="LOO versus kappa sweep, CSV output")
    q.add_argument("--class", dest="matrix_class", help="default, glued, monomial or piled")
    q.add_argument("--m", type=int, default=200)
    q.add_argument("--p", type=int, default=10)
    q.add_argument("--s", type=int, default=5)
    q.add_argument("--variants", default="all", help="comma list of variant tags, or all")
    q.add_argument("--kappa-grid", default="1e1..1e15:8", help="comma list or lo..hi:n")
    q.add_argument("--io-a", default="HouseQR")
    q.add_argument("--io-1", default="HouseQR")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--output", default="-", help="CSV path (default: stdout)")

    g = sub.add_parser("gmres", help="s-step GMRES on a Matrix Market system")
    g.add_argument("--matrix", help="Matrix Market file; b = ones")
    g.add_argument("--s", type=int, default=2)
    g.add_argument("--variant", default="IP_2S", help="IP_1S, IP_2S, ADAPTIVE or BCGS2")
    g.add_argument("--io-1", default="HouseQR")
    g.add_argument("--switch-const", type=float, default=DEFAULT_SWITCH_CONST)
    g.add_argument("--basis", choices=["monomial", "newton"], default="monomial")
    g.add_argument("--tol", type=float, default=DEFAULT_TOL)
    g.add_argument("--max-iter", type=int, default=None, help="block steps (default: (m-1)//s)")
    g.add_argument("--output", default=None, help="history CSV (default: none)")

    mg = sub.add_parser("matgen", help="write a generated matrix in Matrix Market array format")
    mg.add_argument("--class", dest="matrix_class", help="default, glued, monomial or piled")
    mg.add_argument("--m", type=int, default=200)
    mg.add_argument("--p", type=int, default=10)
    mg.add_argument("--s", type=int, default=5)
    mg.add_argument("--kappa", type=float, default=1e6)
    mg.add_argument("--seed", type=int, default=0)
    mg.add_argument("--output", help="Matrix Market path")

    for sp_ in (q, g, mg):
        sp_.add_argument("--config", default=None, help="key=value file; flags win")
    return p


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _apply_config(parser, argv):
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a command is required: qr-sweep, gmres or matgen")
    if not args.config:
        return args
    sub = _subparser(parser, args.command)
    known = {a.dest for a in sub._actions if a.dest not in ("help", "config")}
    aliases = {"class": "matrix_class"}
    try:
        cfg = read_config(args.config)
    except OSError as exc:
        raise OSError(f"cannot read config: {exc}") from exc
    defaults = {}
    for key, value in cfg.items():
        dest = aliases.get(key, key)
        if dest not in known:
            raise UsageError(f"unknown config key {key!r}")
        action = next(a for a in sub._actions if a.dest == dest)
        try:
            defaults[dest] = action.type(value) if action.type else value
        except ValueError:
            raise UsageError(f"bad value for {key}: {value!r}") from None
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", encoding="ascii", newline=""), True


def cmd_qr_sweep(args) -> int:
    if not args.matrix_class:
        raise UsageError("qr-sweep needs a matrix class (--class)")
    try:
        part = BlockPartition(args.m, args.p, args.s)
    except DimensionError as exc:
        raise UsageError(str(exc)) from None
    grid = parse_kappa_grid(args.kappa_grid)
    variants = parse_variants(args.variants)
    try:
        result = kappa_sweep(args.matrix_class, variants, grid, part, args.seed,
                             _io_kind(args.io_a), _io_kind(args.io_1))
    except (ValueError, DimensionError) as exc:
        raise UsageError(str(exc)) from None
    fh, close = _open_out(args.output)
    try:
        result.to_csv(fh)
    finally:
        if close:
            fh.close()
    return EXIT_OK


def gmres_summary(state, name: str) -> str:
    first, second = state.iteration_split
    iters = f"{state.vectors}"
    if state.variant.tag is VariantTag.ADAPTIVE:
        iters += f" ({first}+{second})"
    d = "-" if state.switch_block is None else str(state.switch_block)
    return (f"matrix={name} variant={state.variant.tag.name} s={state.s} status={state.status} "
            f"backward_error={state.backward_error:.3e} iterations={iters} "
            f"block_steps={state.steps} sync_points={state.sync_total} switch_block={d}")


def cmd_gmres(args) -> int:
    if not args.matrix:
        raise UsageError("gmres needs --matrix")
    if args.s < 1:
        raise UsageError("s must be >= 1")
    A = read_matrix_market(args.matrix)
    tag = parse_variants(args.variant)
    if len(tag) != 1:
        raise UsageError("gmres takes exactly one variant")
    b = np.ones(A.m)
    try:
        _, st = sstep_gmres(A, b, None, args.s, tag[0], tol=args.tol, max_iter=args.max_iter,
                            policy=BasisPolicy(args.basis), io_1=_io_kind(args.io_1),
                            switch_const=args.switch_const)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.output:
        with open(args.output, "w", encoding="ascii", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "vectors", "backward_error", "sync_total"])
            for h in st.history:
                w.writerow([h.step, h.vectors, f"{h.backward_error:.6e}", h.sync_total])
    print(gmres_summary(st, args.matrix))
    return EXIT_BREAKDOWN if st.status == "halted" else EXIT_OK


def cmd_matgen(args) -> int:
    if not args.matrix_class:
        raise UsageError("matgen needs a matrix class (--class)")
    if not args.output:
        raise UsageError("matgen needs --output")
    try:
        params = MatrixClassParams(args.matrix_class, args.m, args.p, args.s, args.kappa, args.seed)
        X = generate(params)
    except (ValueError, DimensionError) as exc:
        raise UsageError(str(exc)) from None
    km = measured_kappa(X)
    write_matrix_market(args.output, X, comment=(
        f"class={params.cls.value} m={params.m} p={params.p} s={params.s} "
        f"kappa_target={params.kappa_target:.6e} seed={params.rng_seed}"))
    print(f"wrote {args.output}: {X.shape[0]}x{X.shape[1]} kappa_measured={km:.6e}")
    return EXIT_OK


COMMANDS = {"qr-sweep": cmd_qr_sweep, "gmres": cmd_gmres, "matgen": cmd_matgen}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ParseError, UnicodeDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
