"""Command-line entry point ``permkern``.

Exit status: 0 for a definitive answer, 2 for "don't know" (Indeterminate,
Inconclusive, failed precondition), 1 for errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dichotomy, kernels, permanental, potential, symcheck
from .matrix import Kernel, kernel_from_csv, kernel_from_dict

EXIT_OK, EXIT_ERROR, EXIT_UNKNOWN = 0, 1, 2


class UsageError(ValueError):
    pass


def _read_kernel(path: str) -> Kernel:
    p = Path(path)
    text = p.read_text()
    if p.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        d = json.loads(text)
        if "family" in d:
            obj = kernels.from_descriptor(d)
            if isinstance(obj, kernels.KernelFamily):
                raise UsageError(f"{path}: an N-indexed family is not a finite kernel")
            return obj.composed if isinstance(obj, kernels.PerturbedKernel) else obj
        return kernel_from_dict(d)
    return kernel_from_csv(text)


def _load_family(args) -> dict:
    if args.family is None:
        raise UsageError("--family is required")
    src = args.family
    if not src.lstrip().startswith("{") and Path(src).exists():
        src = Path(src).read_text()
    return json.loads(src)


def _kernel_arg(args, index: int = 0) -> Kernel:
    if args.input and len(args.input) > index:
        return _read_kernel(args.input[index])
    if index == 0 and args.family is not None:
        obj = kernels.from_descriptor(_load_family(args))
        if isinstance(obj, kernels.KernelFamily):
            raise UsageError("an N-indexed family is not a finite kernel")
        return obj.composed if isinstance(obj, kernels.PerturbedKernel) else obj
    raise UsageError(f"missing --input #{index + 1}")


def _emit(args, payload: dict) -> None:
    _write(args, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write(args, text: str) -> None:
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _schedule(text: str) -> tuple[int, ...]:
    vals = tuple(int(x) for x in text.split(",") if x.strip())
    if not vals or any(v < 1 for v in vals) or list(vals) != sorted(set(vals)):
        raise argparse.ArgumentTypeError("schedule must be increasing positive integers")
    return vals


def _sci(x) -> str:
    # values below double range arrive as decimal strings
    if isinstance(x, str):
        m, _, e = x.partition("e")
        return f"{float(m):.4f}e{int(e)}" if e else x
    return f"{float(x):.4e}"


def scan_table(d: dict) -> str:
    """Plain-text rendering of a scan report, one line per threshold."""
    lines = [f"verdict: {d['verdict']}"]
    if "n0_candidate" in d:
        lines.append(f"n0 candidate: {d['n0_candidate']}")
    if "reason" in d:
        lines.append(f"reason: {d['reason']}")
    lines.append(f"{'m':>8}  {'triple':<24}  {'residual':>12}  {'normalized':>12}  {'digits':>6}  clean")
    for r in d["thresholds"]:
        clean = "-" if r["tail_clean"] is None else ("yes" if r["tail_clean"] else "no")
        digits = "-" if r["digits"] is None else str(r["digits"])
        if r["witnesses"]:
            w = r["witnesses"][0]
            trip = ",".join(str(i) for i in w["indices"])
            lines.append(
                f"{r['threshold']:>8}  {trip:<24}  {_sci(w['value']):>12}  {_sci(w['normalized']):>12}  {digits:>6}  {clean}"
            )
        else:
            lines.append(f"{r['threshold']:>8}  {'(none)':<24}  {'':>12}  {'':>12}  {digits:>6}  {clean}")
    return "\n".join(lines) + "\n"


# -- commands -------------------------------------------------------------------


def cmd_check(args) -> int:
    K = _kernel_arg(args)
    v = symcheck.symmetrizable(K, tol=args.tol, seed=args.seed)
    _emit(args, symcheck.verdict_to_dict(v))
    return EXIT_UNKNOWN if isinstance(v, symcheck.Indeterminate) else EXIT_OK


def cmd_verify(args) -> int:
    K, Q = _kernel_arg(args, 0), _kernel_arg(args, 1)
    equal = symcheck.pit_equivalence(K, Q, trials=args.trials, seed=args.seed)
    rep = symcheck.check_necessary(K, Q, tol=args.tol)
    worst = rep.worst_violation
    _emit(
        args,
        {
            "pit_equivalent": equal,
            "trials": args.trials,
            "necessary": {
                "minors_ok": rep.minors_ok,
                "diagonal_ok": rep.diagonal_ok,
                "offdiag_product_ok": rep.offdiag_product_ok,
                "cycles_ok": rep.cycles_ok,
                "all_ok": rep.all_ok,
                "worst_violation": None if worst is None else dataclasses.asdict(worst),
            },
        },
    )
    return EXIT_OK


def cmd_scan(args) -> int:
    if args.family is not None:
        fam = kernels.from_descriptor(_load_family(args))
    else:
        fam = _kernel_arg(args)
    if isinstance(fam, kernels.PerturbedKernel):
        fam = fam.composed
    v = dichotomy.asymptotic_scan(fam, schedule=args.schedule, window=args.window)
    d = dichotomy.scan_to_dict(v)
    if args.format == "table":
        _write(args, scan_table(d))
    else:
        _emit(args, d)
    return EXIT_UNKNOWN if isinstance(v, dichotomy.Inconclusive) else EXIT_OK


def cmd_construct(args) -> int:
    if args.input:
        U = _kernel_arg(args)
    else:
        U = kernels.random_potential(args.n, seed=args.seed, dominance=args.dominance)
    n = U.n
    if args.hstar is not None:
        hstar = np.array([float(x) for x in args.hstar.split(",")])
    else:
        hstar = np.ones(n)
    res = potential.construct_h(U, hstar, floor=args.floor, seed=args.seed)
    _emit(args, res.to_dict())
    return EXIT_OK


def _probe_points(args, n: int) -> np.ndarray:
    if args.probes:
        return np.atleast_2d(np.loadtxt(args.probes, delimiter=",", ndmin=2))
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 1]))
    return rng.uniform(0.0, 2.0, size=(args.nprobes, n))


def cmd_sample(args) -> int:
    K = _kernel_arg(args)
    spec = permanental.PermanentalSpec(K, permanental.parse_alpha(args.alpha))
    pts = _probe_points(args, K.n)
    if spec.copies is None:
        rep = permanental.lt_report(spec, pts, seed=args.seed, exact_only=True)
        _emit(args, rep.to_dict())
        return EXIT_UNKNOWN
    Y = permanental.sample_alpha(K, spec.alpha, args.count, args.seed)
    if args.samples:
        Path(args.samples).write_text(permanental.samples_to_csv(Y))
    rep = permanental.lt_report(spec, pts, seed=args.seed, samples=Y)
    _emit(args, rep.to_dict())
    return EXIT_OK


_LP_KERNELS = {
    "exp_abs": lambda lam: (lambda x, y: np.exp(-lam * np.abs(x - y))),
    "min": lambda _: (lambda x, y: np.minimum(x, y)),
}


def cmd_limitpoint(args) -> int:
    d = _load_family(args)
    pts = d.get("points", {"kind": "reciprocal", "count": 2_000_000})
    if isinstance(pts, dict):
        if pts.get("kind") != "reciprocal":
            raise UsageError("points must be a list or {'kind': 'reciprocal', 'count': N}")
        x = 1.0 / np.arange(1, int(pts["count"]) + 1)
    else:
        x = np.asarray(pts, dtype=float)
    name = d.get("u", "exp_abs")
    if name not in _LP_KERNELS:
        raise UsageError(f"u must be one of {sorted(_LP_KERNELS)}")
    u = _LP_KERNELS[name](float(d.get("lambda", 1.0)))
    rep = dichotomy.limit_point_check(
        x, u, float(d.get("x0", 0.0)), tol=float(d.get("tol", 1e-6)), n0_max=int(d.get("n0_max", 50))
    )
    _emit(args, rep.to_dict())
    return EXIT_OK if rep.precondition_ok else EXIT_UNKNOWN


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="permkern", description="Symmetrizability checks for permanental kernels.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", action="append", default=[], help="kernel CSV or JSON (repeatable)")
    common.add_argument("--output", help="write the JSON report here instead of stdout")
    common.add_argument("--tol", type=float, default=symcheck.DEFAULT_TOL)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--family", help="JSON descriptor, inline or a path")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[common], help="decide symmetrizability of a kernel")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("verify", parents=[common], help="compare |I+KS| and |I+QS| for two kernels")
    p.add_argument("--trials", type=int, default=256)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("scan", parents=[common], help="asymptotic scan of an N-indexed family")
    p.add_argument("--schedule", type=_schedule, default=dichotomy.DEFAULT_SCHEDULE)
    p.add_argument("--window", type=int, default=dichotomy.DEFAULT_WINDOW)
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("construct", parents=[common], help="build h for a random or given potential")
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--dominance", type=float, default=0.1)
    p.add_argument("--hstar", help="comma-separated starting h (default all ones)")
    p.add_argument("--floor", type=float, default=potential.FLOOR)
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("sample", parents=[common], help="sample and check the Laplace transform")
    p.add_argument("--alpha", default="1/2", help="M/N")
    p.add_argument("--count", type=int, default=100_000)
    p.add_argument("--probes", help="CSV of probe points, one per row")
    p.add_argument("--nprobes", type=int, default=10)
    p.add_argument("--samples", help="write the sample grid as CSV here")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("limitpoint", parents=[common], help="limit-point form test")
    p.set_defaults(func=cmd_limitpoint)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        UsageError,
        ValueError,
        IndexError,
        OSError,
        KeyError,
        potential.BudgetExhaustedError,
    ) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
