"""Triple residuals, diagonal-plus-constant detection and tail scans.

The residual of a triple is the difference of its two oriented 3-cycle
products. A nonzero residual certifies that the 3x3 principal submatrix is
not equivalent to a symmetric matrix. For ``u + f`` with symmetric ``u``,
the residual vanishes for every ``f`` exactly when ``u`` restricted to the
triple has all off-diagonal entries equal.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import mpmath
import numpy as np

from .kernels import KernelFamily, PerturbedKernel, family_from_matrix
from .matrix import KernelLike, as_array

__all__ = [
    "DiagonalPlusConstant",
    "General",
    "BlockForm",
    "InvalidBlockError",
    "TripleResidual",
    "BlockScanEntry",
    "BlockScan",
    "NotAsymptoticallySymmetrizable",
    "PossiblyAsymptoticallySymmetrizable",
    "Inconclusive",
    "AsymptoticVerdict",
    "ThresholdRecord",
    "LimitPointRow",
    "LimitPointReport",
    "triple_residual",
    "perturbation_residual",
    "detect_form",
    "column_form",
    "block_scan",
    "toeplitz_residual_factors",
    "min_residual_factors",
    "find_nonconstant_triple",
    "hunt_triples",
    "asymptotic_scan",
    "limit_point_check",
    "scan_to_dict",
]

FORM_TOL = 1e-10
FLOOR = 1e-9
DEFAULT_SCHEDULE = (1, 10, 100, 1000)
DEFAULT_WINDOW = 64
SPACINGS = (1, 2, 4, 8)
DPS_LADDER = (30, 120, 480, 1920)


class InvalidBlockError(ValueError):
    """Block is not a valid symmetric potential block."""


@dataclass(frozen=True)
class DiagonalPlusConstant:
    """``diag(lam) + d``; ``d`` is None when read off a composed kernel."""

    lam: tuple[float, ...]
    d: Optional[float]
    tag: str = field(default="diagonal_plus_constant", init=False)

    def reconstruct(self) -> np.ndarray:
        if self.d is None:
            raise ValueError("constant is not identifiable from a composed kernel")
        return np.diag(self.lam) + self.d


@dataclass(frozen=True)
class General:
    max_offdiag_spread: float
    tag: str = field(default="general", init=False)


BlockForm = Union[DiagonalPlusConstant, General]


def _num(x):
    # mpf values can underflow a double; keep those as decimal strings
    if isinstance(x, mpmath.mpf) and x != 0 and float(x) == 0.0:
        return mpmath.nstr(x, 17)
    return float(x)


@dataclass(frozen=True)
class TripleResidual:
    """Signed residual ``K12 K23 K31 - K13 K32 K21`` of a triple.

    ``value`` is a float, or an mpmath number when the residual was resolved
    above double precision. ``normalized`` divides by the square root of the
    product of the six entries.
    """

    indices: tuple[int, int, int]
    value: object
    normalized: object
    certified: bool = True
    digits: Optional[int] = None

    def __float__(self):
        return float(self.value)

    def to_dict(self) -> dict:
        d = {"indices": list(self.indices), "value": _num(self.value), "normalized": _num(self.normalized)}
        if self.digits is not None:
            d["digits"] = self.digits
        return d


def _residual(k12, k23, k31, k13, k32, k21):
    fwd = k12 * k23 * k31
    rev = k13 * k32 * k21
    F = fwd - rev
    scale = abs(k12 * k23 * k31 * k13 * k32 * k21)
    if isinstance(F, mpmath.mpf):
        norm = F / mpmath.sqrt(scale) if scale else mpmath.mpf(0)
    else:
        norm = F / math.sqrt(scale) if scale else 0.0
    return F, norm, fwd, rev


def _entries_getter(K):
    if isinstance(K, KernelFamily):
        return K.entry, K.size
    a = np.asarray(K, dtype=float)
    return (lambda j, k: float(a[j - 1, k - 1])), a.shape[0]


def triple_residual(K, i1: int, i2: int, i3: int) -> TripleResidual:
    """Residual of the triple (i1, i2, i3), 1-based, on the composed kernel."""
    if len({i1, i2, i3}) != 3:
        raise ValueError(f"triple indices must be distinct, got {(i1, i2, i3)}")
    e, n = _entries_getter(K)
    if n is not None and max(i1, i2, i3) > n:
        raise IndexError(f"index out of range for n={n}")
    if min(i1, i2, i3) < 1:
        raise IndexError("indices are 1-based")
    F, norm, _, _ = _residual(e(i1, i2), e(i2, i3), e(i3, i1), e(i1, i3), e(i3, i2), e(i2, i1))
    return TripleResidual((i1, i2, i3), float(F), float(norm))


def perturbation_residual(W: KernelLike, x: Sequence[float]) -> tuple[float, float]:
    """(F, normalized F) of ``W[j,k] + x[k]`` on a 3x3 block."""
    w = as_array(W) + np.asarray(x, dtype=float)[None, :]
    F, norm, _, _ = _residual(w[0, 1], w[1, 2], w[2, 0], w[0, 2], w[2, 1], w[1, 0])
    return float(F), float(norm)


# -- closed forms for the Toeplitz and min families --------------------------


def toeplitz_residual_factors(u_a: float, u_2a: float, f1: float, f2: float, f3: float):
    """Factorization of the equally spaced Toeplitz-plus-f residual.

    For base values ``u(0), u(a), u(2a)`` and column shifts ``f1, f2, f3`` the
    residual equals ``(u(a) + f2) * (u(a) - u(2a)) * (f1 - f3)``. Returns the
    common factor and the reduced factor; the diagonal value ``u(0)`` drops out.
    """
    return u_a + f2, (u_a - u_2a) * (f1 - f3)


def min_residual_factors(s1: float, s2: float, s3: float, f1: float, f2: float, f3: float):
    """Factorization of the min-plus-f residual for s1 < s2 < s3.

    The residual equals ``(s1 + f1) * (s1 - s2) * (f3 - f2)``.
    """
    return s1 + f1, (s1 - s2) * (f3 - f2)


# -- form detection -----------------------------------------------------------


def detect_form(W: KernelLike, tol: float = FORM_TOL) -> BlockForm:
    """Classify a symmetric potential block as diagonal-plus-constant or general.

    Raises
    ------
    InvalidBlockError
        If W is asymmetric or violates ``W[j,k] <= min(W[j,j], W[k,k])``
        beyond ``tol`` relative to its largest entry.
    """
    w = as_array(W)
    m = w.shape[0]
    if m < 2:
        raise InvalidBlockError("block needs at least two indices")
    scale = float(np.max(np.abs(w))) or 1.0
    if np.max(np.abs(w - w.T)) > tol * scale:
        raise InvalidBlockError("block is not symmetric")
    dg = np.diag(w)
    if np.any(w - np.minimum(dg[:, None], dg[None, :]) > tol * scale):
        raise InvalidBlockError("off-diagonal entry exceeds a diagonal entry")
    off = w[~np.eye(m, dtype=bool)]
    spread = float(off.max() - off.min())
    if spread == 0.0 or spread < tol * scale:
        d = float(off.mean())
        return DiagonalPlusConstant(tuple(float(max(x - d, 0.0)) for x in dg), d)
    return General(spread)


def column_form(K: KernelLike, tol: float = FORM_TOL) -> BlockForm:
    """Form of the base of a composed block ``u + f`` read off the composed entries.

    The off-diagonal entries of column k are ``u[j,k] + f[k]``; they agree
    within every column exactly when ``u`` has a common off-diagonal value,
    so the diagonal part ``lam[k] = K[k,k] - K[j,k]`` is recovered while the
    constant itself is not identifiable.
    """
    a = as_array(K)
    m = a.shape[0]
    scale = float(np.max(np.abs(a))) or 1.0
    mask = ~np.eye(m, dtype=bool)
    spreads, lam = [], []
    for k in range(m):
        col = a[mask[:, k], k]
        spreads.append(float(col.max() - col.min()))
        lam.append(float(a[k, k] - col.mean()))
    spread = max(spreads)
    if spread == 0.0 or spread < tol * scale:
        return DiagonalPlusConstant(tuple(max(x, 0.0) for x in lam), None)
    return General(spread)


# -- block scans ----------------------------------------------------------------


@dataclass(frozen=True)
class BlockScanEntry:
    l: int
    indices: tuple[int, int, int]
    form: BlockForm
    residual: TripleResidual


@dataclass(frozen=True)
class BlockScan:
    blocks: list
    unscanned: tuple[int, ...]


def block_scan(K, base: Optional[KernelLike] = None, tol: float = FORM_TOL) -> BlockScan:
    """Classify each block {3l+1, 3l+2, 3l+3} and evaluate its residual.

    The form is taken from ``base`` when it is known (explicitly or through a
    PerturbedKernel); otherwise it is read off the composed kernel.
    """
    if isinstance(K, PerturbedKernel):
        base = K.base_kernel if base is None else base
        composed = K.composed.entries
    else:
        composed = as_array(K)
    n = composed.shape[0]
    if n < 3:
        raise ValueError("block scan needs n >= 3")
    b = None if base is None else as_array(base)
    out = []
    for l in range(n // 3):
        idx = (3 * l + 1, 3 * l + 2, 3 * l + 3)
        z = np.arange(3 * l, 3 * l + 3)
        if b is not None:
            form = detect_form(b[np.ix_(z, z)], tol)
        else:
            form = column_form(composed[np.ix_(z, z)], tol)
        out.append(BlockScanEntry(l, idx, form, triple_residual(composed, *idx)))
    return BlockScan(out, tuple(range(3 * (n // 3) + 1, n + 1)))


# -- triple hunting -------------------------------------------------------------


def find_nonconstant_triple(
    U: KernelLike, start: int = 1, stop: Optional[int] = None, tol: float = FORM_TOL
) -> Optional[tuple[int, int, int]]:
    """Find a triple whose principal block has unequal off-diagonal entries.

    Only indices in ``[start, stop]`` (1-based) are used. Returns None when all
    off-diagonal entries there agree, i.e. the restriction is
    diagonal-plus-constant.
    """
    u = as_array(U)
    n = u.shape[0]
    stop = n if stop is None else min(stop, n)
    idx = list(range(start - 1, stop))
    if len(idx) < 3:
        return None
    scale = float(np.max(np.abs(u))) or 1.0
    pairs = list(itertools.combinations(idx, 2))
    l, m = pairs[0]
    a = u[l, m]
    other = next(((p, q) for p, q in pairs if abs(u[p, q] - a) > tol * scale), None)
    if other is None:
        return None
    p, q = other

    def unequal(t):
        z = np.asarray(t)
        off = u[np.ix_(z, z)][~np.eye(3, dtype=bool)]
        return off.max() - off.min() > tol * scale

    if len({l, m, p, q}) == 3:
        return tuple(sorted(i + 1 for i in {l, m, p, q}))
    t = tuple(sorted((l, m, p)))
    if unequal(t):
        return tuple(i + 1 for i in t)
    # U[m, p] equals a here, and U[p, q] = b differs from it
    return tuple(sorted(i + 1 for i in (m, p, q)))


def hunt_triples(U: KernelLike, tol: float = FORM_TOL) -> list[tuple[int, int, int]]:
    """Disjoint triples with increasing indices, each with unequal off-diagonals."""
    n = as_array(U).shape[0]
    out, start = [], 1
    while start <= n - 2:
        t = find_nonconstant_triple(U, start, n, tol)
        if t is None:
            break
        out.append(t)
        start = max(t) + 1
    return out


# -- asymptotic scan ------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdRecord:
    threshold: int
    witnesses: list
    tail_clean: Optional[bool]
    digits: Optional[int]


@dataclass(frozen=True)
class NotAsymptoticallySymmetrizable:
    witnesses: dict
    scanned_up_to: int
    records: list = field(default_factory=list)
    tag: str = field(default="not_asymptotically_symmetrizable", init=False)


@dataclass(frozen=True)
class PossiblyAsymptoticallySymmetrizable:
    n0_candidate: int
    tail_form: dict
    records: list = field(default_factory=list)
    tag: str = field(default="possibly_asymptotically_symmetrizable", init=False)


@dataclass(frozen=True)
class Inconclusive:
    reason: str
    records: list = field(default_factory=list)
    tag: str = field(default="inconclusive", init=False)


AsymptoticVerdict = Union[NotAsymptoticallySymmetrizable, PossiblyAsymptoticallySymmetrizable, Inconclusive]


class _Scanner:
    """Residual evaluation over index windows with an entry cache per precision."""

    def __init__(self, fam: KernelFamily, window: int, spacings, floor, form_tol, max_dps, max_witnesses):
        self.fam = fam
        self.window = window
        self.spacings = tuple(spacings)
        self.floor = floor
        self.form_tol = form_tol
        self.levels = [d for d in DPS_LADDER if d <= max_dps] or [max_dps]
        self.max_witnesses = max_witnesses
        self.cache: dict = {}
        self.evals: dict = {}
        self.max_index = 0

    def _entry(self, j, k, dps):
        key = (j, k, dps)
        v = self.cache.get(key)
        if v is None:
            self.max_index = max(self.max_index, j, k)
            if dps is None:
                v = float(self.fam.entry(j, k))
                if not math.isfinite(v):
                    raise ValueError(f"kernel entry ({j}, {k}) is not finite")
            else:
                with mpmath.workdps(dps):
                    v = self.fam.entry_mp(j, k)
            self.cache[key] = v
        return v

    def _end(self, m):
        end = m + self.window - 1
        if self.fam.size is not None:
            end = min(end, self.fam.size)
        if end - m < 2:
            raise ValueError(f"kernel cannot be evaluated at three indices >= {m}")
        return end

    def triples(self, m):
        end = self._end(m)
        seen = set()
        for a in self.spacings:
            for i in range(m, end - 2 * a + 1):
                t = (i, i + a, i + 2 * a)
                if t not in seen:
                    seen.add(t)
                    yield t

    def _eval(self, t, dps):
        # bisection windows overlap, so residuals are memoized per precision
        key = (t, dps)
        hit = self.evals.get(key)
        if hit is None:
            hit = self.evals[key] = self._eval_uncached(t, dps)
        return hit

    def _eval_uncached(self, t, dps):
        i1, i2, i3 = t
        e = lambda j, k: self._entry(j, k, dps)  # noqa: E731
        if dps is None:
            F, norm, _, _ = _residual(e(i1, i2), e(i2, i3), e(i3, i1), e(i1, i3), e(i3, i2), e(i2, i1))
            return TripleResidual(t, float(F), float(norm)), abs(norm) >= self.floor
        with mpmath.workdps(dps):
            F, norm, fwd, rev = _residual(e(i1, i2), e(i2, i3), e(i3, i1), e(i1, i3), e(i3, i2), e(i2, i1))
            bound = 64 * mpmath.mpf(2) ** (-mpmath.mp.prec) * (abs(fwd) + abs(rev))
            ok = abs(F) > bound
        return TripleResidual(t, F, norm, ok, dps), ok

    def witnesses(self, m):
        """Certified witnesses in the window at m and the precision used."""
        trips = list(self.triples(m))
        levels = self.levels if self.fam.multiprecision else [None]
        for dps in levels:
            found = []
            for t in trips:
                r, ok = self._eval(t, dps)
                if ok:
                    found.append(r)
                    if len(found) >= self.max_witnesses:
                        break
            if found:
                return found, dps
        return [], levels[-1]

    def column_spread(self, m):
        """Largest within-column spread of off-diagonal entries in the window.

        Rows are first rescaled by ratios taken against the leading row, so a
        diagonally conjugated column-constant window still has zero spread.
        """
        end = self._end(m)
        # clean windows were already evaluated at the top of the ladder
        dps = self.levels[-1] if self.fam.multiprecision else None
        with mpmath.workdps(dps or mpmath.mp.dps):
            idx = list(range(m, end + 1))
            r0, r1, r2 = idx[:3]
            ent = {(j, k): self._entry(j, k, dps) for j in idx for k in idx}
            scale_row = {r0: 1}
            for j in idx[1:]:
                c = r2 if j == r1 else r1
                if ent[r0, c] == 0:
                    return math.inf, 0.0
                scale_row[j] = ent[j, c] / ent[r0, c]
                if scale_row[j] == 0:
                    return math.inf, 0.0
            worst, scale = 0, 0
            for k in idx:
                vals = [ent[j, k] / scale_row[j] for j in idx if j != k]
                worst = max(worst, max(vals) - min(vals))
                scale = max(scale, max(abs(v) for v in vals), abs(ent[k, k]))
            if dps is None:
                tol = self.form_tol * scale
            else:
                # stays an mpf: at high precision the bound is far below double range
                tol = scale * mpmath.mpf(2) ** (20 - mpmath.mp.prec)
        return worst, tol

    def clean(self, m):
        wits, _ = self.witnesses(m)
        if wits:
            return False
        spread, tol = self.column_spread(m)
        return spread <= tol


def asymptotic_scan(
    K,
    schedule: Sequence[int] = DEFAULT_SCHEDULE,
    floor: float = FLOOR,
    window: int = DEFAULT_WINDOW,
    spacings: Sequence[int] = SPACINGS,
    form_tol: float = FORM_TOL,
    max_dps: int = DPS_LADDER[-1],
    max_witnesses: int = 3,
) -> AsymptoticVerdict:
    """Look for non-symmetrizable triples in every tail of a kernel.

    For each threshold m, triples ``(i, i+a, i+2a)`` with all indices in
    ``[m, m + window)`` are searched, contiguous ones first. Double-precision
    kernels count a triple as a witness when its normalized residual is at
    least ``floor``. Families with a multiprecision evaluator are re-evaluated
    at increasing precision and a witness must be nonzero beyond the rounding
    bound of the working precision.

    A witness at the last threshold gives the negative verdict (it lies in
    every earlier tail as well). If the last thresholds are clean and their
    windows are column-constant up to a diagonal
    rescaling, the first clean index is
    located by bisection and reported as the n0 candidate.
    """
    fam = K if isinstance(K, KernelFamily) else family_from_matrix(K)
    sched = sorted(int(m) for m in schedule)
    if not sched or sched[0] < 1:
        raise ValueError("schedule must contain thresholds >= 1")
    sc = _Scanner(fam, int(window), spacings, floor, form_tol, max_dps, max_witnesses)
    records: list[ThresholdRecord] = []
    for m in sched:
        wits, dps = sc.witnesses(m)
        clean = None
        if not wits:
            spread, tol = sc.column_spread(m)
            clean = spread <= tol
        records.append(ThresholdRecord(m, wits, clean, dps))

    if records[-1].witnesses:
        witnessed = {r.threshold: r.witnesses for r in records if r.witnesses}
        return NotAsymptoticallySymmetrizable(witnessed, sc.max_index, records)

    last_bad = max((i for i, r in enumerate(records) if r.witnesses), default=None)
    tail = records[(last_bad + 1) if last_bad is not None else 0:]
    if not all(r.tail_clean for r in tail):
        return Inconclusive(
            "residuals vanish in the last tail but its off-diagonals are not column-constant",
            records,
        )
    lo = records[last_bad].threshold if last_bad is not None else 0
    hi = tail[0].threshold
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mid >= 1 and sc.clean(mid):
            hi = mid
        else:
            lo = mid
    spread, tol = sc.column_spread(hi)
    tail_form = {
        "form": "diagonal_plus_constant",
        "window": [hi, sc._end(hi)],
        "column_spread": _num(spread),
        "tolerance": _num(tol),
    }
    return PossiblyAsymptoticallySymmetrizable(hi, tail_form, records)


def scan_to_dict(v: AsymptoticVerdict) -> dict:
    out: dict = {"verdict": v.tag}
    if isinstance(v, NotAsymptoticallySymmetrizable):
        out["scanned_up_to"] = v.scanned_up_to
        out["witnesses"] = {str(m): [w.to_dict() for w in ws] for m, ws in v.witnesses.items()}
    elif isinstance(v, PossiblyAsymptoticallySymmetrizable):
        out["n0_candidate"] = v.n0_candidate
        out["tail_form"] = v.tail_form
    else:
        out["reason"] = v.reason
    out["thresholds"] = [
        {
            "threshold": r.threshold,
            "witnesses": [w.to_dict() for w in r.witnesses],
            "tail_clean": r.tail_clean,
            "digits": r.digits,
        }
        for r in v.records
    ]
    return out


# -- limit point ----------------------------------------------------------------


@dataclass(frozen=True)
class LimitPointRow:
    n0: int
    form_holds: bool
    offdiag_spread: float
    lambda_from_gap: float
    failure: Optional[str]


@dataclass(frozen=True)
class LimitPointReport:
    precondition_ok: bool
    reason: Optional[str]
    u00: float
    lambda_limit: float
    continuity_ok: bool
    rows: list

    @property
    def all_fail(self) -> bool:
        return self.precondition_ok and bool(self.rows) and all(r.failure for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "precondition_ok": self.precondition_ok,
            "reason": self.reason,
            "u00": self.u00,
            "lambda_limit": self.lambda_limit,
            "continuity_ok": self.continuity_ok,
            "all_fail": self.all_fail,
            "rows": [
                {
                    "n0": r.n0,
                    "form_holds": r.form_holds,
                    "offdiag_spread": r.offdiag_spread,
                    "lambda_from_gap": r.lambda_from_gap,
                    "failure": r.failure,
                }
                for r in self.rows
            ],
        }


def _evaluate(u: Callable, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(u(xs, ys), dtype=float)
        if out.shape == np.broadcast(xs, ys).shape:
            return out
    except Exception:
        pass
    xb, yb = np.broadcast_arrays(xs, ys)
    return np.array([u(float(a), float(b)) for a, b in zip(xb.ravel(), yb.ravel())], dtype=float).reshape(xb.shape)


def limit_point_check(
    points: Sequence[float],
    u: Callable,
    x0: float,
    tol: float = 1e-6,
    n0_max: int = 50,
    form_window: int = 8,
) -> LimitPointReport:
    """Test, for each n0, whether u on {x_j : j >= n0} can be diagonal-plus-constant.

    The form requires all off-diagonal values on the tail to equal one
    constant d; then ``u(x0,x0) - u(x_j,x0)`` equals one positive Lambda_0 for
    all tail j, while continuity at x0 forces that gap to vanish. Each row
    reports whether the form test fails outright (``"form"``) or the two
    values of Lambda_0 contradict each other (``"lambda"``).
    """
    x = np.asarray(points, dtype=float).ravel()
    if x.size < 3:
        raise ValueError("need at least three points")
    u00 = float(_evaluate(u, np.asarray(x0, float), np.asarray(x0, float)))
    to_x0 = _evaluate(u, x, np.full_like(x, x0))
    gaps = u00 - to_x0
    lam_limit = float(gaps[-1])
    if np.any(x == x0):
        return LimitPointReport(False, "sequence contains the limit point itself", u00, lam_limit, False, [])
    if np.any(gaps <= 0):
        j = int(np.argmax(gaps <= 0)) + 1
        return LimitPointReport(
            False, f"u(x_{j}, x0) >= u(x0, x0): hypothesis u(y, x0) < u(x0, x0) fails", u00, lam_limit, False, []
        )
    diag_last = float(_evaluate(u, x[-1:], x[-1:])[0])
    if abs(diag_last - u00) > tol:
        return LimitPointReport(
            False, "u(x_j, x_j) does not approach u(x0, x0) along the supplied points", u00, lam_limit, False, []
        )
    continuity_ok = lam_limit <= tol
    scale = max(abs(u00), 1e-300)
    rows = []
    for n0 in range(1, min(n0_max, x.size - 2) + 1):
        w = x[n0 - 1 : n0 - 1 + form_window]
        vals = _evaluate(u, w[:, None], w[None, :])
        off = vals[~np.eye(w.size, dtype=bool)]
        spread = float(off.max() - off.min())
        holds = spread <= tol * scale
        lam_gap = float(gaps[n0 - 1])
        if not holds:
            failure = "form"
        elif lam_gap > tol:
            failure = "lambda"
        else:
            failure = None
        rows.append(LimitPointRow(n0, holds, spread, lam_gap, failure))
    return LimitPointReport(True, None, u00, lam_limit, continuity_ok, rows)
