"""Decide whether a kernel is equivalent to a symmetric matrix.

For a strictly positive kernel the two oriented 3-cycle products must
agree on every triple; when they do, a diagonal conjugation maps the kernel
onto the symmetric matrix with entries ``sqrt(K[j,k] K[k,j])``. A randomized
evaluation of ``|I+KS|`` against ``|I+QS|`` provides an independent check.
"""

from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .matrix import DiagonalScaling, Kernel, KernelLike, as_array, as_kernel, det

__all__ = [
    "Symmetrizable",
    "NotSymmetrizable",
    "Indeterminate",
    "Verdict",
    "CycleWitness",
    "CycleCheck",
    "Violation",
    "NecessaryReport",
    "CycleConditionError",
    "cycle_products",
    "cycle_violation",
    "check_necessary",
    "cycle_condition",
    "find_scaling",
    "qtilde",
    "pit_equivalence",
    "symmetrizable",
    "verdict_to_dict",
]

DEFAULT_TOL = 1e-9
PIT_TOL = 1e-8
PIT_TRIALS = 64
INDETERMINATE_BAND = 10.0


@dataclass(frozen=True)
class CycleWitness:
    triple: tuple[int, int, int]
    forward: float
    reverse: float

    @property
    def violation(self) -> float:
        return cycle_violation(self.forward, self.reverse)


@dataclass(frozen=True)
class Symmetrizable:
    scaling: DiagonalScaling
    qtilde: Kernel
    pit_confirmed: bool = True
    tag: str = field(default="symmetrizable", init=False)


@dataclass(frozen=True)
class NotSymmetrizable:
    witness: CycleWitness
    tag: str = field(default="not_symmetrizable", init=False)


@dataclass(frozen=True)
class Indeterminate:
    reason: str
    witness: Optional[CycleWitness] = None
    tag: str = field(default="indeterminate", init=False)


Verdict = Union[Symmetrizable, NotSymmetrizable, Indeterminate]


class CycleConditionError(ValueError):
    def __init__(self, witness: CycleWitness):
        super().__init__(
            f"cycle condition fails on {witness.triple}: "
            f"forward={witness.forward!r}, reverse={witness.reverse!r}"
        )
        self.witness = witness


def cycle_products(K: KernelLike, i1: int, i2: int, i3: int) -> tuple[float, float]:
    """Forward and reverse 3-cycle products on 1-based indices."""
    a = as_array(K)
    p, q, r = i1 - 1, i2 - 1, i3 - 1
    forward = a[p, q] * a[q, r] * a[r, p]
    reverse = a[p, r] * a[q, p] * a[r, q]
    return float(forward), float(reverse)


def cycle_violation(forward: float, reverse: float) -> float:
    """Scale-free mismatch |fwd - rev| / max(|fwd|, |rev|)."""
    m = max(abs(forward), abs(reverse))
    return 0.0 if m == 0 else abs(forward - reverse) / m


def _anchored_violations(a: np.ndarray):
    """Violation for every triangle (1, j, k), j < k, as flat arrays."""
    n = a.shape[0]
    j, k = np.triu_indices(n, 1)
    keep = j > 0
    j, k = j[keep], k[keep]
    fwd = a[0, j] * a[j, k] * a[k, 0]
    rev = a[0, k] * a[j, 0] * a[k, j]
    m = np.maximum(np.abs(fwd), np.abs(rev))
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.where(m > 0, np.abs(fwd - rev) / np.where(m > 0, m, 1.0), 0.0)
    return j, k, fwd, rev, v


def _all_violations(a: np.ndarray):
    trip = np.array(list(itertools.combinations(range(a.shape[0]), 3)), dtype=int)
    if trip.size == 0:
        e = np.zeros(0)
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0, int), e, e, e
    i, j, k = trip.T
    fwd = a[i, j] * a[j, k] * a[k, i]
    rev = a[i, k] * a[j, i] * a[k, j]
    m = np.maximum(np.abs(fwd), np.abs(rev))
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.where(m > 0, np.abs(fwd - rev) / np.where(m > 0, m, 1.0), 0.0)
    return i, j, k, fwd, rev, v


@dataclass(frozen=True)
class CycleCheck:
    """Outcome of the cycle scan.

    ``witness`` is the first violating triple in scan order, ``worst`` the
    triple with the largest normalized violation.
    """

    passed: bool
    witness: Optional[CycleWitness]
    worst: Optional[CycleWitness]
    checked: int
    indeterminate: Optional[str] = None

    @property
    def max_violation(self) -> float:
        return 0.0 if self.worst is None else self.worst.violation


def cycle_condition(K: KernelLike, tol: float = DEFAULT_TOL, full: bool = False) -> CycleCheck:
    """Scan 3-cycles of a strictly positive kernel.

    By default only triangles through index 1 are scanned; for positive
    matrices these generate every cycle constraint. ``full=True`` scans all
    C(n, 3) triples.
    """
    a = as_array(K)
    if not np.all(a > 0):
        bad = tuple(int(x) + 1 for x in np.argwhere(~(a > 0))[0])
        return CycleCheck(False, None, None, 0, indeterminate=f"nonpositive entry at {bad}")
    if full:
        i, j, k, fwd, rev, v = _all_violations(a)
    else:
        j, k, fwd, rev, v = _anchored_violations(a)
        i = np.zeros_like(j)
    if v.size == 0:
        return CycleCheck(True, None, None, 0)

    def wit(t):
        return CycleWitness((int(i[t]) + 1, int(j[t]) + 1, int(k[t]) + 1), float(fwd[t]), float(rev[t]))

    worst = wit(int(np.argmax(v)))
    bad = np.flatnonzero(v > tol)
    if bad.size == 0:
        return CycleCheck(True, None, worst, int(v.size))
    return CycleCheck(False, wit(int(bad[0])), worst, int(v.size))


def qtilde(K: KernelLike) -> Kernel:
    """Symmetric matrix with entries sqrt(K[j,k] K[k,j])."""
    a = as_array(K)
    prod = a * a.T
    if np.any(prod < 0):
        raise ValueError("K[j,k] K[k,j] < 0 for some pair; no real symmetric witness")
    q = np.sqrt(prod)
    return Kernel(0.5 * (q + q.T), as_kernel(K).labels)


def find_scaling(K: KernelLike, tol: float = DEFAULT_TOL) -> DiagonalScaling:
    """Diagonal Lambda with Lambda K Lambda^{-1} symmetric, normalized to Lambda_1 = 1.

    The log-ratios ``0.5 log(K[k,j] / K[j,k])`` are fitted in the
    least-squares sense over all pairs, which equals the chain from index 1
    whenever the cycle condition holds exactly.
    """
    check = cycle_condition(K, tol)
    if check.indeterminate:
        raise ValueError(check.indeterminate)
    if not check.passed:
        raise CycleConditionError(check.witness)
    a = as_array(K)
    g = 0.5 * np.log(a.T / a)
    logs = g.mean(axis=1)
    logs = logs - logs[0]
    return DiagonalScaling(np.exp(logs))


def _derive_seed(K: np.ndarray, seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(np.ascontiguousarray(K).tobytes())])


def pit_equivalence(
    K: KernelLike,
    Q: KernelLike,
    trials: int = PIT_TRIALS,
    seed: int = 0,
    tol: float = PIT_TOL,
) -> bool:
    """Randomized identity test of |I+KS| = |I+QS| over positive diagonal S.

    S has entries drawn uniformly from (0, 2]. Both sides are polynomials in
    the diagonal of S, so agreement at random points is a sound test.
    """
    a, q = as_array(K), as_array(Q)
    if a.shape != q.shape:
        raise ValueError("K and Q must have the same dimension")
    n = a.shape[0]
    rng = np.random.default_rng(seed)
    s = 2.0 - rng.uniform(0.0, 2.0, size=(int(trials), n))  # (0, 2]
    eye = np.eye(n)
    dk = np.linalg.det(eye + a[None, :, :] * s[:, None, :])
    dq = np.linalg.det(eye + q[None, :, :] * s[:, None, :])
    return bool(np.all(np.abs(dk - dq) <= tol * (1.0 + np.abs(dk))))


# -- necessary conditions -----------------------------------------------------


@dataclass(frozen=True)
class Violation:
    condition: str
    indices: tuple[int, ...]
    magnitude: float


@dataclass(frozen=True)
class NecessaryReport:
    minors_ok: bool
    diagonal_ok: bool
    offdiag_product_ok: bool
    cycles_ok: bool
    worst_violation: Optional[Violation]
    per_condition: dict = field(default_factory=dict)

    @property
    def all_ok(self) -> bool:
        return self.minors_ok and self.diagonal_ok and self.offdiag_product_ok and self.cycles_ok


def _hadamard(a: np.ndarray) -> float:
    return float(np.prod(np.linalg.norm(a, axis=1)))


def _rel(x: float, y: float, scale: float = 0.0) -> float:
    m = max(abs(x), abs(y), scale)
    return 0.0 if m == 0 else abs(x - y) / m


def check_necessary(K: KernelLike, Q: KernelLike, tol: float = DEFAULT_TOL) -> NecessaryReport:
    """Check the necessary conditions a symmetric witness Q must satisfy.

    Principal minors of every index set of size <= 3 and the full set are
    compared (with the Hadamard bound as scale floor, so cancelling minors do
    not blow up the relative error); then diagonals, the off-diagonal moduli
    ``|Q[j,k]| = sqrt(K[j,k] K[k,j])`` and all 3-cycle identities.
    """
    a, q = as_array(K), as_array(Q)
    if a.shape != q.shape:
        raise ValueError("K and Q must have the same dimension")
    if not as_kernel(q).is_symmetric(1e-12):
        raise ValueError("Q must be symmetric")
    n = a.shape[0]
    worst: dict[str, Violation] = {}

    def note(cond, idx, mag):
        if cond not in worst or mag > worst[cond].magnitude:
            worst[cond] = Violation(cond, tuple(int(i) for i in idx), float(mag))

    sets = [c for r in range(1, min(3, n) + 1) for c in itertools.combinations(range(n), r)]
    if n > 3:
        sets.append(tuple(range(n)))
    for c in sets:
        z = np.asarray(c)
        ka, qa = a[np.ix_(z, z)], q[np.ix_(z, z)]
        scale = max(_hadamard(ka), _hadamard(qa)) if len(c) > 1 else 0.0
        note("minors", [i + 1 for i in c], _rel(det(ka), det(qa), scale))

    for j in range(n):
        note("diagonal", (j + 1,), _rel(a[j, j], q[j, j]))

    for j, k in itertools.combinations(range(n), 2):
        prod = a[j, k] * a[k, j]
        if prod < 0:
            note("offdiag_product", (j + 1, k + 1), np.inf)
        else:
            note("offdiag_product", (j + 1, k + 1), _rel(abs(q[j, k]), np.sqrt(prod)))

    if n >= 3:
        i, j, k, fwd, rev, v = _all_violations(a)
        t = int(np.argmax(v))
        note("cycles", (i[t] + 1, j[t] + 1, k[t] + 1), v[t])

    def ok(cond):
        return cond not in worst or worst[cond].magnitude <= tol

    overall = max(worst.values(), key=lambda w: w.magnitude) if worst else None
    return NecessaryReport(
        minors_ok=ok("minors"),
        diagonal_ok=ok("diagonal"),
        offdiag_product_ok=ok("offdiag_product"),
        cycles_ok=ok("cycles"),
        worst_violation=overall,
        per_condition=worst,
    )


# -- composite decision -----------------------------------------------------


def symmetrizable(K: KernelLike, tol: float = DEFAULT_TOL, seed: int = 0) -> Verdict:
    """Decide symmetrizability of a strictly positive kernel.

    Violations above ``10 * tol`` are rejected with the worst triangle as
    witness; violations in ``(tol, 10 * tol]`` are refused as Indeterminate.
    Accepted kernels carry the scaling Lambda and the symmetric witness,
    and are confirmed by 64 randomized determinant evaluations.
    """
    kern = as_kernel(K)
    a = kern.entries
    check = cycle_condition(a, tol)
    if check.indeterminate:
        return Indeterminate(check.indeterminate)
    worst = check.worst
    if worst is not None and worst.violation > INDETERMINATE_BAND * tol:
        return NotSymmetrizable(worst)
    if not check.passed:
        return Indeterminate(
            f"cycle violation {worst.violation:.3e} within the {INDETERMINATE_BAND:g}x tolerance band",
            worst,
        )
    scaling = find_scaling(a, tol)
    q = qtilde(kern)
    conj = scaling.diag[:, None] * a / scaling.diag[None, :]
    scale = float(np.max(np.abs(a)))
    if np.max(np.abs(conj - q.entries)) > max(tol, 1e-12) * 10 * scale:
        return Indeterminate("conjugated kernel does not match the symmetric witness", worst)
    ss = _derive_seed(a, seed)
    confirmed = pit_equivalence(a, q.entries, PIT_TRIALS, ss.generate_state(1)[0], PIT_TOL)
    if not confirmed:
        return Indeterminate("randomized determinant test did not confirm the symmetric witness", worst)
    return Symmetrizable(scaling, q, True)


def verdict_to_dict(v: Verdict) -> dict:
    out: dict = {"verdict": v.tag}
    if isinstance(v, Symmetrizable):
        out["scaling"] = v.scaling.diag.tolist()
        out["qtilde"] = v.qtilde.entries.tolist()
        out["pit_confirmed"] = v.pit_confirmed
    w = getattr(v, "witness", None)
    if w is not None:
        out["witness"] = {"triple": list(w.triple), "forward": w.forward, "reverse": w.reverse}
    if isinstance(v, Indeterminate):
        out["reason"] = v.reason
    return out
