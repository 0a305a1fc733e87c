"""Kernel families: Toeplitz, min, diagonal-plus-constant, chain potentials.

Perturbations attach a positive vector ``f`` to the column index, so the
composed kernel is ``base[j, k] + f[k]``.
"""

from __future__ import annotations

import functools

import re
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import mpmath
import numpy as np

from .matrix import Kernel, KernelLike, as_array, as_kernel

__all__ = [
    "SymmetricPotential",
    "PerturbedKernel",
    "PotentialReport",
    "PotentialValidationError",
    "MonotoneFunction",
    "exp_toeplitz",
    "min_kernel",
    "diag_plus_constant",
    "random_potential",
    "potential_from_generator",
    "validate_potential",
    "perturb",
    "monotone_function",
    "KernelFamily",
    "family_from_matrix",
    "exp_toeplitz_family",
    "min_family",
    "dpc_tail_family",
    "from_descriptor",
]


class PotentialValidationError(ValueError):
    def __init__(self, failed: Sequence[str]):
        super().__init__("potential validation failed: " + ", ".join(failed))
        self.failed = tuple(failed)


def _increasing(points, positive=False) -> np.ndarray:
    p = np.asarray(points, dtype=float).ravel()
    if p.size == 0:
        raise ValueError("need at least one point")
    if p.size > 1 and not np.all(np.diff(p) > 0):
        raise ValueError("points must be strictly increasing")
    if positive and not np.all(p > 0):
        raise ValueError("points must be strictly positive")
    return p


def exp_toeplitz(points: Sequence[float], lam: float) -> Kernel:
    """K[j, k] = exp(-lam |x_j - x_k|)."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    p = _increasing(points)
    return Kernel(np.exp(-lam * np.abs(p[:, None] - p[None, :])), p)


def min_kernel(points: Sequence[float]) -> Kernel:
    """K[j, k] = min(x_j, x_k) on strictly positive increasing points."""
    p = _increasing(points, positive=True)
    return Kernel(np.minimum(p[:, None], p[None, :]), p)


def diag_plus_constant(lam: Sequence[float], d: float) -> Kernel:
    """diag(lam) + d * ones."""
    lv = np.asarray(lam, dtype=float).ravel()
    if np.any(lv < 0) or d < 0:
        raise ValueError("lam and d must be nonnegative")
    if np.any(lv + d <= 0):
        raise ValueError("lam_j + d must be positive for every j")
    return Kernel(np.diag(lv) + d)


# -- potentials -------------------------------------------------------------


@dataclass(frozen=True)
class PotentialReport:
    symmetric: bool
    positive: bool
    dominated: bool
    inverse_m_matrix: bool
    row_sums_ok: bool
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.symmetric and self.positive and self.dominated and self.inverse_m_matrix and self.row_sums_ok

    @property
    def failures(self) -> list[str]:
        names = ["symmetric", "positive", "dominated", "inverse_m_matrix", "row_sums_ok"]
        return [k for k in names if not getattr(self, k)]


def validate_potential(U: KernelLike, rtol: float = 1e-12) -> PotentialReport:
    """Check that U is the potential of a transient symmetric finite chain.

    The checks are symmetry, nonnegative entries with a positive diagonal,
    ``U[j,k] <= min(U[j,j], U[k,k])``, and that ``U^{-1}`` is an M-matrix with
    nonnegative row sums, at least one of them strictly positive. Whether
    every entry is strictly positive (an irreducible chain) is recorded in
    ``details["strictly_positive"]``; SymmetricPotential requires it.
    """
    u = as_array(U)
    n = u.shape[0]
    scale = float(np.max(np.abs(u))) or 1.0
    asym = float(np.max(np.abs(u - u.T))) / scale
    symmetric = asym <= rtol
    positive = bool(np.all(u >= 0) and np.all(np.diag(u) > 0))
    dmin = np.minimum(np.diag(u)[:, None], np.diag(u)[None, :])
    excess = float(np.max((u - dmin) / np.where(dmin > 0, dmin, 1.0)))
    dominated = excess <= rtol * 10
    try:
        A = np.linalg.inv(u)
        ok_inv = bool(np.all(np.isfinite(A)))
    except np.linalg.LinAlgError:
        A, ok_inv = None, False
    inverse_m = row_ok = False
    details = {"asymmetry": asym, "domination_excess": excess, "strictly_positive": bool(np.all(u > 0))}
    if ok_inv:
        ascale = float(np.max(np.abs(A)))
        atol = 1e-9 * ascale
        off = A - np.diag(np.diag(A))
        inverse_m = bool(np.all(off <= atol) and np.all(np.diag(A) > 0))
        rs = A.sum(axis=1)
        row_ok = bool(np.all(rs >= -atol * n) and np.any(rs > atol * n))
        details.update(max_offdiag_generator=float(off.max(initial=-np.inf)), min_row_sum=float(rs.min()))
    return PotentialReport(symmetric, positive, dominated, inverse_m, row_ok, details)


@dataclass(frozen=True, eq=False)
class SymmetricPotential:
    """Validated potential ``U = A^{-1}`` of a symmetric M-matrix ``A``."""

    U: Kernel
    generator: Kernel

    @property
    def n(self) -> int:
        return self.U.n

    def __array__(self, dtype=None, copy=None):
        return self.U.__array__(dtype, copy)


def potential_from_generator(A: KernelLike) -> SymmetricPotential:
    """Invert a symmetric M-matrix generator and validate the result."""
    a = as_array(A)
    u = np.linalg.inv(a)
    u = 0.5 * (u + u.T)
    report = validate_potential(u)
    if not report.ok:
        raise PotentialValidationError(report.failures)
    if not report.details["strictly_positive"]:
        raise PotentialValidationError(("strictly_positive",))
    return SymmetricPotential(Kernel(u), Kernel(a))


def _connected_pattern(n: int, rng: np.random.Generator, density: float) -> np.ndarray:
    """Symmetric boolean adjacency: a random spanning path plus extra edges."""
    adj = np.zeros((n, n), dtype=bool)
    order = rng.permutation(n)
    adj[order[:-1], order[1:]] = True
    extra = np.triu(rng.random((n, n)) < density, 1)
    adj |= extra
    adj |= adj.T
    np.fill_diagonal(adj, False)
    return adj


def random_potential(
    n: int,
    seed: int = 0,
    dominance: float = 0.1,
    density: float = 0.3,
    max_tries: int = 20,
) -> SymmetricPotential:
    """Random potential of a transient symmetric chain on n states.

    The generator has ``A[j,k] = -uniform(0,1)`` on a connected random
    pattern and ``A[j,j] = sum_k |A[j,k]| + dominance * uniform(0.5, 1.5)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not dominance > 0:
        raise ValueError("dominance must be positive")
    rng = np.random.default_rng(seed)
    last = None
    for _ in range(max_tries):
        adj = _connected_pattern(n, rng, density) if n > 1 else np.zeros((1, 1), bool)
        w = np.triu(rng.uniform(0.0, 1.0, size=(n, n)), 1)
        w = w + w.T
        off = -np.where(adj, w, 0.0)
        diag = -off.sum(axis=1) + dominance * rng.uniform(0.5, 1.5, size=n)
        A = off + np.diag(diag)
        try:
            return potential_from_generator(A)
        except PotentialValidationError as exc:
            last = exc
    raise PotentialValidationError(last.failed if last else ("unknown",))


# -- perturbation -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PerturbedKernel:
    """``base[j, k] + f[k]``; the composed matrix is derived, never stored."""

    base: Union[SymmetricPotential, Kernel]
    f: np.ndarray

    @property
    def base_kernel(self) -> Kernel:
        return self.base.U if isinstance(self.base, SymmetricPotential) else self.base

    @property
    def composed(self) -> Kernel:
        b = self.base_kernel
        return Kernel(b.entries + self.f[None, :], b.labels)

    @property
    def n(self) -> int:
        return self.base_kernel.n

    def __array__(self, dtype=None, copy=None):
        return self.composed.__array__(dtype, copy)


def perturb(base: Union[KernelLike, SymmetricPotential], f: Sequence[float]) -> PerturbedKernel:
    b = base if isinstance(base, SymmetricPotential) else as_kernel(base)
    fv = np.array(f, dtype=float).ravel()
    if fv.shape[0] != b.n:
        raise ValueError(f"f has length {fv.shape[0]}, kernel has n={b.n}")
    if not np.all(fv > 0):
        raise ValueError("f must be strictly positive")
    fv.setflags(write=False)
    return PerturbedKernel(b, fv)


# -- monotone function catalog ---------------------------------------------


@dataclass(frozen=True)
class MonotoneFunction:
    """Strictly monotone function from a fixed catalog.

    ``kind`` is one of ``affine`` (a + b t), ``power`` (q + t**beta) or
    ``saturating`` (2 - exp(-t)). Calls accept floats, numpy arrays or
    mpmath numbers; mpmath inputs are evaluated at the current working
    precision.
    """

    kind: str
    params: tuple[float, ...] = ()
    caveat: str | None = None

    def __call__(self, t):
        if isinstance(t, (mpmath.mpf, mpmath.mpc)):
            return self._mp(t)
        t = np.asarray(t, dtype=float) if not np.isscalar(t) else float(t)
        if self.kind == "affine":
            a, b = self.params
            return a + b * t
        if self.kind == "power":
            q, beta = self.params
            return q + np.power(t, beta)
        if self.kind == "saturating":
            return 2.0 - np.exp(-t)
        raise ValueError(f"unknown monotone kind {self.kind!r}")

    def _mp(self, t):
        if self.kind == "affine":
            a, b = self.params
            return mpmath.mpf(a) + mpmath.mpf(b) * t
        if self.kind == "power":
            q, beta = self.params
            return mpmath.mpf(q) + mpmath.power(t, mpmath.mpf(beta))
        if self.kind == "saturating":
            return 2 - mpmath.exp(-t)
        raise ValueError(f"unknown monotone kind {self.kind!r}")

    def describe(self) -> dict:
        d = {"kind": self.kind, "params": list(self.params)}
        if self.caveat:
            d["caveat"] = self.caveat
        return d


_Q0_CAVEAT = (
    "q is not checked against the threshold q0(beta) required for u+f to be "
    "a permanental kernel; the threshold is not available here"
)

_SATURATING_ALIASES = {
    "saturating",
    "monotone:k->2-exp(-k)",
    "monotone:t->2-exp(-t)",
    "monotone:2-exp(-t)",
}


def monotone_function(spec: Union[str, dict, MonotoneFunction]) -> MonotoneFunction:
    """Parse a catalog descriptor.

    Accepted forms::

        "monotone:k->2-exp(-k)"  or  "saturating"
        "affine:a,b"             a + b t, b != 0
        "power:q,beta"           q + t**beta, beta > 0
        {"kind": "affine", "a": .., "b": ..}
        {"kind": "power", "q": .., "beta": ..}
    """
    if isinstance(spec, MonotoneFunction):
        return spec
    if isinstance(spec, dict):
        kind = spec.get("kind")
        if kind == "affine":
            return _affine(float(spec.get("a", 0.0)), float(spec["b"]))
        if kind == "power":
            return _power(float(spec["q"]), float(spec["beta"]))
        if kind == "saturating":
            return MonotoneFunction("saturating")
        raise ValueError(f"unknown monotone kind {kind!r}")
    s = re.sub(r"\s+", "", str(spec))
    if s in _SATURATING_ALIASES:
        return MonotoneFunction("saturating")
    m = re.fullmatch(r"(affine|power):([^,]+),([^,]+)", s)
    if m:
        x, y = float(m.group(2)), float(m.group(3))
        return _affine(x, y) if m.group(1) == "affine" else _power(x, y)
    raise ValueError(f"monotone function {spec!r} is not in the catalog")


def _affine(a: float, b: float) -> MonotoneFunction:
    if b == 0:
        raise ValueError("affine slope must be nonzero")
    return MonotoneFunction("affine", (a, b))


def _power(q: float, beta: float) -> MonotoneFunction:
    if not beta > 0:
        raise ValueError("power exponent must be positive")
    return MonotoneFunction("power", (q, beta), _Q0_CAVEAT)


FunctionLike = Union[Callable[[float], float], MonotoneFunction]


# -- N-indexed families -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class KernelFamily:
    """Lazily evaluated kernel on 1-based indices j, k >= 1.

    ``entry`` returns floats. ``entry_mp``, when given, returns mpmath numbers
    at the caller's working precision, which lets scanners resolve residuals
    that cancel below double precision. ``size`` is None for N-indexed
    families and the dimension for finite matrices.
    """

    entry: Callable[[int, int], float]
    entry_mp: Callable[[int, int], object] | None = None
    size: int | None = None
    descriptor: dict = field(default_factory=dict)

    @property
    def multiprecision(self) -> bool:
        return self.entry_mp is not None

    def block(self, indices: Sequence[int]) -> np.ndarray:
        return np.array([[self.entry(j, k) for k in indices] for j in indices], dtype=float)


def family_from_matrix(K: Union[KernelLike, PerturbedKernel]) -> KernelFamily:
    a = np.asarray(K, dtype=float)
    n = a.shape[0]

    def entry(j, k):
        return float(a[j - 1, k - 1])

    return KernelFamily(entry, None, n, {"family": "matrix", "n": n})


def _mp_memo(g):
    """Cache g(k) per working precision; scans revisit the same columns often."""

    @functools.lru_cache(maxsize=1 << 16)
    def at(k, prec):
        with mpmath.workprec(prec):
            return g(k)

    return lambda k: at(k, mpmath.mp.prec)


def exp_toeplitz_family(lam: float, f: Union[str, dict, MonotoneFunction]) -> KernelFamily:
    """exp(-lam |j - k|) + f(k) on the positive integers."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    fn = monotone_function(f)

    def entry(j, k):
        return float(np.exp(-lam * abs(j - k)) + fn(float(k)))

    fk = _mp_memo(lambda k: fn(mpmath.mpf(k)))
    decay = _mp_memo(lambda r: mpmath.exp(-mpmath.mpf(lam) * r))

    def entry_mp(j, k):
        return decay(abs(j - k)) + fk(k)

    return KernelFamily(entry, entry_mp, None, {"family": "exp_toeplitz_plus_f", "lambda": lam, "f": fn.describe()})


def min_family(f: Union[str, dict, MonotoneFunction]) -> KernelFamily:
    """min(j, k) + f(k) on the positive integers."""
    fn = monotone_function(f)

    def entry(j, k):
        return float(min(j, k) + fn(float(k)))

    fk = _mp_memo(lambda k: fn(mpmath.mpf(k)))

    def entry_mp(j, k):
        return mpmath.mpf(min(j, k)) + fk(k)

    return KernelFamily(entry, entry_mp, None, {"family": "min_plus_f", "f": fn.describe()})


def dpc_tail_family(
    n0: int,
    f: Union[str, dict, MonotoneFunction],
    lam: float = 1.0,
    d: float = 0.5,
    head_rate: float = 1.0,
) -> KernelFamily:
    """Kernel whose base is diag(lam) + d on indices >= n0, plus f(k).

    Pairs with an index below n0 use ``(lam + d) exp(-head_rate |j - k|)``,
    so the head is not of diagonal-plus-constant form.
    """
    if n0 < 1 or lam < 0 or d < 0 or lam + d <= 0:
        raise ValueError("need n0 >= 1, lam, d >= 0 and lam + d > 0")
    fn = monotone_function(f)
    top = lam + d

    def base(j, k, exp):
        if min(j, k) < n0:
            return top * exp(-head_rate * abs(j - k))
        return (lam if j == k else 0.0) + d

    def entry(j, k):
        return float(base(j, k, np.exp) + fn(float(k)))

    fk = _mp_memo(lambda k: fn(mpmath.mpf(k)))
    head = _mp_memo(lambda r: mpmath.mpf(top) * mpmath.exp(-mpmath.mpf(head_rate) * r))

    def entry_mp(j, k):
        if min(j, k) < n0:
            return head(abs(j - k)) + fk(k)
        return mpmath.mpf((lam if j == k else 0.0) + d) + fk(k)

    desc = {"family": "dpc_tail_plus_f", "n0": n0, "lam": lam, "d": d, "head_rate": head_rate, "f": fn.describe()}
    return KernelFamily(entry, entry_mp, None, desc)


def _f_vector(spec, points: np.ndarray) -> np.ndarray:
    if isinstance(spec, (list, tuple)):
        return np.asarray(spec, dtype=float)
    return np.asarray(monotone_function(spec)(points), dtype=float)


def from_descriptor(desc: dict) -> Union[Kernel, PerturbedKernel, KernelFamily]:
    """Build a kernel or family from a JSON descriptor.

    Finite families (``exp_toeplitz``, ``min_kernel``, ``diag_plus_constant``)
    accept an optional ``"f"`` (list or catalog entry) and then return a
    PerturbedKernel. N-indexed families are ``exp_toeplitz_plus_f``,
    ``min_plus_f`` and ``dpc_tail_plus_f``.
    """
    fam = desc.get("family")
    if fam == "exp_toeplitz":
        K = exp_toeplitz(desc["points"], float(desc["lambda"]))
    elif fam == "min_kernel":
        K = min_kernel(desc["points"])
    elif fam == "diag_plus_constant":
        K = diag_plus_constant(desc["lam"], float(desc["d"]))
    elif fam == "exp_toeplitz_plus_f":
        return exp_toeplitz_family(float(desc["lambda"]), desc["f"])
    elif fam == "min_plus_f":
        return min_family(desc["f"])
    elif fam == "dpc_tail_plus_f":
        return dpc_tail_family(
            int(desc["n0"]),
            desc["f"],
            float(desc.get("lam", 1.0)),
            float(desc.get("d", 0.5)),
            float(desc.get("head_rate", 1.0)),
        )
    else:
        raise ValueError(f"unknown kernel family {fam!r}")
    if "f" in desc:
        pts = K.labels if K.labels is not None else np.arange(1, K.n + 1, dtype=float)
        return perturb(K, _f_vector(desc["f"], pts))
    return K
