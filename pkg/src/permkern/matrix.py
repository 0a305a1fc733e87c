"""Dense matrix substrate: kernels, determinants, solves and serialization.

Indices on the public surface are 1-based; arrays are stored 0-based.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

__all__ = [
    "Kernel",
    "DiagonalScaling",
    "IndexSet",
    "KernelLike",
    "SingularMatrixError",
    "LaplaceDomainError",
    "as_kernel",
    "as_array",
    "det",
    "principal_submatrix",
    "solve",
    "condition_estimate",
    "lt_determinant",
    "conjugate",
    "kernel_to_csv",
    "kernel_from_csv",
    "kernel_to_json",
    "kernel_from_json",
    "kernel_to_dict",
    "kernel_from_dict",
]

COND_LIMIT = 1e12
SOLVE_RTOL = 1e-10


class SingularMatrixError(ValueError):
    """Raised when a matrix is singular or too ill-conditioned to solve."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class LaplaceDomainError(ValueError):
    """Raised when |I + KS| is not strictly positive."""


@dataclass(frozen=True, eq=False)
class Kernel:
    """A dense real n x n matrix with optional index points.

    ``entries`` is stored as a read-only float array. ``labels``, when
    present, are the strictly increasing points the kernel was evaluated at.
    """

    entries: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"kernel must be a nonempty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("kernel entries must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        if self.labels is not None:
            lab = np.array(self.labels, dtype=float).ravel()
            if lab.shape[0] != a.shape[0]:
                raise ValueError("labels must have one point per row")
            if lab.shape[0] > 1 and not np.all(np.diff(lab) > 0):
                raise ValueError("labels must be strictly increasing")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries.copy() if copy else self.entries
        return self.entries.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Kernel):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None
            and other.labels is not None
            and np.array_equal(self.labels, other.labels)
        )
        return np.array_equal(self.entries, other.entries) and same_labels

    def __repr__(self):
        return f"Kernel(n={self.n}, entries={self.entries.tolist()!r})"

    def is_symmetric(self, tol: float = 0.0) -> bool:
        a = self.entries
        scale = max(float(np.max(np.abs(a))), 1e-300)
        return bool(np.max(np.abs(a - a.T)) <= tol * scale)


KernelLike = Union[Kernel, np.ndarray, Sequence[Sequence[float]]]


@dataclass(frozen=True)
class DiagonalScaling:
    """Strictly positive diagonal matrix, stored as its diagonal."""

    diag: np.ndarray = field()

    def __post_init__(self):
        d = np.array(self.diag, dtype=float).ravel()
        if d.size == 0 or not np.all(np.isfinite(d)) or not np.all(d > 0):
            raise ValueError("diagonal scaling entries must be finite and > 0")
        d.setflags(write=False)
        object.__setattr__(self, "diag", d)

    @property
    def n(self) -> int:
        return self.diag.shape[0]

    def apply(self, K: KernelLike) -> Kernel:
        """Return Lambda K Lambda^{-1}."""
        return conjugate(K, self.diag)


@dataclass(frozen=True)
class IndexSet:
    """Strictly increasing 1-based positions."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise ValueError("index set must be nonempty")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"index set must be strictly increasing, got {idx}")
        if idx[0] < 1:
            raise IndexError(f"indices are 1-based, got {idx[0]}")
        object.__setattr__(self, "indices", idx)

    def zero_based(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=int) - 1

    def __len__(self):
        return len(self.indices)


def as_kernel(K: KernelLike) -> Kernel:
    return K if isinstance(K, Kernel) else Kernel(np.asarray(K, dtype=float))


def as_array(K: KernelLike) -> np.ndarray:
    if isinstance(K, Kernel):
        return K.entries
    a = np.asarray(K, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return a


def det(M: KernelLike) -> float:
    """Signed determinant via LU with partial pivoting."""
    a = as_array(M)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(a, check_finite=True)
    swaps = int(np.count_nonzero(piv != np.arange(a.shape[0])))
    d = float(np.prod(np.diag(lu)))
    return (-d if swaps % 2 else d) + 0.0


def principal_submatrix(M: KernelLike, indices: IndexSet | Iterable[int]) -> Kernel:
    """Return the principal submatrix on the given 1-based indices."""
    K = as_kernel(M)
    I = indices if isinstance(indices, IndexSet) else IndexSet(tuple(indices))
    if I.indices[-1] > K.n:
        raise IndexError(f"index {I.indices[-1]} out of range for n={K.n}")
    z = I.zero_based()
    labels = None if K.labels is None else K.labels[z]
    return Kernel(K.entries[np.ix_(z, z)], labels)


def condition_estimate(M: KernelLike) -> float:
    """Infinity-norm condition number ||A|| ||A^{-1}||; inf if singular."""
    a = as_array(M)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(a)
    if np.any(np.diag(lu) == 0):
        return math.inf
    inv = lu_solve((lu, piv), np.eye(a.shape[0]))
    return float(np.linalg.norm(a, np.inf) * np.linalg.norm(inv, np.inf))


def solve(M: KernelLike, b: Sequence[float]) -> np.ndarray:
    """Solve Mx = b.

    Raises
    ------
    SingularMatrixError
        If the condition estimate exceeds 1e12 or the residual check fails.
    """
    a = as_array(M)
    rhs = np.asarray(b, dtype=float)
    if rhs.shape[0] != a.shape[0]:
        raise ValueError("right-hand side length does not match matrix")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(a)
    if np.any(np.diag(lu) == 0):
        raise SingularMatrixError("matrix is singular", math.inf)
    inv = lu_solve((lu, piv), np.eye(a.shape[0]))
    cond = float(np.linalg.norm(a, np.inf) * np.linalg.norm(inv, np.inf))
    if not math.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMatrixError("matrix is ill-conditioned", cond)
    x = lu_solve((lu, piv), rhs)
    resid = float(np.max(np.abs(a @ x - rhs))) if rhs.size else 0.0
    bound = SOLVE_RTOL * (1.0 + float(np.max(np.abs(rhs), initial=0.0)))
    if resid > bound:
        # one step of iterative refinement before giving up
        x = x + lu_solve((lu, piv), rhs - a @ x)
        resid = float(np.max(np.abs(a @ x - rhs)))
        if resid > bound:
            raise SingularMatrixError(f"residual {resid:.3e} exceeds {bound:.3e}", cond)
    return x


def lt_determinant(K: KernelLike, s: Sequence[float], alpha: float) -> float:
    """Exact Laplace transform value |I + K diag(s)|^{-alpha}."""
    a = as_array(K)
    sv = np.asarray(s, dtype=float).ravel()
    if sv.shape[0] != a.shape[0]:
        raise ValueError(f"s has length {sv.shape[0]}, kernel has n={a.shape[0]}")
    if np.any(sv < 0):
        raise ValueError("s must be nonnegative")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    d = det(np.eye(a.shape[0]) + a * sv[None, :])
    if not d > 0:
        raise LaplaceDomainError(f"|I+KS| = {d!r} is not positive")
    return float(d ** (-float(alpha)))


def conjugate(K: KernelLike, diag: Sequence[float] | DiagonalScaling) -> Kernel:
    """Return Lambda K Lambda^{-1} for a positive diagonal Lambda."""
    k = as_kernel(K)
    lam = diag.diag if isinstance(diag, DiagonalScaling) else np.asarray(diag, dtype=float)
    return Kernel(lam[:, None] * k.entries / lam[None, :], k.labels)


# -- serialization ---------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def kernel_to_csv(K: KernelLike) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in as_array(K):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def kernel_from_csv(text: str) -> Kernel:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    return Kernel(np.array([[float(c) for c in r] for r in rows], dtype=float))


def kernel_to_dict(K: KernelLike) -> dict:
    k = as_kernel(K)
    return {
        "n": k.n,
        "entries": k.entries.tolist(),
        "labels": None if k.labels is None else k.labels.tolist(),
    }


def kernel_from_dict(d: dict) -> Kernel:
    k = Kernel(np.array(d["entries"], dtype=float), d.get("labels"))
    if "n" in d and int(d["n"]) != k.n:
        raise ValueError(f"declared n={d['n']} does not match entries ({k.n})")
    return k


def kernel_to_json(K: KernelLike) -> str:
    return json.dumps(kernel_to_dict(K))


def kernel_from_json(text: str) -> Kernel:
    return kernel_from_dict(json.loads(text))
