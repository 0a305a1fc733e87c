"""Sampling alpha-permanental vectors for symmetric PSD kernels.

For symmetric positive semidefinite K, Y = G^2/2 with G ~ N(0, K) has
Laplace transform |I + KS|^{-1/2}. Sums of independent copies give every
half-integer alpha. Other rational alpha only get exact transform values.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from .matrix import Kernel, KernelLike, as_array, as_kernel, lt_determinant

__all__ = [
    "PermanentalSpec",
    "LTReport",
    "NotSamplableError",
    "parse_alpha",
    "half_factor",
    "sample_half",
    "sample_rational",
    "sample_alpha",
    "lt_report",
    "samples_to_csv",
]

SYM_TOL = 1e-10
PSD_TOL = 1e-10
CLIP_LIMIT = 1e-8
CHUNK = 1 << 16


class NotSamplableError(ValueError):
    """Kernel or alpha outside the Gaussian-square regime."""


def parse_alpha(alpha: Union[str, int, float, Fraction]) -> Fraction:
    """Parse 'm/n', an int or a Fraction into a positive Fraction."""
    if isinstance(alpha, float):
        a = Fraction(alpha).limit_denominator(10**6)
    else:
        a = Fraction(alpha)
    if a <= 0:
        raise ValueError(f"alpha must be positive, got {a}")
    return a


@dataclass(frozen=True)
class PermanentalSpec:
    kernel: Kernel
    alpha: Fraction

    def __post_init__(self):
        object.__setattr__(self, "kernel", as_kernel(self.kernel))
        object.__setattr__(self, "alpha", parse_alpha(self.alpha))

    @property
    def copies(self) -> Optional[int]:
        """Number of Gaussian-square vectors summed, or None if 2 alpha is not an integer."""
        twice = 2 * self.alpha
        return int(twice) if twice.denominator == 1 else None

    @property
    def samplable(self) -> bool:
        if self.copies is None:
            return False
        try:
            half_factor(self.kernel)
        except NotSamplableError:
            return False
        return True


def half_factor(K: KernelLike) -> tuple[np.ndarray, float]:
    """Factor L with L L^T = K after clipping negative eigenvalues at 0.

    Returns
    -------
    L : ndarray
    clipped : float
        Sum of the clipped eigenvalue magnitudes.
    """
    k = as_array(K)
    scale = float(np.max(np.abs(k))) or 1.0
    if np.max(np.abs(k - k.T)) > SYM_TOL * scale:
        raise NotSamplableError("kernel is not symmetric")
    w, v = np.linalg.eigh(0.5 * (k + k.T))
    if w.size and w.min() < -PSD_TOL * scale:
        raise NotSamplableError(f"kernel has eigenvalue {w.min():.3e} < 0")
    clipped = float(-w[w < 0].sum())
    tr = float(np.trace(k))
    if clipped > CLIP_LIMIT * max(tr, 0.0) and clipped > 0:
        raise NotSamplableError(f"eigenvalue clip {clipped:.3e} exceeds {CLIP_LIMIT}*trace")
    return v * np.sqrt(np.clip(w, 0.0, None))[None, :], clipped


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("PERMKERN_THREADS", "1")))
    except ValueError:
        return 1


def _draw(L: np.ndarray, copies: int, count: int, seed: int) -> np.ndarray:
    n = L.shape[0]
    out = np.empty((count, n))
    starts = range(0, count, CHUNK)

    def fill(i_start):
        i, start = i_start
        stop = min(start + CHUNK, count)
        # substream depends only on (seed, chunk index), not on worker count
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        acc = np.zeros((stop - start, n))
        for _ in range(copies):
            g = rng.standard_normal((stop - start, n)) @ L.T
            acc += 0.5 * g * g
        out[start:stop] = acc

    jobs = list(enumerate(starts))
    nw = min(_workers(), len(jobs))
    if nw > 1:
        with ThreadPoolExecutor(nw) as ex:
            list(ex.map(fill, jobs))
    else:
        for j in jobs:
            fill(j)
    return out


def sample_half(K: KernelLike, count: int, seed: int = 0) -> np.ndarray:
    """count x n grid of independent copies of G^2/2 with G ~ N(0, K)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    L, _ = half_factor(K)
    return _draw(L, 1, int(count), int(seed))


def sample_rational(K: KernelLike, m: int, n2: int, count: int, seed: int = 0) -> np.ndarray:
    """Samples with Laplace transform |I + KS|^{-m/n2}.

    Realized as a sum of 2m/n2 independent Gaussian-square vectors, so
    2m/n2 must be an integer.
    """
    if m < 1 or n2 < 1:
        raise ValueError("m and n2 must be >= 1")
    if count < 1:
        raise ValueError("count must be >= 1")
    twice = Fraction(2 * m, n2)
    if twice.denominator != 1:
        raise NotSamplableError(f"alpha = {Fraction(m, n2)} is not a half-integer; only exact transforms are available")
    L, _ = half_factor(K)
    return _draw(L, int(twice), int(count), int(seed))


def sample_alpha(K: KernelLike, alpha, count: int, seed: int = 0) -> np.ndarray:
    """Samples for a half-integer alpha given as 'm/n', int or Fraction."""
    a = parse_alpha(alpha)
    return sample_rational(K, a.numerator, a.denominator, count, seed)


@dataclass(frozen=True)
class LTReport:
    alpha: Fraction
    s_points: list
    exact: list
    empirical: Optional[list]
    std_err: Optional[list]
    flags: Optional[list]
    marginal_mean: Optional[list]
    marginal_std_err: Optional[list]
    sample_count: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "alpha": f"{self.alpha.numerator}/{self.alpha.denominator}",
            "s_points": self.s_points,
            "exact": self.exact,
            "empirical": self.empirical,
            "std_err": self.std_err,
            "flags": self.flags,
            "marginal_mean": self.marginal_mean,
            "marginal_std_err": self.marginal_std_err,
            "sample_count": self.sample_count,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def lt_report(
    spec: PermanentalSpec,
    s_points: Sequence[Sequence[float]],
    count: int = 100_000,
    seed: int = 0,
    exact_only: bool = False,
    samples: Optional[np.ndarray] = None,
) -> LTReport:
    """Exact and empirical Laplace transforms at each probe point.

    Points where the empirical mean misses the exact value by more than
    four standard errors are flagged. ``samples`` reuses an existing grid.
    """
    pts = np.atleast_2d(np.asarray(s_points, dtype=float))
    n = spec.kernel.n
    if pts.shape[1] != n:
        raise ValueError(f"probe points must have length {n}")
    if np.any(pts < 0):
        raise ValueError("probe points must be nonnegative")
    alpha = float(spec.alpha)
    exact = [lt_determinant(spec.kernel, s, alpha) for s in pts]
    if exact_only:
        return LTReport(spec.alpha, pts.tolist(), exact, None, None, None, None, None, 0, int(seed))
    if samples is None:
        if spec.copies is None:
            raise NotSamplableError(f"alpha = {spec.alpha} is not a half-integer; use exact_only")
        samples = _draw(half_factor(spec.kernel)[0], spec.copies, int(count), int(seed))
    Y = np.asarray(samples, dtype=float)
    N = Y.shape[0]
    E = np.exp(-(Y @ pts.T))
    emp = E.mean(axis=0)
    se = E.std(axis=0, ddof=1) / np.sqrt(N) if N > 1 else np.zeros(len(pts))
    flags = (np.abs(emp - np.asarray(exact)) > 4.0 * se).tolist()
    mm = Y.mean(axis=0)
    mse = Y.std(axis=0, ddof=1) / np.sqrt(N) if N > 1 else np.zeros(n)
    return LTReport(
        spec.alpha, pts.tolist(), exact, emp.tolist(), se.tolist(), flags, mm.tolist(), mse.tolist(), int(N), int(seed)
    )


def samples_to_csv(Y: np.ndarray) -> str:
    """One row per sample, 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in np.atleast_2d(Y):
        w.writerow([format(float(v), ".17g") for v in row])
    return buf.getvalue()
