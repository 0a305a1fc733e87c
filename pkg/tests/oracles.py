"""Independent reference computations used by the tests.

Nothing here imports permkern. The oracles are deliberately slow and
direct: permutation expansion, exact rationals, symbolic algebra.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import sympy as sp


def perm_sign(p) -> int:
    sign, seen = 1, [False] * len(p)
    for i in range(len(p)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = p[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def perm_det(M) -> float:
    """Leibniz expansion; fine up to n = 6."""
    a = np.asarray(M, dtype=float)
    n = a.shape[0]
    return float(sum(perm_sign(p) * math.prod(a[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n))))


def exact_det(M) -> Fraction:
    """Leibniz expansion over exact rationals of the float entries."""
    a = [[Fraction(float(x)) for x in row] for row in np.asarray(M, dtype=float)]
    n = len(a)
    total = Fraction(0)
    for p in itertools.permutations(range(n)):
        term = Fraction(perm_sign(p))
        for i in range(n):
            term *= a[i][p[i]]
        total += term
    return total


def inv3(M) -> np.ndarray:
    """Adjugate formula for a 3x3 inverse."""
    a = np.asarray(M, dtype=float)
    cof = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            minor = np.delete(np.delete(a, i, 0), j, 1)
            cof[i, j] = (-1) ** (i + j) * (minor[0, 0] * minor[1, 1] - minor[0, 1] * minor[1, 0])
    return cof.T / perm_det(a)


def cycle_residual(K, i, j, k) -> float:
    """K_ij K_jk K_ki - K_ik K_kj K_ji with 1-based indices, exact then rounded."""
    a = np.asarray(K, dtype=float)
    e = lambda p, q: Fraction(float(a[p - 1, q - 1]))
    return float(e(i, j) * e(j, k) * e(k, i) - e(i, k) * e(k, j) * e(j, i))


def symbolic_perturbed_residual():
    """F for a symmetric 3x3 base with off-diagonals (c, b, a) = (U12, U13, U23)
    and column shifts x1, x2, x3, as an expanded sympy polynomial."""
    a, b, c, d1, d2, d3, x1, x2, x3 = sp.symbols("a b c d1 d2 d3 x1 x2 x3")
    W = sp.Matrix([[d1, c, b], [c, d2, a], [b, a, d3]])
    x = [x1, x2, x3]
    K = sp.Matrix(3, 3, lambda i, j: W[i, j] + x[j])
    F = sp.expand(K[0, 1] * K[1, 2] * K[2, 0] - K[0, 2] * K[2, 1] * K[1, 0])
    return F, (a, b, c, d1, d2, d3, x1, x2, x3)


def lt_exact_symbolic(K, s, alpha) -> float:
    """|I + K S|^{-alpha} from the Leibniz determinant."""
    a = np.asarray(K, dtype=float)
    sv = np.asarray(s, dtype=float)
    return perm_det(np.eye(a.shape[0]) + a * sv[None, :]) ** (-alpha)


def brute_cycle_ok(K, tol) -> bool:
    """All ordered triples, not just anchored ones."""
    a = np.asarray(K, dtype=float)
    n = a.shape[0]
    for i, j, k in itertools.combinations(range(n), 3):
        f = a[i, j] * a[j, k] * a[k, i]
        r = a[i, k] * a[k, j] * a[j, i]
        if abs(f - r) > tol * max(abs(f), abs(r)):
            return False
    return True
