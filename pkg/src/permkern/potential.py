"""Potential functions f = U h and block-wise repair of h.

``construct_h`` walks the blocks {3l+1, 3l+2, 3l+3} in order. A block whose
potential is not diagonal-plus-constant but whose residual vanishes at the
current f gets a small move of f inside a ball, realized by changing h on
that block only. Moves are shrunk until h stays within [h*/2, 2h*] and the
residual of every earlier block l' drifts by at most |F_l'| / 2^(l+2) while
block l is repaired, so the total drift stays below |F_l'| / 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import linprog

from .dichotomy import DiagonalPlusConstant, detect_form, perturbation_residual
from .kernels import PotentialValidationError, SymmetricPotential, validate_potential
from .matrix import KernelLike, as_array, solve

__all__ = [
    "BlockRecord",
    "HConstruction",
    "BudgetExhaustedError",
    "ResidualVanishesError",
    "apply_potential",
    "solve_triple",
    "perturb_ball_search",
    "block_residual",
    "construct_h",
]

FLOOR = 1e-9
FORM_TOL = 1e-10
MAX_HALVINGS = 40


class BudgetExhaustedError(RuntimeError):
    def __init__(self, block: int, message: str):
        super().__init__(f"block {block}: {message}")
        self.block = block


class ResidualVanishesError(ValueError):
    """The block is diagonal-plus-constant, so its residual is identically zero."""


def _potential_array(U: Union[SymmetricPotential, KernelLike]) -> np.ndarray:
    return U.U.entries if isinstance(U, SymmetricPotential) else as_array(U)


def apply_potential(U: Union[SymmetricPotential, KernelLike], h: Sequence[float]) -> np.ndarray:
    """f = U h for strictly positive h."""
    u = _potential_array(U)
    hv = np.asarray(h, dtype=float).ravel()
    if hv.shape[0] != u.shape[0]:
        raise ValueError(f"h has length {hv.shape[0]}, potential has n={u.shape[0]}")
    if not np.all(hv > 0):
        raise ValueError("h must be strictly positive")
    return u @ hv


def solve_triple(U_I: KernelLike, f_star: Sequence[float], f_target: Sequence[float]) -> np.ndarray:
    """c with f_target = f_star + U_I c."""
    w = as_array(U_I)
    if w.shape != (3, 3):
        raise ValueError("solve_triple expects a 3x3 block")
    rhs = np.asarray(f_target, dtype=float) - np.asarray(f_star, dtype=float)
    return solve(w, rhs)


def block_residual(U: Union[SymmetricPotential, KernelLike], f: Sequence[float], block: Sequence[int]):
    """(F, normalized F) of U + f on a block of 1-based indices."""
    u = _potential_array(U)
    z = np.asarray(block, dtype=int) - 1
    return perturbation_residual(u[np.ix_(z, z)], np.asarray(f, dtype=float)[z])


def perturb_ball_search(
    W: KernelLike,
    x0: Sequence[float],
    delta: float,
    floor: float = FLOOR,
    rng: Optional[np.random.Generator] = None,
    form_tol: float = FORM_TOL,
) -> np.ndarray:
    """Point x in the open ball B_delta(x0) with normalized |F(x)| >= floor.

    F is multi-affine in (x1, x2, x3). Moves along one coordinate are tried
    first, then along pairs of coordinates, where the mixed second derivative
    is a difference of off-diagonal entries of W and so is nonzero for some
    pair unless W is diagonal-plus-constant. Steps are delta/2, delta/4, ...
    """
    w = as_array(W)
    if isinstance(detect_form(w, form_tol), DiagonalPlusConstant):
        raise ResidualVanishesError("F vanishes identically on a diagonal-plus-constant block")
    x0 = np.asarray(x0, dtype=float)
    if abs(perturbation_residual(w, x0)[1]) >= floor:
        return x0.copy()
    if not delta > 0:
        raise ValueError("delta must be positive")
    dirs = [np.eye(3)[i] for i in range(3)]
    for i, j in ((0, 1), (0, 2), (1, 2)):
        for sgn in (1.0, -1.0):
            d = np.zeros(3)
            d[i], d[j] = 1.0, sgn
            dirs.append(d / np.sqrt(2.0))
    order = np.arange(len(dirs))
    if rng is not None:
        order = np.concatenate([rng.permutation(3), 3 + rng.permutation(len(dirs) - 3)])
    step = delta / 2.0
    for _ in range(60):
        for t in order:
            for sgn in (1.0, -1.0):
                x = x0 + sgn * step * dirs[t]
                if abs(perturbation_residual(w, x)[1]) >= floor:
                    return x
        step /= 2.0
    raise BudgetExhaustedError(-1, f"no point with |F| >= {floor} found within radius {delta}")


def _grad_f(W: np.ndarray, x: np.ndarray) -> np.ndarray:
    # F is affine in each coordinate, so unit differences are exact
    base = perturbation_residual(W, x)[0]
    return np.array([perturbation_residual(W, x + e)[0] - base for e in np.eye(3)])


def _budgets(finalized, n):
    # step n may move an earlier residual F_l by at most |F_l| / 2^(n+2),
    # which sums to at most |F_l| / 2 over all later steps
    return [(bp, abs(F_ref) / 2.0 ** (n + 2)) for _, bp, F_ref in finalized]


def _within_budget(u, live, f_old, f_new) -> bool:
    for bp, budget in live:
        zp = np.asarray(bp) - 1
        Wp = u[np.ix_(zp, zp)]
        drift = abs(perturbation_residual(Wp, f_new[zp])[0] - perturbation_residual(Wp, f_old[zp])[0])
        if drift > budget:
            return False
    return True


def _ranked_directions(u, W, z, f, live, rng, n_random=64, keep=16):
    """Unit moves of f on the block, best first by linearized gain over drift.

    A move x - x0 = v changes h by W^{-1} v and every earlier block's f by
    U[zp, z] W^{-1} v. To first order the best v solves a small linear
    program: maximize the block's own gain subject to each earlier block's
    drift staying inside its budget. Random directions follow as a fallback.
    """
    Winv = np.linalg.inv(W)
    g0 = _grad_f(W, f[z])
    rows = []
    for bp, budget in live:
        zp = np.asarray(bp) - 1
        gp = _grad_f(u[np.ix_(zp, zp)], f[zp])
        rows.append(gp @ u[np.ix_(zp, z)] @ Winv / budget)
    lp, steps = [], []
    if np.any(g0 != 0):
        for sgn in (1.0, -1.0):
            bounds = [(-1.0, 1.0)] * 3
            if rows:
                R = np.array(rows)
                res = linprog(-sgn * g0, A_ub=np.vstack([R, -R]), b_ub=np.ones(2 * len(rows)), bounds=bounds)
            else:
                res = linprog(-sgn * g0, bounds=bounds)
            if res.status == 0 and np.linalg.norm(res.x) > 0:
                v = res.x / np.linalg.norm(res.x)
                lp.append(v)
                worst = max((abs(r @ v) for r in rows), default=0.0)
                # x moves by eps/2 along v; drift hits the budget at eps = 2/worst
                steps.append(2.0 / worst if worst > 0 else np.inf)
    cand = [v / np.linalg.norm(v) for v in rng.standard_normal((n_random, 3))]

    def score(v):
        gain = abs(g0 @ v)
        worst = max((abs(r @ v) for r in rows), default=0.0)
        return gain / worst if worst > 0 else gain * 1e300

    return lp + sorted(cand, key=score, reverse=True)[:keep], list(zip(lp, steps))

@dataclass(frozen=True)
class BlockRecord:
    l: int
    indices: tuple[int, int, int]
    classification: str
    F_value: float
    F_normalized: float
    epsilon_used: float
    perturbed: bool
    F_final: float = float("nan")
    F_final_normalized: float = float("nan")


@dataclass(frozen=True)
class HConstruction:
    hstar: np.ndarray
    h: np.ndarray
    f: np.ndarray
    block_log: list
    iterations: int
    floor: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "hstar": self.hstar.tolist(),
            "h": self.h.tolist(),
            "f": self.f.tolist(),
            "iterations": self.iterations,
            "floor": self.floor,
            "seed": self.seed,
            "block_log": [
                {
                    "l": r.l,
                    "indices": list(r.indices),
                    "classification": r.classification,
                    "F_value": r.F_value,
                    "F_normalized": r.F_normalized,
                    "F_final": r.F_final,
                    "F_final_normalized": r.F_final_normalized,
                    "epsilon_used": r.epsilon_used,
                    "perturbed": r.perturbed,
                }
                for r in self.block_log
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _blocks(n: int, blocks):
    if blocks is None:
        return [(3 * l + 1, 3 * l + 2, 3 * l + 3) for l in range(n // 3)]
    out = [tuple(int(i) for i in b) for b in blocks]
    used = [i for b in out for i in b]
    if any(len(b) != 3 for b in out) or len(set(used)) != len(used):
        raise ValueError("blocks must be disjoint triples")
    if min(used) < 1 or max(used) > n:
        raise IndexError("block index out of range")
    return out


def construct_h(
    U: Union[SymmetricPotential, KernelLike],
    hstar: Sequence[float],
    floor: float = FLOOR,
    seed: int = 0,
    blocks: Optional[Sequence[Sequence[int]]] = None,
    form_tol: float = FORM_TOL,
) -> HConstruction:
    """Choose h near h* so that every general block of U + Uh has nonzero residual.

    Parameters
    ----------
    U : SymmetricPotential or array
        Potential of a symmetric chain; validated on entry.
    hstar : array
        Strictly positive starting point.
    floor : float
        Normalized residuals below ``floor`` count as zero.
    seed : int
        Orders the search directions; the result is a function of
        (U, hstar, floor, seed, blocks).
    blocks : list of triples, optional
        1-based disjoint triples to process instead of {3l+1, 3l+2, 3l+3}.

    Raises
    ------
    BudgetExhaustedError
        When no move within the step schedule keeps h in [h*/2, 2h*] and
        the earlier residuals within their drift budget.
    """
    u = _potential_array(U)
    n = u.shape[0]
    report = validate_potential(u)
    if not report.ok:
        raise PotentialValidationError(report.failures)
    hs = np.asarray(hstar, dtype=float).ravel().copy()
    if hs.shape[0] != n:
        raise ValueError(f"hstar has length {hs.shape[0]}, potential has n={n}")
    if not np.all(hs > 0):
        raise ValueError("hstar must be strictly positive")
    rng = np.random.default_rng(seed)
    blist = _blocks(n, blocks)

    h = hs.copy()
    f = u @ h
    delta0 = float(np.min(hs)) / (4.0 * float(np.linalg.norm(u, np.inf)))
    lo, hi = 0.5 * hs, 2.0 * hs
    finalized: list[tuple[int, tuple, float]] = []  # (l, block, F at finalization) for general blocks
    records: list[BlockRecord] = []
    iterations = 0

    for l, blk in enumerate(blist):
        z = np.asarray(blk) - 1
        W = u[np.ix_(z, z)]
        form = detect_form(W, form_tol)
        F, Fn = perturbation_residual(W, f[z])
        if isinstance(form, DiagonalPlusConstant):
            records.append(BlockRecord(l, blk, "DiagonalPlusConstant", F, Fn, 0.0, False))
            continue
        if abs(Fn) >= floor:
            finalized.append((l, blk, F))
            records.append(BlockRecord(l, blk, "General", F, Fn, 0.0, False))
            continue

        accepted = None
        live = _budgets(finalized, l)
        dirs, lp_steps = _ranked_directions(u, W, z, f, live, rng)

        def attempts():
            for p in range(MAX_HALVINGS + 1):
                e = delta0 * 2.0 ** (-p)
                cands = []
                try:
                    cands.append(perturb_ball_search(W, f[z], e, 2.0 * floor, rng, form_tol))
                except BudgetExhaustedError:
                    pass
                cands.extend(f[z] + 0.5 * e * d for d in dirs)
                yield e, cands
            # the halving grid can step over a narrow feasible window; LP
            # directions are retried just inside their budget edge
            for d, top in lp_steps:
                for frac in (0.95, 0.8, 0.6):
                    e = min(delta0, frac * top)
                    yield e, [f[z] + 0.5 * e * d]

        for eps, candidates in attempts():
            for target in candidates:
                c = solve_triple(W, f[z], target)
                h_new = h.copy()
                h_new[z] += c
                if np.any(h_new < lo) or np.any(h_new > hi):
                    continue
                f_new = u @ h_new
                F_new, Fn_new = perturbation_residual(W, f_new[z])
                if abs(Fn_new) < floor:
                    continue
                if not _within_budget(u, live, f, f_new):
                    continue
                accepted = (h_new, f_new, F_new, Fn_new, eps)
                break
            if accepted is not None:
                break
        if accepted is None:
            raise BudgetExhaustedError(l, "cannot move f off the zero set within the bounds and drift budget")
        h, f, F_new, Fn_new, eps = accepted
        iterations += 1
        finalized.append((l, blk, F_new))
        records.append(BlockRecord(l, blk, "General", F_new, Fn_new, eps, True))

    f = u @ h
    final = []
    for r in records:
        z = np.asarray(r.indices) - 1
        Ff, Ffn = perturbation_residual(u[np.ix_(z, z)], f[z])
        final.append(
            BlockRecord(r.l, r.indices, r.classification, r.F_value, r.F_normalized, r.epsilon_used, r.perturbed, Ff, Ffn)
        )
    return HConstruction(hs, h, f, final, iterations, floor, seed)
