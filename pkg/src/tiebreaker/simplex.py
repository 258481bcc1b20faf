"""Small dense two-phase simplex with Bland's rule.

Used as a brute-force oracle for the discrete extremal designs; problem
sizes are a few hundred columns at most.
"""

from __future__ import annotations

import numpy as np

from .errors import InfeasibleConstraintsError, TiebreakerError

_TOL = 1e-11


def _pivot(T, basis, row, col):
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]
    basis[row] = col


def _run(T, basis, ncols, max_iter):
    """Maximise the objective in the last row of T (stored as -reduced costs)."""
    m = T.shape[0] - 1
    for _ in range(max_iter):
        obj = T[-1, :ncols]
        entering = np.flatnonzero(obj < -_TOL)
        if entering.size == 0:
            return
        col = int(entering[0])  # Bland: lowest index
        colv = T[:m, col]
        pos = colv > _TOL
        if not np.any(pos):
            raise TiebreakerError("linear program is unbounded")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + _TOL * max(1.0, abs(best)))
        row = int(min(ties, key=lambda r: basis[r]))  # Bland tie-break
        _pivot(T, basis, row, col)
    raise TiebreakerError("simplex iteration limit reached")


def maximize(c, A_eq, b_eq, max_iter: int = 50_000):
    """Solve max c.x subject to A_eq x = b_eq, x >= 0.

    Returns ``(objective, x)``.  Raises :class:`InfeasibleConstraintsError`
    when no feasible point exists.
    """
    c = np.asarray(c, dtype=float)
    A = np.array(A_eq, dtype=float)
    b = np.array(b_eq, dtype=float)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    # phase 1: artificials in columns n .. n+m-1
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n : n + m] = np.eye(m)
    T[:m, -1] = b
    basis = list(range(n, n + m))
    # objective row for max(-sum artificials), written in reduced form
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    _run(T, basis, n + m, max_iter)
    if -T[-1, -1] > 1e-9 * max(1.0, np.abs(b).max()):
        raise InfeasibleConstraintsError(
            "linear program is infeasible", phase1_residual=float(-T[-1, -1])
        )
    # drive remaining artificials out of the basis, dropping redundant rows
    keep = []
    for r in range(m):
        if basis[r] >= n:
            cand = np.flatnonzero(np.abs(T[r, :n]) > 1e-9)
            if cand.size:
                _pivot(T, basis, r, int(cand[0]))
                keep.append(r)
        else:
            keep.append(r)
    T2 = np.zeros((len(keep) + 1, n + 1))
    T2[:-1, :n] = T[keep, :n]
    T2[:-1, -1] = T[keep, -1]
    basis2 = [basis[r] for r in keep]
    T2[-1, :n] = -c
    for r, j in enumerate(basis2):
        if T2[-1, j] != 0.0:
            T2[-1] -= T2[-1, j] * T2[r]
    _run(T2, basis2, n, max_iter)
    x = np.zeros(n)
    for r, j in enumerate(basis2):
        x[j] = T2[r, -1]
    return float(c @ x), x
