"""Exact zero-sum matrix game solving via a dense tableau simplex.

Uses the classic reduction: shift the payoff matrix positive, solve
max 1'y s.t. Ay <= 1, y >= 0 starting from the feasible slack basis, and read
the row player's optimal mixture off the duals. Dantzig pricing with a Bland
fallback for degenerate cycling.
"""

from __future__ import annotations

import numpy as np

from .errors import Infeasible

_PIVOT_TOL = 1e-11


class SimplexStalled(RuntimeError):
    """Internal: pivoting exceeded the iteration budget."""


def _simplex_max(A: np.ndarray, bland: bool) -> tuple[np.ndarray, np.ndarray]:
    """Solve max 1'y s.t. Ay <= 1, y >= 0 with A > 0; return (y, duals)."""
    m, n = A.shape
    # Tableau: [A | I | rhs]; cost row holds reduced costs for the min(-1'y) form.
    T = np.zeros((m + 1, n + m + 1))
    T[1:, :n] = A
    T[1:, n : n + m] = np.eye(m)
    T[1:, -1] = 1.0
    T[0, :n] = -1.0
    basis = np.arange(n, n + m)

    max_iter = 200 * (m + n + 10)
    for _ in range(max_iter):
        costs = T[0, :-1]
        if bland:
            negative = np.nonzero(costs < -_PIVOT_TOL)[0]
            if negative.size == 0:
                break
            e = int(negative[0])
        else:
            e = int(np.argmin(costs))
            if costs[e] >= -_PIVOT_TOL:
                break
        col = T[1:, e]
        rows = np.nonzero(col > _PIVOT_TOL)[0]
        if rows.size == 0:
            raise Infeasible("game LP unbounded; payoff matrix was not shifted positive")
        ratios = T[1 + rows, -1] / col[rows]
        best = ratios.min()
        # Lowest row index among ties keeps pivoting deterministic.
        leave = int(rows[np.nonzero(ratios <= best + 1e-12)[0][0]])
        piv_row = 1 + leave
        T[piv_row] /= T[piv_row, e]
        factors = T[:, e].copy()
        factors[piv_row] = 0.0
        T -= np.outer(factors, T[piv_row])
        basis[leave] = e
    else:
        raise SimplexStalled("pivot budget exhausted")

    y = np.zeros(n)
    in_y = basis < n
    y[basis[in_y]] = T[1:, -1][in_y]
    duals = T[0, n : n + m].copy()
    return y, duals


def solve_matrix_game(payoff: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Value and optimal mixed strategies of a zero-sum matrix game.

    The row player maximizes, the column player minimizes:
    value = max_p min_q p' A q. Returns (value, p, q).
    """
    A = np.asarray(payoff, dtype=float)
    if A.ndim != 2 or A.size == 0:
        raise Infeasible(f"payoff matrix must be 2-D and nonempty, got shape {A.shape}")
    shift = 1.0 - A.min()
    As = A + shift

    last_err: Exception | None = None
    for bland in (False, True):
        try:
            y, duals = _simplex_max(As, bland=bland)
            return _extract(A, shift, y, duals)
        except (SimplexStalled, Infeasible) as err:
            last_err = err
    raise Infeasible(f"matrix game solve failed: {last_err}")


def _extract(A: np.ndarray, shift: float, y: np.ndarray, duals: np.ndarray):
    total = y.sum()
    if total <= 0:
        raise Infeasible("degenerate game LP: column mass vanished")
    value = 1.0 / total - shift
    q = y / total
    p = np.clip(duals, 0.0, None)
    psum = p.sum()
    if psum <= 0:
        raise Infeasible("degenerate game LP: row duals vanished")
    p = p / psum

    # Strategies must certify the value to solver precision.
    guarantee = (p @ A).min()
    exposure = (A @ q).max()
    if guarantee < value - 1e-7 or exposure > value + 1e-7:
        raise Infeasible(
            f"simplex solution failed certification: value={value}, "
            f"row guarantee={guarantee}, column exposure={exposure}"
        )
    return value, p, q
