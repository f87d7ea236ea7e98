"""Zero-sum matrix games solved by a small dense primal simplex.

Rows belong to the maximizing player, columns to the minimizing player.
After shifting the payoffs so every entry is at least one, the column
player's problem becomes the normalized LP

    maximize 1'y   subject to   A y <= 1,  y >= 0

whose optimum is 1 / value; the row player's strategy is read off the
reduced costs of the slack columns (the dual solution).  Many games of the
same shape are pivoted together in one batch; each game in the batch sees
exactly the arithmetic it would see if solved alone, so results do not
depend on batch composition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LPError",
    "MatrixGameSolution",
    "solve_matrix_game",
    "solve_matrix_games",
    "nash_value",
    "saddle_residuals",
]

_PIVOT_EPS = 1e-12


class LPError(RuntimeError):
    """The simplex failed (iteration cap or numerical breakdown)."""


@dataclass(frozen=True)
class MatrixGameSolution:
    value: float
    row_policy: np.ndarray
    col_policy: np.ndarray


def _check_batch(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim == 2:
        q = q[None]
    if q.ndim != 3:
        raise ValueError(f"expected a matrix or a batch of matrices, got shape {q.shape}")
    if q.shape[1] == 0 or q.shape[2] == 0:
        raise ValueError("payoff matrix must have at least one row and one column")
    if not np.all(np.isfinite(q)):
        raise ValueError("payoff matrix has non-finite entries")
    return q


def solve_matrix_games(q, max_pivots: int | None = None):
    """Solve a batch of games with payoff array ``q`` of shape ``(B, m, n)``.

    Returns ``(values, row_policies, col_policies)`` with shapes ``(B,)``,
    ``(B, m)`` and ``(B, n)``.

    Entering variable: most negative reduced cost (lowest index on ties);
    a game that has made ``m + n`` consecutive degenerate pivots switches to
    Bland's rule for good.  Leaving variable: minimum ratio, ties broken by
    the lowest basic-variable index.
    """
    q = _check_batch(q)
    B, m, n = q.shape
    if max_pivots is None:
        max_pivots = 50 * (m + n)

    shift = 1.0 - q.min(axis=(1, 2))
    A = q + shift[:, None, None]

    # tableau: m constraint rows + objective row; columns y (n), slacks (m), rhs
    ncol = n + m + 1
    T = np.zeros((B, m + 1, ncol))
    T[:, :m, :n] = A
    T[:, :m, n:n + m] = np.eye(m)
    T[:, :m, -1] = 1.0
    T[:, m, :n] = -1.0
    basis = np.tile(np.arange(n, n + m), (B, 1))
    degenerate = np.zeros(B, dtype=np.int64)
    bland = np.zeros(B, dtype=bool)

    active = np.arange(B)
    pivots = 0
    while active.size:
        if pivots >= max_pivots:
            raise LPError(f"simplex did not converge within {max_pivots} pivots")
        Ta = T[active]
        rc = Ta[:, m, :-1]
        neg = rc < -_PIVOT_EPS
        has_neg = neg.any(axis=1)
        if not has_neg.all():
            keep = has_neg
            active, Ta, rc, neg = active[keep], Ta[keep], rc[keep], neg[keep]
            if not active.size:
                break
        dantzig = np.argmin(rc, axis=1)
        first_neg = np.argmax(neg, axis=1)
        enter = np.where(bland[active], first_neg, dantzig)

        rows = np.arange(active.size)
        col = Ta[rows, :m, enter]
        rhs = Ta[:, :m, -1]
        pos = col > _PIVOT_EPS
        if not pos.any(axis=1).all():
            raise LPError("unbounded pivot column (payoffs should be positive after shift)")
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(pos, rhs / np.where(pos, col, 1.0), np.inf)
        best = ratio.min(axis=1, keepdims=True)
        tied = ratio <= best * (1.0 + 1e-12) + 1e-15
        basis_a = basis[active]
        leave = np.argmin(np.where(tied, basis_a, np.iinfo(np.int64).max), axis=1)

        is_degenerate = best[:, 0] <= 1e-15
        degenerate[active] = np.where(is_degenerate, degenerate[active] + 1, 0)
        bland[active] |= degenerate[active] >= m + n

        prow = Ta[rows, leave, :] / Ta[rows, leave, enter][:, None]
        factors = Ta[rows, :, enter]
        Ta = Ta - factors[:, :, None] * prow[:, None, :]
        Ta[rows, leave, :] = prow
        T[active] = Ta
        basis_a[rows, leave] = enter
        basis[active] = basis_a
        pivots += 1

    y = np.zeros((B, n + m))
    np.put_along_axis(y, basis, T[:, :m, -1], axis=1)
    y = np.clip(y[:, :n], 0.0, None)
    u = np.clip(T[:, m, n:n + m], 0.0, None)
    total = T[:, m, -1]
    if np.any(total <= 0):
        raise LPError("degenerate optimum: non-positive objective")
    shifted_value = 1.0 / total
    col = y / y.sum(axis=1, keepdims=True)
    row = u / u.sum(axis=1, keepdims=True)
    return shifted_value - shift, row, col


def solve_matrix_game(q, tol: float = 1e-9) -> MatrixGameSolution:
    """Nash value and one pair of equilibrium strategies of a single game.

    Raises ``LPError`` when the returned pair is not a saddle point to
    within ``tol``; that would indicate a numerical breakdown.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.asarray(q, dtype=float)
    if q.ndim != 2:
        raise ValueError(f"expected a 2-D payoff matrix, got shape {q.shape}")
    values, rows, cols = solve_matrix_games(q[None])
    sol = MatrixGameSolution(float(values[0]), rows[0], cols[0])
    row_gap, col_gap = saddle_residuals(q, sol)
    if max(row_gap, col_gap) > tol * max(1.0, np.abs(q).max()):
        raise LPError(f"saddle-point residual {max(row_gap, col_gap):.3g} exceeds tol {tol:.3g}")
    return sol


def nash_value(q) -> float:
    return solve_matrix_game(q).value


def saddle_residuals(q, sol: MatrixGameSolution) -> tuple[float, float]:
    """How far each player's strategy is from guaranteeing ``sol.value``.

    The first entry is ``value - min_j (p'Q)_j`` (row player's shortfall),
    the second ``max_i (Q x)_i - value`` (column player's excess).  Both
    are zero at an exact equilibrium.
    """
    q = np.asarray(q, dtype=float)
    return (
        float(sol.value - (sol.row_policy @ q).min()),
        float((q @ sol.col_policy).max() - sol.value),
    )
