"""Soft-margin SVM dual solved by sequential minimal optimization.

Working-set selection uses second-order information (Fan, Chen & Lin 2005),
the same rule as LIBSVM, so indefinite kernels such as the sigmoid still make
progress: a non-positive curvature is replaced by ``TAU``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..errors import ConvergenceError, TrainingError

TAU = 1e-12
DEFAULT_MAX_ITER = 200_000


@dataclass
class DualSolution:
    alpha: np.ndarray
    rho: float
    gradient: np.ndarray = field(repr=False)
    iterations: int
    objectives: list[float] | None = field(default=None, repr=False)

    @property
    def bias(self) -> float:
        return -self.rho

    def objective(self) -> float:
        """Dual objective sum(alpha) - 1/2 alpha' Q alpha (to be maximized)."""
        return 0.5 * float(self.alpha.sum() - self.alpha @ self.gradient)


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def solve_dual(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3,
               max_iter: int = DEFAULT_MAX_ITER, trace: bool = False) -> DualSolution:
    """Maximize sum(a) - 1/2 sum a_i a_j y_i y_j K_ij s.t. 0 <= a <= C, y'a = 0.

    Stops when the maximal violating pair gap m(a) - M(a) drops below ``tol``.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n == 0 or not ((y == 1) | (y == -1)).all():
        raise TrainingError("labels must be +1/-1")
    if (y > 0).all() or (y < 0).all():
        raise TrainingError("both classes are required")
    Q = np.ascontiguousarray((y[:, None] * y[None, :]) * K, dtype=np.float64)
    alpha = np.zeros(n)
    G = -np.ones(n)
    trace_buf = np.zeros(max_iter + 1 if trace else 1)
    it, status, gap = _smo_loop(Q, y, float(C), float(tol), int(max_iter), alpha, G, trace, trace_buf)
    if status == _HIT_CAP:
        raise ConvergenceError("SMO did not converge", gap, it)
    objectives = trace_buf[:it + 1].tolist() if trace else None
    return DualSolution(alpha, _rho(alpha, y, G, C), G, it, objectives)


_CONVERGED = 0
_HIT_CAP = 1


@njit(cache=True)
def _smo_loop(Q, y, C, tol, max_iter, alpha, G, trace, trace_buf):
    n = len(y)
    it = 0
    while True:
        # Maximal violating pair, second-order choice of j.
        gmax = -np.inf
        i = -1
        gmax2 = -np.inf
        for t in range(n):
            if y[t] > 0:
                if alpha[t] < C and -G[t] > gmax:
                    gmax = -G[t]
                    i = t
                if alpha[t] > 0 and G[t] > gmax2:
                    gmax2 = G[t]
            else:
                if alpha[t] > 0 and G[t] > gmax:
                    gmax = G[t]
                    i = t
                if alpha[t] < C and -G[t] > gmax2:
                    gmax2 = -G[t]
        gap = gmax + gmax2
        if gap < tol or i < 0:
            return it, _CONVERGED, gap
        if it >= max_iter:
            return it, _HIT_CAP, gap

        j = -1
        best = np.inf
        for t in range(n):
            if y[t] > 0:
                if not alpha[t] > 0:
                    continue
                grad_diff = gmax + G[t]
            else:
                if not alpha[t] < C:
                    continue
                grad_diff = gmax - G[t]
            if grad_diff > 0:
                quad = Q[i, i] + Q[t, t] - 2.0 * y[i] * y[t] * Q[i, t]
                if quad <= 0:
                    quad = TAU
                score = -(grad_diff * grad_diff) / quad
                if score < best:
                    best = score
                    j = t
        if j < 0:
            return it, _CONVERGED, gap

        ai_old = alpha[i]
        aj_old = alpha[j]
        if y[i] != y[j]:
            q = Q[i, i] + Q[j, j] + 2.0 * Q[i, j]
            if q <= 0:
                q = TAU
            delta = (-G[i] - G[j]) / q
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            elif alpha[j] > C:
                alpha[j] = C
                alpha[i] = C + diff
        else:
            q = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
            if q <= 0:
                q = TAU
            delta = (G[i] - G[j]) / q
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total

        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        for t in range(n):
            G[t] += Q[i, t] * dai + Q[j, t] * daj
        it += 1
        if trace:
            acc = 0.0
            for t in range(n):
                acc += alpha[t] * (1.0 - G[t])
            trace_buf[it] = 0.5 * acc


def _rho(alpha: np.ndarray, y: np.ndarray, G: np.ndarray, C: float) -> float:
    yG = y * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~at_upper & ~at_lower
    if free.any():
        return float(yG[free].sum() / free.sum())
    pos = y > 0
    # Bounded variables bracket rho from both sides.
    ub_mask = (at_upper & ~pos) | (at_lower & pos)
    lb_mask = (at_upper & pos) | (at_lower & ~pos)
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2)
