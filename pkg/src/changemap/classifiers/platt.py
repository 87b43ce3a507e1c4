"""Platt sigmoid calibration, fitted with the Newton/backtracking scheme of
Lin, Lin & Weng (2007) on regularized targets."""

from __future__ import annotations

import numpy as np

MAX_ITER = 100
MIN_STEP = 1e-10
SIGMA = 1e-12
EPS = 1e-5


def _nll(dec: np.ndarray, t: np.ndarray, A: float, B: float) -> float:
    f = dec * A + B
    pos = f >= 0
    out = np.where(pos, t * f + np.log1p(np.exp(-np.abs(f))),
                   (t - 1) * f + np.log1p(np.exp(-np.abs(f))))
    return float(out.sum())


def fit_platt(decision_values, labels) -> tuple[float, float]:
    """Fit (A, B) so that P(y=+1 | f) = 1 / (1 + exp(A f + B)).

    Targets are smoothed to (N+ + 1)/(N+ + 2) and 1/(N- + 2).
    """
    dec = np.asarray(decision_values, dtype=np.float64)
    y = np.asarray(labels)
    pos = y > 0
    prior1 = float(pos.sum())
    prior0 = float(len(y) - prior1)
    hi = (prior1 + 1.0) / (prior1 + 2.0)
    lo = 1.0 / (prior0 + 2.0)
    t = np.where(pos, hi, lo)

    A, B = 0.0, float(np.log((prior0 + 1.0) / (prior1 + 1.0)))
    fval = _nll(dec, t, A, B)
    for _ in range(MAX_ITER):
        f = dec * A + B
        e = np.exp(-np.abs(f))
        # p = 1/(1+exp(f)), q = 1 - p, evaluated without overflow.
        p = np.where(f >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
        q = np.where(f >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        d2 = p * q
        h11 = SIGMA + float((dec * dec * d2).sum())
        h22 = SIGMA + float(d2.sum())
        h21 = float((dec * d2).sum())
        d1 = t - p
        g1 = float((dec * d1).sum())
        g2 = float(d1.sum())
        if abs(g1) < EPS and abs(g2) < EPS:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= MIN_STEP:
            nA, nB = A + step * dA, B + step * dB
            nf = _nll(dec, t, nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2.0
        if step < MIN_STEP:
            break
    return A, B


def platt_probability(f, A: float, B: float) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64) * A + B
    e = np.exp(-np.abs(f))
    return np.where(f >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
