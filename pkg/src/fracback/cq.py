"""Backward-Euler convolution quadrature for the Caputo derivative.

Weights are the binomial expansion of (1 - xi)^alpha, generated by the
stable two-term recurrence; the discrete derivative keeps the full
history (no compression, fine at desk scale N <~ 2000).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CqWeights:
    """CQ-BE weight sequence w[j] = (-1)^j binom(alpha, j), j = 0..N."""

    alpha: float
    N: int
    w: np.ndarray

    def partial_sums(self) -> np.ndarray:
        """s_j = sum_{i<=j} w[i]; positive, decreasing to 0."""
        return np.cumsum(self.w)


def cq_weights(alpha: float, N: int) -> CqWeights:
    """Generate the CQ-BE weights by the recurrence w[j] = w[j-1](j-1-alpha)/j."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"fractional order must lie in (0, 1), got {alpha}")
    if N < 1:
        raise ValueError(f"need at least one step, got N={N}")
    w = np.empty(N + 1)
    w[0] = 1.0
    j = np.arange(1, N + 1, dtype=np.float64)
    w[1:] = np.cumprod((j - 1.0 - alpha) / j)
    w.setflags(write=False)
    return CqWeights(alpha=alpha, N=N, w=w)


def caputo_apply(weights: CqWeights, history, tau: float) -> np.ndarray:
    """Discrete Caputo derivative tau^-a * sum_j w[n-j] (U^j - U^0) at t_n.

    ``history`` is the list U^0..U^n of grid functions on one system;
    returns a coefficient vector (no mass multiply).
    """
    n = len(history) - 1
    if n < 0 or n > weights.N:
        raise ValueError(f"history length {len(history)} incompatible with N={weights.N}")
    sys0 = history[0].system
    if any(u.system is not sys0 for u in history):
        raise ValueError("history entries live on different systems")
    u0 = history[0].values
    acc = np.zeros_like(u0)
    for j, u in enumerate(history):
        acc += weights.w[n - j] * (u.values - u0)
    return acc / tau ** weights.alpha


def scalar_terminal_factor(alpha: float, T: float, N: int, lam, u0=1.0, source=None):
    """Terminal value of the CQ-BE scheme on scalar modes u' -> lambda u.

    Runs tau^-a sum w[n-j](u_j - u_0) + lam * u_n = f(u_{n-1}) for each
    entry of ``lam`` simultaneously; with ``source`` None this yields the
    spectral symbol r_N(lam) of the discrete homogeneous solution map
    (for u0 = 1).  Used as the dense-spectral oracle and fast path.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    tau = T / N
    wts = cq_weights(alpha, N)
    w, s = wts.w, wts.partial_sums()
    ta = tau ** (-alpha)
    U = np.empty((N + 1, lam.size))
    U[0] = u0
    denom = ta + lam
    for n in range(1, N + 1):
        conv = w[n:0:-1] @ U[:n]
        f_prev = source(U[n - 1]) if source is not None else 0.0
        U[n] = (f_prev + ta * (s[n] * U[0] - conv)) / denom
    return U[N]
