"""Between/within chain convergence diagnostic."""

from __future__ import annotations

import numpy as np


def rhat(chains, split: bool = True) -> np.ndarray:
    """Potential scale reduction factor per parameter.

    ``chains`` has shape ``(m, n)`` or ``(m, n, d)``. With ``split=True`` each
    chain is cut in half first so within-chain drift also shows up.

    Uses ``sqrt(1 + B / (n W))`` where ``B/n`` is the variance of chain means and
    ``W`` the mean within-chain variance. This is bounded below by 1 and equals
    1 exactly when all chains share a mean.
    """
    c = np.asarray(chains, dtype=float)
    squeeze = c.ndim == 2
    if squeeze:
        c = c[:, :, None]
    if split:
        half = c.shape[1] // 2
        c = np.concatenate([c[:, :half], c[:, c.shape[1] - half:]], axis=0)
    m, n, _ = c.shape
    if m < 2 or n < 2:
        raise ValueError("rhat needs at least two chains of length two")
    means = c.mean(axis=1)
    b_over_n = means.var(axis=0, ddof=1)
    w = c.var(axis=1, ddof=1).mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(b_over_n == 0, 0.0, b_over_n / w)
    out = np.sqrt(1.0 + ratio)
    return out[0] if squeeze else out


def ess(chains) -> float:
    """Effective sample size of one scalar from ``(m, n)`` chains.

    Autocorrelations are combined across chains and truncated at the first
    negative sum of an adjacent pair.
    """
    x = np.asarray(chains, dtype=float)
    m, n = x.shape
    centered = x - x.mean(axis=1, keepdims=True)
    f = np.fft.rfft(centered, 2 * n, axis=1)
    acov = np.fft.irfft(f * np.conj(f), axis=1)[:, :n] / n
    w = acov[:, 0].mean() * n / (n - 1)
    var_plus = (n - 1) / n * w + (x.mean(axis=1).var(ddof=1) if m > 1 else 0.0)
    if var_plus == 0:
        return float(m * n)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    total = 0.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        total += pair
    return float(m * n / max(2.0 * total - 1.0, 1.0 / (m * n)))
