"""Compiled log-posteriors, gradients and the HMC transition.

Every family shares one argument layout so a single sampler driver serves
all three likelihoods. Arrays a family does not use are passed as small
dummies.

family 0, Gaussian (sufficient statistics ``G = Z'Z``, ``h = Z'y``):
    theta = [alpha, b_1..b_p, log sigma];  sc = [n, y'y, sigma_rate]
family 1, logistic:
    theta = [alpha, b_1..b_p];  X = [1, D]
family 2, M-spline proportional hazards:
    theta = [alpha, b_1..b_p, z_1..z_{L-1}];  X = [1, D]; psi = softmax([z, 0]);
    sc = [dirichlet concentration]

``loc``/``scale`` hold the normal priors of ``[alpha, b]``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

GAUSSIAN, LOGISTIC, SPLINE_PH = 0, 1, 2

MAX_DELTA_H = 1000.0


@njit(cache=True, error_model="numpy")
def softmax_last_zero(z, out):
    m = 0.0
    for k in range(z.shape[0]):
        if z[k] > m:
            m = z[k]
    tot = 0.0
    for k in range(z.shape[0]):
        out[k] = math.exp(z[k] - m)
        tot += out[k]
    out[z.shape[0]] = math.exp(-m)
    tot += out[z.shape[0]]
    for k in range(out.shape[0]):
        out[k] /= tot


@njit(cache=True, error_model="numpy")
def logp_grad(theta, family, X, y, event, Mb, Ib, G, h, sc, loc, scale, grad):
    d = theta.shape[0]
    P = loc.shape[0]
    for j in range(d):
        grad[j] = 0.0
    lp = 0.0
    for j in range(P):
        r = (theta[j] - loc[j]) / scale[j]
        lp -= 0.5 * r * r
        grad[j] -= r / scale[j]

    if family == GAUSSIAN:
        ls = theta[P]
        s2inv = math.exp(-2.0 * ls)
        quad = sc[1]
        for j in range(P):
            gt = 0.0
            for k in range(P):
                gt += G[j, k] * theta[k]
            quad += theta[j] * gt - 2.0 * theta[j] * h[j]
            grad[j] += s2inv * (h[j] - gt)
        lp += -0.5 * s2inv * quad - sc[0] * ls
        sig = math.exp(ls)
        # exponential prior on sigma plus log-Jacobian of sigma = exp(ls)
        lp += -sc[2] * sig + ls
        grad[P] += s2inv * quad - sc[0] - sc[2] * sig + 1.0

    elif family == LOGISTIC:
        n = X.shape[0]
        for i in range(n):
            eta = 0.0
            for j in range(P):
                eta += X[i, j] * theta[j]
            if eta > 0:
                e = math.exp(-eta)
                lp += y[i] * eta - eta - math.log1p(e)
                p = 1.0 / (1.0 + e)
            else:
                e = math.exp(eta)
                lp += y[i] * eta - math.log1p(e)
                p = e / (1.0 + e)
            r = y[i] - p
            for j in range(P):
                grad[j] += r * X[i, j]

    else:
        n = X.shape[0]
        L = Mb.shape[1]
        psi = np.empty(L)
        softmax_last_zero(theta[P:], psi)
        gpsi = np.zeros(L)
        for i in range(n):
            eta = 0.0
            for j in range(P):
                eta += X[i, j] * theta[j]
            e = math.exp(eta)
            ipsi = 0.0
            for k in range(L):
                ipsi += Ib[i, k] * psi[k]
            lp -= e * ipsi
            deta = -e * ipsi
            for k in range(L):
                gpsi[k] -= e * Ib[i, k]
            if event[i] > 0:
                mpsi = 0.0
                for k in range(L):
                    mpsi += Mb[i, k] * psi[k]
                lp += eta + math.log(mpsi)
                deta += 1.0
                for k in range(L):
                    gpsi[k] += Mb[i, k] / mpsi
            for j in range(P):
                grad[j] += deta * X[i, j]
        c = sc[0]
        s = 0.0
        for k in range(L):
            lp += c * math.log(psi[k])
            s += psi[k] * gpsi[k]
        for k in range(L - 1):
            grad[P + k] += psi[k] * (gpsi[k] - s) + c * (1.0 - L * psi[k])

    if not math.isfinite(lp):
        return -np.inf
    return lp


@njit(cache=True, error_model="numpy")
def _velocity(minv, p, v):
    d = p.shape[0]
    for j in range(d):
        s = 0.0
        for k in range(d):
            s += minv[j, k] * p[k]
        v[j] = s


@njit(cache=True, error_model="numpy")
def _leapfrog(theta, p, grad, eps, minv, n_steps, family, X, y, event, Mb, Ib,
              G, h, sc, loc, scale):
    lp = 0.0
    d = theta.shape[0]
    v = np.empty(d)
    for _ in range(n_steps):
        for j in range(d):
            p[j] += 0.5 * eps * grad[j]
        _velocity(minv, p, v)
        for j in range(d):
            theta[j] += eps * v[j]
        lp = logp_grad(theta, family, X, y, event, Mb, Ib, G, h, sc, loc, scale, grad)
        if not math.isfinite(lp):
            return lp
        for j in range(d):
            p[j] += 0.5 * eps * grad[j]
    return lp


@njit(cache=True, error_model="numpy")
def _kinetic(p, minv):
    k = 0.0
    d = p.shape[0]
    for j in range(d):
        s = 0.0
        for l in range(d):
            s += minv[j, l] * p[l]
        k += p[j] * s
    return 0.5 * k


@njit(cache=True, error_model="numpy")
def _momentum(z, chol, p):
    """Solve ``chol.T p = z`` so that ``p ~ Normal(0, inverse(chol chol.T))``."""
    d = z.shape[0]
    for j in range(d - 1, -1, -1):
        s = z[j]
        for k in range(j + 1, d):
            s -= chol[k, j] * p[k]
        p[j] = s / chol[j, j]


@njit(cache=True, error_model="numpy")
def _find_reasonable_eps(theta, lp, grad, z, minv, chol, eps, family, X, y, event, Mb,
                         Ib, G, h, sc, loc, scale):
    d = theta.shape[0]
    p = np.empty(d)
    th = np.empty(d)
    g = np.empty(d)
    direction = 0
    for _ in range(60):
        _momentum(z, chol, p)
        for j in range(d):
            th[j] = theta[j]
            g[j] = grad[j]
        h0 = lp - _kinetic(p, minv)
        lp1 = _leapfrog(th, p, g, eps, minv, 1, family, X, y, event, Mb, Ib,
                        G, h, sc, loc, scale)
        dh = lp1 - _kinetic(p, minv) - h0 if math.isfinite(lp1) else -np.inf
        if direction == 0:
            direction = 1 if dh > math.log(0.8) else -1
        if direction == 1 and not dh > math.log(0.8):
            break
        if direction == -1 and dh > math.log(0.8):
            break
        eps = eps * 2.0 if direction == 1 else eps * 0.5
        if eps < 1e-10 or eps > 1e3:
            break
    return eps


@njit(cache=True, error_model="numpy")
def hmc_chain(theta0, n_warmup, n_keep, z, u_accept, u_jitter, metric_flag, window_end,
              int_time, max_steps, target_accept, family, X, y, event, Mb, Ib, G, h, sc,
              loc, scale):
    """Run one chain with a dense metric.

    Returns ``(draws, accept, divergent, leapfrogs, eps, inv_metric)``.
    ``z`` holds standard normal momentum draws (one row per iteration);
    ``metric_flag`` marks warmup iterations that feed the covariance estimate
    and ``window_end`` the iterations after which the metric is updated.
    """
    d = theta0.shape[0]
    n_iter = n_warmup + n_keep
    theta = theta0.copy()
    grad = np.empty(d)
    lp = logp_grad(theta, family, X, y, event, Mb, Ib, G, h, sc, loc, scale, grad)
    minv = np.eye(d)
    chol = np.eye(d)
    draws = np.empty((n_keep, d))
    accept = np.empty(n_iter)
    divergent = np.zeros(n_iter, dtype=np.int64)
    leapfrogs = np.zeros(n_iter, dtype=np.int64)

    eps = _find_reasonable_eps(theta, lp, grad, z[0], minv, chol, 1.0, family, X, y, event,
                               Mb, Ib, G, h, sc, loc, scale)
    # dual averaging state
    gamma, t0, kappa = 0.05, 10.0, 0.75
    mu = math.log(10.0 * eps)
    hbar = 0.0
    log_eps_bar = 0.0
    t = 0
    # Welford accumulators for the metric window
    wn = 0
    wmean = np.zeros(d)
    wcov = np.zeros((d, d))
    delta = np.empty(d)

    p = np.empty(d)
    th = np.empty(d)
    g = np.empty(d)
    for it in range(n_iter):
        _momentum(z[it], chol, p)
        for j in range(d):
            th[j] = theta[j]
            g[j] = grad[j]
        h0 = lp - _kinetic(p, minv)
        n_steps = int(math.ceil(int_time * (0.5 + u_jitter[it]) / eps))
        if n_steps < 1:
            n_steps = 1
        if n_steps > max_steps:
            n_steps = max_steps
        leapfrogs[it] = n_steps
        lp1 = _leapfrog(th, p, g, eps, minv, n_steps, family, X, y, event, Mb, Ib,
                        G, h, sc, loc, scale)
        if math.isfinite(lp1):
            dh = lp1 - _kinetic(p, minv) - h0
        else:
            dh = -np.inf
        if not dh > -MAX_DELTA_H:
            divergent[it] = 1
            a = 0.0
        else:
            a = 1.0 if dh >= 0 else math.exp(dh)
        accept[it] = a
        if u_accept[it] < a:
            for j in range(d):
                theta[j] = th[j]
                grad[j] = g[j]
            lp = lp1

        if it < n_warmup:
            t += 1
            w = 1.0 / (t + t0)
            hbar = (1.0 - w) * hbar + w * (target_accept - a)
            log_eps = mu - math.sqrt(t) / gamma * hbar
            eta = t ** (-kappa)
            log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar
            eps = math.exp(log_eps)
            if metric_flag[it]:
                wn += 1
                for j in range(d):
                    delta[j] = theta[j] - wmean[j]
                    wmean[j] += delta[j] / wn
                for j in range(d):
                    for k in range(d):
                        wcov[j, k] += delta[j] * (theta[k] - wmean[k])
            if window_end[it] and wn > 2:
                shrink = wn / (wn + 5.0)
                for j in range(d):
                    for k in range(d):
                        minv[j, k] = shrink * wcov[j, k] / (wn - 1)
                    minv[j, j] += 1e-3 * (5.0 / (wn + 5.0))
                chol = np.linalg.cholesky(minv)
                wmean[:] = 0.0
                wcov[:, :] = 0.0
                wn = 0
                eps = _find_reasonable_eps(theta, lp, grad, z[it + 1], minv, chol, eps,
                                           family, X, y, event, Mb, Ib, G, h, sc, loc, scale)
                mu = math.log(10.0 * eps)
                hbar = 0.0
                log_eps_bar = 0.0
                t = 0
            if it == n_warmup - 1:
                eps = math.exp(log_eps_bar)
        else:
            for j in range(d):
                draws[it - n_warmup, j] = theta[j]
    return draws, accept, divergent, leapfrogs, eps, minv


def adaptation_windows(n_warmup: int, init_buffer: int = 75, term_buffer: int = 50,
                       base_window: int = 25) -> tuple[np.ndarray, np.ndarray]:
    """Metric adaptation schedule: (metric_flag, window_end) boolean arrays.

    Slow windows double in length between a fast initial and a fast terminal
    buffer. Short warmups shrink the buffers to 15% / 10% of warmup.
    """
    flag = np.zeros(n_warmup, dtype=np.bool_)
    end = np.zeros(n_warmup, dtype=np.bool_)
    if n_warmup < 20:
        return flag, end
    if init_buffer + term_buffer + base_window > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - init_buffer - term_buffer
    start = init_buffer
    stop = n_warmup - term_buffer
    width = base_window
    while start < stop:
        nxt = start + width
        # absorb a remainder too short for its own doubled window
        if nxt + 2 * width > stop:
            nxt = stop
        flag[start:nxt] = True
        end[nxt - 1] = True
        start = nxt
        width *= 2
    return flag, end
