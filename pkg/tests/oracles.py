"""Independent reference computations used to derive and check frozen values.

Nothing here imports the package's numerical code: schedules are rebuilt
with plain ``math``, the single-Gaussian sampler is composed as scalar
affine maps, and attention / SSIM are written out the long way.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm


def alpha_bar(T=50, beta_start=0.00085, beta_end=0.012, base=1000):
    """[1, abar_1, ..., abar_T] for the scaled-linear schedule, looped in Python."""
    lo, hi = math.sqrt(beta_start), math.sqrt(beta_end)
    prod, train = 1.0, []
    for i in range(base):
        beta = (lo + (hi - lo) * i / (base - 1)) ** 2
        prod *= 1.0 - beta
        train.append(prod)
    out = [1.0]
    for k in range(1, T + 1):
        out.append(train[int(math.floor(k * base / T + 0.5)) - 1])
    return out


def ddim_scalar(z, eps, a_t, a_prev):
    x0 = (z - math.sqrt(1 - a_t) * eps) / math.sqrt(a_t)
    return math.sqrt(a_prev) * x0 + math.sqrt(1 - a_prev) * eps


def _eps_coef(a, s0):
    # single Gaussian: eps(z) = c * (z - sqrt(a) * mu)
    return math.sqrt(1 - a) / (a * s0 + 1 - a)


def affine_round_trip(ab, s0, t_R=None):
    """(P, Q) with invert(t_R steps) then sample(t_R steps) = P*z0 + Q*mu per coordinate."""
    T = len(ab) - 1
    t_R = T if t_R is None else t_R
    p, q = 1.0, 0.0
    for t in range(1, t_R + 1):  # inversion, eps at z_{t-1} with step t coefficients
        a, ap = ab[t], ab[t - 1]
        c = _eps_coef(a, s0)
        A = math.sqrt(a / ap)
        B = math.sqrt(a) * (math.sqrt(1 / a - 1) - math.sqrt(1 / ap - 1))
        p, q = (A + B * c) * p, (A + B * c) * q - B * c * math.sqrt(a)
    for t in range(t_R, 0, -1):
        a, ap = ab[t], ab[t - 1]
        c = _eps_coef(a, s0)
        A = math.sqrt(ap / a)
        B = math.sqrt(ap) * (math.sqrt(1 / ap - 1) - math.sqrt(1 / a - 1))
        p, q = (A + B * c) * p, (A + B * c) * q - B * c * math.sqrt(a)
    return p, q


def rel_l2(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def log_marginal(z, a, means, weights, s0):
    """log sum_i w_i N(z; sqrt(a) mu_i, (a s0 + 1 - a) I) via scipy."""
    scale = math.sqrt(a * s0 + 1 - a)
    terms = [math.log(w) + norm.logpdf(z, math.sqrt(a) * m, scale).sum() for m, w in zip(means, weights)]
    return float(logsumexp(terms))


def fd_eps(z, a, means, weights, s0, h=1e-4):
    """-sqrt(1 - a) * grad log p by central differences."""
    grad = np.zeros_like(z)
    flat = grad.reshape(-1)
    zf = z.reshape(-1)
    for i in range(zf.size):
        up, dn = zf.copy(), zf.copy()
        up[i] += h
        dn[i] -= h
        flat[i] = (
            log_marginal(up.reshape(z.shape), a, means, weights, s0)
            - log_marginal(dn.reshape(z.shape), a, means, weights, s0)
        ) / (2 * h)
    return -math.sqrt(1 - a) * grad


def attention(q, k, v):
    d = q.shape[1]
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        logits = np.array([q[i] @ k[j] for j in range(k.shape[0])]) / math.sqrt(d)
        w = np.exp(logits - logits.max())
        w /= w.sum()
        out[i] = sum(w[j] * v[j] for j in range(k.shape[0]))
    return out


def ssim_windows(x, y, data_range, win=8, k1=0.01, k2=0.03):
    """Mean SSIM over every valid win x win window of one plane, one window at a time."""
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    for i in range(x.shape[0] - win + 1):
        for j in range(x.shape[1] - win + 1):
            a = x[i : i + win, j : j + win].ravel()
            b = y[i : i + win, j : j + win].ravel()
            ma, mb = a.mean(), b.mean()
            va, vb = a.var(), b.var()
            cov = ((a - ma) * (b - mb)).mean()
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))
