"""Independent oracles used by the tests.

Everything here is deliberately written without touching the library's
own differentiation or metric code paths: finite differences by explicit
loops, per-element reference metrics, a scalar momentum-sign simulation.
"""

import math

import numpy as np


def fd_gradient(fn, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of scalar fn over every coordinate."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_err(ad: np.ndarray, fd: np.ndarray) -> float:
    ad = np.asarray(ad).reshape(-1)
    fd = np.asarray(fd).reshape(-1)
    return float(np.max(np.abs(ad - fd) / (np.abs(ad) + 1e-8)))


def loop_mse(a: np.ndarray, b: np.ndarray) -> float:
    """Element-by-element MSE with exact (fsum) accumulation."""
    terms = []
    for x, y in zip(a.reshape(-1), b.reshape(-1)):
        terms.append((x - y) * (x - y))
    return math.fsum(terms) / len(terms)


def loop_avg_l2(a: np.ndarray, b: np.ndarray) -> float:
    """Per-pixel RGB euclidean distance averaged over pixels, by loops."""
    _, h, w = a.shape
    vals = []
    for y in range(h):
        for x in range(w):
            s = math.fsum((a[c, y, x] - b[c, y, x]) ** 2 for c in range(3))
            vals.append(math.sqrt(s))
    return math.fsum(vals) / (h * w)


def loop_weighted_moments(features: np.ndarray, valid: np.ndarray):
    """Validity-weighted mean/variance over views, by loops.

    features: [S, C]; valid: [S] of 0/1.  Returns (mean [C], var [C]).
    """
    s, c = features.shape
    n = valid.sum()
    mean = np.zeros(c)
    var = np.zeros(c)
    if n == 0:
        return mean, var
    for j in range(c):
        mean[j] = math.fsum(valid[i] * features[i, j] for i in range(s)) / n
        var[j] = math.fsum(valid[i] * (features[i, j] - mean[j]) ** 2 for i in range(s)) / n
    return mean, var


def scalar_momentum_sign_descent(x0, target, mu, step, n_steps):
    """1-D targeted sign-momentum descent on J = (x - target)^2."""
    x, g = x0, 0.0
    for _ in range(n_steps):
        grad = 2.0 * (x - target)
        g = mu * g + grad / (abs(grad) + 1e-12)
        x = x - step * np.sign(g)
    return x


def composite_reference(sigmas, deltas, colors):
    """Straight transcription of the compositing formula for one ray."""
    k = len(sigmas)
    pixel = np.zeros(3)
    weights = []
    trans = 1.0
    for i in range(k):
        alpha = 1.0 - math.exp(-sigmas[i] * deltas[i])
        w = trans * alpha
        weights.append(w)
        pixel += w * np.asarray(colors[i])
        trans *= 1.0 - alpha
    return pixel, np.array(weights)
