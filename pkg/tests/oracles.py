"""Independent reference implementations used as test oracles."""
from fractions import Fraction

import numpy as np


def otsu_brute_force(img) -> int:
    """Smallest t maximizing w0*w1*(mu0-mu1)^2 over all 256 thresholds, exactly."""
    v = np.asarray(img).ravel().astype(int)
    best_t, best = None, Fraction(-1)
    for t in range(256):
        lo, hi = v[v <= t], v[v > t]
        if lo.size == 0 or hi.size == 0:
            continue
        w0, w1 = Fraction(lo.size, v.size), Fraction(hi.size, v.size)
        mu0, mu1 = Fraction(int(lo.sum()), lo.size), Fraction(int(hi.sum()), hi.size)
        var = w0 * w1 * (mu0 - mu1) ** 2
        if var > best:
            best_t, best = t, var
    return best_t


def convolve2d_reflect(img, kernel2d):
    """Direct 2-D correlation with half-sample symmetric padding."""
    img = np.asarray(img, float)
    kh, kw = kernel2d.shape
    ph, pw = kh // 2, kw // 2
    pad = np.pad(img, ((ph, ph), (pw, pw)), mode="symmetric")
    out = np.zeros_like(img)
    for i in range(img.shape[0]):
        for j in range(img.shape[1]):
            out[i, j] = (pad[i:i + kh, j:j + kw] * kernel2d).sum()
    return out


def erode_naive(mask, kh, kw):
    """Erosion with a kh x kw box anchored at offset (kh//2, kw//2); outside is background."""
    m = np.asarray(mask, bool)
    h, w = m.shape
    out = np.zeros_like(m)
    for i in range(h):
        for j in range(w):
            i0, j0 = i - kh // 2, j - kw // 2
            if i0 < 0 or j0 < 0 or i0 + kh > h or j0 + kw > w:
                continue
            out[i, j] = m[i0:i0 + kh, j0:j0 + kw].all()
    return out


def bernstein_naive(t, degree):
    from math import comb

    t = np.asarray(t, float)
    return np.stack([comb(degree, k) * t**k * (1 - t) ** (degree - k) for k in range(degree + 1)], axis=-1)


def quantile_type7(values, q):
    """Linear-interpolation sample quantile from the sorted order statistics."""
    v = sorted(float(x) for x in values)
    h = (len(v) - 1) * q
    lo = int(h)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (h - lo) * (v[hi] - v[lo])
