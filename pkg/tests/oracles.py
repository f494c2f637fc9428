"""Independent reference implementations used to check the production code.

Everything here is deliberately naive (nested loops, per-pair enumeration,
central differences) and shares no code with the library paths it verifies.
"""

from __future__ import annotations

import numpy as np


def conv2d_oracle(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                  stride: int = 1, padding: int = 0) -> np.ndarray:
    """Direct nested-loop cross-correlation in double precision."""
    x = x.astype(np.float64)
    w = w.astype(np.float64)
    n, cin, h, ww = x.shape
    cout, _, kh, kw = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (ww + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for ni in range(n):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += x[ni, ci, i * stride + u, j * stride + v] * w[co, ci, u, v]
                    out[ni, co, i, j] = acc + b[co]
    return out


def maxpool2d_oracle(x: np.ndarray) -> np.ndarray:
    """Exhaustive 2x2/stride-2 window scan."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2), dtype=x.dtype)
    for ni in range(n):
        for ci in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[ni, ci, i, j] = max(x[ni, ci, 2 * i, 2 * j], x[ni, ci, 2 * i, 2 * j + 1],
                                            x[ni, ci, 2 * i + 1, 2 * j], x[ni, ci, 2 * i + 1, 2 * j + 1])
    return out


def global_avg_pool_oracle(x: np.ndarray) -> np.ndarray:
    """Per-channel direct summation."""
    n, c, h, w = x.shape
    out = np.zeros((n, c))
    for ni in range(n):
        for ci in range(c):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += float(x[ni, ci, i, j])
            out[ni, ci] = acc / (h * w)
    return out


def softmax_cross_entropy_oracle(logits: np.ndarray, labels: np.ndarray) -> float:
    """Direct per-row formula in double precision."""
    logits = logits.astype(np.float64)
    total = 0.0
    for row, label in zip(logits, labels):
        p = np.exp(row - row.max())
        p /= p.sum()
        total += -np.log(p[int(label)])
    return total / len(labels)


def adam_oracle(theta0: float, grads: list[float], lr: float, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8) -> float:
    """Scalar ADAM with bias correction, stepped in double precision."""
    theta, m, v = float(theta0), 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta


def auc_pairwise_oracle(scores, labels) -> float:
    """AUC as the probability a random positive outscores a random negative;
    ties earn half credit."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    if not pos or not neg:
        raise ValueError("both classes required")
    total = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1.0
            elif sp == sn:
                total += 0.5
    return total / (len(pos) * len(neg))


def bilinear_oracle(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear sampling, one output pixel at a time."""
    in_h, in_w = src.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            y = i * (in_h - 1) / (out_h - 1) if out_h > 1 else 0.0
            x = j * (in_w - 1) / (out_w - 1) if out_w > 1 else 0.0
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, in_h - 1), min(x0 + 1, in_w - 1)
            fy, fx = y - y0, x - x0
            top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
            bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out


# -- finite-difference gradient checking --------------------------------------

def finite_difference_grads(f, arrays, step: float = 1e-4):
    """Central differences of the scalar ``f()`` w.r.t. each array in ``arrays``.

    ``f`` takes no arguments and reads the (mutated-in-place) arrays, so it
    must rebuild any internal state (e.g. reseeded dropout masks) on each call.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f()
            flat[i] = orig - step
            f_minus = f()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       denom_floor: float = 1e-3) -> float:
    """Elementwise |a-n| / max(|a|, |n|, floor); the floor keeps near-zero
    gradients (where both routes agree to ~1e-9 absolute) from dividing by 0."""
    diff = np.abs(analytic.astype(np.float64) - numeric.astype(np.float64))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), denom_floor)
    return float((diff / denom).max()) if diff.size else 0.0


def spaced_values(rng, shape, spacing: float = 0.01) -> np.ndarray:
    """Random values that are pairwise distinct and bounded away from zero,
    so ReLU kinks and max-pool ties stay clear of the finite-difference step."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n).astype(np.float64) - n / 2) * spacing + spacing / 2
    return vals.reshape(shape)
