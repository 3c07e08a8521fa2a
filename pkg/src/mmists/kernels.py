"""Hot numeric kernels: masked row softmax, layer norm, bilinear resize, Adam update.

Each kernel exists twice: a numba ``@njit`` version and a pure-numpy fallback.
The numba path is used when available; set ``MMISTS_NUMBA=0`` to force the
numpy path (useful for debugging and for the benchmark in ``benchmarks/``).
The two paths agree to float64 roundoff but not necessarily bitwise, because
numpy uses pairwise summation; determinism guarantees hold within one path.
"""

from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("MMISTS_NUMBA", "1").strip().lower()
_WANT_NUMBA = _flag not in ("0", "false", "off", "no")


# ---------------------------------------------------------------------------
# pure-numpy reference implementations

def _softmax_rows_np(logits, key_mask):
    """Row softmax of a (R, C) matrix; key_mask is a (C,) 0/1 vector.

    Masked columns get probability exactly 0.0 so they cannot perturb sums.
    """
    masked = np.where(key_mask > 0.0, logits, -np.inf)
    mx = np.max(masked, axis=1, keepdims=True)
    e = np.exp(logits - mx) * key_mask
    s = np.sum(e, axis=1, keepdims=True)
    return e / s


def _softmax_rows_vjp_np(probs, grad, key_mask):
    dot = np.sum(grad * probs, axis=1, keepdims=True)
    return probs * (grad - dot) * key_mask


def _layer_norm_fwd_np(x, gamma, beta, eps):
    mean = np.mean(x, axis=1, keepdims=True)
    var = np.mean((x - mean) ** 2, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return xhat * gamma + beta, xhat, inv_std[:, 0]


def _layer_norm_vjp_np(grad, xhat, inv_std, gamma):
    dbeta = np.sum(grad, axis=0)
    dgamma = np.sum(grad * xhat, axis=0)
    dxhat = grad * gamma
    m1 = np.mean(dxhat, axis=1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * inv_std[:, None]
    return dx, dgamma, dbeta


def _bilinear_resize_np(src, out_h, out_w):
    """Align-corners bilinear resize of one (H, W) channel to (out_h, out_w)."""
    h, w = src.shape
    out = np.empty((out_h, out_w), dtype=np.float64)
    ys = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.minimum(ys.astype(np.int64), h - 1)
    x0 = np.minimum(xs.astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = src[np.ix_(y0, x0)]
    b = src[np.ix_(y0, x1)]
    c = src[np.ix_(y1, x0)]
    d = src[np.ix_(y1, x1)]
    out[:] = (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
              + c * fy * (1 - fx) + d * fy * fx)
    return out


def _adam_update_np(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# numba versions (same math, explicit loops)

USING_NUMBA = False
if _WANT_NUMBA:
    try:
        from numba import njit

        @njit(cache=True)
        def _softmax_rows_nb(logits, key_mask):
            r, c = logits.shape
            out = np.zeros((r, c), dtype=np.float64)
            for i in range(r):
                mx = -np.inf
                for j in range(c):
                    if key_mask[j] > 0.0 and logits[i, j] > mx:
                        mx = logits[i, j]
                s = 0.0
                for j in range(c):
                    if key_mask[j] > 0.0:
                        e = np.exp(logits[i, j] - mx)
                        out[i, j] = e
                        s += e
                for j in range(c):
                    out[i, j] /= s
            return out

        @njit(cache=True)
        def _softmax_rows_vjp_nb(probs, grad, key_mask):
            r, c = probs.shape
            out = np.zeros((r, c), dtype=np.float64)
            for i in range(r):
                dot = 0.0
                for j in range(c):
                    dot += grad[i, j] * probs[i, j]
                for j in range(c):
                    if key_mask[j] > 0.0:
                        out[i, j] = probs[i, j] * (grad[i, j] - dot)
            return out

        @njit(cache=True)
        def _layer_norm_fwd_nb(x, gamma, beta, eps):
            r, c = x.shape
            y = np.empty((r, c), dtype=np.float64)
            xhat = np.empty((r, c), dtype=np.float64)
            inv_std = np.empty(r, dtype=np.float64)
            for i in range(r):
                mean = 0.0
                for j in range(c):
                    mean += x[i, j]
                mean /= c
                var = 0.0
                for j in range(c):
                    d = x[i, j] - mean
                    var += d * d
                var /= c
                istd = 1.0 / np.sqrt(var + eps)
                inv_std[i] = istd
                for j in range(c):
                    xh = (x[i, j] - mean) * istd
                    xhat[i, j] = xh
                    y[i, j] = xh * gamma[j] + beta[j]
            return y, xhat, inv_std

        @njit(cache=True)
        def _layer_norm_vjp_nb(grad, xhat, inv_std, gamma):
            r, c = grad.shape
            dx = np.empty((r, c), dtype=np.float64)
            dgamma = np.zeros(c, dtype=np.float64)
            dbeta = np.zeros(c, dtype=np.float64)
            for i in range(r):
                m1 = 0.0
                m2 = 0.0
                for j in range(c):
                    g = grad[i, j]
                    dgamma[j] += g * xhat[i, j]
                    dbeta[j] += g
                    dxh = g * gamma[j]
                    m1 += dxh
                    m2 += dxh * xhat[i, j]
                m1 /= c
                m2 /= c
                for j in range(c):
                    dxh = grad[i, j] * gamma[j]
                    dx[i, j] = (dxh - m1 - xhat[i, j] * m2) * inv_std[i]
            return dx, dgamma, dbeta

        @njit(cache=True)
        def _bilinear_resize_nb(src, out_h, out_w):
            h, w = src.shape
            out = np.empty((out_h, out_w), dtype=np.float64)
            for i in range(out_h):
                y = i * (h - 1.0) / (out_h - 1.0) if out_h > 1 else 0.0
                y0 = int(y)
                if y0 > h - 1:
                    y0 = h - 1
                y1 = y0 + 1 if y0 + 1 < h else h - 1
                fy = y - y0
                for j in range(out_w):
                    x = j * (w - 1.0) / (out_w - 1.0) if out_w > 1 else 0.0
                    x0 = int(x)
                    if x0 > w - 1:
                        x0 = w - 1
                    x1 = x0 + 1 if x0 + 1 < w else w - 1
                    fx = x - x0
                    out[i, j] = (src[y0, x0] * (1 - fy) * (1 - fx)
                                 + src[y0, x1] * (1 - fy) * fx
                                 + src[y1, x0] * fy * (1 - fx)
                                 + src[y1, x1] * fy * fx)
            return out

        @njit(cache=True)
        def _adam_update_nb(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
            flat_p = param.ravel()
            flat_g = grad.ravel()
            flat_m = m.ravel()
            flat_v = v.ravel()
            for i in range(flat_p.size):
                g = flat_g[i]
                flat_m[i] = beta1 * flat_m[i] + (1.0 - beta1) * g
                flat_v[i] = beta2 * flat_v[i] + (1.0 - beta2) * g * g
                flat_p[i] -= lr * (flat_m[i] / bc1) / (np.sqrt(flat_v[i] / bc2) + eps)

        USING_NUMBA = True
    except ImportError:
        USING_NUMBA = False

if USING_NUMBA:
    softmax_rows = _softmax_rows_nb
    softmax_rows_vjp = _softmax_rows_vjp_nb
    layer_norm_fwd = _layer_norm_fwd_nb
    layer_norm_vjp = _layer_norm_vjp_nb
    bilinear_resize = _bilinear_resize_nb
    adam_update = _adam_update_nb
else:
    softmax_rows = _softmax_rows_np
    softmax_rows_vjp = _softmax_rows_vjp_np
    layer_norm_fwd = _layer_norm_fwd_np
    layer_norm_vjp = _layer_norm_vjp_np
    bilinear_resize = _bilinear_resize_np
    adam_update = _adam_update_np

NUMPY_KERNELS = {
    "softmax_rows": _softmax_rows_np,
    "softmax_rows_vjp": _softmax_rows_vjp_np,
    "layer_norm_fwd": _layer_norm_fwd_np,
    "layer_norm_vjp": _layer_norm_vjp_np,
    "bilinear_resize": _bilinear_resize_np,
    "adam_update": _adam_update_np,
}

ACTIVE_KERNELS = {
    "softmax_rows": softmax_rows,
    "softmax_rows_vjp": softmax_rows_vjp,
    "layer_norm_fwd": layer_norm_fwd,
    "layer_norm_vjp": layer_norm_vjp,
    "bilinear_resize": bilinear_resize,
    "adam_update": adam_update,
}
