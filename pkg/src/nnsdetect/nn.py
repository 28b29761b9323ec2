"""Minimal numpy layers with explicit backward passes, plus Adam.

Every forward returns ``(out, cache)``
and every backward takes ``(dout, cache)``; parameter gradients are written
into a ``grads`` dict under the same keys as the parameters.
"""

from __future__ import annotations

import numpy as np


# --- conv / pool -----------------------------------------------------------
# Image activations are channels-first over the batch: [C, N, H, W].

def conv3x3_forward(x, w, b):
    """Same-padded 3x3 convolution. x: [C, N, H, W]; w: [Cout, C, 3, 3]."""
    c, n, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((c, 3, 3, n, h, wd), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, ky, kx] = xp[:, :, ky:ky + h, kx:kx + wd]
    cols = cols.reshape(c * 9, -1)
    out = w.reshape(w.shape[0], -1) @ cols + b[:, None]
    return out.reshape(-1, n, h, wd), (cols, x.shape, w)


def conv3x3_backward(dout, cache, need_dx=True):
    cols, xshape, w = cache
    c, n, h, wd = xshape
    cout = w.shape[0]
    d = dout.reshape(cout, -1)
    dw = (d @ cols.T).reshape(w.shape)
    db = d.sum(1)
    if not need_dx:
        return None, dw, db
    dcols = (w.reshape(cout, -1).T @ d).reshape(c, 3, 3, n, h, wd)
    dxp = np.zeros((c, n, h + 2, wd + 2), dtype=dout.dtype)
    for ky in range(3):
        for kx in range(3):
            dxp[:, :, ky:ky + h, kx:kx + wd] += dcols[:, ky, kx]
    return dxp[:, :, 1:-1, 1:-1], dw, db


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


_POOL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


def maxpool2_forward(x):
    """2x2 max pool over the last two axes; ties go to the first offset in scan order."""
    views = [x[..., dy::2, dx::2] for dy, dx in _POOL_OFFSETS]
    out = np.maximum(np.maximum(views[0], views[1]), np.maximum(views[2], views[3]))
    taken = np.zeros(out.shape, dtype=bool)
    masks = []
    for v in views:
        m = (v == out) & ~taken
        taken |= m
        masks.append(m)
    return out, (masks, x.shape)


def maxpool2_backward(dout, cache):
    masks, shape = cache
    dx = np.zeros(shape, dtype=dout.dtype)
    for (dy, dxo), m in zip(_POOL_OFFSETS, masks):
        dx[..., dy::2, dxo::2] = dout * m
    return dx


# --- recurrent -------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_forward(x, w_ih, w_hh, b):
    """Unidirectional LSTM over x: [B, T, I]; gate order (input, forget, cell, output).

    Returns the final hidden state [B, H] and the cache for backward.
    """
    bsz, t_len, _ = x.shape
    hid = w_hh.shape[1]
    h = np.zeros((bsz, hid), dtype=x.dtype)
    c = np.zeros((bsz, hid), dtype=x.dtype)
    xw = x @ w_ih.T + b  # [B, T, 4H]
    steps = []
    for t in range(t_len):
        z = xw[:, t] + h @ w_hh.T
        i = _sigmoid(z[:, :hid])
        f = _sigmoid(z[:, hid:2 * hid])
        g = np.tanh(z[:, 2 * hid:3 * hid])
        o = _sigmoid(z[:, 3 * hid:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        steps.append((i, f, g, o, c_prev, h_prev, tc))
    return h, (x, w_ih, w_hh, steps)


def lstm_backward(dh_last, cache, grads, prefix, need_dx=True):
    x, w_ih, w_hh, steps = cache
    bsz, t_len, _ = x.shape
    hid = w_hh.shape[1]
    dz_all = np.empty((bsz, t_len, 4 * hid), dtype=x.dtype)
    dh = dh_last
    dc = np.zeros_like(dh)
    dw_hh = np.zeros_like(w_hh)
    for t in range(t_len - 1, -1, -1):
        i, f, g, o, c_prev, h_prev, tc = steps[t]
        do = dh * tc
        dc = dc + dh * o * (1 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1)
        dz_all[:, t] = dz
        dw_hh += dz.T @ h_prev
        dh = dz @ w_hh
        dc = dc * f
    flat = dz_all.reshape(-1, 4 * hid)
    grads[prefix + ".w_ih"] = flat.T @ x.reshape(-1, x.shape[2])
    grads[prefix + ".w_hh"] = dw_hh
    grads[prefix + ".bias"] = flat.sum(0)
    return (dz_all @ w_ih) if need_dx else None


# --- heads -----------------------------------------------------------------

def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. logits."""
    n = len(labels)
    lp = log_softmax(logits)
    loss = -lp[np.arange(n), labels].mean()
    d = softmax(logits)
    d[np.arange(n), labels] -= 1
    return float(loss), d / n


# --- optimizer -------------------------------------------------------------

class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for k, p in params.items():
            g = grads[k].astype(p.dtype, copy=False)
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (lr_t * m / (np.sqrt(v) + self.eps)).astype(p.dtype, copy=False)
