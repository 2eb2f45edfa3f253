"""Pure numpy kernel implementations (fallback backend).

Signatures mirror the compiled extension exactly; both operate on contiguous
float64 arrays.  Activation codes: 0 identity, 1 relu, 2 tanh.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "python"


def _apply_act(y, act):
    if act == 1:
        np.maximum(y, 0.0, out=y)
    elif act == 2:
        np.tanh(y, out=y)
    return y


def conv2d(x, w, b, stride, act):
    """x (Cin,H,W), w (Cout,Cin,k,k), b (Cout,) -> (Cout,Ho,Wo), valid padding."""
    k = w.shape[2]
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    y = np.einsum("oikl,ihwkl->ohw", w, win, optimize=True)
    y += b[:, None, None]
    return _apply_act(y, act)


def linear(x, w, b, act):
    """x (n,), w (m,n), b (m,) -> (m,)."""
    y = w @ x + b
    return _apply_act(y, act)


def _sigmoid(v):
    # piecewise form avoids overflow warnings for large |v|
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def lstm_cell(x, h, c, w, b):
    """One LSTM cell step.

    w is (4H, n+H) with gate rows ordered [input, forget, candidate, output],
    each row acting on concat(x, h); b is (4H,).  Returns (h', c').
    """
    hidden = h.shape[0]
    pre = w @ np.concatenate((x, h)) + b
    i = _sigmoid(pre[0:hidden])
    f = _sigmoid(pre[hidden : 2 * hidden])
    g = np.tanh(pre[2 * hidden : 3 * hidden])
    o = _sigmoid(pre[3 * hidden : 4 * hidden])
    c2 = f * c + i * g
    h2 = o * np.tanh(c2)
    return h2, c2
