"""Independent reference computations for the tests.

Everything here is written with explicit loops over plain float64 arrays and
never calls into ``hass`` ops, so it can check the tape implementation.
"""

import math

import numpy as np


def softmax_row(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def layer_norm_vec(x, gain, bias, eps):
    d = len(x)
    mu = sum(x) / d
    var = sum((v - mu) ** 2 for v in x) / d
    return [gain[i] * (x[i] - mu) / math.sqrt(var + eps) + bias[i] for i in range(d)]


def layer_norm_cols(X, gain, bias, eps):
    out = np.zeros_like(X)
    for j in range(X.shape[1]):
        out[:, j] = layer_norm_vec(list(X[:, j]), gain, bias, eps)
    return out


def linear_cols(W, b, X):
    """W X + b 1^T, one column at a time."""
    rows, N = W.shape[0], X.shape[1]
    out = np.zeros((rows, N))
    for j in range(N):
        for r in range(rows):
            out[r, j] = sum(W[r, c] * X[c, j] for c in range(W.shape[1])) + b[r]
    return out


def attention(Q, K, V, p):
    """Multi-head attention from the per-head formulas, heads evaluated separately.

    ``p`` is a dict of numpy arrays: lists ``w_q, b_q, w_k, b_k, w_v, b_v`` and
    ``w_o, b_o``.
    """
    m = len(p["w_q"])
    d_k = Q.shape[0]
    N = Q.shape[1]
    blocks = []
    weights = []
    for n in range(m):
        qn = linear_cols(p["w_q"][n], p["b_q"][n], Q)
        kn = linear_cols(p["w_k"][n], p["b_k"][n], K)
        vn = linear_cols(p["w_v"][n], p["b_v"][n], V)
        scores = [[sum(qn[r, i] * kn[r, j] for r in range(qn.shape[0])) / math.sqrt(d_k / m)
                   for j in range(N)] for i in range(N)]
        A = np.array([softmax_row(row) for row in scores])
        weights.append(A)
        # (V A^T)[r, i] = sum_j V[r, j] A[i, j]
        head = np.zeros((vn.shape[0], N))
        for r in range(vn.shape[0]):
            for i in range(N):
                head[r, i] = sum(vn[r, j] * A[i, j] for j in range(N))
        blocks.append(head)
    stacked = np.vstack(blocks)
    return linear_cols(p["w_o"], p["b_o"], stacked), weights


def ffn(X, p):
    h = linear_cols(p["w1"], p["b1"], X)
    h = np.where(h > 0, h, 0.0)
    return linear_cols(p["w2"], p["b2"], h)


def block(X, p, eps):
    F = layer_norm_cols(X + attention(X, X, X, p["attn"])[0], p["ln1"]["gain"], p["ln1"]["bias"], eps)
    return layer_norm_cols(F + ffn(F, p["ffn"]), p["ln2"]["gain"], p["ln2"]["bias"], eps)


def intra(I, p, eps=1e-5):
    C, T, D = I.shape
    X = np.zeros((T * D, C))
    for c in range(C):
        X[:, c] = I[c].reshape(-1)
    Y = block(X, p, eps)
    out = np.zeros_like(I)
    for c in range(C):
        out[c] = Y[:, c].reshape(T, D)
    return out


def inter(F, p, eps=1e-5):
    C, T, D = F.shape
    X = np.zeros((C * D, T))
    for t in range(T):
        X[:, t] = F[:, t, :].reshape(-1)
    Y = block(X, p, eps)
    out = np.zeros_like(F)
    for t in range(T):
        out[:, t, :] = Y[:, t].reshape(C, D)
    return out


def encode(I, params, eps=1e-5):
    return inter(intra(I, params["intra"], eps), params["inter"], eps)


def block_dict(block_params):
    """Plain-array view of a ``hass.encoder.BlockParams``."""
    a = block_params.attn
    return {
        "attn": {k: [t.data for t in getattr(a, k)] for k in ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v")}
        | {"w_o": a.w_o.data, "b_o": a.b_o.data},
        "ffn": {k: getattr(block_params.ffn, k).data for k in ("w1", "b1", "w2", "b2")},
        "ln1": {"gain": block_params.ln1.gain.data, "bias": block_params.ln1.bias.data},
        "ln2": {"gain": block_params.ln2.gain.data, "bias": block_params.ln2.bias.data},
    }


def encoder_dict(enc):
    return {"intra": block_dict(enc.intra), "inter": block_dict(enc.inter)}


def central_difference(f, x, h=1e-4):
    """Gradient of scalar ``f`` at array ``x`` by central differences (x is restored)."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = f()
        flat[i] = orig - h
        minus = f()
        flat[i] = orig
        gf[i] = (plus - minus) / (2 * h)
    return g


def richardson_difference(f, x, h=1e-3):
    """Central differences at h and h/2 combined to cancel the O(h^2) term."""
    coarse = central_difference(f, x, h)
    fine = central_difference(f, x, h / 2)
    return (4 * fine - coarse) / 3
