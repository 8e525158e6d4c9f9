"""Forward/backward primitives for the encoder, written against numpy.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache and returns input gradients
followed by parameter gradients. Arrays carry leading batch dimensions.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _sum_leading(g: np.ndarray, ndim: int) -> np.ndarray:
    return g.reshape(-1, *g.shape[g.ndim - ndim :]).sum(axis=0)


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(dy, x, w):
    dx = dy @ w.T
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = _sum_leading(dy, 1)
    return dx, dw, db


def layernorm_forward(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv)


def layernorm_backward(dy, cache, gamma):
    xhat, inv = cache
    dgamma = _sum_leading(dy * xhat, 1)
    dbeta = _sum_leading(dy, 1)
    dxhat = dy * gamma
    n = xhat.shape[-1]
    dx = inv / n * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def gelu_forward(x):
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return x * cdf, (x, cdf)


def gelu_backward(dy, cache):
    x, cdf = cache
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return dy * (cdf + x * pdf)


def softmax(s, axis=-1, out=None):
    out = np.subtract(s, s.max(axis=axis, keepdims=True), out=out)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)
    return out


def log_softmax(s, axis=-1):
    s = s - s.max(axis=axis, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def dropout_forward(x, rate, rng):
    if rng is None or rate <= 0.0:
        return x, None
    dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
    keep = rng.random(x.shape, dtype=dtype) >= rate
    keep = keep.astype(x.dtype)
    keep *= 1.0 / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dy, keep):
    return dy if keep is None else dy * keep


def attention_forward(x, p: dict, n_heads: int, bias=None):
    """Multi-head self-attention.

    ``p`` holds q/k/v/o weights (d, d) and biases (d,). ``bias`` is an
    additive score mask broadcastable to (B, H, N, N); ``-inf`` entries get
    exactly zero attention weight.
    """
    B, N, d = x.shape
    dh = d // n_heads
    scale = 1.0 / math.sqrt(dh)

    def heads(a):
        return a.reshape(B, N, n_heads, dh).transpose(0, 2, 1, 3)

    q = heads(x @ p["q.weight"] + p["q.bias"])
    k = heads(x @ p["k.weight"] + p["k.bias"])
    v = heads(x @ p["v.weight"] + p["v.bias"])
    scores = q @ k.transpose(0, 1, 3, 2)
    scores *= scale
    if bias is not None:
        scores += bias
    attn = softmax(scores, out=scores)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(B, N, d)
    out = ctx @ p["o.weight"] + p["o.bias"]
    return out, (x, q, k, v, attn, ctx)


def attention_backward(dout, cache, p: dict, n_heads: int):
    x, q, k, v, attn, ctx = cache
    B, N, d = x.shape
    dh = d // n_heads
    scale = 1.0 / math.sqrt(dh)
    grads = {}
    dctx, grads["o.weight"], grads["o.bias"] = linear_backward(dout, ctx, p["o.weight"])
    dctx = dctx.reshape(B, N, n_heads, dh).transpose(0, 2, 1, 3)
    dattn = dctx @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dctx
    # softmax backward, in place on dattn
    dscores = dattn
    dscores -= np.einsum("bhij,bhij->bhi", dattn, attn)[..., None]
    dscores *= attn
    dscores *= scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    def merge(a):
        return a.transpose(0, 2, 1, 3).reshape(B, N, d)

    dx = np.zeros_like(x)
    for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
        dxi, grads[f"{name}.weight"], grads[f"{name}.bias"] = linear_backward(
            merge(dproj), x, p[f"{name}.weight"]
        )
        dx += dxi
    return dx, grads


def encoder_layer_forward(x, p: dict, n_heads: int, dropout: float, rng=None, bias=None):
    """Pre-norm transformer layer: x + Attn(LN(x)), then + FFN(LN(.)).

    Dropout is applied to the attention output, the FFN hidden activation and
    the FFN output when ``rng`` is given.
    """
    sub = lambda prefix: {k[len(prefix) :]: v for k, v in p.items() if k.startswith(prefix)}
    h1, ln1 = layernorm_forward(x, p["norm1.scale"], p["norm1.shift"])
    a, attn_c = attention_forward(h1, sub("attn."), n_heads, bias)
    a, drop1 = dropout_forward(a, dropout, rng)
    x1 = x + a
    h2, ln2 = layernorm_forward(x1, p["norm2.scale"], p["norm2.shift"])
    f1, ff1_in = linear_forward(h2, p["ff1.weight"], p["ff1.bias"])
    g, gelu_c = gelu_forward(f1)
    g, drop2 = dropout_forward(g, dropout, rng)
    f2, ff2_in = linear_forward(g, p["ff2.weight"], p["ff2.bias"])
    f2, drop3 = dropout_forward(f2, dropout, rng)
    out = x1 + f2
    return out, (ln1, attn_c, drop1, ln2, ff1_in, gelu_c, drop2, ff2_in, drop3)


def encoder_layer_backward(dout, cache, p: dict, n_heads: int):
    ln1, attn_c, drop1, ln2, ff1_in, gelu_c, drop2, ff2_in, drop3 = cache
    sub = lambda prefix: {k[len(prefix) :]: v for k, v in p.items() if k.startswith(prefix)}
    grads = {}
    df2 = dropout_backward(dout, drop3)
    dg, grads["ff2.weight"], grads["ff2.bias"] = linear_backward(df2, ff2_in, p["ff2.weight"])
    dg = dropout_backward(dg, drop2)
    df1 = gelu_backward(dg, gelu_c)
    dh2, grads["ff1.weight"], grads["ff1.bias"] = linear_backward(df1, ff1_in, p["ff1.weight"])
    dx1_ln, grads["norm2.scale"], grads["norm2.shift"] = layernorm_backward(
        dh2, ln2, p["norm2.scale"]
    )
    dx1 = dout + dx1_ln
    da = dropout_backward(dx1, drop1)
    dh1, attn_grads = attention_backward(da, attn_c, sub("attn."), n_heads)
    grads.update({f"attn.{k}": v for k, v in attn_grads.items()})
    dx_ln, grads["norm1.scale"], grads["norm1.shift"] = layernorm_backward(
        dh1, ln1, p["norm1.scale"]
    )
    return dx1 + dx_ln, grads
