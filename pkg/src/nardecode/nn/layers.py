"""Neural layers in plain NumPy with hand-written backward passes.

Shapes are (B, T, D) throughout.  Every layer keeps float64 parameters with
paired gradient buffers and returns an explicit cache from `forward` that
its `backward` consumes; gradients accumulate with `+=` so a batch can be
assembled from several forward/backward calls before an optimizer step.

Padding is handled with boolean key masks (True = real frame/token):
masked key columns are excluded from attention, so padded positions never
influence real ones and receive no gradient.
"""

from __future__ import annotations

import math

import numpy as np

MASK_FILL = -1e30
_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-approximated GELU (smooth, so finite differences stay honest)."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    sech2 = 1.0 - th * th
    return 0.5 * (1.0 + th) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * x**2)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def log_softmax_backward(dlogp: np.ndarray, logp: np.ndarray) -> np.ndarray:
    """d loss / d logits given d loss / d log_softmax(logits)."""
    return dlogp - np.exp(logp) * np.sum(dlogp, axis=-1, keepdims=True)


def softmax_backward(dp: np.ndarray, p: np.ndarray) -> np.ndarray:
    return (dp - np.sum(dp * p, axis=-1, keepdims=True)) * p


def sinusoid_table(length: int, dim: int) -> np.ndarray:
    """Sinusoidal positional encodings, shape (length, dim)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (i // 2) / dim)
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table


def xavier(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-bound, bound, size=(d_in, d_out))


class Dense:
    """Affine map on the last axis: y = x @ w + b."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.w = xavier(rng, d_in, d_out)
        self.b = np.zeros(d_out) if bias else None
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b) if bias else None
        self.calls = 0

    def param_items(self, prefix: str):
        yield prefix + ".w", self.w, self.dw
        if self.b is not None:
            yield prefix + ".b", self.b, self.db

    def forward(self, x: np.ndarray):
        self.calls += 1
        y = x @ self.w
        if self.b is not None:
            y = y + self.b
        return y, x

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        x = cache
        xf = x.reshape(-1, x.shape[-1])
        dyf = dy.reshape(-1, dy.shape[-1])
        self.dw += xf.T @ dyf
        if self.b is not None:
            self.db += dyf.sum(axis=0)
        return dy @ self.w.T


class Embedding:
    """Token id -> vector lookup."""

    def __init__(self, count: int, dim: int, rng: np.random.Generator, scale: float = 0.02):
        self.table = rng.normal(0.0, scale, size=(count, dim))
        self.dtable = np.zeros_like(self.table)

    def param_items(self, prefix: str):
        yield prefix + ".table", self.table, self.dtable

    def forward(self, ids: np.ndarray):
        ids = np.asarray(ids, dtype=np.int64)
        return self.table[ids], ids

    def backward(self, dy: np.ndarray, cache) -> None:
        np.add.at(self.dtable, cache, dy)


class LayerNorm:
    def __init__(self, dim: int, eps: float = 1e-6):
        self.g = np.ones(dim)
        self.b = np.zeros(dim)
        self.dg = np.zeros_like(self.g)
        self.db = np.zeros_like(self.b)
        self.eps = eps

    def param_items(self, prefix: str):
        yield prefix + ".g", self.g, self.dg
        yield prefix + ".b", self.b, self.db

    def forward(self, x: np.ndarray):
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        return xhat * self.g + self.b, (xhat, inv)

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        xhat, inv = cache
        axes = tuple(range(dy.ndim - 1))
        self.dg += (dy * xhat).sum(axis=axes)
        self.db += dy.sum(axis=axes)
        g = dy * self.g
        m1 = g.mean(axis=-1, keepdims=True)
        m2 = (g * xhat).mean(axis=-1, keepdims=True)
        return (g - m1 - xhat * m2) * inv


class MultiHeadAttention:
    """Scaled dot-product attention; self-attention when kv is None."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError("dim must divide evenly into heads")
        self.heads = heads
        self.dh = dim // heads
        self.wq = Dense(dim, dim, rng, bias=False)
        self.wk = Dense(dim, dim, rng, bias=False)
        self.wv = Dense(dim, dim, rng, bias=False)
        self.wo = Dense(dim, dim, rng, bias=False)

    def param_items(self, prefix: str):
        for tag, lin in (("q", self.wq), ("k", self.wk), ("v", self.wv), ("o", self.wo)):
            yield from lin.param_items(f"{prefix}.{tag}")

    def _split(self, x: np.ndarray) -> np.ndarray:
        b, t, _ = x.shape
        return x.reshape(b, t, self.heads, self.dh).transpose(0, 2, 1, 3)

    def _join(self, x: np.ndarray) -> np.ndarray:
        b, h, t, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)

    def forward(self, x: np.ndarray, kv: np.ndarray | None = None,
                key_mask: np.ndarray | None = None, causal: bool = False):
        src = x if kv is None else kv
        q_lin, cq = self.wq.forward(x)
        k_lin, ck = self.wk.forward(src)
        v_lin, cv = self.wv.forward(src)
        q, k, v = self._split(q_lin), self._split(k_lin), self._split(v_lin)
        scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(self.dh)
        if key_mask is not None:
            scores = scores + np.where(key_mask[:, None, None, :], 0.0, MASK_FILL)
        if causal:
            tq, tk = scores.shape[-2:]
            scores = scores + np.where(
                np.arange(tq)[:, None] >= np.arange(tk)[None, :], 0.0, MASK_FILL
            )
        p = softmax(scores)
        ctx = self._join(p @ v)
        out, co = self.wo.forward(ctx)
        cache = (cq, ck, cv, co, q, k, v, p, kv is None)
        return out, cache

    def backward(self, dy: np.ndarray, cache):
        cq, ck, cv, co, q, k, v, p, self_attn = cache
        dctx = self._split(self.wo.backward(dy, co))
        dv = p.transpose(0, 1, 3, 2) @ dctx
        dp = dctx @ v.transpose(0, 1, 3, 2)
        ds = softmax_backward(dp, p) / math.sqrt(self.dh)
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dx = self.wq.backward(self._join(dq), cq)
        dsrc = self.wk.backward(self._join(dk), ck) + self.wv.backward(self._join(dv), cv)
        if self_attn:
            return dx + dsrc, None
        return dx, dsrc


class FeedForward:
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.up = Dense(dim, hidden, rng)
        self.down = Dense(hidden, dim, rng)

    def param_items(self, prefix: str):
        yield from self.up.param_items(prefix + ".up")
        yield from self.down.param_items(prefix + ".down")

    def forward(self, x: np.ndarray):
        u, cu = self.up.forward(x)
        h = gelu(u)
        y, cd = self.down.forward(h)
        return y, (u, cu, cd)

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        u, cu, cd = cache
        dh = self.down.backward(dy, cd)
        return self.up.backward(dh * gelu_grad(u), cu)


class Dropout:
    """Inverted dropout; identity when rate is 0 or rng is None."""

    def __init__(self, rate: float):
        self.rate = rate

    def forward(self, x: np.ndarray, rng: np.random.Generator | None):
        if rng is None or self.rate <= 0.0:
            return x, None
        keep = rng.random(x.shape) >= self.rate
        scale = 1.0 / (1.0 - self.rate)
        return x * keep * scale, keep * scale

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        if cache is None:
            return dy
        return dy * cache


class EncoderBlock:
    """Pre-LN block: self-attention then feed-forward, both residual."""

    def __init__(self, dim: int, heads: int, d_ff: int, rng: np.random.Generator,
                 dropout: float = 0.0):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ff = FeedForward(dim, d_ff, rng)
        self.drop = Dropout(dropout)

    def param_items(self, prefix: str):
        yield from self.ln1.param_items(prefix + ".ln1")
        yield from self.attn.param_items(prefix + ".attn")
        yield from self.ln2.param_items(prefix + ".ln2")
        yield from self.ff.param_items(prefix + ".ff")

    def forward(self, x: np.ndarray, key_mask=None, rng=None):
        n1, c1 = self.ln1.forward(x)
        a, ca = self.attn.forward(n1, key_mask=key_mask)
        a, cd1 = self.drop.forward(a, rng)
        h = x + a
        n2, c2 = self.ln2.forward(h)
        f, cf = self.ff.forward(n2)
        f, cd2 = self.drop.forward(f, rng)
        return h + f, (c1, ca, c2, cf, cd1, cd2)

    def backward(self, dy: np.ndarray, cache):
        c1, ca, c2, cf, cd1, cd2 = cache
        df = self.drop.backward(dy, cd2)
        dn2 = self.ff.backward(df, cf)
        dh = dy + self.ln2.backward(dn2, c2)
        da = self.drop.backward(dh, cd1)
        dn1, _ = self.attn.backward(da, ca)
        return dh + self.ln1.backward(dn1, c1)


class DecoderBlock:
    """Pre-LN block with self-attention, cross-attention, feed-forward."""

    def __init__(self, dim: int, heads: int, d_ff: int, rng: np.random.Generator,
                 causal: bool = False, dropout: float = 0.0):
        self.causal = causal
        self.ln1 = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, rng)
        self.ln3 = LayerNorm(dim)
        self.ff = FeedForward(dim, d_ff, rng)
        self.drop = Dropout(dropout)

    def param_items(self, prefix: str):
        yield from self.ln1.param_items(prefix + ".ln1")
        yield from self.self_attn.param_items(prefix + ".self")
        yield from self.ln2.param_items(prefix + ".ln2")
        yield from self.cross_attn.param_items(prefix + ".cross")
        yield from self.ln3.param_items(prefix + ".ln3")
        yield from self.ff.param_items(prefix + ".ff")

    def forward(self, x: np.ndarray, enc: np.ndarray, self_mask=None, enc_mask=None,
                rng=None):
        n1, c1 = self.ln1.forward(x)
        a, ca = self.self_attn.forward(n1, key_mask=self_mask, causal=self.causal)
        a, cd1 = self.drop.forward(a, rng)
        h1 = x + a
        n2, c2 = self.ln2.forward(h1)
        cr, cc = self.cross_attn.forward(n2, kv=enc, key_mask=enc_mask)
        cr, cd2 = self.drop.forward(cr, rng)
        h2 = h1 + cr
        n3, c3 = self.ln3.forward(h2)
        f, cf = self.ff.forward(n3)
        f, cd3 = self.drop.forward(f, rng)
        return h2 + f, (c1, ca, c2, cc, c3, cf, cd1, cd2, cd3)

    def backward(self, dy: np.ndarray, cache):
        c1, ca, c2, cc, c3, cf, cd1, cd2, cd3 = cache
        df = self.drop.backward(dy, cd3)
        dn3 = self.ff.backward(df, cf)
        dh2 = dy + self.ln3.backward(dn3, c3)
        dcr = self.drop.backward(dh2, cd2)
        dn2, denc = self.cross_attn.backward(dcr, cc)
        dh1 = dh2 + self.ln2.backward(dn2, c2)
        da = self.drop.backward(dh1, cd1)
        dn1, _ = self.self_attn.backward(da, ca)
        dx = dh1 + self.ln1.backward(dn1, c1)
        return dx, denc
