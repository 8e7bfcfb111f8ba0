"""Differentiable building blocks with hand-derived gradients.

Everything runs in float64 numpy on the CPU. A block exposes

    y = block.forward(x)            # pure; safe for concurrent callers
    y = block.forward(x, ctx={})    # same output, records intermediates
    gx = block.backward(gy, ctx)    # accumulates into param.grad, returns input grad

``backward`` requires the ctx dict populated by a prior ``forward`` and
raises :class:`UsageError` otherwise. Parameter gradients accumulate, so a
training step zeroes them first (see :class:`Adam` in ``training``).

Convolutions use FFT multiplication; for float64 the rounding error is far
below the 1e-4 gradient-check tolerance used in the tests.
"""

import math

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft
from scipy.special import erf

from .errors import ConfigError, ShapeError, UsageError

FLOAT = np.float64


class ParamTensor:
    """A learnable array plus its gradient buffer (always same shape)."""

    __slots__ = ("name", "values", "grad")

    def __init__(self, name, values):
        self.name = name
        self.values = np.ascontiguousarray(values, dtype=FLOAT)
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"ParamTensor({self.name!r}, shape={self.values.shape})"


def he_uniform(rng, shape, fan_in):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def gelu_grad(x):
    # d/dx [x * Phi(x)] = Phi(x) + x * phi(x)
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def relu(x):
    return np.maximum(x, 0.0)


def softmax_last(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _require_ctx(ctx, key, who):
    if ctx is None or key not in ctx:
        raise UsageError(f"{who}: backward called without a matching forward pass")


def _freq_matmul(a, perm_a, b, perm_b):
    """Per-frequency contraction: a->(F,m,k), b->(F,k,n), result (m,n,F).

    Complex einsum is slow in numpy; a batched matmul over the frequency
    axis hits BLAS instead.
    """
    af = np.ascontiguousarray(a.transpose(perm_a))
    bf = np.ascontiguousarray(b.transpose(perm_b))
    return np.matmul(af, bf).transpose(1, 2, 0)


class Dense:
    """Affine layer y = x @ W.T + b over the last axis."""

    def __init__(self, n_in, n_out, rng, name="dense"):
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.name = name
        self.W = ParamTensor(f"{name}.W", he_uniform(rng, (self.n_out, self.n_in), self.n_in))
        self.b = ParamTensor(f"{name}.b", np.zeros(self.n_out))

    def params(self):
        return [self.W, self.b]

    def forward(self, x, ctx=None):
        x = np.asarray(x, dtype=FLOAT)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"{self.name}: expected last dim {self.n_in}, got shape {x.shape}")
        y = x @ self.W.values.T + self.b.values
        if ctx is not None:
            ctx["x"] = x
        return y

    def backward(self, gy, ctx):
        _require_ctx(ctx, "x", self.name)
        x = ctx["x"]
        gy = np.asarray(gy, dtype=FLOAT)
        gy2 = gy.reshape(-1, self.n_out)
        x2 = x.reshape(-1, self.n_in)
        self.W.grad += gy2.T @ x2
        self.b.grad += gy2.sum(axis=0)
        return gy @ self.W.values


class Conv1d:
    """1-D convolution with zero-padded "same" output length.

    Input is (B, c_in, T); output is (B, c_out, T). The kernel is applied as
    cross-correlation with left pad (width-1)//2, so a width-1 kernel [1] is
    the identity. Kernel width must not exceed T.
    """

    def __init__(self, c_in, c_out, width, rng, name="conv"):
        if width < 1:
            raise ConfigError(f"{name}: kernel width must be >= 1, got {width}")
        self.c_in = int(c_in)
        self.c_out = int(c_out)
        self.width = int(width)
        self.name = name
        fan_in = self.c_in * self.width
        self.W = ParamTensor(f"{name}.W", he_uniform(rng, (self.c_out, self.c_in, self.width), fan_in))
        self.b = ParamTensor(f"{name}.b", np.zeros(self.c_out))

    def params(self):
        return [self.W, self.b]

    def _check(self, x):
        if x.ndim != 3 or x.shape[1] != self.c_in:
            raise ShapeError(
                f"{self.name}: expected input (B, {self.c_in}, T), got shape {x.shape}"
            )
        if self.width > x.shape[2]:
            raise ShapeError(
                f"{self.name}: kernel width {self.width} exceeds input length {x.shape[2]}"
            )

    def forward(self, x, ctx=None):
        x = np.asarray(x, dtype=FLOAT)
        self._check(x)
        T, W = x.shape[2], self.width
        pad_left = (W - 1) // 2
        n = next_fast_len(T + W - 1, real=True)
        X = rfft(x, n)
        K = rfft(self.W.values[:, :, ::-1], n)
        full = irfft(_freq_matmul(X, (2, 0, 1), K, (2, 1, 0)), n)
        lo = W - 1 - pad_left
        y = full[..., lo : lo + T] + self.b.values[None, :, None]
        if ctx is not None:
            ctx["x"] = x
        return y

    def backward(self, gy, ctx):
        _require_ctx(ctx, "x", self.name)
        x = ctx["x"]
        gy = np.asarray(gy, dtype=FLOAT)
        T, W = x.shape[2], self.width
        pad_left = (W - 1) // 2

        # dL/dx[s] = sum_{o,t} gy[o,t] * W[o,c,s-t+pad]: plain convolution of gy with W.
        n = next_fast_len(T + W - 1, real=True)
        G = rfft(gy, n)
        K = rfft(self.W.values, n)
        gx = irfft(_freq_matmul(G, (2, 0, 1), K, (2, 0, 1)), n)[..., pad_left : pad_left + T]

        # dL/dW[o,c,u] = sum_{b,t} gy[b,o,t] * x[b,c,t+u-pad]: correlate x against gy.
        n2 = next_fast_len(2 * T - 1, real=True)
        X2 = rfft(x, n2)
        G2 = rfft(gy[..., ::-1], n2)
        full = irfft(_freq_matmul(G2, (2, 1, 0), X2, (2, 0, 1)), n2)
        self.W.grad += full[..., T - 1 - pad_left : T - 1 - pad_left + W]
        self.b.grad += gy.sum(axis=(0, 2))
        return gx


class LayerNorm:
    """Normalizes the last axis; a zero-variance row maps to zeros pre-affine."""

    EPS = 1e-5

    def __init__(self, dim, name="ln"):
        self.dim = int(dim)
        self.name = name
        self.gamma = ParamTensor(f"{name}.gamma", np.ones(self.dim))
        self.beta = ParamTensor(f"{name}.beta", np.zeros(self.dim))

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x, ctx=None):
        x = np.asarray(x, dtype=FLOAT)
        if x.shape[-1] != self.dim:
            raise ShapeError(f"{self.name}: expected last dim {self.dim}, got shape {x.shape}")
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.EPS)
        xhat = xc * inv
        y = self.gamma.values * xhat + self.beta.values
        if ctx is not None:
            ctx["xhat"] = xhat
            ctx["inv"] = inv
        return y

    def backward(self, gy, ctx):
        _require_ctx(ctx, "xhat", self.name)
        xhat, inv = ctx["xhat"], ctx["inv"]
        gy = np.asarray(gy, dtype=FLOAT)
        self.gamma.grad += (gy * xhat).reshape(-1, self.dim).sum(axis=0)
        self.beta.grad += gy.reshape(-1, self.dim).sum(axis=0)
        g = gy * self.gamma.values
        gmean = g.mean(axis=-1, keepdims=True)
        gxhat = (g * xhat).mean(axis=-1, keepdims=True)
        return inv * (g - gmean - xhat * gxhat)


class MultiHeadSelfAttention:
    """Scaled dot-product self-attention over (B, S, dim) token sequences."""

    def __init__(self, dim, heads, rng, name="attn"):
        if dim % heads != 0:
            raise ConfigError(f"{name}: head count {heads} must divide width {dim}")
        self.dim = int(dim)
        self.heads = int(heads)
        self.head_dim = self.dim // self.heads
        self.name = name
        self.q_proj = Dense(dim, dim, rng, f"{name}.q")
        self.k_proj = Dense(dim, dim, rng, f"{name}.k")
        self.v_proj = Dense(dim, dim, rng, f"{name}.v")
        self.o_proj = Dense(dim, dim, rng, f"{name}.o")

    def params(self):
        out = []
        for proj in (self.q_proj, self.k_proj, self.v_proj, self.o_proj):
            out.extend(proj.params())
        return out

    def _split(self, x):
        B, S, _ = x.shape
        return x.reshape(B, S, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge(self, x):
        B, H, S, _ = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, S, self.dim)

    def forward(self, x, ctx=None):
        x = np.asarray(x, dtype=FLOAT)
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise ShapeError(f"{self.name}: expected input (B, S, {self.dim}), got shape {x.shape}")
        sub = {"q": {}, "k": {}, "v": {}, "o": {}} if ctx is not None else None
        q = self._split(self.q_proj.forward(x, sub and sub["q"]))
        k = self._split(self.k_proj.forward(x, sub and sub["k"]))
        v = self._split(self.v_proj.forward(x, sub and sub["v"]))
        scale = 1.0 / math.sqrt(self.head_dim)
        scores = np.einsum("bhsd,bhtd->bhst", q, k) * scale
        attn = softmax_last(scores)
        out = self._merge(np.einsum("bhst,bhtd->bhsd", attn, v))
        y = self.o_proj.forward(out, sub and sub["o"])
        if ctx is not None:
            ctx.update(sub=sub, q=q, k=k, v=v, attn=attn)
        return y

    def backward(self, gy, ctx):
        _require_ctx(ctx, "sub", self.name)
        sub, q, k, v, attn = ctx["sub"], ctx["q"], ctx["k"], ctx["v"], ctx["attn"]
        scale = 1.0 / math.sqrt(self.head_dim)
        gout = self._split(self.o_proj.backward(gy, sub["o"]))
        gattn = np.einsum("bhsd,bhtd->bhst", gout, v)
        gv = np.einsum("bhst,bhsd->bhtd", attn, gout)
        # softmax jacobian: ds = a * (g - sum(g * a))
        gscores = attn * (gattn - (gattn * attn).sum(axis=-1, keepdims=True))
        gq = np.einsum("bhst,bhtd->bhsd", gscores, k) * scale
        gk = np.einsum("bhst,bhsd->bhtd", gscores, q) * scale
        gx = self.q_proj.backward(self._merge(gq), sub["q"])
        gx = gx + self.k_proj.backward(self._merge(gk), sub["k"])
        gx = gx + self.v_proj.backward(self._merge(gv), sub["v"])
        return gx


class AttentionBlock:
    """Pre-norm transformer block: attention + GELU feedforward, residual both."""

    def __init__(self, dim, heads, ff_dim, rng, name="block"):
        self.dim = int(dim)
        self.name = name
        self.ln1 = LayerNorm(dim, f"{name}.ln1")
        self.attn = MultiHeadSelfAttention(dim, heads, rng, f"{name}.attn")
        self.ln2 = LayerNorm(dim, f"{name}.ln2")
        self.fc1 = Dense(dim, ff_dim, rng, f"{name}.fc1")
        self.fc2 = Dense(ff_dim, dim, rng, f"{name}.fc2")

    def params(self):
        out = []
        for part in (self.ln1, self.attn, self.ln2, self.fc1, self.fc2):
            out.extend(part.params())
        return out

    def forward(self, x, ctx=None):
        sub = {"ln1": {}, "attn": {}, "ln2": {}, "fc1": {}, "fc2": {}} if ctx is not None else None
        a = x + self.attn.forward(self.ln1.forward(x, sub and sub["ln1"]), sub and sub["attn"])
        pre = self.fc1.forward(self.ln2.forward(a, sub and sub["ln2"]), sub and sub["fc1"])
        y = a + self.fc2.forward(gelu(pre), sub and sub["fc2"])
        if ctx is not None:
            ctx["sub"] = sub
            ctx["pre"] = pre
        return y

    def backward(self, gy, ctx):
        _require_ctx(ctx, "sub", self.name)
        sub, pre = ctx["sub"], ctx["pre"]
        gpre = self.fc2.backward(gy, sub["fc2"]) * gelu_grad(pre)
        ga = gy + self.ln2.backward(self.fc1.backward(gpre, sub["fc1"]), sub["ln2"])
        gx = ga + self.ln1.backward(self.attn.backward(ga, sub["attn"]), sub["ln1"])
        return gx


def sinusoid_table(seq_len, dim):
    """Standard sinusoidal positional encodings, shape (seq_len, dim)."""
    pos = np.arange(seq_len, dtype=FLOAT)[:, None]
    idx = np.arange(dim, dtype=FLOAT)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / dim)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return table


class PositionalEncoding:
    """Adds a fixed sinusoidal table to a (B, S, dim) sequence. No parameters."""

    def __init__(self, seq_len, dim, name="pos"):
        self.seq_len = int(seq_len)
        self.dim = int(dim)
        self.name = name
        self.table = sinusoid_table(seq_len, dim)

    def params(self):
        return []

    def forward(self, x, ctx=None):
        x = np.asarray(x, dtype=FLOAT)
        if x.ndim != 3 or x.shape[1] != self.seq_len or x.shape[2] != self.dim:
            raise ShapeError(
                f"{self.name}: expected input (B, {self.seq_len}, {self.dim}), got shape {x.shape}"
            )
        if ctx is not None:
            ctx["seen"] = True
        return x + self.table[None, :, :]

    def backward(self, gy, ctx):
        _require_ctx(ctx, "seen", self.name)
        return np.asarray(gy, dtype=FLOAT)
