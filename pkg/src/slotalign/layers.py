"""Small parameter containers built on :mod:`slotalign.numkernel`."""

from __future__ import annotations

import numpy as np

from . import numkernel as nk
from .numkernel import Param, Tensor


def sinusoid_table(n: int, d: int, dtype=np.float32) -> np.ndarray:
    """Fixed sin/cos position code, used as the starting point of learned tables."""
    pos = np.arange(n)[:, None]
    freq = np.exp(-np.log(10000.0) * (np.arange(0, d, 2) / d))
    out = np.zeros((n, d))
    out[:, 0::2] = np.sin(pos * freq)
    out[:, 1::2] = np.cos(pos * freq[: d // 2])
    return out.astype(dtype)


class Rotary:
    """Rotary position code for attention heads (half-split pairing)."""

    def __init__(self, n: int, d_head: int, dtype=np.float32, base: float = 10000.0):
        if d_head % 2:
            raise ValueError("rotary heads need an even width")
        half = d_head // 2
        angle = np.arange(n)[:, None] * base ** (-np.arange(half) / half)
        self.cos = np.concatenate([np.cos(angle)] * 2, axis=1).astype(dtype)
        self.sin = np.concatenate([np.sin(angle)] * 2, axis=1).astype(dtype)
        # x @ rot == concat(-x2, x1)
        rot = np.zeros((d_head, d_head), dtype=dtype)
        rot[np.arange(half) + half, np.arange(half)] = -1
        rot[np.arange(half), np.arange(half) + half] = 1
        self.rot = rot

    def __call__(self, x: Tensor) -> Tensor:
        t = x.shape[-2]
        return x * self.cos[:t] + nk.matmul(x, self.rot) * self.sin[:t]


class Module:
    """Anything with named parameters; children are discovered by attribute."""

    def named_params(self, prefix: str = "") -> dict[str, Param]:
        out: dict[str, Param] = {}
        for key, val in vars(self).items():
            if isinstance(val, Param):
                out[prefix + key] = val
            elif isinstance(val, Module):
                out.update(val.named_params(f"{prefix}{key}."))
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_params(f"{prefix}{key}.{i}."))
        return out

    def params(self) -> list[Param]:
        return list(self.named_params().values())


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, dtype=np.float32, bias: bool = True):
        self.weight = Param(nk.init_uniform(rng, (d_in, d_out), d_in, dtype))
        self.bias = Param(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return nk.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float32):
        self.gamma = Param(np.ones(d, dtype=dtype))
        self.beta = Param(np.zeros(d, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return nk.layer_norm(x, self.gamma, self.beta)


class Block(Module):
    """Pre-norm transformer block; the attention mask is supplied per call."""

    def __init__(self, rng: np.random.Generator, d_model: int, n_heads: int, ff_dim: int, dtype=np.float32):
        if d_model % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        self.n_heads = n_heads
        self.ln1 = LayerNorm(d_model, dtype)
        self.q = Linear(rng, d_model, d_model, dtype)
        self.k = Linear(rng, d_model, d_model, dtype)
        self.v = Linear(rng, d_model, d_model, dtype)
        self.o = Linear(rng, d_model, d_model, dtype)
        self.ln2 = LayerNorm(d_model, dtype)
        self.ff1 = Linear(rng, d_model, ff_dim, dtype)
        self.ff2 = Linear(rng, ff_dim, d_model, dtype)

    def _split(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        return x.reshape(b, t, self.n_heads, d // self.n_heads).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, allow: np.ndarray, rotary: Rotary | None = None) -> Tensor:
        b, t, d = x.shape
        h = self.ln1(x)
        q, k = self._split(self.q(h)), self._split(self.k(h))
        if rotary is not None:
            q, k = rotary(q), rotary(k)
        att = nk.masked_attention(q, k, self._split(self.v(h)), allow)
        x = x + self.o(att.transpose(0, 2, 1, 3).reshape(b, t, d))
        return x + self.ff2(nk.relu(self.ff1(self.ln2(x))))
