"""Toy audio encoder at a 12.5 Hz token rate plus a chunked streaming driver.

Raw features arrive at 100 frames/s. Eight consecutive frames are stacked
and projected to one token (80 ms), then a stack of transformer blocks runs
causal attention with a bounded lookback of ``window_tokens`` tokens.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numkernel as nk
from .errors import CapacityError, InvalidInputError, StateError
from .layers import Block, LayerNorm, Linear, Module, sinusoid_table
from .numkernel import Param, Tensor

DOWNSAMPLE = 8
TOKENS_PER_SECOND = 12.5


def seconds_to_tokens(seconds: float) -> int:
    return math.ceil(seconds * TOKENS_PER_SECOND)


@dataclass(frozen=True)
class EncoderConfig:
    feat_dim: int = 16
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    downsample: int = DOWNSAMPLE
    window_tokens_range: tuple[int, int] = (seconds_to_tokens(1), seconds_to_tokens(8))
    max_tokens: int = 375
    ff_dim: int = 256

    def __post_init__(self):
        object.__setattr__(self, "window_tokens_range", tuple(self.window_tokens_range))
        if self.downsample != DOWNSAMPLE:
            raise InvalidInputError("downsample is fixed at 8 (80 ms tokens)")
        lo, hi = self.window_tokens_range
        if not 1 <= lo <= hi <= 512:
            raise InvalidInputError(f"window range {lo}..{hi} must lie within [1, 512]")
        if self.d_model % self.n_heads:
            raise InvalidInputError("d_model must be divisible by n_heads")

    def to_dict(self) -> dict:
        return asdict(self)


def build_window_mask(n_tokens: int, window_tokens: int) -> np.ndarray:
    """``allow[i, j]`` iff ``i - window_tokens < j <= i``."""
    if n_tokens < 1:
        raise InvalidInputError("mask needs at least one token")
    if window_tokens < 1:
        raise InvalidInputError("window must cover at least one token")
    i = np.arange(n_tokens)[:, None]
    j = np.arange(n_tokens)[None, :]
    return (j <= i) & (j > i - window_tokens)


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        d = cfg.d_model
        self.proj = Linear(rng, cfg.feat_dim * cfg.downsample, d, dtype)
        self.pos = Param(sinusoid_table(cfg.max_tokens, d, dtype))
        self.blocks = [Block(rng, d, cfg.n_heads, cfg.ff_dim, dtype) for _ in range(cfg.n_layers)]
        self.ln_f = LayerNorm(d, dtype)

    @property
    def dtype(self):
        return self.proj.weight.dtype

    def receptive_field(self, window_tokens: int) -> int:
        """How many earlier tokens can influence a given output token."""
        return self.cfg.n_layers * (window_tokens - 1)

    def forward(self, frames: np.ndarray, window_tokens: int, offset: int = 0) -> Tensor:
        """Batch encode ``frames`` of shape (B, T_raw, feat_dim) -> (B, T_raw // 8, d)."""
        frames = np.asarray(frames)
        b, t_raw, f = frames.shape
        if f != self.cfg.feat_dim:
            raise InvalidInputError(f"expected {self.cfg.feat_dim} features per frame, got {f}")
        n = t_raw // DOWNSAMPLE
        if n < 1:
            raise InvalidInputError(f"need at least {DOWNSAMPLE} raw frames, got {t_raw}")
        if offset + n > self.cfg.max_tokens:
            raise CapacityError(f"{offset + n} tokens exceed encoder capacity {self.cfg.max_tokens}")
        stacked = frames[:, :n * DOWNSAMPLE].reshape(b, n, DOWNSAMPLE * f).astype(self.dtype, copy=False)
        x = self.proj(Tensor(stacked)) + nk.take_rows(self.pos, np.arange(offset, offset + n))
        allow = build_window_mask(n, window_tokens)
        for blk in self.blocks:
            x = blk(x, allow)
        return self.ln_f(x)

    def encode(self, frames: np.ndarray, window_tokens: int, offset: int = 0) -> np.ndarray:
        """Encode one utterance (T_raw, feat_dim) without recording a graph."""
        frames = np.asarray(frames)
        if frames.ndim != 2:
            raise InvalidInputError("encode expects a (T_raw, feat_dim) matrix")
        with nk.no_grad():
            return self.forward(frames[None], window_tokens, offset).data[0]


# ---------------------------------------------------------------- streaming

@dataclass
class StreamState:
    """Single-owner streaming session over one encoder.

    ``committed`` holds final tokens; ``provisional`` the latest encoding of
    the unfixed tail. ``frames`` keeps every raw frame seen so far.
    """

    encoder: Encoder
    window_tokens: int
    chunk_frames: int = 200
    unfixed_chunks: int = 4
    retract_budget: int = 5
    context_tokens: int | None = None
    revise_tol: float = 1e-5
    frames: np.ndarray = None
    committed: np.ndarray = None
    provisional: np.ndarray = None
    chunk_count: int = 0
    finalized: bool = False
    short_chunk_seen: bool = False
    retractions: list[int] = field(default_factory=list)

    def __post_init__(self):
        d, f = self.encoder.cfg.d_model, self.encoder.cfg.feat_dim
        if self.chunk_frames % DOWNSAMPLE:
            raise InvalidInputError("chunk length must be a whole number of tokens")
        if self.frames is None:
            self.frames = np.zeros((0, f), dtype=np.float32)
        if self.committed is None:
            self.committed = np.zeros((0, d), dtype=self.encoder.dtype)
        if self.provisional is None:
            self.provisional = np.zeros((0, d), dtype=self.encoder.dtype)
        if self.context_tokens is None:
            self.context_tokens = self.encoder.receptive_field(self.window_tokens)

    @property
    def chunk_tokens(self) -> int:
        return self.chunk_frames // DOWNSAMPLE

    @property
    def n_tokens(self) -> int:
        return self.frames.shape[0] // DOWNSAMPLE


def open_stream(encoder: Encoder, window_tokens: int, **kwargs) -> StreamState:
    return StreamState(encoder, window_tokens, **kwargs)


def _commit(state: StreamState, upto: int) -> tuple[np.ndarray, int]:
    """Re-encode the revisable tail and everything after it; commit ``[.., upto)``."""
    n_done = state.committed.shape[0]
    total = state.n_tokens
    d = state.encoder.cfg.d_model
    revisable = min(state.retract_budget, n_done)
    first = n_done - revisable
    start = max(0, first - state.context_tokens)
    if total - start < 1:
        state.provisional = np.zeros((0, d), dtype=state.encoder.dtype)
        return np.zeros((0, d), dtype=state.encoder.dtype), 0
    enc = state.encoder.encode(state.frames[start * DOWNSAMPLE:total * DOWNSAMPLE],
                               state.window_tokens, offset=start)
    fresh = enc[first - start:]                    # tokens first .. total-1
    tail_old = state.committed[first:]
    changed = np.flatnonzero(np.abs(fresh[:revisable] - tail_old).max(axis=1, initial=0.0) > state.revise_tol)
    retracted = revisable - int(changed[0]) if changed.size else 0
    keep = n_done - retracted
    new = fresh[keep - first:upto - first]
    state.committed = np.concatenate([state.committed[:keep], new], axis=0)
    state.provisional = fresh[upto - first:]
    state.retractions.append(retracted)
    return new, retracted


def stream_push(state: StreamState, chunk_frames: np.ndarray) -> tuple[StreamState, np.ndarray, int]:
    """Append one chunk; returns (state, newly committed tokens, retracted count).

    Consumers drop their last ``retracted`` tokens before appending the new
    ones. Tokens in the last ``unfixed_chunks`` chunks stay provisional.
    """
    if state.finalized:
        raise StateError("stream already finalized")
    chunk = np.asarray(chunk_frames, dtype=np.float32)
    if chunk.ndim != 2 or chunk.shape[1] != state.encoder.cfg.feat_dim:
        raise InvalidInputError("chunk must be a (frames, feat_dim) matrix")
    if state.short_chunk_seen:
        raise StateError("a short chunk ends the stream; call stream_finalize")
    if chunk.shape[0] > state.chunk_frames:
        raise InvalidInputError(f"chunk of {chunk.shape[0]} frames exceeds {state.chunk_frames}")
    if chunk.shape[0] < state.chunk_frames:
        state.short_chunk_seen = True
    state.frames = np.concatenate([state.frames, chunk], axis=0)
    state.chunk_count += 1
    fixed_chunks = max(0, state.chunk_count - state.unfixed_chunks)
    upto = min(fixed_chunks * state.chunk_tokens, state.n_tokens)
    new, retracted = _commit(state, upto)
    return state, new, retracted


def stream_finalize(state: StreamState) -> np.ndarray:
    """Commit everything still provisional and return the full token matrix."""
    if state.finalized:
        raise StateError("stream already finalized")
    _commit(state, state.n_tokens)
    state.finalized = True
    return state.committed.copy()
