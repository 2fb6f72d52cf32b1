"""Slot-filling forced aligner.

The transcript is interleaved with ``[time]`` tokens: a start slot and an
end slot right after each selected word. Audio tokens and the augmented
transcript form one causal sequence. A linear timestamp head maps each
position to a distribution over 80 ms frame indices, and the loss scores
every slot against its *own* target (no next-token shift). At inference all
slots are filled from a single forward pass.
"""

from __future__ import annotations

import math
import threading
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import numkernel as nk
from .encoder import Encoder, EncoderConfig, seconds_to_tokens
from .errors import CapacityError, InvalidInputError, StateError, TrainingError
from .layers import Block, LayerNorm, Linear, Module, Rotary, sinusoid_table
from .numkernel import Param, Tensor
from .synthdata import Utterance

AUDIO = -1  # placeholder id for audio positions inside SlotSequence.tokens
START, END = "start", "end"


@dataclass(frozen=True)
class AlignerConfig:
    frame_ms: int = 80
    max_audio_s: int = 30
    text_vocab: int = 32
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    ff_dim: int = 256
    max_text_tokens: int = 128
    n_classes: int | None = None
    time_token_id: int | None = None
    lm_positions: str = "rotary"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.frame_ms <= 0 or self.max_audio_s <= 0:
            raise InvalidInputError("frame_ms and max_audio_s must be positive")
        n_classes = math.ceil(self.max_audio_s * 1000 / self.frame_ms)
        if self.n_classes is None:
            object.__setattr__(self, "n_classes", n_classes)
        elif self.n_classes != n_classes:
            raise InvalidInputError(f"n_classes {self.n_classes} != ceil({self.max_audio_s} s / {self.frame_ms} ms)")
        if self.time_token_id is None:
            object.__setattr__(self, "time_token_id", self.text_vocab)
        elif 0 <= self.time_token_id < self.text_vocab:
            raise InvalidInputError("time_token_id must lie outside the text vocabulary")
        if isinstance(self.encoder, Mapping):
            object.__setattr__(self, "encoder", EncoderConfig(**self.encoder))
        if self.encoder.d_model != self.d_model:
            raise InvalidInputError("encoder and LM must share d_model")
        if self.d_model % self.n_heads:
            raise InvalidInputError("d_model must be divisible by n_heads")
        if self.lm_positions not in ("rotary", "learned"):
            raise InvalidInputError("lm_positions must be 'rotary' or 'learned'")

    @property
    def max_audio_tokens(self) -> int:
        return self.encoder.max_tokens

    @property
    def max_len(self) -> int:
        return self.max_audio_tokens + self.max_text_tokens

    @property
    def embed_rows(self) -> int:
        return max(self.text_vocab, self.time_token_id + 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "AlignerConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig(**d["encoder"])
        return cls(**d)


# ---------------------------------------------------------------- discretisation

def discretize(t_ms: int, frame_ms: int, n_classes: int) -> int:
    """Nearest frame index, halves rounded up, clamped to the class range."""
    if frame_ms <= 0:
        raise InvalidInputError("frame_ms must be positive")
    if t_ms < 0:
        raise InvalidInputError("timestamps must be non-negative")
    idx = (2 * int(t_ms) + frame_ms) // (2 * frame_ms)
    return min(max(idx, 0), n_classes - 1)


# ---------------------------------------------------------------- slot sequences

@dataclass
class SlotSequence:
    tokens: np.ndarray
    n_audio: int
    slot_positions: np.ndarray
    slot_roles: tuple[str, ...]
    owner_word: np.ndarray
    n_words: int
    word_tokens: np.ndarray  # last token id of each word

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def n_slots(self) -> int:
        return len(self.slot_positions)

    def text_tokens(self) -> np.ndarray:
        return self.tokens[self.n_audio:]

    def pattern(self) -> tuple:
        return tuple(zip(self.owner_word.tolist(), self.slot_roles))

    def with_audio(self, n_audio: int) -> "SlotSequence":
        shift = n_audio - self.n_audio
        return replace(self, tokens=np.concatenate([np.full(n_audio, AUDIO, dtype=np.int64), self.text_tokens()]),
                       n_audio=n_audio, slot_positions=self.slot_positions + shift)


def _word_selection(n_words: int, policy, rng, select) -> list[tuple[str, ...]]:
    if select is not None:
        roles = [()] * n_words
        items = select.items() if isinstance(select, Mapping) else ((i, (START, END)) for i in select)
        for i, r in items:
            if not 0 <= i < n_words:
                raise InvalidInputError(f"word index {i} out of range")
            r = (r,) if isinstance(r, str) else tuple(r)
            if any(x not in (START, END) for x in r):
                raise InvalidInputError(f"unknown slot role in {r}")
            roles[i] = tuple(x for x in (START, END) if x in r)
        return roles
    if policy == "always":
        return [(START, END)] * n_words
    p = float(policy)
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError(f"slot probability {p} outside [0, 1]")
    if rng is None:
        raise InvalidInputError("random slot insertion needs a generator")
    chosen = rng.random(n_words) < p
    return [(START, END) if c else () for c in chosen]


def build_slot_sequence(words: Sequence, policy="always", rng: np.random.Generator | None = None, *,
                        time_token_id: int, n_audio: int = 0, select=None) -> SlotSequence:
    """Interleave ``[time]`` slots after selected words.

    ``words`` holds one token id per word, or a sequence of ids for words
    spanning several tokens (slots follow the last one). ``policy`` is
    ``"always"`` or an insertion probability; ``select`` (word indices, or a
    mapping of index to roles) overrides the policy for targeted decoding.
    """
    if len(words) == 0:
        raise InvalidInputError("transcript has no words")
    roles_per_word = _word_selection(len(words), policy, rng, select)
    tokens = [AUDIO] * n_audio
    positions, roles, owners, last = [], [], [], []
    for w, (word, word_roles) in enumerate(zip(words, roles_per_word)):
        tokens.extend([int(word)] if np.ndim(word) == 0 else [int(t) for t in word])
        last.append(tokens[-1])
        for role in word_roles:
            positions.append(len(tokens))
            roles.append(role)
            owners.append(w)
            tokens.append(time_token_id)
    return SlotSequence(np.array(tokens, dtype=np.int64), n_audio, np.array(positions, dtype=np.int64),
                        tuple(roles), np.array(owners, dtype=np.int64), len(words),
                        np.array(last, dtype=np.int64))


@dataclass
class TimestampTargets:
    target_index: np.ndarray   # -1 away from slots
    loss_mask: np.ndarray


def make_targets(seq: SlotSequence, gold: Sequence, cfg: AlignerConfig) -> TimestampTargets:
    """Discretised start/end targets at each slot; ``gold`` has one interval per word.

    Items of ``gold`` may be ``(start_ms, end_ms)`` or ``(token, start_ms, end_ms)``.
    """
    target = np.full(len(seq), -1, dtype=np.int64)
    mask = np.zeros(len(seq), dtype=bool)
    for pos, role, w in zip(seq.slot_positions, seq.slot_roles, seq.owner_word):
        if w >= len(gold) or gold[w] is None:
            raise InvalidInputError(f"no gold interval for word {w}")
        start, end = gold[w][-2:]
        t = start if role == START else end
        target[pos] = discretize(t, cfg.frame_ms, cfg.n_classes)
        mask[pos] = True
    return TimestampTargets(target, mask)


# ---------------------------------------------------------------- model


class AlignerModel(Module):
    def __init__(self, cfg: AlignerConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.d_model
        self.encoder = Encoder(cfg.encoder, rng, dtype)
        self.text_emb = Param(nk.init_uniform(rng, (cfg.embed_rows, d), d, dtype))
        if cfg.lm_positions == "learned":
            self.pos = Param(sinusoid_table(cfg.max_len, d, dtype))
        else:
            self.rotary = Rotary(cfg.max_len, d // cfg.n_heads, dtype)
        self.blocks = [Block(rng, d, cfg.n_heads, cfg.ff_dim, dtype) for _ in range(cfg.n_layers)]
        self.ln_f = LayerNorm(d, dtype)
        self.head = Linear(rng, d, cfg.n_classes, dtype)
        self._calls = 0
        self._lock = threading.Lock()
        self._thread_calls = threading.local()
        self.frozen = False

    @property
    def dtype(self):
        return self.head.weight.dtype

    @property
    def forward_calls(self) -> int:
        return self._calls

    def thread_forward_calls(self) -> int:
        """Forward passes issued by the calling thread only."""
        return getattr(self._thread_calls, "n", 0)

    def _count(self) -> None:
        with self._lock:
            self._calls += 1
        self._thread_calls.n = self.thread_forward_calls() + 1

    def freeze(self) -> "AlignerModel":
        for p in self.params():
            p.data.flags.writeable = False
        self.frozen = True
        return self

    def thaw(self) -> "AlignerModel":
        for p in self.params():
            p.data = np.array(p.data)
            p.zero_grad()
        self.frozen = False
        return self

    @property
    def infer_window(self) -> int:
        return self.cfg.encoder.window_tokens_range[1]

    def _lm(self, pool: Tensor, index: np.ndarray) -> Tensor:
        """Causal LM over rows of ``pool`` laid out by ``index`` (B, L)."""
        L = index.shape[1]
        if L > self.cfg.max_len:
            raise CapacityError(f"sequence of {L} positions exceeds model capacity {self.cfg.max_len}")
        x = nk.take_rows(pool, index)
        rotary = None
        if self.cfg.lm_positions == "learned":
            x = x + nk.take_rows(self.pos, np.arange(L))
        else:
            rotary = self.rotary
        allow = np.tril(np.ones((L, L), dtype=bool))
        for blk in self.blocks:
            x = blk(x, allow, rotary)
        return self.head(self.ln_f(x))

    def _check_text(self, seq: SlotSequence) -> None:
        if len(seq) - seq.n_audio > self.cfg.max_text_tokens:
            raise CapacityError(f"{len(seq) - seq.n_audio} text tokens exceed {self.cfg.max_text_tokens}")

    def forward(self, audio_tokens, seq: SlotSequence) -> Tensor:
        """Logits (L, n_classes) for one sequence given its encoded audio (n_audio, d)."""
        audio = audio_tokens if isinstance(audio_tokens, Tensor) else Tensor(np.asarray(audio_tokens, dtype=self.dtype))
        if audio.shape[0] != seq.n_audio:
            raise InvalidInputError(f"sequence expects {seq.n_audio} audio tokens, got {audio.shape[0]}")
        self._check_text(seq)
        text = seq.text_tokens()
        pool = nk.concat([audio, nk.take_rows(self.text_emb, text)], axis=0)
        index = np.arange(len(seq))[None, :]
        self._count()
        return nk.reshape(self._lm(pool, index), (len(seq), self.cfg.n_classes))

    def forward_batch(self, frames: Sequence[np.ndarray], seqs: Sequence[SlotSequence],
                      window_tokens: int | None = None) -> Tensor:
        """Encode + LM for a padded batch; returns logits (B, L_max, n_classes).

        Sequences are right-padded; under the causal mask padding never
        influences real positions.
        """
        window = self.infer_window if window_tokens is None else window_tokens
        b = len(frames)
        n_audio = [f.shape[0] // 8 for f in frames]
        for s, n in zip(seqs, n_audio):
            if s.n_audio != n:
                raise InvalidInputError(f"sequence expects {s.n_audio} audio tokens, audio gives {n}")
            self._check_text(s)
        t_max = max(n_audio) * 8
        feat = np.zeros((b, t_max, frames[0].shape[1]), dtype=self.dtype)
        for i, f in enumerate(frames):
            feat[i, :n_audio[i] * 8] = f[:n_audio[i] * 8]
        audio = self.encoder.forward(feat, window)
        n_max = audio.shape[1]
        texts = [s.text_tokens() for s in seqs]
        pool = nk.concat([nk.reshape(audio, (b * n_max, self.cfg.d_model)),
                          nk.take_rows(self.text_emb, np.concatenate(texts))], axis=0)
        lengths = [len(s) for s in seqs]
        index = np.zeros((b, max(lengths)), dtype=np.intp)
        text_base = b * n_max
        for i, (s, t) in enumerate(zip(seqs, texts)):
            index[i, :s.n_audio] = i * n_max + np.arange(s.n_audio)
            index[i, s.n_audio:len(s)] = text_base + np.arange(len(t))
            text_base += len(t)
        self._count()
        return self._lm(pool, index)


def training_loss(logits: Tensor, targets: TimestampTargets | Sequence[TimestampTargets]) -> Tensor:
    """Slot-only cross-entropy, each slot scored against its own position's target."""
    if isinstance(targets, TimestampTargets):
        return nk.slot_cross_entropy(logits, targets.target_index, targets.loss_mask)
    shape = logits.shape[:-1]
    tgt = np.full(shape, -1, dtype=np.int64)
    mask = np.zeros(shape, dtype=bool)
    for i, t in enumerate(targets):
        tgt[i, :len(t.target_index)] = t.target_index
        mask[i, :len(t.loss_mask)] = t.loss_mask
    return nk.slot_cross_entropy(logits, tgt, mask)


# ---------------------------------------------------------------- training

@dataclass
class TrainHyper:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 2e-3
    warmup_steps: int = 200
    final_lr_ratio: float = 0.05
    slot_p: float = 0.8
    clip_norm: float = 1.0
    seed: int = 0


@dataclass
class TrainResult:
    model: AlignerModel
    log: list[dict]
    optimizer: nk.Adam


def _lr_at(step: int, total: int, hyper: TrainHyper) -> float:
    if step < hyper.warmup_steps:
        return hyper.lr * (step + 1) / hyper.warmup_steps
    frac = min(1.0, (step - hyper.warmup_steps) / max(1, total - hyper.warmup_steps))
    floor = hyper.final_lr_ratio
    return hyper.lr * (floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * frac)))


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, epoch)))


def train(model: AlignerModel, corpus: Sequence[Utterance], hyper: TrainHyper, *,
          labels: Sequence[Sequence] | None = None, optimizer: nk.Adam | None = None,
          start_epoch: int = 0, eval_fn: Callable[[AlignerModel], float] | None = None,
          on_epoch: Callable[[dict], None] | None = None, freeze: bool = True,
          stop_epoch: int | None = None) -> TrainResult:
    """Adam training with a fresh random slot pattern drawn for every batch.

    ``labels`` optionally replaces each utterance's gold intervals (for noisy
    pseudo-label training). Epoch ``e`` draws all randomness from
    ``(hyper.seed, e)``, so resuming at ``start_epoch`` reproduces the
    uninterrupted run. ``stop_epoch`` ends early without changing the LR
    schedule, which is laid out over ``hyper.epochs``.
    """
    if not corpus:
        raise InvalidInputError("training corpus is empty")
    if model.frozen:
        raise StateError("model is frozen; thaw() it to continue training")
    cfg = model.cfg
    labels = [u.words for u in corpus] if labels is None else labels
    opt = optimizer or nk.Adam(model.params(), lr=hyper.lr)
    params = opt.params
    n_batches = math.ceil(len(corpus) / hyper.batch_size)
    total_steps = hyper.epochs * n_batches
    w_lo, w_hi = cfg.encoder.window_tokens_range
    log = []
    end = hyper.epochs if stop_epoch is None else min(stop_epoch, hyper.epochs)
    for epoch in range(start_epoch, end):
        rng = epoch_rng(hyper.seed, epoch)
        order = rng.permutation(len(corpus))
        losses, weights = [], []
        for b in range(n_batches):
            idx = order[b * hyper.batch_size:(b + 1) * hyper.batch_size]
            window = int(rng.integers(w_lo, w_hi + 1))
            frames, seqs, targets = [], [], []
            for i in idx:
                u = corpus[i]
                seq = build_slot_sequence(u.tokens(), hyper.slot_p, rng, time_token_id=cfg.time_token_id,
                                          n_audio=u.frames.shape[0] // 8)
                frames.append(u.frames)
                seqs.append(seq)
                targets.append(make_targets(seq, labels[i], cfg))
            n_slots = sum(s.n_slots for s in seqs)
            if n_slots == 0:
                continue
            opt.set_lr(_lr_at(opt.step_count, total_steps, hyper))
            logits = model.forward_batch(frames, seqs, window)
            loss = training_loss(logits, targets)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError("loss is not finite", epoch)
            loss.backward()
            if hyper.clip_norm:
                nk.clip_grad_norm(params, hyper.clip_norm)
            opt.step()
            losses.append(value)
            weights.append(n_slots)
        entry = {"epoch": epoch + 1, "loss": float(np.average(losses, weights=weights)),
                 "steps": opt.step_count}
        if eval_fn is not None:
            entry["aas_ms"] = float(eval_fn(model))
        log.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
    if freeze:
        model.freeze()
    return TrainResult(model, log, opt)


# ---------------------------------------------------------------- decoding

@dataclass
class DecodeResult:
    seq: SlotSequence
    indices: np.ndarray
    forward_passes: int


def _argmax_slots(logits: np.ndarray, positions: np.ndarray) -> np.ndarray:
    # np.argmax keeps the first maximum, i.e. the lowest class index wins ties
    return np.argmax(logits[positions], axis=-1).astype(np.int64)


def nar_decode_batch(model: AlignerModel, frames: Sequence[np.ndarray], transcripts: Sequence[Sequence],
                     select: Sequence | None = None, window_tokens: int | None = None) -> list[DecodeResult]:
    """Fill every slot of every transcript with one batched forward pass."""
    if not frames:
        raise InvalidInputError("nothing to decode")
    seqs = []
    for i, (f, words) in enumerate(zip(frames, transcripts)):
        if len(words) == 0:
            raise InvalidInputError("transcript has no words")
        if f.shape[0] < 8:
            raise InvalidInputError("audio shorter than one token")
        seqs.append(build_slot_sequence(words, "always", time_token_id=model.cfg.time_token_id,
                                        n_audio=f.shape[0] // 8,
                                        select=None if select is None else select[i]))
    before = model.thread_forward_calls()
    with nk.no_grad():
        logits = model.forward_batch(list(frames), seqs, window_tokens).data
    passes = model.thread_forward_calls() - before
    return [DecodeResult(s, _argmax_slots(logits[i], s.slot_positions), passes) for i, s in enumerate(seqs)]


def nar_decode(model: AlignerModel, frames: np.ndarray, words: Sequence, select=None,
               window_tokens: int | None = None) -> DecodeResult:
    """Predicted class index for every slot, from exactly one forward pass."""
    return nar_decode_batch(model, [frames], [words], None if select is None else [select], window_tokens)[0]


def ar_decode(model: AlignerModel, frames: np.ndarray, words: Sequence,
              window_tokens: int | None = None) -> DecodeResult:
    """Reference decoder that spends one forward pass per slot (for speed comparisons)."""
    if len(words) == 0:
        raise InvalidInputError("transcript has no words")
    window = model.infer_window if window_tokens is None else window_tokens
    audio = model.encoder.encode(frames, window)
    seq = build_slot_sequence(words, "always", time_token_id=model.cfg.time_token_id, n_audio=audio.shape[0])
    out = np.zeros(seq.n_slots, dtype=np.int64)
    before = model.thread_forward_calls()
    with nk.no_grad():
        for j, pos in enumerate(seq.slot_positions):
            prefix = SlotSequence(seq.tokens[:pos + 1], seq.n_audio, seq.slot_positions[:j + 1],
                                  seq.slot_roles[:j + 1], seq.owner_word[:j + 1], seq.n_words,
                                  seq.word_tokens)
            logits = model.forward(audio, prefix).data
            out[j] = int(np.argmax(logits[pos]))
    return DecodeResult(seq, out, model.thread_forward_calls() - before)
