"""Synthetic speech-like utterances with exact word boundaries.

Every vocabulary token owns a fixed random unit-norm template. A word is its
template repeated for a sampled duration plus Gaussian noise; the gaps
around words are noise only. Because the renderer chooses the boundaries,
the returned word list is exact ground truth.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensorfile
from .errors import FormatError, InvalidInputError

MANIFEST_FORMAT = "slotalign-manifest"
MANIFEST_VERSION = 1

Word = tuple  # (token_id, start_ms, end_ms)


@dataclass(frozen=True)
class SynthConfig:
    vocab_size: int = 32
    feat_dim: int = 16
    raw_frame_ms: int = 10
    word_dur_ms: tuple[int, int] = (160, 480)
    gap_dur_ms: tuple[int, int] = (0, 240)
    words_per_utt: tuple[int, int] = (2, 8)
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "word_dur_ms", tuple(self.word_dur_ms))
        object.__setattr__(self, "gap_dur_ms", tuple(self.gap_dur_ms))
        object.__setattr__(self, "words_per_utt", tuple(self.words_per_utt))
        if self.vocab_size < 1 or self.feat_dim < 1 or self.raw_frame_ms < 1:
            raise InvalidInputError("vocab_size, feat_dim and raw_frame_ms must be positive")
        for name in ("word_dur_ms", "gap_dur_ms", "words_per_utt"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise InvalidInputError(f"{name} range {lo}..{hi} is empty or negative")
        if self.word_dur_ms[0] <= 0 or self.words_per_utt[0] < 1:
            raise InvalidInputError("words need a positive duration and count")
        for name in ("word_dur_ms", "gap_dur_ms"):
            if getattr(self, name)[0] % self.raw_frame_ms:
                raise InvalidInputError(f"{name} minimum must be a multiple of raw_frame_ms")
        if self.noise_sigma < 0:
            raise InvalidInputError("noise_sigma must be non-negative")

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Utterance:
    id: str
    frames: np.ndarray
    words: list = field(default_factory=list)

    @property
    def duration_ms(self) -> int:
        return int(self.frames.shape[0]) * 10

    def tokens(self) -> list[int]:
        return [w[0] for w in self.words]

    def intervals(self) -> list[tuple[int, int]]:
        return [(w[1], w[2]) for w in self.words]

    def validate(self, cfg: SynthConfig | None = None, raw_frame_ms: int = 10) -> None:
        prev_end = -1
        for tok, start, end in self.words:
            if not start < end:
                raise InvalidInputError(f"{self.id}: interval ({start}, {end}) is empty")
            if start < prev_end or (prev_end >= 0 and start < prev_end):
                raise InvalidInputError(f"{self.id}: intervals overlap or are unordered")
            if cfg is not None and not 0 <= tok < cfg.vocab_size:
                raise InvalidInputError(f"{self.id}: token {tok} outside vocabulary")
            prev_end = end
        if self.words and self.words[-1][2] > self.frames.shape[0] * raw_frame_ms:
            raise InvalidInputError(f"{self.id}: last word ends after the audio")


@lru_cache(maxsize=8)
def templates(cfg: SynthConfig) -> np.ndarray:
    """Unit-norm template per token, drawn once from the corpus seed."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
    t = rng.standard_normal((cfg.vocab_size, cfg.feat_dim))
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    t.flags.writeable = False
    return t


def utterance_rng(seed: int, index: int) -> np.random.Generator:
    """Child generator for utterance ``index``; order of generation is irrelevant."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, index)))


def _sample_ms(rng: np.random.Generator, lo: int, hi: int, step: int) -> int:
    return lo + step * int(rng.integers(0, (hi - lo) // step + 1))


def render_utterance(cfg: SynthConfig, rng: np.random.Generator, utt_id: str = "utt") -> Utterance:
    step = cfg.raw_frame_ms
    n_words = int(rng.integers(cfg.words_per_utt[0], cfg.words_per_utt[1] + 1))
    tokens = rng.integers(0, cfg.vocab_size, size=n_words)
    durs = [_sample_ms(rng, *cfg.word_dur_ms, step) for _ in range(n_words)]
    gaps = [_sample_ms(rng, *cfg.gap_dur_ms, step) for _ in range(n_words + 1)]

    total_ms = sum(durs) + sum(gaps)
    n_frames = total_ms // step
    frames = np.zeros((n_frames, cfg.feat_dim))
    table = templates(cfg)
    words = []
    t = gaps[0]
    for tok, dur, gap in zip(tokens, durs, gaps[1:]):
        frames[t // step:(t + dur) // step] = table[tok]
        words.append((int(tok), t, t + dur))
        t += dur + gap
    if cfg.noise_sigma > 0:
        frames += cfg.noise_sigma * rng.standard_normal(frames.shape)
    return Utterance(utt_id, frames.astype(np.float32), words)


def make_utterances(cfg: SynthConfig, n: int, start: int = 0) -> list[Utterance]:
    """Utterances ``start .. start+n-1`` of the corpus defined by ``cfg``."""
    return [render_utterance(cfg, utterance_rng(cfg.seed, i), f"utt{i:06d}")
            for i in range(start, start + n)]


def corrupt_labels(u: Utterance, sigma_ms: float, bias_ms: float,
                   rng: np.random.Generator) -> list[Word]:
    """Noisy, biased copy of the word intervals (emulates aligner pseudo-labels).

    Each boundary moves by ``bias_ms + N(0, sigma_ms)``, is rounded to whole
    milliseconds and clamped to the utterance; a word whose start overtakes
    its end gets the two swapped.
    """
    if sigma_ms < 0:
        raise InvalidInputError("sigma_ms must be non-negative")
    length = u.duration_ms
    out = []
    for tok, start, end in u.words:
        noise = rng.normal(0.0, sigma_ms, size=2) if sigma_ms > 0 else np.zeros(2)
        moved = np.clip(np.rint(np.array([start, end]) + bias_ms + noise), 0, length)
        a, b = sorted(int(x) for x in moved)
        out.append((tok, a, b))
    return out


# ---------------------------------------------------------------- manifest

def _json_line(path: Path, line: str, record: int):
    try:
        return json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON on record {record}: {exc.msg}") from None


@dataclass
class ManifestEntry:
    id: str
    features: str
    words: list


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    root: Path = Path(".")
    version: int = MANIFEST_VERSION
    config_hash: str = ""

    def __len__(self) -> int:
        return len(self.entries)

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.id: e for e in self.entries}

    def to_text(self) -> str:
        lines = [json.dumps({"format": MANIFEST_FORMAT, "version": self.version,
                             "config_hash": self.config_hash}, separators=(",", ":"))]
        for e in self.entries:
            lines.append(json.dumps({"id": e.id, "features": e.features,
                                     "words": [list(map(int, w)) for w in e.words]},
                                    separators=(",", ":")))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        try:
            path.write_text(self.to_text(), encoding="utf-8")
        except OSError as exc:
            raise OSError(exc.errno, f"cannot write manifest: {exc.strerror}", str(path)) from exc
        return path

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise FormatError(f"{path}: empty manifest")
        version, config_hash = MANIFEST_VERSION, ""
        head = _json_line(path, lines[0], 0)
        if head.get("format") == MANIFEST_FORMAT:
            version, config_hash = int(head["version"]), head.get("config_hash", "")
            if version != MANIFEST_VERSION:
                raise FormatError(f"{path}: unsupported manifest version {version}")
            lines = lines[1:]
        entries, seen = [], set()
        for i, ln in enumerate(lines):
            obj = _json_line(path, ln, i)
            try:
                entry = ManifestEntry(str(obj["id"]), str(obj["features"]),
                                      [tuple(int(x) for x in w) for w in obj["words"]])
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}: malformed entry on record {i}") from exc
            if entry.id in seen:
                raise FormatError(f"{path}: duplicate id {entry.id}")
            seen.add(entry.id)
            feat = path.parent / entry.features
            if not feat.exists():
                raise FileNotFoundError(2, "feature file missing", str(feat))
            entries.append(entry)
        return cls(entries, path.parent, version, config_hash)

    def utterances(self) -> list[Utterance]:
        return [Utterance(e.id, tensorfile.read_matrix(self.root / e.features), list(e.words))
                for e in self.entries]


def save_corpus(utts: Iterable[Utterance], out_dir: str | Path, config_hash: str = "") -> Manifest:
    out_dir = Path(out_dir)
    feat_dir = out_dir / "feats"
    try:
        feat_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create corpus directory: {exc.strerror}", str(feat_dir)) from exc
    entries = []
    for u in utts:
        rel = f"feats/{u.id}.f32"
        target = out_dir / rel
        try:
            tensorfile.write_matrix(target, u.frames)
        except OSError as exc:
            raise OSError(exc.errno, f"cannot write features: {exc.strerror}", str(target)) from exc
        entries.append(ManifestEntry(u.id, rel, [tuple(w) for w in u.words]))
    manifest = Manifest(entries, out_dir, config_hash=config_hash)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


def gen_corpus(cfg: SynthConfig, n: int, out_dir: str | Path, start: int = 0) -> Manifest:
    if n < 1:
        raise InvalidInputError("corpus size must be at least 1")
    return save_corpus(make_utterances(cfg, n, start), out_dir, cfg.config_hash())


def corpus_digest(utts: Sequence[Utterance]) -> str:
    h = hashlib.sha256()
    for u in utts:
        h.update(u.id.encode())
        h.update(np.ascontiguousarray(u.frames, dtype="<f4").tobytes())
        h.update(json.dumps([list(w) for w in u.words]).encode())
    return h.hexdigest()
