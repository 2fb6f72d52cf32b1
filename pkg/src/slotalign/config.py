"""Run configuration: presets plus a flat ``key = value`` text format.

Keys are ``section.field`` for the synthetic data (``synth``), encoder
(``encoder``), aligner (``aligner``) and training (``train``) settings, plus
a few top-level keys (``preset``, ``seed``, ``n_train``, ``n_eval``). Values
are JSON literals, a comma list for ranges (``160,480``), or bare strings.
``#`` starts a comment. Example::

    preset = desk
    seed = 7
    train.epochs = 20        # full run
    synth.word_dur_ms = 160,480
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

from .aligner import AlignerConfig, TrainHyper
from .encoder import EncoderConfig, seconds_to_tokens
from .errors import InvalidInputError
from .synthdata import SynthConfig

PRESETS = ("desk", "paper")
_TOP = ("preset", "seed", "n_train", "n_eval")
_SECTIONS = {"synth": SynthConfig, "encoder": EncoderConfig, "aligner": AlignerConfig, "train": TrainHyper}


def preset_overrides(name: str) -> dict[str, object]:
    """Section overrides a preset applies before any user setting."""
    window = [seconds_to_tokens(1), seconds_to_tokens(8)]
    if name == "desk":
        return {"aligner.frame_ms": 80, "aligner.max_audio_s": 30, "encoder.max_tokens": 375,
                "encoder.window_tokens_range": window}
    if name == "paper":
        return {"aligner.frame_ms": 80, "aligner.max_audio_s": 300, "encoder.max_tokens": 3750,
                "encoder.window_tokens_range": window}
    raise InvalidInputError(f"unknown preset {name!r}; choose one of {', '.join(PRESETS)}")


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    n_train: int = 3000
    n_eval: int = 300
    synth: SynthConfig = field(default_factory=SynthConfig)
    aligner: AlignerConfig = field(default_factory=AlignerConfig)
    train: TrainHyper = field(default_factory=TrainHyper)

    @property
    def encoder(self) -> EncoderConfig:
        return self.aligner.encoder

    def to_dict(self) -> dict:
        return {"preset": self.preset, "seed": self.seed, "n_train": self.n_train, "n_eval": self.n_eval,
                "synth": asdict(self.synth), "aligner": self.aligner.to_dict(), "train": asdict(self.train)}

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_text(self) -> str:
        """Round-trippable flat text form."""
        flat = self.to_dict()
        lines = [f"{k} = {json.dumps(flat[k])}" for k in _TOP]
        for section in _SECTIONS:
            values = flat["aligner"]["encoder"] if section == "encoder" else flat[section]
            for k, v in values.items():
                if section == "aligner" and k == "encoder":
                    continue
                lines.append(f"{section}.{k} = {json.dumps(v)}")
        return "\n".join(lines) + "\n"


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        pass
    if "," in raw:
        return [_parse_value(part) for part in raw.split(",")]
    return raw


def parse_text(text: str) -> dict[str, object]:
    """Flat ``key = value`` pairs; later keys win. Raises InvalidInputError with the line number."""
    out: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise InvalidInputError(f"config line {lineno}: expected 'key = value'")
        out[key] = _parse_value(value)
    return out


def _field_names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def build(settings: Mapping[str, object] | None = None) -> RunConfig:
    """Resolve a RunConfig from flat settings: preset first, then explicit keys.

    ``seed`` seeds the corpus, the model init and the training order unless a
    section sets its own (``synth.seed`` / ``train.seed``).
    """
    settings = dict(settings or {})
    preset = str(settings.get("preset", "desk"))
    merged = {**preset_overrides(preset), **settings}
    top: dict[str, object] = {"preset": preset}
    sections: dict[str, dict] = {name: {} for name in _SECTIONS}
    for key, value in merged.items():
        if key in _TOP:
            top[key] = value
            continue
        section, _, name = key.partition(".")
        if section not in _SECTIONS or name not in _field_names(_SECTIONS[section]) or name == "encoder":
            raise InvalidInputError(f"unknown config key {key!r}")
        sections[section][name] = value
    try:
        seed = int(top.get("seed", 0))
        sections["synth"].setdefault("seed", seed)
        sections["train"].setdefault("seed", seed)
        synth = SynthConfig(**sections["synth"])
        # the encoder width follows the LM unless set on its own
        enc_kw = {"feat_dim": synth.feat_dim, **sections["encoder"]}
        if "d_model" in sections["aligner"]:
            enc_kw.setdefault("d_model", sections["aligner"]["d_model"])
        encoder = EncoderConfig(**enc_kw)
        aligner_kw = {"text_vocab": synth.vocab_size, "d_model": encoder.d_model, **sections["aligner"]}
        aligner = AlignerConfig(encoder=encoder, **aligner_kw)
        train = TrainHyper(**sections["train"])
        run = RunConfig(preset, seed, int(top.get("n_train", 3000)), int(top.get("n_eval", 300)),
                        synth, aligner, train)
        validate(run)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"bad config value: {exc}") from None
    return run


def validate(run: RunConfig) -> None:
    if run.n_train < 1 or run.n_eval < 0:
        raise InvalidInputError("n_train must be positive and n_eval non-negative")
    if run.synth.feat_dim != run.encoder.feat_dim:
        raise InvalidInputError("encoder.feat_dim must equal synth.feat_dim")
    if run.aligner.text_vocab < run.synth.vocab_size:
        raise InvalidInputError("aligner.text_vocab is smaller than the synthetic vocabulary")
    if run.synth.raw_frame_ms * run.encoder.downsample != run.aligner.frame_ms:
        raise InvalidInputError("raw_frame_ms x downsample must equal the aligner frame_ms")
    if run.encoder.max_tokens < run.aligner.n_classes:
        raise InvalidInputError("encoder.max_tokens must cover every timestamp class")
    t = run.train
    if t.epochs < 1 or t.batch_size < 1 or t.lr <= 0 or not 0 <= t.slot_p <= 1:
        raise InvalidInputError("train.epochs, train.batch_size, train.lr must be positive and slot_p in [0, 1]")


def load(path: str | Path | None = None, overrides: Mapping[str, object] | None = None) -> RunConfig:
    """Read a config file (optional) and apply command-line overrides on top."""
    settings = parse_text(Path(path).read_text(encoding="utf-8")) if path is not None else {}
    settings.update(overrides or {})
    return build(settings)


def with_train(run: RunConfig, **changes) -> RunConfig:
    return replace(run, train=replace(run.train, **changes))
