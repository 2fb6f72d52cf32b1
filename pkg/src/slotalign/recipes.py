"""End-to-end recipes shared by the CLI, the demos and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import config
from .aligner import AlignerModel, TrainResult, nar_decode_batch, train
from .metrics import aas, aas_corpus
from .postproc import AlignmentResult, to_alignment
from .synthdata import Utterance, corrupt_labels, make_utterances


def align_utterances(model: AlignerModel, utts: Sequence[Utterance], slots=None,
                     batch_size: int = 32) -> list[AlignmentResult]:
    """Align every utterance with one forward pass per batch."""
    results = []
    for i in range(0, len(utts), batch_size):
        batch = utts[i:i + batch_size]
        select = None if slots is None else [slots] * len(batch)
        decoded = nar_decode_batch(model, [u.frames for u in batch], [u.tokens() for u in batch], select)
        for u, d in zip(batch, decoded):
            results.append(to_alignment(d.seq, d.indices.tolist(), u.id, model.cfg.frame_ms))
    return results


def heldout_aas(model: AlignerModel, utts: Sequence[Utterance]) -> float:
    return aas_corpus(align_utterances(model, utts), utts).aas_ms


def corpora(run: config.RunConfig) -> tuple[list[Utterance], list[Utterance]]:
    """Training and held-out utterances; the held-out ids follow the training ids."""
    return make_utterances(run.synth, run.n_train), make_utterances(run.synth, run.n_eval, start=run.n_train)


def noisy_labels(utts: Sequence[Utterance], sigma_ms: float, bias_ms: float,
                 seed: int) -> tuple[list[list], float]:
    """Corrupted word intervals per utterance, plus their AAS against the truth."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
    noisy, pred, ref = [], [], []
    for u in utts:
        words = corrupt_labels(u, sigma_ms, bias_ms, rng)
        noisy.append(words)
        pred += [t for _, s, e in words for t in (s, e)]
        ref += [t for _, s, e in u.words for t in (s, e)]
    return noisy, aas(pred, ref).aas_ms


@dataclass
class DeskRun:
    result: TrainResult
    heldout_aas_ms: float
    label_aas_ms: float | None
    seconds: float

    @property
    def epochs(self) -> int:
        return len(self.result.log)


def run_desk(run: config.RunConfig, label_noise: tuple[float, float] | None = None,
             on_epoch: Callable[[dict], None] | None = None, eval_each_epoch: bool = False) -> DeskRun:
    """Train on the run's corpus and score held-out AAS against the true boundaries.

    ``label_noise`` is ``(sigma_ms, bias_ms)`` applied to the training labels
    only; the held-out reference always stays exact.
    """
    train_u, held = corpora(run)
    labels, label_aas = None, None
    if label_noise is not None:
        labels, label_aas = noisy_labels(train_u, *label_noise, seed=run.seed)
    t0 = time.perf_counter()
    model = AlignerModel(run.aligner, seed=run.seed)
    res = train(model, train_u, run.train, labels=labels, on_epoch=on_epoch,
                eval_fn=(lambda m: heldout_aas(m, held)) if eval_each_epoch else None)
    return DeskRun(res, heldout_aas(res.model, held), label_aas, time.perf_counter() - t0)
