"""Offline throughput and online latency measurements for aligner inference.

Runners are callables taking a list of utterances and returning anything;
they may expose ``forward_passes`` (a running counter) so the harness can
report how many model passes a timed section used.
"""

from __future__ import annotations

import json
import math
import queue
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .aligner import AlignerModel, ar_decode, nar_decode, nar_decode_batch
from .errors import InvalidInputError
from .synthdata import Utterance, corpus_digest

WARMUP = 2
RAW_FRAME_S = 0.01


@dataclass
class BenchReport:
    mode: str
    batch_size: int
    concurrency: int
    n_requests: int
    audio_seconds: float
    wall_seconds: float
    busy_seconds: float
    rtf: float
    throughput: float
    latency_avg_ms: float
    latency_p95_ms: float
    latency_min_ms: float
    forward_passes: int
    corpus_hash: str
    latencies_ms: list[float] = field(default_factory=list, repr=False)

    def to_obj(self, with_samples: bool = False) -> dict:
        obj = asdict(self)
        if not with_samples:
            obj.pop("latencies_ms")
        return obj


def nearest_rank(samples: Sequence[float], pct: float) -> float:
    """Percentile by nearest rank on the sorted sample (no interpolation)."""
    if len(samples) == 0:
        raise InvalidInputError("percentile of an empty sample")
    ordered = sorted(samples)
    rank = max(1, math.ceil(pct / 100.0 * len(ordered)))
    return float(ordered[rank - 1])


def audio_seconds(utts: Sequence[Utterance]) -> float:
    return float(sum(u.frames.shape[0] for u in utts) * RAW_FRAME_S)


class AlignerRunner:
    """Batched NAR decoding of utterances with a frozen model."""

    def __init__(self, model: AlignerModel):
        self.model = model

    @property
    def forward_passes(self) -> int:
        return self.model.forward_calls

    def __call__(self, batch: Sequence[Utterance]):
        return nar_decode_batch(self.model, [u.frames for u in batch], [u.tokens() for u in batch])


def _passes(runner) -> int:
    return int(getattr(runner, "forward_passes", 0) or 0)


def _report(mode, batch_size, concurrency, lat_ms, audio_s, wall_s, passes, digest) -> BenchReport:
    # RTF charges each request its own processing time, so with c concurrent
    # workers throughput * rtf ~= c; throughput uses elapsed wall time.
    busy_s = float(sum(lat_ms)) / 1e3
    return BenchReport(mode, batch_size, concurrency, len(lat_ms), audio_s, wall_s, busy_s,
                       rtf=busy_s / audio_s, throughput=audio_s / wall_s,
                       latency_avg_ms=float(np.mean(lat_ms)), latency_p95_ms=nearest_rank(lat_ms, 95),
                       latency_min_ms=float(np.min(lat_ms)), forward_passes=passes,
                       corpus_hash=digest, latencies_ms=list(lat_ms))


def bench_offline(runner: Callable, corpus: Sequence[Utterance], batch_sizes: Sequence[int],
                  warmup: int = WARMUP) -> list[BenchReport]:
    """Time full-corpus batched inference once per batch size.

    Latency here is per batch. ``warmup`` batches run first and are not timed.
    """
    if not corpus:
        raise InvalidInputError("benchmark corpus is empty")
    digest = corpus_digest(corpus)
    audio_s = audio_seconds(corpus)
    reports = []
    for bs in batch_sizes:
        if bs < 1:
            raise InvalidInputError("batch size must be positive")
        batches = [list(corpus[i:i + bs]) for i in range(0, len(corpus), bs)]
        for i in range(warmup):
            runner(batches[i % len(batches)])
        before = _passes(runner)
        lat = []
        t0 = time.perf_counter()
        for b in batches:
            s = time.perf_counter()
            runner(b)
            lat.append((time.perf_counter() - s) * 1e3)
        wall = time.perf_counter() - t0
        reports.append(_report("offline", bs, 1, lat, audio_s, wall, _passes(runner) - before, digest))
    return reports


def bench_latency(runner: Callable, corpus: Sequence[Utterance], concurrency: int,
                  n_requests: int | None = None, warmup: int = WARMUP) -> BenchReport:
    """``concurrency`` worker threads issue single-utterance requests.

    Each request's latency is the full response time (the first output of a
    one-pass aligner is its whole result). Aggregation happens after every
    worker has joined.
    """
    if concurrency < 1:
        raise InvalidInputError("concurrency must be at least 1")
    if not corpus:
        raise InvalidInputError("benchmark corpus is empty")
    n = len(corpus) if n_requests is None else n_requests
    requests = [corpus[i % len(corpus)] for i in range(n)]
    for i in range(warmup):
        runner([corpus[i % len(corpus)]])
    work: queue.Queue = queue.Queue()
    for r in requests:
        work.put(r)
    per_worker: list[list[float]] = [[] for _ in range(concurrency)]

    def worker(slot: list[float]):
        while True:
            try:
                u = work.get_nowait()
            except queue.Empty:
                return
            s = time.perf_counter()
            runner([u])
            slot.append((time.perf_counter() - s) * 1e3)

    before = _passes(runner)
    threads = [threading.Thread(target=worker, args=(per_worker[i],)) for i in range(concurrency)]
    t0 = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall = time.perf_counter() - t0
    lat = [x for slot in per_worker for x in slot]
    return _report("latency", 1, concurrency, lat, audio_seconds(requests), wall,
                   _passes(runner) - before, corpus_digest(corpus))


@dataclass
class SpeedContract:
    ratio: float
    latency_few_ms: float
    latency_many_ms: float
    passes_few: int
    passes_many: int
    slots_few: int
    slots_many: int
    ar_passes: int


def nar_speed_contract(model: AlignerModel, frames: np.ndarray, few_words: Sequence[int],
                       many_words: Sequence[int], repeats: int = 7) -> SpeedContract:
    """Latency of filling many slots versus few over identical audio.

    Uses the median of ``repeats`` timed calls after one warm-up each.
    """
    def timed(words):
        nar_decode(model, frames, words)
        samples, passes = [], set()
        for _ in range(repeats):
            s = time.perf_counter()
            res = nar_decode(model, frames, words)
            samples.append((time.perf_counter() - s) * 1e3)
            passes.add(res.forward_passes)
        return float(np.median(samples)), max(passes), res.seq.n_slots

    few_ms, few_passes, few_slots = timed(few_words)
    many_ms, many_passes, many_slots = timed(many_words)
    before = model.forward_calls
    ar_decode(model, frames, many_words)
    return SpeedContract(many_ms / few_ms, few_ms, many_ms, few_passes, many_passes,
                         few_slots, many_slots, model.forward_calls - before)


def bench_table(reports: Sequence[BenchReport]) -> str:
    head = f"{'mode':<8} {'batch':>5} {'conc':>4} {'RTF':>10} {'Throughput':>11} {'Lat avg (ms)':>13} {'Lat p95 (ms)':>13}"
    lines = [head, "-" * len(head)]
    for r in reports:
        lines.append(f"{r.mode:<8} {r.batch_size:>5} {r.concurrency:>4} {r.rtf:>10.5f} {r.throughput:>11.2f} "
                     f"{r.latency_avg_ms:>13.2f} {r.latency_p95_ms:>13.2f}")
    return "\n".join(lines) + "\n"


def reports_json(reports: Sequence[BenchReport]) -> str:
    return json.dumps([r.to_obj() for r in reports], indent=2, sort_keys=True) + "\n"
