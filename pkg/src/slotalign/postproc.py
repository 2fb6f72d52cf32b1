"""From predicted slot indices to word intervals and canonical JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .aligner import END, START, SlotSequence
from .errors import FormatError, StructureError

JSONL_FORMAT = "slotalign-alignments"


@dataclass(frozen=True)
class WordTiming:
    index: int
    token: int
    start_ms: int | None = None
    end_ms: int | None = None


@dataclass
class AlignmentResult:
    id: str
    frame_ms: int
    words: list[WordTiming] = field(default_factory=list)

    def validate(self) -> None:
        prev = -1
        for w in self.words:
            if w.index <= prev:
                raise StructureError(f"{self.id}: words out of order at index {w.index}")
            prev = w.index
            for t in (w.start_ms, w.end_ms):
                if t is not None and (t < 0 or t % self.frame_ms):
                    raise StructureError(f"{self.id}: time {t} is not a non-negative multiple of {self.frame_ms}")
            if w.start_ms is not None and w.end_ms is not None and w.start_ms > w.end_ms:
                raise StructureError(f"{self.id}: word {w.index} starts after it ends")


def indices_to_times(indices: Sequence[int], frame_ms: int) -> list[int]:
    return [int(i) * frame_ms for i in indices]


def enforce_monotonic(times: Sequence[int]) -> list[int]:
    """Running-maximum clamp; already sorted input comes back unchanged."""
    if len(times) == 0:
        return []
    return np.maximum.accumulate(np.asarray(times, dtype=np.int64)).tolist()


def pair_intervals(seq: SlotSequence, times: Sequence[int], utt_id: str = "",
                   frame_ms: int = 80, tokens: Sequence[int] | None = None) -> AlignmentResult:
    """Group slot times by owning word. Words without slots are omitted."""
    if len(times) != seq.n_slots:
        raise StructureError(f"{len(times)} times for {seq.n_slots} slots")
    if tokens is None:
        tokens = seq.word_tokens
    per_word: dict[int, dict[str, int]] = {}
    for t, role, w in zip(times, seq.slot_roles, seq.owner_word.tolist()):
        slot = per_word.setdefault(w, {})
        if role in slot:
            raise StructureError(f"word {w} has two {role} slots")
        if role == END and START not in slot and any(
                r == START and o == w for r, o in zip(seq.slot_roles, seq.owner_word.tolist())):
            raise StructureError(f"end slot of word {w} precedes its start slot")
        slot[role] = int(t)
    words = []
    for w in sorted(per_word):
        s = per_word[w]
        start, end = s.get(START), s.get(END)
        if start is not None and end is not None and start > end:
            raise StructureError(f"word {w}: start {start} after end {end}; apply enforce_monotonic first")
        words.append(WordTiming(w, int(tokens[w]), start, end))
    return AlignmentResult(utt_id, frame_ms, words)


def to_alignment(seq: SlotSequence, indices: Sequence[int], utt_id: str, frame_ms: int,
                 tokens: Sequence[int] | None = None) -> AlignmentResult:
    """indices -> ms -> monotonic repair -> word intervals."""
    times = enforce_monotonic(indices_to_times(indices, frame_ms))
    return pair_intervals(seq, times, utt_id, frame_ms, tokens)


def _word_obj(w: WordTiming) -> dict:
    obj = {"index": w.index, "token": w.token}
    if w.start_ms is not None:
        obj["start_ms"] = w.start_ms
    if w.end_ms is not None:
        obj["end_ms"] = w.end_ms
    return obj


def result_to_obj(r: AlignmentResult) -> dict:
    return {"id": r.id, "frame_ms": r.frame_ms, "words": [_word_obj(w) for w in r.words]}


def emit_json(r: AlignmentResult) -> str:
    return json.dumps(result_to_obj(r), separators=(",", ":")) + "\n"


def result_from_obj(obj: dict) -> AlignmentResult:
    try:
        words = [WordTiming(int(w["index"]), int(w["token"]), w.get("start_ms"), w.get("end_ms"))
                 for w in obj["words"]]
        return AlignmentResult(str(obj["id"]), int(obj["frame_ms"]), words)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed alignment object: {exc}") from exc


def _loads(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid alignment JSON: {exc}") from None


def parse_json(text: str) -> AlignmentResult:
    return result_from_obj(_loads(text))


def emit_jsonl(results: Sequence[AlignmentResult], config_hash: str | None = None) -> str:
    """One result per line, optionally preceded by a provenance header line."""
    head = ""
    if config_hash is not None:
        head = json.dumps({"format": JSONL_FORMAT, "config_hash": config_hash}, separators=(",", ":")) + "\n"
    return head + "".join(emit_json(r) for r in results)


def parse_jsonl(text: str) -> list[AlignmentResult]:
    out = []
    for ln in text.splitlines():
        if not ln.strip():
            continue
        obj = _loads(ln)
        if isinstance(obj, dict) and obj.get("format") == JSONL_FORMAT:
            continue
        out.append(result_from_obj(obj))
    return out
