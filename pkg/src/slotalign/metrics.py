"""Accumulated Average Shift and comparison tables."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidInputError, StructureError, UnmatchedIdError
from .postproc import AlignmentResult

GRANULARITIES = ("start", "end", "both")


@dataclass
class AASReport:
    n: int
    shifts_ms: np.ndarray
    aas_ms: float
    per_utterance: dict[str, float] = field(default_factory=dict)

    @property
    def macro_aas_ms(self) -> float | None:
        """Unweighted mean of per-utterance AAS; supplementary only."""
        if not self.per_utterance:
            return None
        return float(np.mean(list(self.per_utterance.values())))

    def to_obj(self) -> dict:
        obj = {"n": self.n, "aas_ms": self.aas_ms}
        if self.per_utterance:
            obj["macro_aas_ms"] = self.macro_aas_ms
        return obj


def aas(pred: Sequence[float], ref: Sequence[float]) -> AASReport:
    """Mean absolute difference between paired predicted and reference times."""
    p = np.asarray(pred, dtype=np.float64)
    r = np.asarray(ref, dtype=np.float64)
    if p.shape != r.shape or p.ndim != 1:
        raise InvalidInputError(f"prediction and reference lengths differ ({p.size} vs {r.size})")
    if p.size == 0:
        raise InvalidInputError("AAS needs at least one slot")
    shifts = np.abs(p - r)
    return AASReport(int(shifts.size), shifts, float(shifts.sum() / shifts.size))


def _ref_lookup(refs) -> dict[str, list]:
    if isinstance(refs, Mapping):
        return {k: list(v) for k, v in refs.items()}
    out = {}
    for item in refs:
        words = getattr(item, "words")
        out[item.id] = list(words)
    return out


def slot_pairs(result: AlignmentResult, ref_words: Sequence, granularity: str = "both"):
    """(pred, ref) pairs for every slot present in ``result``."""
    if granularity not in GRANULARITIES:
        raise InvalidInputError(f"granularity must be one of {GRANULARITIES}")
    pred, ref = [], []
    for w in result.words:
        if w.index >= len(ref_words):
            raise StructureError(f"{result.id}: no reference for word {w.index}")
        r_start, r_end = ref_words[w.index][-2:]
        if granularity in ("start", "both") and w.start_ms is not None:
            pred.append(w.start_ms)
            ref.append(r_start)
        if granularity in ("end", "both") and w.end_ms is not None:
            pred.append(w.end_ms)
            ref.append(r_end)
    return pred, ref


def aas_corpus(results: Sequence[AlignmentResult], refs, granularity: str = "both") -> AASReport:
    """Slot-pooled AAS over a corpus.

    ``refs`` is a manifest (anything with ``entries``), a sequence of objects
    carrying ``id`` and ``words``, or a mapping id -> words.
    """
    lookup = _ref_lookup(refs.entries if hasattr(refs, "entries") else refs)
    missing = [r.id for r in results if r.id not in lookup]
    if missing:
        raise UnmatchedIdError(missing)
    all_pred, all_ref, per_utt = [], [], {}
    for r in results:
        pred, ref = slot_pairs(r, lookup[r.id], granularity)
        if pred:
            per_utt[r.id] = aas(pred, ref).aas_ms
        all_pred.extend(pred)
        all_ref.extend(ref)
    report = aas(all_pred, all_ref)
    report.per_utterance = per_utt
    return report


def compare_table(reports: Mapping[str, object], title: str = "AAS (ms)") -> str:
    """Plain-text table, systems as columns; ``*`` marks the lowest AAS per row.

    Values of ``reports`` are either an AASReport/number (one row) or a
    mapping of row name to AASReport/number.
    """
    if not reports:
        raise InvalidInputError("nothing to compare")
    systems = list(reports)
    rows: list[str] = []
    cell: dict[tuple[str, str], float] = {}
    for sysname, val in reports.items():
        items = val.items() if isinstance(val, Mapping) else [("all", val)]
        for row, rep in items:
            if row not in rows:
                rows.append(row)
            cell[(row, sysname)] = rep.aas_ms if isinstance(rep, AASReport) else float(rep)

    def fmt(row, s):
        if (row, s) not in cell:
            return "-"
        best = min(v for (r, _), v in cell.items() if r == row)
        return f"{cell[(row, s)]:.1f}" + ("*" if cell[(row, s)] == best else " ")

    first = max(len(title), *(len(r) for r in rows))
    widths = [max(len(s), *(len(fmt(r, s)) for r in rows)) for s in systems]
    lines = ["  ".join([title.ljust(first)] + [s.rjust(w) for s, w in zip(systems, widths)])]
    lines.append("  ".join(["-" * first] + ["-" * w for w in widths]))
    for r in rows:
        lines.append("  ".join([r.ljust(first)] + [fmt(r, s).rjust(w) for s, w in zip(systems, widths)]))
    return "\n".join(lines) + "\n"


def report_json(reports: Mapping[str, AASReport]) -> str:
    return json.dumps({k: v.to_obj() for k, v in reports.items()}, sort_keys=True, indent=2) + "\n"
