"""Strict mention-level scoring: a prediction counts only on exact (type, span) match."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import Mention, NestnerError


@dataclass(frozen=True)
class Score:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "Score") -> "Score":
        return Score(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def _sentence_score(gold: frozenset[Mention], pred: frozenset[Mention]) -> Score:
    tp = len(gold & pred)
    return Score(tp=tp, fp=len(pred) - tp, fn=len(gold) - tp)


def score_mentions(
    gold: Sequence[Iterable[Mention]],
    pred: Sequence[Iterable[Mention]],
) -> tuple[Score, dict[str, Score]]:
    """Micro-averaged strict score plus a per-entity-type breakdown.

    ``gold`` and ``pred`` are parallel per-sentence mention collections;
    mentions match only when both span and type are identical.
    """
    if len(gold) != len(pred):
        raise NestnerError(
            f"sentence count mismatch: {len(gold)} gold vs {len(pred)} predicted"
        )
    overall = Score()
    per_type: dict[str, Score] = {}
    for gold_sentence, pred_sentence in zip(gold, pred):
        g = frozenset(gold_sentence)
        p = frozenset(pred_sentence)
        overall = overall + _sentence_score(g, p)
        for entity_type in {m.entity_type for m in g | p}:
            gt = frozenset(m for m in g if m.entity_type == entity_type)
            pt = frozenset(m for m in p if m.entity_type == entity_type)
            per_type[entity_type] = per_type.get(entity_type, Score()) + _sentence_score(gt, pt)
    return overall, per_type


def report_records(overall: Score, per_type: dict[str, Score]) -> list[dict]:
    """Structured rows, one per type plus an "ALL" row, for line-delimited output."""
    rows = []
    for name, s in [("ALL", overall)] + sorted(per_type.items()):
        rows.append(
            {
                "type": name,
                "tp": s.tp,
                "fp": s.fp,
                "fn": s.fn,
                "p": s.precision,
                "r": s.recall,
                "f1": s.f1,
            }
        )
    return rows


def format_report(overall: Score, per_type: dict[str, Score]) -> str:
    header = f"{'type':<12} {'tp':>6} {'fp':>6} {'fn':>6} {'prec':>8} {'rec':>8} {'f1':>8}"
    lines = [header]
    for row in report_records(overall, per_type):
        lines.append(
            f"{row['type']:<12} {row['tp']:>6} {row['fp']:>6} {row['fn']:>6} "
            f"{row['p']:>8.4f} {row['r']:>8.4f} {row['f1']:>8.4f}"
        )
    return "\n".join(lines)
