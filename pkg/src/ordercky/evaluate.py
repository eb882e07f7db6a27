"""Corpus-level labeled-bracket precision / recall / F1.

Brackets are the labeled spans of phrasal nodes (width-1 phrasal brackets and
the root included; part-of-speech tags excluded).  Duplicate spans from unary
re-expansion match as a multiset.  Counts are aggregated over the whole corpus
before computing percentages (micro-average).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .trees import LengthMismatch, Node, iter_leaves, spans_of


@dataclass(frozen=True)
class EvalReport:
    matched: int
    predicted: int
    gold: int

    @property
    def precision(self) -> float:
        return 100.0 * self.matched / self.predicted if self.predicted else 0.0

    @property
    def recall(self) -> float:
        return 100.0 * self.matched / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def summary(self) -> str:
        return (
            f"P={self.precision:.2f} R={self.recall:.2f} F1={self.f1:.2f} "
            f"matched={self.matched} pred={self.predicted} gold={self.gold}"
        )


def bracket_counts(pred: Node, gold: Node) -> tuple[int, int, int]:
    pred_brackets = Counter(spans_of(pred))
    gold_brackets = Counter(spans_of(gold))
    matched = sum((pred_brackets & gold_brackets).values())
    return matched, sum(pred_brackets.values()), sum(gold_brackets.values())


def score_trees(pred: Sequence[Node], gold: Sequence[Node]) -> EvalReport:
    if len(pred) != len(gold):
        raise LengthMismatch(f"{len(pred)} predicted trees vs {len(gold)} gold trees")
    matched = predicted = total_gold = 0
    for idx, (p, g) in enumerate(zip(pred, gold)):
        if sum(1 for _ in iter_leaves(p)) != sum(1 for _ in iter_leaves(g)):
            raise LengthMismatch(f"sentence {idx}: predicted and gold lengths differ")
        m, np_, ng = bracket_counts(p, g)
        matched += m
        predicted += np_
        total_gold += ng
    return EvalReport(matched=matched, predicted=predicted, gold=total_gold)


def per_sentence_rows(pred: Sequence[Node], gold: Sequence[Node]) -> list[tuple[int, int, int, int]]:
    """(index, matched, predicted, gold) per sentence, for TSV dumps."""
    rows = []
    for idx, (p, g) in enumerate(zip(pred, gold)):
        m, np_, ng = bracket_counts(p, g)
        rows.append((idx, m, np_, ng))
    return rows
