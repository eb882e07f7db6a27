"""Randomized decoder-vs-brute-force equivalence checking.

Instances are small enough for exhaustive enumeration (n <= 8, few labels) and
fully determined by one seed, so any failure is reproducible from the replay
record alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .decoder import (
    DecodeResult,
    NoDerivation,
    brute_force_best,
    decode_ablation,
    decode_baseline,
    decode_loss_augmented,
    decode_ordered,
)
from .grammar import Grammar, Rule, RuleScoreChart
from .scorer import SpanScoreChart
from .trees import BinaryTree

MODES = ("ordered", "baseline", "ablation", "loss-augmented")


@dataclass
class Instance:
    chart: SpanScoreChart
    grammar: Grammar
    rules: RuleScoreChart
    gold: BinaryTree

    def to_json(self) -> dict:
        return {
            "n": self.chart.n,
            "labels": list(self.chart.labels),
            "scores": self.chart.scores.tolist(),
            "rules": [list(r) for r in self.grammar.rules],
            "rule_scores": self.rules.scores.tolist(),
            "gold": _tree_to_json(self.gold),
        }


def _tree_to_json(node: BinaryTree) -> dict:
    out = {"label": node.label, "span": [node.start, node.end]}
    if not node.is_leaf:
        out["left"] = _tree_to_json(node.left)
        out["right"] = _tree_to_json(node.right)
    return out


def random_instance(rng: np.random.Generator, max_n: int = 6, max_labels: int = 4) -> Instance:
    n = int(rng.integers(2, max_n + 1))
    n_labels = int(rng.integers(2, max_labels + 1))
    labels = tuple("ABCDEF"[:n_labels])
    sentence = tuple((f"w{i}", "X") for i in range(n))
    scores = rng.normal(size=(n + 1, n + 1, n_labels, 2))
    chart = SpanScoreChart(sentence=sentence, labels=labels, scores=scores)

    all_rules = [Rule(p, l, r) for p in labels for l in labels for r in labels]
    if rng.random() < 0.2:
        picked = all_rules
    else:
        mask = rng.random(len(all_rules)) < 0.5
        picked = [r for r, keep in zip(all_rules, mask) if keep]
    grammar = Grammar(picked)
    rules = RuleScoreChart(grammar, rng.uniform(-1.0, 1.0, size=(len(grammar), 2)))

    def random_tree(i: int, j: int) -> BinaryTree:
        lab = labels[int(rng.integers(0, n_labels))]
        if j - i == 1:
            return BinaryTree(lab, i, j, sentence)
        k = int(rng.integers(i + 1, j))
        return BinaryTree(lab, i, j, sentence, random_tree(i, k), random_tree(k, j))

    return Instance(chart=chart, grammar=grammar, rules=rules, gold=random_tree(0, n))


def run_mode(inst: Instance, mode: str) -> tuple[Optional[DecodeResult], Optional[DecodeResult]]:
    """(decoder result, brute-force result); None means no derivation."""
    try:
        if mode == "ordered":
            got = decode_ordered(inst.chart, inst.grammar, inst.rules)
        elif mode == "baseline":
            got = decode_baseline(inst.chart.collapsed(), inst.chart.sentence, inst.chart.labels)
        elif mode == "ablation":
            got = decode_ablation(inst.chart)
        elif mode == "loss-augmented":
            got = decode_loss_augmented(inst.chart, inst.grammar, inst.rules, inst.gold)
        else:
            raise ValueError(mode)
    except NoDerivation:
        got = None
    try:
        want = brute_force_best(
            inst.chart, mode, grammar=inst.grammar, rules=inst.rules, gold=inst.gold
        )
    except NoDerivation:
        want = None
    return got, want


@dataclass
class CheckReport:
    trials: int
    checks: int
    failures: list[dict]

    @property
    def passed(self) -> bool:
        return not self.failures


def oracle_check(
    seed: int,
    trials: int = 200,
    max_n: int = 6,
    max_labels: int = 4,
    tolerance: float = 1e-9,
) -> CheckReport:
    rng = np.random.default_rng(seed)
    failures: list[dict] = []
    checks = 0
    for trial in range(trials):
        inst = random_instance(rng, max_n=max_n, max_labels=max_labels)
        for mode in MODES:
            got, want = run_mode(inst, mode)
            checks += 1
            if (got is None) != (want is None):
                gap = float("inf")
            elif got is None:
                gap = 0.0
            else:
                gap = abs(got.score - want.score)
            if gap > tolerance:
                failures.append(
                    {
                        "trial": trial,
                        "mode": mode,
                        "decoder_score": None if got is None else got.score,
                        "oracle_score": None if want is None else want.score,
                        "gap": gap,
                        "instance": inst.to_json(),
                    }
                )
    return CheckReport(trials=trials, checks=checks, failures=failures)


def write_replay(report: CheckReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.failures[0], fh, indent=2)
