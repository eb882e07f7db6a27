"""Chart decoders over span-score charts.

Four modes share one tie-breaking policy so every path is reproducible:
among equal-scoring candidates, the smallest split point wins, then the
smallest label ids (label ids follow the chart's label tuple, which the
treebank sorts lexicographically).

* ordered: per-order span scores plus grammar-rule scores; compositions are
  restricted to extracted rules (skipping a rule is equivalent to scoring it
  at the rule-chart floor, which can never win).
* baseline: one score per (span, label); the label of each span is chosen
  independently of the tree structure.
* ablation: per-order span scores, no grammar term and no rule restriction.
* loss-augmented: ordered decoding over scores incremented by 1 for every
  labeled span absent from the gold tree, so the optimum is
  max_T [score(T) + hamming(T, gold)].

The batched decoder fills all cells of one span width in a single vectorized
step (within and across sentences) and is bit-identical to the scalar path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .grammar import LEFT, RIGHT, Grammar, RuleScoreChart, Rule
from .scorer import SpanScoreChart
from .trees import BinaryTree, decoded_spans

NEG_INF = -np.inf


class NoDerivation(Exception):
    """No in-grammar composition covers the sentence."""


class InstanceTooLarge(ValueError):
    pass


@dataclass
class DecodeResult:
    tree: BinaryTree
    score: float


class CompiledRules:
    """Grammar plus rule scores flattened to id arrays for chart decoding.

    Rules are sorted by (parent, left, right) label ids; rules mentioning
    labels outside the chart vocabulary are dropped.
    """

    def __init__(self, labels: Sequence[str], grammar: Grammar, rules: RuleScoreChart):
        self.labels = tuple(labels)
        index = {lab: i for i, lab in enumerate(self.labels)}
        triples = []
        for rule in grammar.rules:
            if rule.parent in index and rule.left in index and rule.right in index:
                ridx = grammar.rule_index[rule]
                triples.append(
                    (index[rule.parent], index[rule.left], index[rule.right], ridx)
                )
        triples.sort()
        n_labels = len(self.labels)
        self.parent = np.array([t[0] for t in triples], dtype=np.intp)
        self.left = np.array([t[1] for t in triples], dtype=np.intp)
        self.right = np.array([t[2] for t in triples], dtype=np.intp)
        if triples:
            self.scores = rules.scores[np.array([t[3] for t in triples], dtype=np.intp)]
        else:
            self.scores = np.zeros((0, 2))
        self.parent_slices = []
        lo = 0
        for lab in range(n_labels):
            hi = lo
            while hi < len(triples) and triples[hi][0] == lab:
                hi += 1
            self.parent_slices.append((lo, hi))
            lo = hi

    def __len__(self) -> int:
        return len(self.parent)


def _leaf(labels, sentence, i, lab):
    return BinaryTree(labels[lab], i, i + 1, sentence)


def decode_ordered(
    chart: SpanScoreChart,
    grammar: Grammar,
    rules: RuleScoreChart,
    compiled: Optional[CompiledRules] = None,
    forbid_root: Optional[str] = None,
) -> DecodeResult:
    """Scalar reference implementation of the order-aware recursion.

    ``forbid_root`` excludes one label (the binarization dummy, in the parsing
    pipeline) from the root argmax so the result is always de-binarizable.
    """
    comp = compiled or CompiledRules(chart.labels, grammar, rules)
    n = chart.n
    n_labels = len(chart.labels)
    s = chart.scores
    t = np.full((n + 1, n + 1, n_labels, 2), NEG_INF)
    back: dict[tuple[int, int, int], tuple[int, int, int]] = {}
    for i in range(n):
        t[i, i + 1] = s[i, i + 1]
    for w in range(2, n + 1):
        for i in range(0, n - w + 1):
            j = i + w
            for lab in range(n_labels):
                lo, hi = comp.parent_slices[lab]
                if lo == hi:
                    continue
                best = [NEG_INF, NEG_INF]
                best_bp = [None, None]
                for k in range(i + 1, j):
                    for r in range(lo, hi):
                        base = t[i, k, comp.left[r], LEFT] + t[k, j, comp.right[r], RIGHT]
                        for o in (LEFT, RIGHT):
                            cand = base + comp.scores[r, o]
                            if cand > best[o]:
                                best[o] = cand
                                best_bp[o] = (k, comp.left[r], comp.right[r])
                for o in (LEFT, RIGHT):
                    t[i, j, lab, o] = s[i, j, lab, o] + best[o]
                    if best_bp[o] is not None:
                        back[(i, j, lab, o)] = best_bp[o]
    return _extract(chart, t, back, n, forbid_root)


def _label_id(labels, label):
    return labels.index(label) if label is not None and label in labels else None


def _extract(chart, t, back, n, forbid_root=None) -> DecodeResult:
    root_scores = t[0, n, :, LEFT]
    forbidden = _label_id(chart.labels, forbid_root)
    if forbidden is not None:
        root_scores = root_scores.copy()
        root_scores[forbidden] = NEG_INF
    root_lab = int(np.argmax(root_scores))
    best = float(root_scores[root_lab])
    if best == NEG_INF or (n > 1 and (0, n, root_lab, LEFT) not in back):
        raise NoDerivation(f"no in-grammar derivation covers the sentence (n={n})")

    labels, sentence = chart.labels, chart.sentence

    def build(i, j, lab, o) -> BinaryTree:
        if j - i == 1:
            return _leaf(labels, sentence, i, lab)
        k, l1, l2 = back[(i, j, lab, o)]
        return BinaryTree(
            labels[lab], i, j, sentence,
            build(i, k, l1, LEFT), build(k, j, l2, RIGHT),
        )

    return DecodeResult(tree=build(0, n, root_lab, LEFT), score=best)


def decode_baseline(
    scores: np.ndarray,
    sentence: tuple[tuple[str, str], ...],
    labels: tuple[str, ...],
    forbid_root: Optional[str] = None,
) -> DecodeResult:
    """Order-free decoding: per-span label argmax plus best bracketing."""
    n = len(sentence)
    forbidden = _label_id(labels, forbid_root)
    if forbidden is not None:
        scores = scores.copy()
        scores[0, n, forbidden] = NEG_INF
    label_choice = np.argmax(scores, axis=2)
    label_score = np.max(scores, axis=2)
    t = np.full((n + 1, n + 1), NEG_INF)
    split = np.full((n + 1, n + 1), -1, dtype=np.intp)
    for i in range(n):
        t[i, i + 1] = label_score[i, i + 1]
    for w in range(2, n + 1):
        starts = np.arange(0, n - w + 1)
        mids = starts[:, None] + np.arange(1, w)[None, :]
        cand = t[starts[:, None], mids] + t[mids, starts[:, None] + w]
        best_k = np.argmax(cand, axis=1)
        rows = np.arange(len(starts))
        t[starts, starts + w] = label_score[starts, starts + w] + cand[rows, best_k]
        split[starts, starts + w] = starts + best_k + 1

    def build(i, j) -> BinaryTree:
        lab = int(label_choice[i, j])
        if j - i == 1:
            return _leaf(labels, sentence, i, lab)
        k = int(split[i, j])
        return BinaryTree(labels[lab], i, j, sentence, build(i, k), build(k, j))

    return DecodeResult(tree=build(0, n), score=float(t[0, n]))


def decode_ablation(chart: SpanScoreChart, forbid_root: Optional[str] = None) -> DecodeResult:
    """Ordered span scores without the grammar-rule term."""
    n = chart.n
    s = chart.scores
    forbidden = _label_id(chart.labels, forbid_root)
    if forbidden is not None:
        s = s.copy()
        s[0, n, forbidden, :] = NEG_INF
    label_choice = np.argmax(s, axis=2)          # (n+1, n+1, 2)
    label_score = np.max(s, axis=2)
    t = np.full((n + 1, n + 1, 2), NEG_INF)
    split = np.full((n + 1, n + 1), -1, dtype=np.intp)
    for i in range(n):
        t[i, i + 1] = label_score[i, i + 1]
    for w in range(2, n + 1):
        starts = np.arange(0, n - w + 1)
        mids = starts[:, None] + np.arange(1, w)[None, :]
        cand = t[starts[:, None], mids, LEFT] + t[mids, starts[:, None] + w, RIGHT]
        best_k = np.argmax(cand, axis=1)
        rows = np.arange(len(starts))
        t[starts, starts + w] = label_score[starts, starts + w] + cand[rows, best_k][:, None]
        split[starts, starts + w] = starts + best_k + 1

    labels, sentence = chart.labels, chart.sentence

    def build(i, j, o) -> BinaryTree:
        lab = int(label_choice[i, j, o])
        if j - i == 1:
            return _leaf(labels, sentence, i, lab)
        k = int(split[i, j])
        return BinaryTree(labels[lab], i, j, sentence, build(i, k, LEFT), build(k, j, RIGHT))

    return DecodeResult(tree=build(0, n, LEFT), score=float(t[0, n, LEFT]))


def hamming_costs(n: int, labels: tuple[str, ...], gold: BinaryTree) -> np.ndarray:
    """cost[i, j, l] = 1 if (i, j, label_l) is not a node of gold, else 0."""
    cost = np.ones((n + 1, n + 1, len(labels)))
    index = {lab: i for i, lab in enumerate(labels)}
    for span in decoded_spans(gold):
        lab = index.get(span.label)
        if lab is not None:
            cost[span.start, span.end, lab] = 0.0
    return cost


def decode_loss_augmented(
    chart: SpanScoreChart,
    grammar: Grammar,
    rules: RuleScoreChart,
    gold: BinaryTree,
    compiled: Optional[CompiledRules] = None,
) -> DecodeResult:
    """Ordered decoding of max_T [score(T) + hamming(T, gold)]."""
    aug = SpanScoreChart(
        sentence=chart.sentence,
        labels=chart.labels,
        scores=chart.scores + hamming_costs(chart.n, chart.labels, gold)[:, :, :, None],
    )
    return decode_ordered(aug, grammar, rules, compiled=compiled)


def nodes_with_orders(btree: BinaryTree, root_order: int = LEFT) -> Iterator[tuple[BinaryTree, int]]:
    """Every node paired with its order as a child; the root reads as LEFT."""
    yield btree, root_order
    if not btree.is_leaf:
        yield from nodes_with_orders(btree.left, LEFT)
        yield from nodes_with_orders(btree.right, RIGHT)


def ordered_tree_score(
    btree: BinaryTree,
    chart: SpanScoreChart,
    rules: Optional[RuleScoreChart] = None,
) -> float:
    """Independent bottom-up re-summation of the ordered (or ablation) objective."""
    index = {lab: i for i, lab in enumerate(chart.labels)}
    total = 0.0
    for node, order in nodes_with_orders(btree):
        total += float(chart.scores[node.start, node.end, index[node.label], order])
        if rules is not None and not node.is_leaf:
            total += rules.score(Rule(node.label, node.left.label, node.right.label), order)
    return total


def baseline_tree_score(btree: BinaryTree, scores: np.ndarray, labels: tuple[str, ...]) -> float:
    index = {lab: i for i, lab in enumerate(labels)}
    return float(
        sum(scores[n.start, n.end, index[n.label]] for n in btree.nodes())
    )


def fallback_tree(
    sentence: tuple[tuple[str, str], ...], labels: Sequence[str]
) -> BinaryTree:
    """Right-branching tree of dummy nodes under the first non-dummy label,
    for robustness runs where no in-grammar derivation exists."""
    from .trees import DUMMY

    root_label = next((lab for lab in labels if lab != DUMMY), DUMMY)
    n = len(sentence)

    def build(i):
        if i == n - 1:
            return BinaryTree(DUMMY, i, i + 1, sentence)
        return BinaryTree(DUMMY, i, n, sentence, BinaryTree(DUMMY, i, i + 1, sentence), build(i + 1))

    if n == 1:
        return BinaryTree(root_label, 0, 1, sentence)
    left = BinaryTree(DUMMY, 0, 1, sentence)
    right = build(1)
    return BinaryTree(root_label, 0, n, sentence, left, right)


# ---------------------------------------------------------------------------
# brute-force oracle


def _shapes(i: int, j: int, memo: dict) -> list:
    """All binary bracketings of (i, j) as nested (i, j, left, right) tuples."""
    if (i, j) in memo:
        return memo[(i, j)]
    if j - i == 1:
        out = [(i, j, None, None)]
    else:
        out = []
        for k in range(i + 1, j):
            for lt in _shapes(i, k, memo):
                for rt in _shapes(k, j, memo):
                    out.append((i, j, lt, rt))
    memo[(i, j)] = out
    return out


def brute_force_best(
    chart: SpanScoreChart,
    mode: str,
    grammar: Optional[Grammar] = None,
    rules: Optional[RuleScoreChart] = None,
    gold: Optional[BinaryTree] = None,
    forbid_root: Optional[str] = None,
) -> DecodeResult:
    """Enumerate every bracketing and exhaustively maximize the labeling of
    each one by direct summation of the mode's objective.

    Within one bracketing the label maximization runs over the fixed tree
    shape, which shares nothing with the width-ordered chart recursion.
    """
    n = chart.n
    n_labels = len(chart.labels)
    if n > 8 or n_labels > 6:
        raise InstanceTooLarge(f"brute force limited to n <= 8, labels <= 6; got {n}, {n_labels}")
    if mode not in ("ordered", "baseline", "ablation", "loss-augmented"):
        raise ValueError(f"unknown mode: {mode}")
    if mode == "loss-augmented" and gold is None:
        raise ValueError("loss-augmented mode requires a gold tree")

    s = chart.scores
    if mode == "loss-augmented":
        s = s + hamming_costs(n, chart.labels, gold)[:, :, :, None]

    shapes = _shapes(0, n, {})
    labels, sentence = chart.labels, chart.sentence

    if mode in ("ordered", "loss-augmented"):
        comp = CompiledRules(chart.labels, grammar, rules)
        best_score, best_tree = NEG_INF, None
        for shape in shapes:
            table: dict[tuple, np.ndarray] = {}
            choice: dict[tuple, dict] = {}

            def fill(node):
                i, j, lt, rt = node
                if lt is None:
                    table[node] = s[i, j].copy()
                    return
                fill(lt)
                fill(rt)
                out = np.full((n_labels, 2), NEG_INF)
                picks: dict = {}
                for r in range(len(comp)):
                    base = table[lt][comp.left[r], LEFT] + table[rt][comp.right[r], RIGHT]
                    for o in (LEFT, RIGHT):
                        cand = base + comp.scores[r, o]
                        if cand > out[comp.parent[r], o]:
                            out[comp.parent[r], o] = cand
                            picks[(int(comp.parent[r]), o)] = r
                out += s[i, j]
                table[node] = out
                choice[node] = picks

            fill(shape)
            root_vals = table[shape][:, LEFT]
            forbidden = _label_id(labels, forbid_root)
            if forbidden is not None:
                root_vals = root_vals.copy()
                root_vals[forbidden] = NEG_INF
            lab = int(np.argmax(root_vals))
            val = float(root_vals[lab])
            if val > best_score:

                def build(node, lab, o):
                    i, j, lt, rt = node
                    if lt is None:
                        return _leaf(labels, sentence, i, lab)
                    r = choice[node][(lab, o)]
                    return BinaryTree(
                        labels[lab], i, j, sentence,
                        build(lt, int(comp.left[r]), LEFT),
                        build(rt, int(comp.right[r]), RIGHT),
                    )

                best_score = val
                best_tree = build(shape, lab, LEFT)
        if best_tree is None:
            raise NoDerivation(f"no in-grammar derivation covers the sentence (n={n})")
        return DecodeResult(tree=best_tree, score=best_score)

    forbidden = _label_id(labels, forbid_root)

    if mode == "baseline":
        s3 = chart.collapsed()
        if forbidden is not None:
            s3 = s3.copy()
            s3[0, n, forbidden] = NEG_INF
        best_score, best_shape = NEG_INF, None
        for shape in shapes:
            total = sum(float(np.max(s3[i, j])) for i, j, _, _ in _iter_shape(shape))
            if total > best_score:
                best_score, best_shape = total, shape

        def build_b(node):
            i, j, lt, rt = node
            lab = int(np.argmax(s3[i, j]))
            if lt is None:
                return _leaf(labels, sentence, i, lab)
            return BinaryTree(labels[lab], i, j, sentence, build_b(lt), build_b(rt))

        return DecodeResult(tree=build_b(best_shape), score=best_score)

    # ablation: the order of every node is fixed by its position in the shape
    if forbidden is not None:
        s = s.copy()
        s[0, n, forbidden, :] = NEG_INF
    best_score, best_shape = NEG_INF, None
    for shape in shapes:
        total = sum(
            float(np.max(s[i, j, :, o])) for (i, j, _, _), o in _iter_shape_orders(shape)
        )
        if total > best_score:
            best_score, best_shape = total, shape

    def build_a(node, o):
        i, j, lt, rt = node
        lab = int(np.argmax(s[i, j, :, o]))
        if lt is None:
            return _leaf(labels, sentence, i, lab)
        return BinaryTree(
            labels[lab], i, j, sentence, build_a(lt, LEFT), build_a(rt, RIGHT)
        )

    return DecodeResult(tree=build_a(best_shape, LEFT), score=best_score)


def _iter_shape(shape):
    stack = [shape]
    while stack:
        node = stack.pop()
        yield node
        if node[2] is not None:
            stack.append(node[2])
            stack.append(node[3])


def _iter_shape_orders(shape):
    stack = [(shape, LEFT)]
    while stack:
        node, o = stack.pop()
        yield node, o
        if node[2] is not None:
            stack.append((node[2], LEFT))
            stack.append((node[3], RIGHT))


# ---------------------------------------------------------------------------
# width-batched decoding


def decode_charts_batched(
    charts: Sequence[SpanScoreChart],
    compiled: CompiledRules,
    forbid_root: Optional[str] = None,
) -> list[Union[DecodeResult, NoDerivation]]:
    """Width-synchronous decoding of many charts at once.

    The outer loop runs exactly max-width steps; within one step every cell of
    that width, across all sentences, is filled by one vectorized computation.
    Results are bit-identical to the scalar decoder.
    """
    if not charts:
        return []
    n_labels = len(compiled.labels)
    lens = [c.n for c in charts]
    big_n = max(lens)
    batch = len(charts)

    s = np.zeros((batch, big_n + 1, big_n + 1, n_labels, 2))
    for b, chart in enumerate(charts):
        s[b, : lens[b] + 1, : lens[b] + 1] = chart.scores

    t = np.full((batch, big_n + 1, big_n + 1, n_labels, 2), NEG_INF)
    bp_k = np.full((batch, big_n + 1, big_n + 1, n_labels, 2), -1, dtype=np.int32)
    bp_l1 = np.full_like(bp_k, -1)
    bp_l2 = np.full_like(bp_k, -1)

    for b, n in enumerate(lens):
        for i in range(n):
            t[b, i, i + 1] = s[b, i, i + 1]

    for w in range(2, big_n + 1):
        starts = np.arange(0, big_n - w + 1)
        if len(starts) == 0 or len(compiled) == 0:
            continue
        k_rel = np.arange(1, w)
        mids = starts[:, None] + k_rel[None, :]                      # (I, K)
        tl = t[:, starts[:, None, None], mids[:, :, None], compiled.left[None, None, :], LEFT]
        tr = t[:, mids[:, :, None], (starts + w)[:, None, None], compiled.right[None, None, :], RIGHT]
        base = tl + tr                                               # (B, I, K, R)
        cand = base[..., None] + compiled.scores[None, None, None, :, :]  # (B, I, K, R, 2)
        for lab in range(n_labels):
            lo, hi = compiled.parent_slices[lab]
            if lo == hi:
                continue
            # flatten (K, R-slice) with K major so the first maximum realizes
            # the smallest-split then smallest-rule tie-break
            sub = cand[:, :, :, lo:hi, :]
            flat = sub.transpose(0, 1, 4, 2, 3).reshape(batch, len(starts), 2, -1)
            arg = np.argmax(flat, axis=3)
            val = np.take_along_axis(flat, arg[..., None], axis=3)[..., 0]   # (B, I, 2)
            n_rules = hi - lo
            k_idx = arg // n_rules + 1
            r_idx = arg % n_rules + lo
            valid = val > NEG_INF
            t[:, starts, starts + w, lab, :] = s[:, starts, starts + w, lab, :] + val
            bp_k[:, starts, starts + w, lab, :] = np.where(valid, starts[None, :, None] + k_idx, -1)
            bp_l1[:, starts, starts + w, lab, :] = np.where(valid, compiled.left[r_idx], -1)
            bp_l2[:, starts, starts + w, lab, :] = np.where(valid, compiled.right[r_idx], -1)

    results: list[Union[DecodeResult, NoDerivation]] = []
    labels = compiled.labels
    forbidden = _label_id(labels, forbid_root)
    for b, chart in enumerate(charts):
        n = lens[b]
        root_scores = t[b, 0, n, :, LEFT]
        if forbidden is not None:
            root_scores = root_scores.copy()
            root_scores[forbidden] = NEG_INF
        root_lab = int(np.argmax(root_scores))
        best = float(root_scores[root_lab])
        if best == NEG_INF or (n > 1 and bp_k[b, 0, n, root_lab, LEFT] < 0):
            results.append(NoDerivation(f"no in-grammar derivation covers the sentence (n={n})"))
            continue
        sentence = chart.sentence

        def build(i, j, lab, o) -> BinaryTree:
            if j - i == 1:
                return _leaf(labels, sentence, i, lab)
            k = int(bp_k[b, i, j, lab, o])
            l1 = int(bp_l1[b, i, j, lab, o])
            l2 = int(bp_l2[b, i, j, lab, o])
            return BinaryTree(
                labels[lab], i, j, sentence,
                build(i, k, l1, LEFT), build(k, j, l2, RIGHT),
            )

        results.append(DecodeResult(tree=build(0, n, root_lab, LEFT), score=best))
    return results


def decode_batched(
    sentences: Sequence[tuple[tuple[str, str], ...]],
    model,
    grammar: Grammar,
    rules: RuleScoreChart,
    forbid_root: Optional[str] = None,
) -> list[Union[DecodeResult, Exception]]:
    """Score and decode a batch; per-sentence failures fill their slot instead
    of aborting the batch."""
    compiled = CompiledRules(model.labels, grammar, rules)
    charts: list[Optional[SpanScoreChart]] = []
    errors: dict[int, Exception] = {}
    for idx, sentence in enumerate(sentences):
        try:
            chart, _ = model.forward(sentence)
            charts.append(chart)
        except Exception as err:  # SentenceTooLong etc.
            charts.append(None)
            errors[idx] = err
    good = [c for c in charts if c is not None]
    decoded = iter(decode_charts_batched(good, compiled, forbid_root=forbid_root))
    out: list[Union[DecodeResult, Exception]] = []
    for idx, chart in enumerate(charts):
        out.append(errors[idx] if chart is None else next(decoded))
    return out
