"""Task metrics: accuracy, top-k, macro F1, corpus BLEU-4, WER, recall@k."""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

SUPPORTED = ("accuracy", "F1", "BLEU", "WER", "recall")


class UnsupportedMetric(ValueError):
    pass


def _check(preds, refs):
    if len(preds) != len(refs):
        raise ValueError("predictions and references differ in length")
    if len(refs) == 0:
        raise ValueError("empty evaluation split")


def accuracy(preds, refs) -> float:
    _check(preds, refs)
    return sum(p == r for p, r in zip(preds, refs)) / len(refs)


def topk_accuracy(scores, refs, k: int = 1) -> float:
    scores = np.asarray(scores)
    _check(scores, refs)
    # stable sort keeps lower indices first among equal scores
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return float(np.mean([r in row for r, row in zip(refs, top)]))


recall_at_k = topk_accuracy


def f1(preds, refs) -> float:
    """Macro F1 over the classes seen in either predictions or references."""
    _check(preds, refs)
    classes = sorted(set(refs) | set(preds), key=str)
    scores = []
    for c in classes:
        tp = sum(p == c and r == c for p, r in zip(preds, refs))
        fp = sum(p == c and r != c for p, r in zip(preds, refs))
        fn = sum(p != c and r == c for p, r in zip(preds, refs))
        denom = 2 * tp + fp + fn
        scores.append(0.0 if denom == 0 else 2 * tp / denom)
    return float(np.mean(scores))


def _tokens(s):
    return s.split() if isinstance(s, str) else list(s)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hyps, refs, max_n: int = 4) -> float:
    """Corpus BLEU-4; orders n >= 2 use add-one smoothing."""
    _check(hyps, refs)
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        h, r = _tokens(h), _tokens(r)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    if hyp_len == 0 or matches[0] == 0:
        return 0.0
    log_p = math.log(matches[0] / totals[0])
    for n in range(1, max_n):
        log_p += math.log((matches[n] + 1) / (totals[n] + 1))
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return bp * math.exp(log_p / max_n)


def edit_distance(a, b) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def wer(hyps, refs) -> float:
    """Corpus word error rate: total word edits over total reference words."""
    if isinstance(hyps, str):
        hyps, refs = [hyps], [refs]
    _check(hyps, refs)
    edits = sum(edit_distance(_tokens(h), _tokens(r)) for h, r in zip(hyps, refs))
    words = sum(len(_tokens(r)) for r in refs)
    if words == 0:
        raise ValueError("references contain no words")
    return edits / words


def score(metric: str, preds, refs, k: int = 1) -> float:
    if metric == "accuracy":
        return accuracy(preds, refs)
    if metric == "F1":
        return f1(preds, refs)
    if metric == "BLEU":
        return bleu(preds, refs)
    if metric == "WER":
        return wer(preds, refs)
    if metric == "recall":
        return recall_at_k(preds, refs, k)
    raise UnsupportedMetric(f"metric {metric} is unsupported at desk scale")
