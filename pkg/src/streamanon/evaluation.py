"""Privacy / utility metrics: EER over verification scores, WER, UAR.

EER sweep: candidate thresholds are -inf, the midpoints between adjacent
distinct scores, and +inf; a trial is accepted when ``score >= threshold``.
If some threshold has FAR == FRR exactly, the first one wins. Otherwise the
two operating points around the sign change of FAR - FRR are joined by a
straight line and the crossing is returned.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64).reshape(-1)
        self.impostor = np.asarray(self.impostor, dtype=np.float64).reshape(-1)


def eer(scores: ScoreSet) -> tuple[float, float]:
    """Return (equal error rate, threshold)."""
    g, i = scores.genuine, scores.impostor
    if g.size == 0 or i.size == 0:
        raise ValueError("EER needs at least one genuine and one impostor score")
    u = np.unique(np.concatenate([g, i]))
    thr = np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2, [np.inf]])
    far = (i[None, :] >= thr[:, None]).mean(1)
    frr = (g[None, :] < thr[:, None]).mean(1)
    diff = far - frr  # non-increasing, +ve at -inf, -ve at +inf
    exact = np.flatnonzero(diff == 0)
    if exact.size:
        k = exact[0]
        return float(far[k]), float(thr[k])
    k = int(np.flatnonzero(diff < 0)[0]) - 1
    w = diff[k] / (diff[k] - diff[k + 1])
    rate = far[k] + w * (far[k + 1] - far[k])
    lo, hi = thr[k], thr[k + 1]
    if np.isinf(lo) and np.isinf(hi):
        t = 0.0
    elif np.isinf(lo):
        t = hi
    elif np.isinf(hi):
        t = lo
    else:
        t = lo + w * (hi - lo)
    return float(rate), float(t)


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Levenshtein distance with unit costs (two-row DP)."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(ref: Sequence[str], hyp: Sequence[str]) -> float:
    if len(ref) == 0:
        raise ValueError("reference must contain at least one word")
    return edit_distance(ref, hyp) / len(ref)


def corpus_wer(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]]) -> float:
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    n = sum(len(r) for r in refs)
    if n == 0:
        raise ValueError("references contain no words")
    return sum(edit_distance(r, h) for r, h in zip(refs, hyps)) / n


def uar(cm: np.ndarray) -> float:
    """Mean of per-class recalls; rows are the true class."""
    cm = np.asarray(cm, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if (cm < 0).any():
        raise ValueError("confusion counts must be non-negative")
    support = cm.sum(1)
    if (support == 0).any():
        raise ValueError(f"classes {np.flatnonzero(support == 0).tolist()} have no support")
    return float(np.mean(np.diag(cm) / support))


# ----------------------------------------------------------------- file I/O

def read_scores(path: str | Path) -> ScoreSet:
    """CSV with header ``trial_id,label,score``; label is target|nontarget."""
    g, i = [], []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.DictReader(f), 2):
            try:
                label, score = row["label"].strip(), float(row["score"])
            except (KeyError, TypeError, ValueError) as err:
                raise ValueError(f"{path}:{lineno}: bad score row ({err})") from err
            if label == "target":
                g.append(score)
            elif label == "nontarget":
                i.append(score)
            else:
                raise ValueError(f"{path}:{lineno}: label must be target or nontarget, got {label!r}")
    return ScoreSet(g, i)


def read_transcripts(path: str | Path) -> list[list[str]]:
    """One utterance per line, whitespace-tokenized."""
    return [line.split() for line in Path(path).read_text().splitlines()]


def read_confusion(path: str | Path) -> np.ndarray:
    """Square CSV of counts, no header; row = true class."""
    with open(path, newline="") as f:
        rows = [[float(v) for v in r] for r in csv.reader(f) if r]
    return np.asarray(rows)
