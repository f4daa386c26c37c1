"""Preference accuracy and Spearman rank correlation."""

from __future__ import annotations

from collections import defaultdict
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .datamodel import PredictionRecord, SpeechPair, Utterance


def _sign(v: float) -> int:
    return (v > 0) - (v < 0)


def _aligned(preds: Sequence[PredictionRecord], labels: Sequence[SpeechPair]):
    if len(labels) == 0:
        raise ValueError("accuracy over zero pairs is undefined")
    if len(preds) != len(labels):
        raise ValueError(f"{len(preds)} predictions for {len(labels)} labelled pairs")
    by_key = {(p.x_id, p.y_id): p for p in preds}
    if len(by_key) != len(preds):
        raise ValueError("duplicate (x_id, y_id) among predictions")
    out = []
    for lab in labels:
        try:
            out.append((by_key[(lab.x_id, lab.y_id)], lab))
        except KeyError:
            raise ValueError(f"no prediction for pair ({lab.x_id}, {lab.y_id})") from None
    return out


def preference_accuracy(preds: Sequence[PredictionRecord], labels: Sequence[SpeechPair]) -> float:
    """Fraction of pairs whose predicted sign equals the label exactly.

    A zero prediction on a decided pair and a non-zero prediction on a tied
    pair are both errors.
    """
    pairs = _aligned(preds, labels)
    correct = sum(1 for p, lab in pairs if _sign(p.pref_hat) == lab.s_p)
    return correct / len(pairs)


def preference_accuracy_excluding_ties(
    preds: Sequence[PredictionRecord], labels: Sequence[SpeechPair]
) -> float:
    decided = [lab for lab in labels if lab.s_p != 0]
    keys = {(lab.x_id, lab.y_id) for lab in decided}
    return preference_accuracy([p for p in preds if (p.x_id, p.y_id) in keys], decided)


def spearman_srcc(pred_scores: Sequence[float], true_scores: Sequence[float]) -> float:
    """Pearson correlation of average ranks. Raises on constant input."""
    a = np.asarray(pred_scores, dtype=np.float64)
    b = np.asarray(true_scores, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("SRCC needs at least two points")
    ra = rankdata(a) - (a.size + 1) / 2.0
    rb = rankdata(b) - (b.size + 1) / 2.0
    denom = np.sqrt((ra @ ra) * (rb @ rb))
    if denom == 0.0:
        raise ValueError("SRCC undefined for a constant score vector")
    return float(np.clip((ra @ rb) / denom, -1.0, 1.0))


def system_means(scores: Mapping[str, float], system_of: Mapping[str, str]) -> dict[str, float]:
    grouped: dict[str, list[float]] = defaultdict(list)
    for utt_id, score in scores.items():
        grouped[system_of[utt_id]].append(score)
    return {sys_id: float(np.mean(v)) for sys_id, v in sorted(grouped.items())}


def system_level_srcc(utt_preds: Mapping[str, float], manifest: Sequence[Utterance]) -> float:
    """SRCC between per-system mean predictions and per-system mean true MOS."""
    index = {u.utt_id: u for u in manifest}
    missing = [k for k in utt_preds if k not in index]
    if missing:
        raise KeyError(f"scored utterances absent from manifest: {missing[:5]}")
    system_of = {k: index[k].system_id for k in utt_preds}
    truth = {}
    for k in utt_preds:
        if index[k].mos is None:
            raise ValueError(f"utterance {k!r} has no MOS label")
        truth[k] = index[k].mos
    pred_means = system_means(utt_preds, system_of)
    true_means = system_means(truth, system_of)
    if len(pred_means) < 2:
        raise ValueError("system-level SRCC needs at least two systems")
    systems = list(pred_means)
    return spearman_srcc([pred_means[s] for s in systems], [true_means[s] for s in systems])


def utterance_level_srcc(utt_preds: Mapping[str, float], manifest: Sequence[Utterance]) -> float:
    index = {u.utt_id: u for u in manifest}
    ids = sorted(utt_preds)
    return spearman_srcc([utt_preds[i] for i in ids], [index[i].mos for i in ids])
