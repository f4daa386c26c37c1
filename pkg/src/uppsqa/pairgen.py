"""Pair construction from MOS-labelled manifests.

Two builders are provided. Content-matched pairs enumerate every unordered
pair inside a same-text cluster (clusters come from DBSCAN over normalized
edit distance between transcripts). Content-unmatched pairs draw one
utterance from each of two systems, for every system pair.
"""

from __future__ import annotations

import itertools
import random
import re
import unicodedata
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.cluster import DBSCAN

from .datamodel import (
    UNMATCHED_CLUSTER,
    DatasetSplit,
    SpeechPair,
    SplitManifests,
    Utterance,
    derive_preference_label,
)

MODES = ("matched", "unmatched")
SCENARIOS = {
    "m-m": ("matched", "matched"),
    "nm-m": ("unmatched", "matched"),
    "m-nm": ("matched", "unmatched"),
    "nm-nm": ("unmatched", "unmatched"),
}


@dataclass(frozen=True)
class PairGenConfig:
    eps: float = 0.2
    min_samples: int = 1
    rng_seed: int = 0
    keep_tied_pairs: bool = True

    def __post_init__(self):
        if not 0.0 < self.eps <= 1.0:
            raise ValueError(f"eps must lie in (0, 1], got {self.eps}")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")


@dataclass(frozen=True)
class ContentCluster:
    cluster_id: int
    member_ids: tuple[str, ...]
    representative_transcript: str


_WS = re.compile(r"\s+")


def normalize_transcript(text: str) -> str:
    """Lowercase, drop punctuation, collapse whitespace.

    Punctuation is detected by Unicode category so non-Latin scripts
    (e.g. Mandarin transcripts) keep their characters.
    """
    text = unicodedata.normalize("NFKC", text).lower()
    text = "".join(" " if unicodedata.category(ch).startswith("P") else ch for ch in text)
    return _WS.sub(" ", text).strip()


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalized_levenshtein(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return edit_distance(a, b) / longest


def transcript_distance_matrix(texts: Sequence[str]) -> np.ndarray:
    n = len(texts)
    dist = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = normalized_levenshtein(texts[i], texts[j])
    return dist


def cluster_transcripts(utts: Sequence[Utterance], cfg: PairGenConfig) -> list[ContentCluster]:
    """Partition utterances into same-content clusters.

    Identical normalized transcripts are collapsed before DBSCAN and
    re-expanded through ``sample_weight``, which leaves the density
    counts unchanged while shrinking the distance matrix. Noise points
    become singleton clusters. Cluster ids follow first appearance in
    sorted ``utt_id`` order.
    """
    for u in utts:
        if u.transcript is None:
            raise ValueError(f"utterance {u.utt_id!r} has no transcript")
    ordered = sorted(utts, key=lambda u: u.utt_id)
    if not ordered:
        return []
    norm = [normalize_transcript(u.transcript) for u in ordered]
    uniq: dict[str, int] = {}
    for t in norm:
        uniq.setdefault(t, len(uniq))
    texts = list(uniq)
    weights = np.zeros(len(texts))
    for t in norm:
        weights[uniq[t]] += 1

    dist = transcript_distance_matrix(texts)
    labels = DBSCAN(eps=cfg.eps, min_samples=cfg.min_samples, metric="precomputed").fit(
        dist, sample_weight=weights
    ).labels_

    groups: dict[object, list[int]] = {}
    for i, t in enumerate(norm):
        label = labels[uniq[t]]
        key = ("noise", i) if label < 0 else ("core", int(label))
        groups.setdefault(key, []).append(i)
    clusters = []
    for cid, members in enumerate(groups.values()):
        clusters.append(
            ContentCluster(
                cluster_id=cid,
                member_ids=tuple(ordered[i].utt_id for i in members),
                representative_transcript=norm[members[0]],
            )
        )
    return clusters


def _make_pair(a: Utterance, b: Utterance, cluster_id: int) -> SpeechPair:
    if a.utt_id > b.utt_id:
        a, b = b, a
    if a.mos is None or b.mos is None:
        raise ValueError(f"MOS label missing for pair ({a.utt_id}, {b.utt_id})")
    return SpeechPair(
        x_id=a.utt_id,
        y_id=b.utt_id,
        s_m_x=a.mos,
        s_m_y=b.mos,
        s_p=derive_preference_label(a.mos, b.mos),
        cluster_id=cluster_id,
    )


def build_matched_pairs(
    clusters: Sequence[ContentCluster], manifest: Sequence[Utterance], cfg: PairGenConfig
) -> list[SpeechPair]:
    """All C(n, 2) unordered pairs within each cluster, canonical x_id < y_id."""
    index = {u.utt_id: u for u in manifest}
    pairs: list[SpeechPair] = []
    for cluster in sorted(clusters, key=lambda c: c.cluster_id):
        missing = [m for m in cluster.member_ids if m not in index]
        if missing:
            raise KeyError(f"cluster {cluster.cluster_id} members not in manifest: {missing}")
        members = sorted(cluster.member_ids)
        for a, b in itertools.combinations(members, 2):
            pair = _make_pair(index[a], index[b], cluster.cluster_id)
            if cfg.keep_tied_pairs or pair.s_p != 0:
                pairs.append(pair)
    return pairs


def system_pair_rng(seed: int, sys_a: str, sys_b: str) -> random.Random:
    # str seeds are hashed with sha512 by random.Random, so the stream is
    # stable across processes and independent of iteration order
    return random.Random(f"{seed}\x1f{sys_a}\x1f{sys_b}")


def build_unmatched_pairs(utts: Sequence[Utterance], cfg: PairGenConfig) -> list[SpeechPair]:
    """One random cross-system pair for each of the C(K, 2) system pairs."""
    by_system: dict[str, list[Utterance]] = defaultdict(list)
    for u in utts:
        if not u.system_id:
            raise ValueError(f"utterance {u.utt_id!r} has no system_id")
        by_system[u.system_id].append(u)
    if len(by_system) < 2:
        raise ValueError(f"need at least 2 systems, found {len(by_system)}")
    for members in by_system.values():
        members.sort(key=lambda u: u.utt_id)

    pairs: list[SpeechPair] = []
    for sys_a, sys_b in itertools.combinations(sorted(by_system), 2):
        rng = system_pair_rng(cfg.rng_seed, sys_a, sys_b)
        a = rng.choice(by_system[sys_a])
        b = rng.choice(by_system[sys_b])
        pair = _make_pair(a, b, UNMATCHED_CLUSTER)
        if cfg.keep_tied_pairs or pair.s_p != 0:
            pairs.append(pair)
    return pairs


def build_pairs(mode: str, utts: Sequence[Utterance], cfg: PairGenConfig) -> list[SpeechPair]:
    if mode == "matched":
        return build_matched_pairs(cluster_transcripts(utts, cfg), utts, cfg)
    if mode == "unmatched":
        return build_unmatched_pairs(utts, cfg)
    raise ValueError(f"unknown pair mode {mode!r}; expected one of {MODES}")


def build_split(name: str, mode: str, utts: Sequence[Utterance], cfg: PairGenConfig) -> DatasetSplit:
    return DatasetSplit(name=name, utterances=list(utts), pairs=build_pairs(mode, utts, cfg), scenario_tag=mode)


def build_scenario(
    train_mode: str,
    test_mode: str,
    manifests: SplitManifests,
    cfg: PairGenConfig,
) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    """Build (train, dev, test) splits; dev follows the train-side mode."""
    manifests.check_disjoint()
    train = build_split("train", train_mode, manifests.train, cfg)
    dev = build_split("dev", train_mode, manifests.dev, cfg)
    test = build_split("test", test_mode, manifests.test, cfg)
    return train, dev, test


def scenario_modes(scenario: str) -> tuple[str, str]:
    try:
        return SCENARIOS[scenario]
    except KeyError:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {list(SCENARIOS)}") from None
