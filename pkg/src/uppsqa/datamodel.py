"""Core record types plus manifest and pair-file (de)serialization.

Manifest CSV columns: ``utt_id,wav_path,system_id,mos,transcript`` with an
optional trailing ``sample_rate`` column. Pair CSV columns:
``x_id,y_id,s_m_x,s_m_y,s_p,cluster_id``. Empty cells mean "absent".
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

MANIFEST_COLUMNS = ["utt_id", "wav_path", "system_id", "mos", "transcript"]
PAIR_COLUMNS = ["x_id", "y_id", "s_m_x", "s_m_y", "s_p", "cluster_id"]
DEFAULT_SAMPLE_RATE = 16000
MOS_MIN, MOS_MAX = 1.0, 5.0
UNMATCHED_CLUSTER = -1


class ManifestError(ValueError):
    """Raised for malformed manifests or pair files."""


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    wav_path: str
    system_id: str
    mos: Optional[float] = None
    transcript: Optional[str] = None
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if not self.utt_id:
            raise ManifestError("utt_id must be non-empty")
        if self.mos is not None and not (MOS_MIN <= self.mos <= MOS_MAX):
            raise ManifestError(f"{self.utt_id}: MOS {self.mos} outside [{MOS_MIN}, {MOS_MAX}]")
        if self.sample_rate <= 0:
            raise ManifestError(f"{self.utt_id}: sample_rate must be positive")


@dataclass(frozen=True)
class SpeechPair:
    """One (x, y, s_m_x, s_m_y, s_p) training/evaluation tuple."""

    x_id: str
    y_id: str
    s_m_x: Optional[float]
    s_m_y: Optional[float]
    s_p: int
    cluster_id: int = UNMATCHED_CLUSTER

    def __post_init__(self):
        if self.x_id == self.y_id:
            raise ManifestError(f"pair joins {self.x_id} with itself")
        if self.s_p not in (-1, 0, 1):
            raise ManifestError(f"preference label {self.s_p} not in {{-1, 0, 1}}")
        if self.s_m_x is not None and self.s_m_y is not None:
            if derive_preference_label(self.s_m_x, self.s_m_y) != self.s_p:
                raise ManifestError(
                    f"pair ({self.x_id}, {self.y_id}): s_p={self.s_p} disagrees with MOS labels"
                )

    def swapped(self) -> "SpeechPair":
        return SpeechPair(self.y_id, self.x_id, self.s_m_y, self.s_m_x, -self.s_p, self.cluster_id)


@dataclass
class DatasetSplit:
    name: str
    utterances: list[Utterance]
    pairs: list[SpeechPair]
    scenario_tag: str = "none"

    def __post_init__(self):
        if self.name not in ("train", "dev", "test"):
            raise ValueError(f"unknown split name {self.name!r}")
        if self.scenario_tag not in ("matched", "unmatched", "none"):
            raise ValueError(f"unknown scenario tag {self.scenario_tag!r}")
        ids = self.index
        for p in self.pairs:
            if p.x_id not in ids or p.y_id not in ids:
                raise ManifestError(f"{self.name}: pair ({p.x_id}, {p.y_id}) references unknown utterance")
            if self.scenario_tag == "matched" and p.cluster_id < 0:
                raise ManifestError(f"{self.name}: matched split holds pair without a content cluster")

    @property
    def index(self) -> dict[str, Utterance]:
        return {u.utt_id: u for u in self.utterances}

    def paired_utterances(self) -> list[Utterance]:
        """De-duplicated utterances referenced by the pairs, sorted by id."""
        idx = self.index
        used = {p.x_id for p in self.pairs} | {p.y_id for p in self.pairs}
        return [idx[u] for u in sorted(used)]


@dataclass(frozen=True)
class PredictionRecord:
    x_id: str
    y_id: str
    mos_hat_x: float
    mos_hat_y: float
    pref_hat: float

    def __post_init__(self):
        if not -1.0 < self.pref_hat < 1.0:
            raise ValueError(f"preference score {self.pref_hat} outside (-1, 1)")


def derive_preference_label(s_m_x: float, s_m_y: float) -> int:
    """Sign of ``s_m_x - s_m_y``; exact comparison, no tolerance."""
    if not (math.isfinite(s_m_x) and math.isfinite(s_m_y)):
        raise ValueError(f"non-finite MOS in ({s_m_x}, {s_m_y})")
    if s_m_x > s_m_y:
        return 1
    if s_m_x < s_m_y:
        return -1
    return 0


def _opt_float(cell: str, what: str) -> Optional[float]:
    cell = cell.strip()
    if not cell:
        return None
    try:
        value = float(cell)
    except ValueError as exc:
        raise ManifestError(f"bad {what} value {cell!r}") from exc
    if not math.isfinite(value):
        raise ManifestError(f"non-finite {what} value {cell!r}")
    return value


def _fmt_float(value: Optional[float]) -> str:
    # repr gives the shortest string that round-trips exactly
    return "" if value is None else repr(float(value))


def load_manifest(path: str | os.PathLike, require_mos: bool = False) -> list[Utterance]:
    """Read a manifest CSV.

    Relative ``wav_path`` entries are resolved against the manifest's
    directory. Raises :class:`ManifestError` on duplicate ids, MOS outside
    [1, 5], or (with ``require_mos``) missing MOS.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    base = path.parent
    utts: list[Utterance] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            utt_id = row["utt_id"].strip()
            if utt_id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate utt_id {utt_id!r}")
            seen.add(utt_id)
            mos = _opt_float(row["mos"], "mos")
            if mos is None and require_mos:
                raise ManifestError(f"{path}:{lineno}: MOS required for {utt_id!r}")
            wav = row["wav_path"].strip()
            if wav and not os.path.isabs(wav):
                wav = str(base / wav)
            sr_cell = (row.get("sample_rate") or "").strip()
            transcript = row["transcript"]
            try:
                utts.append(
                    Utterance(
                        utt_id=utt_id,
                        wav_path=wav,
                        system_id=row["system_id"].strip(),
                        mos=mos,
                        transcript=transcript if transcript.strip() else None,
                        sample_rate=int(sr_cell) if sr_cell else DEFAULT_SAMPLE_RATE,
                    )
                )
            except ManifestError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    return utts


def save_manifest(path: str | os.PathLike, utts: Iterable[Utterance]) -> None:
    """Write a manifest; absolute wav paths are stored relative to its directory."""
    base = Path(path).resolve().parent
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS + ["sample_rate"])
        for u in utts:
            wav = u.wav_path
            if os.path.isabs(wav):
                wav = os.path.relpath(wav, base)
            writer.writerow([u.utt_id, wav, u.system_id, _fmt_float(u.mos), u.transcript or "", u.sample_rate])


def dumps_pairs(pairs: Sequence[SpeechPair]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PAIR_COLUMNS)
    for p in pairs:
        writer.writerow([p.x_id, p.y_id, _fmt_float(p.s_m_x), _fmt_float(p.s_m_y), p.s_p, p.cluster_id])
    return buf.getvalue()


def save_pairs(path: str | os.PathLike, pairs: Sequence[SpeechPair]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(dumps_pairs(pairs))


def load_pairs(
    path: str | os.PathLike, manifest: Optional[Sequence[Utterance]] = None
) -> list[SpeechPair]:
    """Read a pair CSV; with ``manifest`` given, dangling ids are rejected."""
    known = {u.utt_id for u in manifest} if manifest is not None else None
    pairs: list[SpeechPair] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PAIR_COLUMNS:
            raise ManifestError(f"{path}: expected header {PAIR_COLUMNS}, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                pair = SpeechPair(
                    x_id=row["x_id"],
                    y_id=row["y_id"],
                    s_m_x=_opt_float(row["s_m_x"], "s_m_x"),
                    s_m_y=_opt_float(row["s_m_y"], "s_m_y"),
                    s_p=int(row["s_p"]),
                    cluster_id=int(row["cluster_id"]),
                )
            except (ValueError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
            if known is not None and (pair.x_id not in known or pair.y_id not in known):
                raise ManifestError(f"{path}:{lineno}: dangling utt_id in ({pair.x_id}, {pair.y_id})")
            pairs.append(pair)
    return pairs


@dataclass
class SplitManifests:
    """Train/dev/test manifests feeding scenario construction."""

    train: list[Utterance]
    dev: list[Utterance]
    test: list[Utterance]

    def check_disjoint(self) -> None:
        parts = {"train": self.train, "dev": self.dev, "test": self.test}
        owner: dict[str, str] = {}
        for name, utts in parts.items():
            for u in utts:
                if u.utt_id in owner:
                    raise ManifestError(f"utt_id {u.utt_id!r} appears in both {owner[u.utt_id]} and {name}")
                owner[u.utt_id] = name
