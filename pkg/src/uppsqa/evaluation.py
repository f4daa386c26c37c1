"""Checkpoint evaluation and the scenario x label-condition summary table."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .datamodel import DatasetSplit, PredictionRecord, SpeechPair, Utterance, load_manifest, load_pairs
from .metrics import (
    preference_accuracy,
    preference_accuracy_excluding_ties,
    system_level_srcc,
    utterance_level_srcc,
)
from .samos import SAMOS, FeatureCache, load_checkpoint, preference_score, score_utterances

log = logging.getLogger(__name__)

CONDITION_ORDER = ["LA", "LM", "MOS_ONLY"]
SCENARIO_ORDER = ["m-m", "nm-m", "m-nm", "nm-nm"]


@dataclass
class EvalReport:
    scenario: str
    condition: str
    seeds: list[int]
    acc_per_seed: list[float]
    utt_srcc: Optional[float]
    sys_srcc: Optional[float]
    n_pairs: int
    n_ties: int
    acc_excluding_ties: Optional[float] = None
    expected_seeds: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ValueError("report needs at least one pair")
        for acc in self.acc_per_seed:
            if not 0.0 <= acc <= 1.0:
                raise ValueError(f"accuracy {acc} outside [0, 1]")

    @property
    def mean_acc(self) -> float:
        return math.fsum(self.acc_per_seed) / len(self.acc_per_seed)

    def to_dict(self) -> dict:
        return {**asdict(self), "mean_acc": self.mean_acc}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EvalReport":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        d.pop("mean_acc", None)
        return cls(**d)


def predict_pairs(scores: dict[str, float], pairs: Sequence[SpeechPair]) -> list[PredictionRecord]:
    out = []
    for p in pairs:
        mx, my = scores[p.x_id], scores[p.y_id]
        out.append(PredictionRecord(p.x_id, p.y_id, mx, my, preference_score(mx, my)))
    return out


def _safe_srcc(fn, scores, utts) -> Optional[float]:
    if any(u.mos is None for u in utts):
        return None
    try:
        return fn(scores, utts)
    except ValueError as exc:
        log.warning("SRCC unavailable: %s", exc)
        return None


def evaluate_model(
    model: SAMOS,
    split: DatasetSplit,
    *,
    cache: Optional[FeatureCache] = None,
    condition: str = "",
    scenario: str = "",
    seed: int = 0,
    expected_seeds: Optional[list[int]] = None,
    predictions_out: Optional[list] = None,
) -> EvalReport:
    """Score every utterance used by ``split.pairs`` once, then fuse per pair."""
    if not split.pairs:
        raise ValueError("cannot evaluate an empty pair list")
    utts = split.paired_utterances()
    scores = score_utterances(model, utts, cache)
    preds = predict_pairs(scores, split.pairs)
    if predictions_out is not None:
        predictions_out.extend(preds)
    n_ties = sum(1 for p in split.pairs if p.s_p == 0)
    return EvalReport(
        scenario=scenario,
        condition=condition,
        seeds=[seed],
        acc_per_seed=[preference_accuracy(preds, split.pairs)],
        utt_srcc=_safe_srcc(utterance_level_srcc, scores, utts),
        sys_srcc=_safe_srcc(system_level_srcc, scores, utts),
        n_pairs=len(split.pairs),
        n_ties=n_ties,
        acc_excluding_ties=preference_accuracy_excluding_ties(preds, split.pairs) if n_ties < len(split.pairs) else None,
        expected_seeds=list(expected_seeds or [seed]),
    )


def save_predictions(path, preds: Sequence[PredictionRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x_id", "y_id", "mos_hat_x", "mos_hat_y", "pref_hat"])
        for p in preds:
            writer.writerow([p.x_id, p.y_id, repr(p.mos_hat_x), repr(p.mos_hat_y), repr(p.pref_hat)])


def evaluate(
    checkpoint_path,
    pairs_path,
    manifest_path,
    out_dir=None,
    *,
    scenario: Optional[str] = None,
) -> EvalReport:
    """Evaluate a saved checkpoint on a pair file; optionally write report + predictions."""
    model, ckpt = load_checkpoint(checkpoint_path)
    manifest: list[Utterance] = load_manifest(manifest_path)
    pairs = load_pairs(pairs_path, manifest)
    split = DatasetSplit("test", manifest, pairs)
    train_cfg = ckpt.train_config or {}
    preds: list[PredictionRecord] = []
    report = evaluate_model(
        model,
        split,
        condition=train_cfg.get("label_condition", ""),
        scenario=scenario if scenario is not None else train_cfg.get("scenario", ""),
        seed=ckpt.seed,
        expected_seeds=train_cfg.get("seeds") or [ckpt.seed],
        predictions_out=preds,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.save(out / "eval.json")
        save_predictions(out / "predictions.csv", preds)
    return report


# ----------------------------------------------------------------------- reports


@dataclass
class ReportRow:
    condition: str
    scenario: str
    seeds: list[int]
    accs: list[float]
    utt_srcc: Optional[float]
    sys_srcc: Optional[float]
    n_pairs: int
    n_ties: int
    complete: bool

    @property
    def mean_acc(self) -> float:
        return math.fsum(self.accs) / len(self.accs)


def _mean_or_none(values) -> Optional[float]:
    values = [v for v in values if v is not None]
    return math.fsum(values) / len(values) if values else None


def _order_key(cond: str, scen: str):
    ci = CONDITION_ORDER.index(cond) if cond in CONDITION_ORDER else len(CONDITION_ORDER)
    si = SCENARIO_ORDER.index(scen) if scen in SCENARIO_ORDER else len(SCENARIO_ORDER)
    return (ci, cond, si, scen)


def collect_rows(run_dir) -> list[ReportRow]:
    """Group every ``eval.json`` below ``run_dir`` by (condition, scenario)."""
    files = sorted(Path(run_dir).rglob("eval.json"))
    if not files:
        raise FileNotFoundError(f"no eval.json found under {run_dir}")
    groups: dict[tuple[str, str], list[EvalReport]] = {}
    for f in files:
        r = EvalReport.load(f)
        groups.setdefault((r.condition, r.scenario), []).append(r)
    rows = []
    for (cond, scen), reports in sorted(groups.items(), key=lambda kv: _order_key(*kv[0])):
        by_seed: dict[int, tuple[float, EvalReport]] = {}
        for r in reports:
            for s, a in zip(r.seeds, r.acc_per_seed):
                by_seed[s] = (a, r)
        seeds = sorted(by_seed)
        expected = set()
        for r in reports:
            expected.update(r.expected_seeds)
        rows.append(
            ReportRow(
                condition=cond,
                scenario=scen,
                seeds=seeds,
                accs=[by_seed[s][0] for s in seeds],
                utt_srcc=_mean_or_none(r.utt_srcc for r in reports),
                sys_srcc=_mean_or_none(r.sys_srcc for r in reports),
                n_pairs=reports[0].n_pairs,
                n_ties=reports[0].n_ties,
                complete=expected.issubset(seeds),
            )
        )
    return rows


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else f"{v:.4f}"


def render_report(rows: Sequence[ReportRow], fmt: str = "text") -> str:
    k = max(len(r.accs) for r in rows)
    header = ["condition", "scenario", "mean_acc"] + [f"acc_seed_{i}" for i in range(1, k + 1)]
    header += ["utt_srcc", "sys_srcc", "n_pairs", "n_ties", "status"]
    records = []
    for r in rows:
        accs = [_fmt(a) for a in r.accs] + [""] * (k - len(r.accs))
        records.append(
            [r.condition, r.scenario, _fmt(r.mean_acc), *accs, _fmt(r.utt_srcc), _fmt(r.sys_srcc),
             str(r.n_pairs), str(r.n_ties), "complete" if r.complete else "incomplete"]
        )
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(records)
        return buf.getvalue()
    if fmt == "json":
        return json.dumps(
            [
                {
                    "condition": r.condition,
                    "scenario": r.scenario,
                    "mean_acc": r.mean_acc,
                    "seeds": r.seeds,
                    "acc_per_seed": r.accs,
                    "utt_srcc": r.utt_srcc,
                    "sys_srcc": r.sys_srcc,
                    "n_pairs": r.n_pairs,
                    "n_ties": r.n_ties,
                    "complete": r.complete,
                }
                for r in rows
            ],
            indent=2,
        ) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    widths = [max(len(h), *(len(rec[i]) for rec in records)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    prev_cond = None
    for rec in records:
        shown = list(rec)
        if rec[0] == prev_cond:
            shown[0] = ""
        prev_cond = rec[0]
        lines.append("  ".join(c.ljust(w) for c, w in zip(shown, widths)).rstrip())
    return "\n".join(lines) + "\n"


def report(run_dir, fmt: str = "text") -> str:
    return render_report(collect_rows(run_dir), fmt)
