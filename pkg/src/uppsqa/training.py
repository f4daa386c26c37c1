"""Losses, the SGD training loop and multi-seed orchestration.

Label conditions:

* ``LA``: MOS labels available, loss = MOS loss + preference loss.
* ``LM``: MOS labels missing, loss = preference loss only.
* ``MOS_ONLY``: pairs are dissolved into single utterances and only the
  MOS loss is used (the non-pairwise ablation).

Model selection keeps the epoch with the highest system-level SRCC of the
absolute scores on the dev utterances; training stops once that value has
not strictly improved for ``patience`` consecutive epochs.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import torch

from .datamodel import DatasetSplit, Utterance
from .metrics import system_level_srcc
from .samos import SAMOS, Checkpoint, FeatureCache, collate_features, preference_score, score_utterances

log = logging.getLogger(__name__)

LABEL_CONDITIONS = ("LA", "LM", "MOS_ONLY")
EPOCH_LOG_COLUMNS = ["epoch", "loss_m", "loss_p", "loss", "dev_srcc", "seconds"]


@dataclass
class TrainConfig:
    label_condition: str = "LA"
    batch_size: int = 8
    lr: float = 1e-4
    max_epochs: int = 1000
    patience: int = 15
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    swap_augment: bool = False

    def __post_init__(self):
        if self.label_condition not in LABEL_CONDITIONS:
            raise ValueError(f"label_condition must be one of {LABEL_CONDITIONS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "TrainConfig":
        return cls(**(d or {}))


@dataclass
class EpochReport:
    epoch: int
    loss_m: float
    loss_p: float
    loss: float
    dev_srcc: float
    seconds: float

    def row(self) -> list[str]:
        return [str(self.epoch), repr(self.loss_m), repr(self.loss_p), repr(self.loss), repr(self.dev_srcc), f"{self.seconds:.3f}"]


# ------------------------------------------------------------------------ losses


def mos_loss(mos_hat_x, mos_x, mos_hat_y=None, mos_y=None) -> torch.Tensor:
    """Mean over pairs of the two squared MOS errors.

    With the ``y`` side omitted the batch holds single utterances and each
    item contributes one squared error.
    """
    if mos_x is None or (mos_hat_y is not None and mos_y is None):
        raise ValueError("MOS loss needs MOS labels")
    per_item = (mos_x - mos_hat_x) ** 2
    if mos_hat_y is not None:
        per_item = per_item + (mos_y - mos_hat_y) ** 2
    return per_item.mean()


def pref_loss(pref_hat: torch.Tensor, pref_label: torch.Tensor) -> torch.Tensor:
    """Mean squared error between predicted preference and the {-1, 0, 1} label."""
    bad = ~((pref_label == -1) | (pref_label == 0) | (pref_label == 1))
    if bad.any():
        raise ValueError(f"preference labels outside {{-1, 0, 1}}: {pref_label[bad].tolist()}")
    return ((pref_label - pref_hat) ** 2).mean()


def total_loss(condition: str, mos_hat_x, mos_hat_y=None, mos_x=None, mos_y=None, pref_label=None):
    """Return ``(loss, loss_m, loss_p)``; unused terms come back as ``None``."""
    if condition == "MOS_ONLY":
        lm = mos_loss(mos_hat_x, mos_x, mos_hat_y, mos_y)
        return lm, lm, None
    lp = pref_loss(preference_score(mos_hat_x, mos_hat_y), pref_label)
    if condition == "LM":
        return lp, None, lp
    if condition == "LA":
        lm = mos_loss(mos_hat_x, mos_x, mos_hat_y, mos_y)
        return lm + lp, lm, lp
    raise ValueError(f"unknown label condition {condition!r}")


# ----------------------------------------------------------------- early stopping


class EarlyStopping:
    """Track the best dev score; strict improvement, earliest epoch wins ties."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = -math.inf
        self.best_epoch: Optional[int] = None
        self.stale = 0

    def update(self, epoch: int, score: float) -> bool:
        """Record ``score`` for ``epoch``; returns True if it is the new best."""
        if score > self.best_score:  # NaN never improves
            self.best_score = score
            self.best_epoch = epoch
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


# ------------------------------------------------------------------------- loop


def _tensor(values, dtype):
    if any(v is None for v in values):
        return None
    return torch.tensor(values, dtype=dtype)


def dev_system_srcc(model: SAMOS, dev: DatasetSplit, cache: FeatureCache) -> float:
    utts = dev.paired_utterances()
    scores = score_utterances(model, utts, cache)
    try:
        return system_level_srcc(scores, utts)
    except ValueError as exc:
        if "constant" in str(exc):
            log.warning("dev SRCC undefined (constant predictions); epoch cannot be selected")
            return math.nan
        raise


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    reports: list[EpochReport]

    @property
    def stop_epoch(self) -> int:
        return self.reports[-1].epoch


def _training_items(train: DatasetSplit, cfg: TrainConfig) -> list:
    if cfg.label_condition == "MOS_ONLY":
        utts = train.paired_utterances()
        for u in utts:
            if u.mos is None:
                raise ValueError(f"MOS_ONLY training needs MOS for {u.utt_id!r}")
        return utts
    pairs = list(train.pairs)
    if cfg.label_condition == "LA":
        for p in pairs:
            if p.s_m_x is None or p.s_m_y is None:
                raise ValueError(f"LA training needs MOS labels on pair ({p.x_id}, {p.y_id})")
    if cfg.swap_augment:
        pairs = pairs + [p.swapped() for p in pairs]
    return pairs


def batch_loss(model: SAMOS, batch: Sequence, index: dict[str, Utterance], cfg: TrainConfig, cache: FeatureCache):
    dtype = model.cfg.torch_dtype
    if cfg.label_condition == "MOS_ONLY":
        sem, stack, lengths = collate_features([cache.get(model, u) for u in batch])
        pred = model.forward_features(sem, stack, lengths)
        return total_loss("MOS_ONLY", pred, mos_x=_tensor([u.mos for u in batch], dtype))
    feats = [cache.get(model, index[p.x_id]) for p in batch] + [cache.get(model, index[p.y_id]) for p in batch]
    sem, stack, lengths = collate_features(feats)
    pred = model.forward_features(sem, stack, lengths)
    n = len(batch)
    mos_x = _tensor([p.s_m_x for p in batch], dtype)
    mos_y = _tensor([p.s_m_y for p in batch], dtype)
    labels = torch.tensor([p.s_p for p in batch], dtype=dtype)
    loss, lm, lp = total_loss(cfg.label_condition, pred[:n], pred[n:], mos_x, mos_y, labels)
    if lm is None and mos_x is not None and mos_y is not None:
        # logged only; LM gradients never see MOS labels
        with torch.no_grad():
            lm = mos_loss(pred[:n], mos_x, pred[n:], mos_y)
    return loss, lm, lp


def train(
    model: SAMOS,
    train_split: DatasetSplit,
    dev_split: DatasetSplit,
    cfg: TrainConfig,
    seed: int,
    *,
    dev_metric: Optional[Callable[[SAMOS, int], float]] = None,
    cache: Optional[FeatureCache] = None,
    log_path: Optional[Path] = None,
) -> TrainResult:
    """Plain-SGD training with SRCC checkpoint selection and early stopping.

    ``dev_metric(model, epoch)`` replaces the dev SRCC when given; it is the
    hook used to drive the stopping logic with scripted values.
    """
    if not dev_split.pairs and dev_metric is None:
        raise ValueError("dev split has no pairs")
    cache = cache if cache is not None else FeatureCache()
    index = {**dev_split.index, **train_split.index}
    items = _training_items(train_split, cfg)
    if not items:
        raise ValueError("training split is empty")
    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=0.0, weight_decay=0.0)
    gen = torch.Generator().manual_seed(seed)
    stopper = EarlyStopping(cfg.patience)
    reports: list[EpochReport] = []
    best: Optional[Checkpoint] = None
    meta = {"seed": seed, "train_config": asdict(cfg)}

    log_fh = writer = None
    if log_path is not None:
        log_fh = open(log_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(log_fh, lineterminator="\n")
        writer.writerow(EPOCH_LOG_COLUMNS)
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.perf_counter()
            model.train()
            order = torch.randperm(len(items), generator=gen).tolist()
            sums = {"m": 0.0, "p": 0.0, "all": 0.0}
            has_m = has_p = True
            n_batches = 0
            for step, start in enumerate(range(0, len(order), cfg.batch_size)):
                batch = [items[i] for i in order[start : start + cfg.batch_size]]
                loss, lm, lp = batch_loss(model, batch, index, cfg, cache)
                if not torch.isfinite(loss):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}, step {step}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                sums["all"] += float(loss.detach())
                if lm is None:
                    has_m = False
                else:
                    sums["m"] += float(lm.detach())
                if lp is None:
                    has_p = False
                else:
                    sums["p"] += float(lp.detach())
                n_batches += 1

            model.eval()
            srcc = dev_metric(model, epoch) if dev_metric is not None else dev_system_srcc(model, dev_split, cache)
            report = EpochReport(
                epoch=epoch,
                loss_m=sums["m"] / n_batches if has_m else math.nan,
                loss_p=sums["p"] / n_batches if has_p else math.nan,
                loss=sums["all"] / n_batches,
                dev_srcc=srcc,
                seconds=time.perf_counter() - t0,
            )
            reports.append(report)
            if writer is not None:
                writer.writerow(report.row())
                log_fh.flush()
            if stopper.update(epoch, srcc) or best is None:
                best = Checkpoint.capture(model, dev_srcc=srcc, epoch=epoch, **meta)
            log.info("epoch %d loss %.4f dev_srcc %.4f", epoch, report.loss, srcc)
            if stopper.should_stop:
                log.info("early stop at epoch %d (best epoch %s)", epoch, stopper.best_epoch)
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(best, reports)


def read_epoch_log(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------- multi-seed


@dataclass
class SeedOutcome:
    seed: int
    acc: Optional[float]
    checkpoint_path: Optional[str] = None
    report: Optional[dict] = None
    error: Optional[str] = None


@dataclass
class MultiSeedResult:
    outcomes: list[SeedOutcome]

    @property
    def per_seed_acc(self) -> list[float]:
        return [o.acc for o in self.outcomes if o.acc is not None]

    @property
    def mean_acc(self) -> float:
        accs = self.per_seed_acc
        if not accs:
            raise ValueError("no seed finished successfully")
        return math.fsum(accs) / len(accs)

    @property
    def complete(self) -> bool:
        return all(o.error is None for o in self.outcomes)


def multi_seed_run(
    model_factory: Callable[[], SAMOS],
    splits: tuple[DatasetSplit, DatasetSplit, DatasetSplit],
    cfg: TrainConfig,
    *,
    out_dir: Optional[Path] = None,
    scenario: str = "none",
) -> MultiSeedResult:
    """Train once per seed, evaluate each selected checkpoint on the test split.

    A failing seed is recorded with its error and the remaining seeds still
    run. With ``out_dir`` set, each seed writes ``seed_<n>/`` holding the
    checkpoint, the epoch log and the evaluation report.
    """
    from .evaluation import evaluate_model

    train_split, dev_split, test_split = splits
    outcomes = []
    for seed in cfg.seeds:
        seed_dir = None
        if out_dir is not None:
            seed_dir = Path(out_dir) / f"seed_{seed}"
            seed_dir.mkdir(parents=True, exist_ok=True)
        try:
            torch.manual_seed(seed)
            model = model_factory()
            cache = FeatureCache()
            result = train(
                model,
                train_split,
                dev_split,
                cfg,
                seed,
                cache=cache,
                log_path=seed_dir / "epochs.csv" if seed_dir else None,
            )
            result.checkpoint.train_config["scenario"] = scenario
            best = result.checkpoint.build_model()
            report = evaluate_model(
                best,
                test_split,
                cache=cache,
                condition=cfg.label_condition,
                scenario=scenario,
                seed=seed,
                expected_seeds=list(cfg.seeds),
            )
            ckpt_path = None
            if seed_dir is not None:
                ckpt_path = str(seed_dir / "checkpoint.pt")
                result.checkpoint.save(ckpt_path)
                report.save(seed_dir / "eval.json")
            outcomes.append(SeedOutcome(seed, report.mean_acc, ckpt_path, report.to_dict()))
        except Exception as exc:  # keep going; partial results are reported
            log.exception("seed %d failed", seed)
            outcomes.append(SeedOutcome(seed, None, error=f"{type(exc).__name__}: {exc}"))
    return MultiSeedResult(outcomes)
