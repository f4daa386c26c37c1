"""SA-MOS absolute scorer and the pairwise preference function.

Scoring pipeline for one utterance::

    semantic  = backbone_s.semantic(wav)                     (T, Ds)
    acoustic  = softmax(w) . backbone_a.layer_stack(wav)     (T, Da)
    fused     = [semantic + proc_s(semantic), acoustic + proc_a(acoustic)]
    frames    = Linear(ReLU(Linear(BiLSTM(fused))))          (T,)
    mos_hat   = mean over valid frames

Both members of a pair go through the same network, and the preference
score is ``2 / (1 + exp(-(mos_x - mos_y))) - 1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .backbone import Backbone, LayerWeights, load_wav, make_backbone
from .datamodel import PredictionRecord, Utterance

CHECKPOINT_SCHEMA = "uppsqa.checkpoint/v1"
_BELOW_ONE = math.nextafter(1.0, 0.0)


def preference_score(mos_x, mos_y):
    """Map two absolute scores to a preference in (-1, 1).

    Evaluated as ``tanh(d / 2)``, which equals ``2 / (1 + e^-d) - 1`` and
    is exactly odd in ``d``. Outputs saturating at +-1 are pulled back to
    the nearest representable value inside the open interval; the tanh
    gradient there is already below the dtype's resolution.
    """
    if isinstance(mos_x, torch.Tensor) or isinstance(mos_y, torch.Tensor):
        s = torch.tanh((mos_x - mos_y) / 2)
        one = torch.ones((), dtype=s.dtype)
        below = float(torch.nextafter(one, torch.zeros((), dtype=s.dtype)))
        return s.clamp(-below, below)
    if not (math.isfinite(mos_x) and math.isfinite(mos_y)):
        raise ValueError(f"non-finite score in ({mos_x}, {mos_y})")
    s = math.tanh((mos_x - mos_y) / 2.0)
    return max(-_BELOW_ONE, min(_BELOW_ONE, s))


@dataclass
class ModelConfig:
    arch: str = "samos"
    semantic_backbone: str = "toy"
    acoustic_backbone: str = "toy"
    backbone_options: dict[str, Any] = field(default_factory=dict)
    bottleneck_dim: int = 64
    lstm_hidden: int = 128
    head_hidden: int = 64
    freeze_backbones: bool = False
    dtype: str = "float32"

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "ModelConfig":
        return cls(**(d or {}))

    @property
    def torch_dtype(self) -> torch.dtype:
        return getattr(torch, self.dtype)


class FeatureProcessor(nn.Module):
    def __init__(self, dim: int, bottleneck: int):
        super().__init__()
        self.linear1 = nn.Linear(dim, bottleneck)
        self.act = nn.GELU()
        self.linear2 = nn.Linear(bottleneck, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.linear2(self.act(self.linear1(x)))


class PredictionHead(nn.Module):
    def __init__(self, in_dim: int, lstm_hidden: int, hidden: int):
        super().__init__()
        self.bilstm = nn.LSTM(in_dim, lstm_hidden, batch_first=True, bidirectional=True)
        self.linear1 = nn.Linear(2 * lstm_hidden, hidden)
        self.relu = nn.ReLU()
        self.linear_out = nn.Linear(hidden, 1)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Return per-frame scores ``(B, T)``; frames past ``lengths`` are zero-filled input."""
        total = x.shape[1]
        packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.bilstm(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=total)
        return self.linear_out(self.relu(self.linear1(out))).squeeze(-1)


class SAMOS(nn.Module):
    def __init__(self, semantic: Backbone, acoustic: Backbone, cfg: Optional[ModelConfig] = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        self.semantic_backbone = semantic
        self.acoustic_backbone = acoustic
        if cfg.freeze_backbones:
            semantic.freeze()
            acoustic.freeze()
        self.layer_weights = LayerWeights(acoustic.num_layers)
        self.proc_semantic = FeatureProcessor(semantic.dim, cfg.bottleneck_dim)
        self.proc_acoustic = FeatureProcessor(acoustic.dim, cfg.bottleneck_dim)
        self.head = PredictionHead(semantic.dim + acoustic.dim, cfg.lstm_hidden, cfg.head_hidden)
        self._init_head()

    def _init_head(self) -> None:
        for mod in (self.proc_semantic, self.proc_acoustic, self.head):
            for sub in mod.modules():
                if isinstance(sub, nn.Linear):
                    bound = 1.0 / math.sqrt(sub.in_features)
                    nn.init.uniform_(sub.weight, -bound, bound)
                    nn.init.zeros_(sub.bias)

    @property
    def backbones_trainable(self) -> bool:
        return self.semantic_backbone.trainable or self.acoustic_backbone.trainable

    def head_parameters(self) -> dict[str, nn.Parameter]:
        """Feature-processor, layer-weight and prediction-head parameters."""
        return {
            n: p
            for n, p in self.named_parameters()
            if not n.startswith(("semantic_backbone.", "acoustic_backbone."))
        }

    def encode(self, waveform) -> tuple[torch.Tensor, torch.Tensor]:
        """Backbone features ``(T, Ds)`` and ``(L, T, Da)``, truncated to a common T."""
        sem = self.semantic_backbone.semantic(waveform)
        stack = self.acoustic_backbone.layer_stack(waveform)
        t = min(sem.shape[0], stack.shape[1])
        dtype = self.cfg.torch_dtype
        return sem[:t].to(dtype), stack[:, :t].to(dtype)

    def forward_features(self, sem: torch.Tensor, stack: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Score a padded batch: ``sem`` (B, T, Ds), ``stack`` (B, L, T, Da) -> (B,)."""
        acoustic = self.layer_weights(stack)
        fused = torch.cat(
            [sem + self.proc_semantic(sem), acoustic + self.proc_acoustic(acoustic)], dim=-1
        )
        frame_scores = self.head(fused, lengths)
        mask = torch.arange(fused.shape[1], device=fused.device)[None, :] < lengths[:, None]
        pooled = (frame_scores * mask).sum(dim=1) / lengths.to(frame_scores.dtype)
        if not torch.isfinite(pooled).all():
            raise FloatingPointError("non-finite MOS prediction")
        return pooled

    def forward(self, waveform) -> torch.Tensor:
        sem, stack = self.encode(waveform)
        return self.forward_features(sem[None], stack[None], torch.tensor([sem.shape[0]]))[0]


def collate_features(items: list[tuple[torch.Tensor, torch.Tensor]]):
    """Zero-pad a list of ``(sem, stack)`` to a batch plus its length vector."""
    lengths = torch.tensor([s.shape[0] for s, _ in items])
    t_max = int(lengths.max())
    sem = torch.zeros(len(items), t_max, items[0][0].shape[1], dtype=items[0][0].dtype)
    stack = torch.zeros(len(items), items[0][1].shape[0], t_max, items[0][1].shape[2], dtype=items[0][1].dtype)
    for i, (s, a) in enumerate(items):
        sem[i, : s.shape[0]] = s
        stack[i, :, : a.shape[1]] = a
    return sem, stack, lengths


ARCHITECTURES = {"samos": SAMOS}


def build_model(cfg: ModelConfig) -> SAMOS:
    if cfg.arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {cfg.arch!r}; available: {sorted(ARCHITECTURES)}")
    semantic = make_backbone(cfg.semantic_backbone, **cfg.backbone_options)
    acoustic = make_backbone(cfg.acoustic_backbone, **cfg.backbone_options)
    model = ARCHITECTURES[cfg.arch](semantic, acoustic, cfg)
    return model.to(cfg.torch_dtype)


@torch.no_grad()
def forward_mos(model: SAMOS, waveform) -> float:
    return float(model(waveform))


@torch.no_grad()
def forward_pair(model: SAMOS, wav_x, wav_y, x_id: str = "x", y_id: str = "y") -> PredictionRecord:
    """Score both waveforms with the shared network, then fuse."""
    mx = forward_mos(model, wav_x)
    my = forward_mos(model, wav_y)
    return PredictionRecord(x_id, y_id, mx, my, preference_score(mx, my))


class FeatureCache:
    """Backbone outputs per utterance id, valid while the backbones are fixed."""

    def __init__(self):
        self._store: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}

    def __len__(self) -> int:
        return len(self._store)

    def put(self, utt_id: str, sem: torch.Tensor, stack: torch.Tensor) -> None:
        self._store[utt_id] = (sem, stack)

    def get(self, model: SAMOS, utt: Utterance) -> tuple[torch.Tensor, torch.Tensor]:
        if model.backbones_trainable:
            return model.encode(load_waveform(model, utt))
        hit = self._store.get(utt.utt_id)
        if hit is None:
            with torch.no_grad():
                hit = model.encode(load_waveform(model, utt))
            self._store[utt.utt_id] = hit
        return hit


def load_waveform(model: SAMOS, utt: Utterance) -> torch.Tensor:
    return torch.from_numpy(load_wav(utt.wav_path, model.semantic_backbone.sample_rate))


@torch.no_grad()
def score_utterances(
    model: SAMOS, utts: Sequence[Utterance], cache: Optional[FeatureCache] = None
) -> dict[str, float]:
    """Absolute score for each utterance, one forward pass per utterance.

    Single-item passes keep every score independent of batch composition,
    so identical inputs always receive bitwise-identical scores.
    """
    cache = cache if cache is not None else FeatureCache()
    was_training = model.training
    model.eval()
    scores = {}
    for u in utts:
        sem, stack = cache.get(model, u)
        scores[u.utt_id] = float(model.forward_features(sem[None], stack[None], torch.tensor([sem.shape[0]]))[0])
    model.train(was_training)
    return scores


@dataclass
class Checkpoint:
    state_dict: dict[str, torch.Tensor]
    model_config: dict[str, Any]
    seed: int
    dev_srcc: float
    epoch: int
    train_config: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def capture(cls, model: SAMOS, **meta) -> "Checkpoint":
        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        return cls(state_dict=state, model_config=asdict(model.cfg), **meta)

    def save(self, path: Union[str, Path]) -> None:
        blob = {"schema": CHECKPOINT_SCHEMA, **asdict_shallow(self)}
        torch.save(blob, path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Checkpoint":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        if blob.pop("schema", None) != CHECKPOINT_SCHEMA:
            raise ValueError(f"{path}: not a {CHECKPOINT_SCHEMA} checkpoint")
        return cls(**blob)

    def build_model(self) -> SAMOS:
        model = build_model(ModelConfig.from_dict(self.model_config))
        model.load_state_dict(self.state_dict)
        model.eval()
        return model


def asdict_shallow(obj) -> dict[str, Any]:
    return {f: getattr(obj, f) for f in obj.__dataclass_fields__}


def load_checkpoint(path: Union[str, Path]) -> tuple[SAMOS, Checkpoint]:
    ckpt = Checkpoint.load(path)
    return ckpt.build_model(), ckpt
