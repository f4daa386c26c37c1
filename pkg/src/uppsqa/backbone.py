"""Frame-level feature extractors.

Every extractor exposes two views of a mono waveform: ``semantic`` returns
the final hidden layer as a ``(T, D)`` tensor and ``layer_stack`` returns
all hidden layers as ``(L, T, D)``. The acoustic branch mixes that stack
with :class:`LayerWeights`.

``ToyBackbone`` needs no downloads: it computes log band energies on 25 ms
frames with a 20 ms hop and maps them through fixed seeded projections.
Pretrained encoders are reached through :func:`register_backbone`.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from scipy.signal import resample_poly
from torch import nn

FEATURE_DIM = 768


@dataclass
class FeatureSequence:
    frames: torch.Tensor  # (T, D)
    frame_rate: float
    source: str = ""

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"expected a (T>=1, D) matrix, got shape {tuple(self.frames.shape)}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class LayerStack:
    layers: torch.Tensor  # (L, T, D)
    frame_rate: float
    source: str = ""

    def __post_init__(self):
        if self.layers.ndim != 3 or self.layers.shape[0] < 1 or self.layers.shape[1] < 1:
            raise ValueError(f"expected an (L>=1, T>=1, D) tensor, got shape {tuple(self.layers.shape)}")


class LayerWeights(nn.Module):
    """Learnable convex combination of encoder layers (softmax of raw logits)."""

    def __init__(self, num_layers: int):
        super().__init__()
        self.raw = nn.Parameter(torch.zeros(num_layers))

    def normalized(self) -> torch.Tensor:
        return torch.softmax(self.raw, dim=0)

    def forward(self, layers: torch.Tensor) -> torch.Tensor:
        # layers: (..., L, T, D) -> (..., T, D)
        if layers.shape[-3] != self.raw.shape[0]:
            raise ValueError(f"stack has {layers.shape[-3]} layers, weights expect {self.raw.shape[0]}")
        w = self.normalized().to(layers.dtype)
        return torch.einsum("l,...ltd->...td", w, layers)


def aggregate_layers(stack: LayerStack, weights: LayerWeights) -> FeatureSequence:
    return FeatureSequence(weights(stack.layers), stack.frame_rate, stack.source)


def align_lengths(a: FeatureSequence, b: FeatureSequence) -> tuple[FeatureSequence, FeatureSequence]:
    """Truncate both sequences to the shorter length."""
    if not math.isclose(a.frame_rate, b.frame_rate):
        raise ValueError(f"frame-rate mismatch: {a.frame_rate} vs {b.frame_rate}")
    n = min(a.num_frames, b.num_frames)
    return (
        FeatureSequence(a.frames[:n], a.frame_rate, a.source),
        FeatureSequence(b.frames[:n], b.frame_rate, b.source),
    )


# --------------------------------------------------------------------------- audio


def load_wav(path: str, target_rate: int) -> np.ndarray:
    """Read 16-bit PCM mono WAV as float32 in [-1, 1], resampled to ``target_rate``."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        rate = fh.getframerate()
        data = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
    audio = data.astype(np.float32) / 32768.0
    if rate != target_rate:
        g = math.gcd(rate, target_rate)
        audio = resample_poly(audio, target_rate // g, rate // g).astype(np.float32)
    return audio


def write_wav(path: str, audio: np.ndarray, sample_rate: int) -> None:
    pcm = np.clip(np.round(np.asarray(audio, dtype=np.float64) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


def _check_waveform(waveform) -> torch.Tensor:
    wav = torch.as_tensor(waveform)
    if wav.ndim != 1:
        raise ValueError(f"expected a mono 1-D waveform, got shape {tuple(wav.shape)}")
    if wav.numel() == 0:
        raise ValueError("zero-length waveform")
    if not torch.isfinite(wav).all():
        raise ValueError("waveform contains non-finite samples")
    return wav


# ----------------------------------------------------------------------- backbones


class Backbone(nn.Module):
    """Interface shared by all extractors."""

    name = "base"
    dim: int
    num_layers: int
    frame_rate: float
    sample_rate: int

    def semantic(self, waveform: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def layer_stack(self, waveform: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    @property
    def trainable(self) -> bool:
        return any(p.requires_grad for p in self.parameters())

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad_(False)


class ToyBackbone(Backbone):
    """Deterministic offline extractor with the shape contract of an SSL encoder."""

    name = "toy"

    def __init__(
        self,
        dim: int = FEATURE_DIM,
        num_layers: int = 3,
        sample_rate: int = 16000,
        n_bands: int = 24,
        seed: int = 1234,
    ):
        super().__init__()
        self.dim = dim
        self.num_layers = num_layers
        self.sample_rate = sample_rate
        self.win = int(round(0.025 * sample_rate))
        self.hop = int(round(0.020 * sample_rate))
        self.frame_rate = sample_rate / self.hop
        self.n_bands = n_bands
        n_in = n_bands + 1
        # slot 0 is the semantic projection, 1..L the acoustic layers
        mats = []
        for k in range(num_layers + 1):
            rng = np.random.default_rng([seed, k])
            mats.append(rng.standard_normal((n_in, dim)) / math.sqrt(n_in))
        self._proj = np.stack(mats)
        bins = self.win // 2 + 1
        edges = np.linspace(1, bins, n_bands + 1).round().astype(int)
        self._band_edges = edges
        self._window = np.hanning(self.win)

    def frame_stats(self, waveform) -> np.ndarray:
        """Per-frame log band energies plus overall log energy, shape (T, n_bands + 1)."""
        wav = _check_waveform(waveform).detach().cpu().numpy().astype(np.float64)
        n_frames = -(-wav.size // self.hop)
        padded = np.zeros((n_frames - 1) * self.hop + self.win)
        padded[: wav.size] = wav
        idx = np.arange(self.win)[None, :] + self.hop * np.arange(n_frames)[:, None]
        frames = padded[idx] * self._window
        power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
        e = self._band_edges
        bands = np.stack([power[:, e[i] : max(e[i + 1], e[i] + 1)].sum(axis=1) for i in range(self.n_bands)], axis=1)
        total = power.sum(axis=1, keepdims=True)
        stats = np.concatenate([bands, total], axis=1)
        return np.log10(stats + 1e-8) / 4.0 + 1.0

    def _project(self, stats: np.ndarray, k: int) -> torch.Tensor:
        return torch.from_numpy(np.tanh(stats @ self._proj[k]))

    def semantic(self, waveform) -> torch.Tensor:
        return self._project(self.frame_stats(waveform), 0)

    def layer_stack(self, waveform) -> torch.Tensor:
        stats = self.frame_stats(waveform)
        return torch.stack([self._project(stats, k) for k in range(1, self.num_layers + 1)])


class HFBackbone(Backbone):
    """Adapter around a Hugging Face ``transformers`` speech encoder."""

    def __init__(self, model: nn.Module, name: str, sample_rate: int = 16000, normalize: bool = True):
        super().__init__()
        self.model = model
        self.name = name
        self.sample_rate = sample_rate
        self.normalize = normalize
        cfg = model.config
        self.dim = cfg.hidden_size
        self.num_layers = cfg.num_hidden_layers + 1
        self.frame_rate = sample_rate / math.prod(cfg.conv_stride)

    def _hidden(self, waveform, all_layers: bool):
        wav = _check_waveform(waveform).to(torch.float32)
        if self.normalize:
            wav = (wav - wav.mean()) / torch.sqrt(wav.var(unbiased=False) + 1e-7)
        out = self.model(wav[None, :], output_hidden_states=all_layers)
        if all_layers:
            return torch.stack(out.hidden_states)[:, 0]
        return out.last_hidden_state[0]

    def semantic(self, waveform) -> torch.Tensor:
        return self._hidden(waveform, all_layers=False)

    def layer_stack(self, waveform) -> torch.Tensor:
        return self._hidden(waveform, all_layers=True)


def _hf_factory(model_cls: str, hub_id: str) -> Callable[..., Backbone]:
    def make(**kwargs) -> Backbone:
        import transformers

        model = getattr(transformers, model_cls).from_pretrained(hub_id)
        return HFBackbone(model, name=hub_id, **kwargs)

    return make


_REGISTRY: dict[str, Callable[..., Backbone]] = {
    "toy": ToyBackbone,
    "wav2vec2-base": _hf_factory("Wav2Vec2Model", "facebook/wav2vec2-base"),
    "wavlm-base": _hf_factory("WavLMModel", "microsoft/wavlm-base"),
}


def register_backbone(name: str, factory: Callable[..., Backbone]) -> None:
    _REGISTRY[name] = factory


def make_backbone(name: str, **kwargs) -> Backbone:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown backbone {name!r}; registered: {sorted(_REGISTRY)}") from None
    return factory(**kwargs)


def extract_semantic(backbone: Backbone, waveform) -> FeatureSequence:
    return FeatureSequence(backbone.semantic(waveform), backbone.frame_rate, backbone.name)


def extract_acoustic_stack(backbone: Backbone, waveform) -> LayerStack:
    return LayerStack(backbone.layer_stack(waveform), backbone.frame_rate, backbone.name)
