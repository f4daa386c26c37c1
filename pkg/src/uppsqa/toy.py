"""Synthetic MOS corpus for offline end-to-end runs.

Each "system" adds white noise at a fixed SNR to the same set of generated
harmonic tones, and the MOS label is an affine function of that SNR plus a
little seeded jitter. Utterances derived from the same clean tone share a
transcript, so both pairing modes work on the corpus.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import write_wav
from .datamodel import SplitManifests, Utterance, save_manifest

DEFAULT_SNRS_DB = (30.0, 20.0, 12.0, 6.0, 2.0, -2.0)


@dataclass(frozen=True)
class ToyCorpusConfig:
    n_waveforms: int = 60
    split_sizes: tuple[int, int, int] = (40, 10, 10)
    snrs_db: tuple[float, ...] = DEFAULT_SNRS_DB
    duration_s: float = 0.5
    sample_rate: int = 16000
    mos_jitter: float = 0.05
    seed: int = 0


_WORDS = (
    "amber bright cloud delta ember forest glass harbor island jungle kettle lemon meadow "
    "needle orbit pepper quartz river saddle timber umbrella velvet willow yellow zephyr "
    "anchor basket candle dragon eagle falcon garden hollow insect jacket lantern marble"
).split()


def toy_transcript(k: int, seed: int) -> str:
    rng = np.random.default_rng([seed, k, 7])
    return " ".join(rng.choice(_WORDS, size=6))


def clean_tone(rng: np.random.Generator, n: int, sample_rate: int) -> np.ndarray:
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(100.0, 300.0)
    sig = np.zeros(n)
    for h in range(1, int(rng.integers(3, 6)) + 1):
        sig += rng.uniform(0.2, 1.0) / h * np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi))
    envelope = np.sin(np.pi * t / t[-1]) ** 0.5 if n > 1 else np.ones(n)
    sig *= envelope
    return 0.3 * sig / np.max(np.abs(sig))


def add_noise(clean: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    p_sig = np.mean(clean**2)
    noise = rng.standard_normal(clean.size)
    noise *= np.sqrt(p_sig / 10 ** (snr_db / 10) / np.mean(noise**2))
    return np.clip(clean + noise, -1.0, 1.0)


def snr_to_mos(snr_db: float, snrs_db) -> float:
    lo, hi = min(snrs_db), max(snrs_db)
    return 1.0 + 4.0 * (snr_db - lo) / (hi - lo)


def make_toy_corpus(out_dir, cfg: ToyCorpusConfig = ToyCorpusConfig()) -> SplitManifests:
    """Write WAVs plus ``train.csv``/``dev.csv``/``test.csv`` manifests under ``out_dir``."""
    if sum(cfg.split_sizes) != cfg.n_waveforms:
        raise ValueError("split sizes must add up to n_waveforms")
    out = Path(out_dir).resolve()
    (out / "wav").mkdir(parents=True, exist_ok=True)
    n = int(round(cfg.duration_s * cfg.sample_rate))
    split_names = ["train"] * cfg.split_sizes[0] + ["dev"] * cfg.split_sizes[1] + ["test"] * cfg.split_sizes[2]
    parts: dict[str, list[Utterance]] = {"train": [], "dev": [], "test": []}
    for k in range(cfg.n_waveforms):
        clean = clean_tone(np.random.default_rng([cfg.seed, k]), n, cfg.sample_rate)
        transcript = toy_transcript(k, cfg.seed)
        for s, snr in enumerate(cfg.snrs_db):
            rng = np.random.default_rng([cfg.seed, k, s, 1])
            audio = add_noise(clean, snr, rng)
            mos = snr_to_mos(snr, cfg.snrs_db) + rng.normal(0.0, cfg.mos_jitter)
            mos = float(np.clip(mos, 1.0, 5.0))
            utt_id = f"sys{s}_utt{k:03d}"
            rel = f"wav/{utt_id}.wav"
            write_wav(str(out / rel), audio, cfg.sample_rate)
            parts[split_names[k]].append(
                Utterance(
                    utt_id=utt_id,
                    wav_path=str(out / rel),
                    system_id=f"sys{s}",
                    mos=mos,
                    transcript=transcript,
                    sample_rate=cfg.sample_rate,
                )
            )
    for name, utts in parts.items():
        save_manifest(out / f"{name}.csv", utts)
    return SplitManifests(parts["train"], parts["dev"], parts["test"])
