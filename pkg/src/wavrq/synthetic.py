"""Deterministic synthetic audio: the bundled stand-in corpus.

Four signal families (low tone, high tone, upward chirp, noise burst)
give the probe a 4-class task and give pretraining a corpus with enough
spectral variety that quantizer labels are not degenerate. Everything is
a pure function of the seed, so fixtures regenerate bit-identically.
"""

from __future__ import annotations

import numpy as np

from .audio import SAMPLE_RATE, Waveform, save_wav

CLASS_NAMES = ("tone_low", "tone_high", "chirp_up", "noise_burst")


def tone(freq: float, seconds: float, amp: float = 0.5, phase: float = 0.0,
         sr: int = SAMPLE_RATE) -> Waveform:
    t = np.arange(int(seconds * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t + phase))


def chirp(f0: float, f1: float, seconds: float, amp: float = 0.5,
          sr: int = SAMPLE_RATE) -> Waveform:
    t = np.arange(int(seconds * sr)) / sr
    # linear sweep: instantaneous frequency f0 + (f1-f0) * t/T
    phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t * t / seconds)
    return Waveform(amp * np.sin(phase))


def noise_burst(seconds: float, amp: float = 0.2, seed: int = 0,
                sr: int = SAMPLE_RATE) -> Waveform:
    rng = np.random.default_rng(seed)
    return Waveform(amp * rng.standard_normal(int(seconds * sr)).astype(np.float32))


def _render(label: int, seconds: float, rng: np.random.Generator) -> Waveform:
    amp = float(rng.uniform(0.3, 0.7))
    if label == 0:
        return tone(float(rng.uniform(180.0, 360.0)), seconds, amp,
                    phase=float(rng.uniform(0, 2 * np.pi)))
    if label == 1:
        return tone(float(rng.uniform(1200.0, 2400.0)), seconds, amp,
                    phase=float(rng.uniform(0, 2 * np.pi)))
    if label == 2:
        f0 = float(rng.uniform(200.0, 500.0))
        return chirp(f0, f0 * float(rng.uniform(4.0, 8.0)), seconds, amp)
    return noise_burst(seconds, amp * 0.5, seed=int(rng.integers(0, 2 ** 31)))


def make_labeled_clips(n: int, seed: int, seconds: float = 1.0,
                       jitter: float = 0.25) -> tuple:
    """n clips cycling through the 4 classes, durations jittered around `seconds`.

    Returns (waveforms, labels).
    """
    rng = np.random.default_rng(seed)
    waves, labels = [], []
    for i in range(n):
        label = i % len(CLASS_NAMES)
        dur = seconds * float(rng.uniform(1.0 - jitter, 1.0 + jitter))
        waves.append(_render(label, dur, rng))
        labels.append(label)
    return waves, np.asarray(labels, dtype=np.int64)


def make_corpus(n: int, seed: int, seconds: float = 1.0) -> list:
    waves, _ = make_labeled_clips(n, seed, seconds)
    return waves


def write_corpus(out_dir, n: int, seed: int, seconds: float = 1.0) -> str:
    """Write n WAV clips plus a manifest; returns the manifest path."""
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    waves, labels = make_labeled_clips(n, seed, seconds)
    lines = []
    for i, (w, lab) in enumerate(zip(waves, labels)):
        name = f"clip{i:04d}_{CLASS_NAMES[lab]}.wav"
        save_wav(out_dir / name, w)
        lines.append(name)
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return str(manifest)
