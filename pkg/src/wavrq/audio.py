"""Audio loading, length control, utterance mixing, and batch assembly.

All waveforms are mono 16 kHz float arrays with amplitudes nominally in
[-1, 1]. Batches are fixed-length: every item is exactly ``target_len``
samples, with ``valid_len`` tracking how many of them are real audio and
the remainder exact zeros, so downstream padding masks can always be
recomputed from ``valid_len`` alone.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
# fixed clip budget: 14 seconds at the 16 kHz corpus rate
DEFAULT_TARGET_LEN = 14 * SAMPLE_RATE


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("empty audio")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {self.sample_rate} Hz")

    def __len__(self):
        return self.samples.size


@dataclass
class AudioBatch:
    items: np.ndarray        # (B, target_len) float32
    valid_len: np.ndarray    # (B,) int, samples beyond are exact zeros
    mixed_flags: np.ndarray  # (B,) bool

    @property
    def size(self) -> int:
        return self.items.shape[0]

    @property
    def target_len(self) -> int:
        return self.items.shape[1]

    def copy(self) -> "AudioBatch":
        return AudioBatch(self.items.copy(), self.valid_len.copy(), self.mixed_flags.copy())


@dataclass
class MixConfig:
    """Overlapped-speech simulation parameters."""

    utterance_mix_prob: float = 0.2
    max_region_fraction: float = 0.5
    energy_ratio_db: tuple = (-5.0, 5.0)
    noise_mix_prob: float = 0.0
    seed: int = 0

    def validate(self):
        for key in ("utterance_mix_prob", "noise_mix_prob"):
            p = getattr(self, key)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"mix.{key}: probability must be in [0, 1], got {p}")
        if not 0.0 < self.max_region_fraction <= 1.0:
            raise ValueError(
                f"mix.max_region_fraction: must be in (0, 1], got {self.max_region_fraction}")


def trim_pad(w: Waveform, target_len: int, rng: np.random.Generator | None = None):
    """Fit a waveform to exactly target_len samples.

    Longer inputs keep a contiguous window whose start is drawn uniformly
    from the valid range; shorter inputs are zero-padded at the end.

    Returns (fitted Waveform, valid_len).
    """
    if target_len <= 0:
        raise ValueError(f"target_len must be positive, got {target_len}")
    n = len(w)
    if n == target_len:
        return w, n
    if n > target_len:
        if rng is None:
            rng = np.random.default_rng(0)
        start = int(rng.integers(0, n - target_len + 1))
        return Waveform(w.samples[start:start + target_len]), target_len
    out = np.zeros(target_len, dtype=np.float32)
    out[:n] = w.samples
    return Waveform(out), n


def mix_utterances(batch: AudioBatch, cfg: MixConfig,
                   rng: np.random.Generator | None = None) -> AudioBatch:
    """Overlay scaled regions of other batch items to simulate overlapped speech.

    Each item is independently selected with probability
    cfg.utterance_mix_prob; a selected item gets a sub-region of a
    different (uniformly chosen) batch item added in place, scaled so the
    primary/secondary energy ratio over that region hits a value drawn
    uniformly from cfg.energy_ratio_db. Unselected items are returned
    bit-identical. Pure given (batch, cfg, rng seed).
    """
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    p_mix = cfg.utterance_mix_prob
    if p_mix > 0 and batch.size < 2:
        raise ValueError("insufficient batch for mixing (need >= 2 items)")
    out = batch.copy()
    if p_mix == 0.0 and cfg.noise_mix_prob == 0.0:
        out.mixed_flags[:] = False
        return out
    selected = rng.random(batch.size) < p_mix
    for i in range(batch.size):
        if not selected[i]:
            out.mixed_flags[i] = False
            continue
        j = int(rng.integers(0, batch.size - 1))
        if j >= i:
            j += 1
        # secondary content always comes from the un-mixed input batch
        _mix_region(out.items, batch.items, i, j, batch.valid_len, cfg, rng)
        out.mixed_flags[i] = True
    if cfg.noise_mix_prob > 0.0:
        # noise path: white noise region at the same energy-ratio convention
        noisy = rng.random(batch.size) < cfg.noise_mix_prob
        for i in np.flatnonzero(noisy):
            _mix_noise(out.items, int(i), batch.valid_len, cfg, rng)
            out.mixed_flags[i] = True
    return out


def _region_bounds(valid_len: int, max_fraction: float, rng) -> tuple:
    max_region = max(1, int(max_fraction * valid_len))
    length = int(rng.integers(1, max_region + 1))
    start = int(rng.integers(0, valid_len - length + 1))
    return start, length


def _gain_for_ratio(primary: np.ndarray, secondary: np.ndarray, ratio_db: float) -> float:
    """Scale factor putting energy(primary)/energy(scaled secondary) at ratio_db."""
    e_p = float(np.sum(primary.astype(np.float64) ** 2))
    e_s = float(np.sum(secondary.astype(np.float64) ** 2))
    if e_s <= 0.0 or e_p <= 0.0:
        return 1.0
    target = e_p / (10.0 ** (ratio_db / 10.0))
    return float(np.sqrt(target / e_s))


def _mix_region(items: np.ndarray, source: np.ndarray, i: int, j: int,
                valid_len: np.ndarray, cfg: MixConfig, rng) -> None:
    vl_i = int(valid_len[i])
    start, length = _region_bounds(vl_i, cfg.max_region_fraction, rng)
    src_valid = int(valid_len[j])
    src_len = min(length, src_valid)
    src_start = int(rng.integers(0, src_valid - src_len + 1))
    ratio_db = float(rng.uniform(*cfg.energy_ratio_db))
    primary = items[i, start:start + src_len]
    secondary = source[j, src_start:src_start + src_len]
    gain = _gain_for_ratio(primary, secondary, ratio_db)
    items[i, start:start + src_len] = primary + gain * secondary


def _mix_noise(items: np.ndarray, i: int, valid_len: np.ndarray, cfg: MixConfig, rng) -> None:
    vl_i = int(valid_len[i])
    start, length = _region_bounds(vl_i, cfg.max_region_fraction, rng)
    ratio_db = float(rng.uniform(*cfg.energy_ratio_db))
    noise = rng.standard_normal(length).astype(np.float32)
    primary = items[i, start:start + length]
    gain = _gain_for_ratio(primary, noise, ratio_db)
    items[i, start:start + length] = primary + gain * noise


def make_batches(corpus: list, batch_size: int, seed: int,
                 target_len: int = DEFAULT_TARGET_LEN) -> list:
    """Shuffle the corpus and assemble fixed-shape batches.

    The trailing partial batch is dropped so every training step sees the
    same shapes. Per-item trim windows are seeded from (seed, position),
    so composition is reproducible for a given seed regardless of how the
    work is split across workers.
    """
    if batch_size <= 0:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    if not corpus:
        raise ValueError("empty corpus")
    order = np.random.default_rng(seed).permutation(len(corpus))
    n_batches = len(corpus) // batch_size
    batches = []
    for b in range(n_batches):
        idx = order[b * batch_size:(b + 1) * batch_size]
        items = np.zeros((batch_size, target_len), dtype=np.float32)
        valid = np.zeros(batch_size, dtype=np.int64)
        for k, ci in enumerate(idx):
            item_rng = np.random.default_rng(np.random.SeedSequence((seed, b, k)))
            fitted, vl = trim_pad(corpus[ci], target_len, item_rng)
            items[k] = fitted.samples
            valid[k] = vl
        batches.append(AudioBatch(items, valid, np.zeros(batch_size, dtype=bool)))
    return batches


def load_wav(path) -> Waveform:
    """Read a 16-bit PCM mono 16 kHz WAV file; anything else is rejected."""
    path = Path(path)
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit")
        if f.getframerate() != SAMPLE_RATE:
            raise ValueError(f"{path}: expected {SAMPLE_RATE} Hz, got {f.getframerate()} Hz")
        n = f.getnframes()
        if n == 0:
            raise ValueError(f"{path}: empty audio")
        raw = f.readframes(n)
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float32) / 32768.0)


def save_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())


def read_manifest(path) -> list:
    """One audio path per line; relative paths resolve against the manifest."""
    path = Path(path)
    base = path.parent
    paths = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        p = Path(line)
        paths.append(p if p.is_absolute() else base / p)
    if not paths:
        raise ValueError(f"{path}: empty manifest")
    return paths


def load_corpus(manifest_path) -> list:
    return [load_wav(p) for p in read_manifest(manifest_path)]
