"""Waveform-to-frame featurizers.

Two front ends produce the frame sequences the rest of the model
consumes: a trainable stack of strided 1-D convolutions over raw audio
(512-dim frames, 20 ms period, 25 ms receptive field under the default
geometry) and a fixed 80-dim log-Mel spectrogram (10 ms hop). Both
report per-item frame validity derived from the batch's valid sample
counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .audio import SAMPLE_RATE, AudioBatch
from .autograd import Tensor
from .nn import Conv1dLayer, GroupNorm, LayerNorm, Module

# (channels, kernel, stride) per layer; total stride 320 samples = 20 ms,
# receptive field 400 samples = 25 ms.
DEFAULT_CONV_LAYERS = (
    (512, 10, 5),
    (512, 3, 2),
    (512, 3, 2),
    (512, 3, 2),
    (512, 3, 2),
    (512, 2, 2),
    (512, 2, 2),
)


@dataclass
class FeatureFrames:
    values: Tensor            # (B, T, D); carries the grad path for conv features
    frame_period: float       # seconds per frame
    valid_frames: np.ndarray  # (B,) int
    source: str               # "conv" | "logmel"

    @property
    def batch_size(self) -> int:
        return self.values.shape[0]

    @property
    def total_frames(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def frame_mask(self) -> np.ndarray:
        """(B, T) bool, True at valid frames."""
        t = np.arange(self.total_frames)
        return t[None, :] < self.valid_frames[:, None]


@dataclass
class ConvFeaturizerConfig:
    layers: tuple = DEFAULT_CONV_LAYERS
    normalization: str = "group_norm"  # "group_norm" (after layer 1) | "layer_norm" (each layer)

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0]

    @property
    def total_stride(self) -> int:
        s = 1
        for _, _, stride in self.layers:
            s *= stride
        return s

    @property
    def receptive_field(self) -> int:
        """Receptive field of one output frame, in input samples."""
        rf, stride = 1, 1
        for _, k, s in self.layers:
            rf += (k - 1) * stride
            stride *= s
        return rf

    @property
    def frame_period(self) -> float:
        return self.total_stride / SAMPLE_RATE

    def output_length(self, n_samples: int) -> int:
        """Apply the per-layer length formula L_out = (L_in - k) // s + 1."""
        n = n_samples
        for _, k, s in self.layers:
            if n < k:
                raise ValueError("input shorter than receptive field")
            n = (n - k) // s + 1
        return n

    def validate(self):
        if not self.layers:
            raise ValueError("conv.layers: need at least one layer")
        if self.normalization not in ("group_norm", "layer_norm"):
            raise ValueError(f"conv.normalization: unknown mode {self.normalization!r}")


class ConvFeaturizer(Module):
    """wav2vec-style conv stack: bias-free convs, GELU, group norm after layer 1
    (or layer norm after every layer)."""

    def __init__(self, cfg: ConvFeaturizerConfig, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        c_in = 1
        for i, (c_out, k, s) in enumerate(cfg.layers):
            self._children[f"conv{i}"] = Conv1dLayer(c_in, c_out, k, s, rng, dtype)
            if cfg.normalization == "group_norm" and i == 0:
                self._children[f"norm{i}"] = GroupNorm(c_out, c_out, dtype)
            elif cfg.normalization == "layer_norm":
                self._children[f"norm{i}"] = LayerNorm(c_out, dtype)
            c_in = c_out

    @property
    def output_dim(self) -> int:
        return self.cfg.output_dim

    @property
    def frame_period(self) -> float:
        return self.cfg.frame_period

    def frame_count(self, n_samples: int) -> int:
        return self.cfg.output_length(n_samples)

    def forward_raw(self, x: Tensor) -> Tensor:
        """(B, 1, L) -> (B, C, T); exposed separately for linearity tests."""
        h = x
        for i in range(len(self.cfg.layers)):
            h = self._children[f"conv{i}"](h)
            norm = self._children.get(f"norm{i}")
            if norm is not None:
                if isinstance(norm, LayerNorm):
                    # layer norm acts on channels: (B, C, T) -> (B, T, C) -> back
                    h = ag.permute(norm(ag.permute(h, (0, 2, 1))), (0, 2, 1))
                else:
                    h = norm(h)
            h = ag.gelu(h)
        return h

    def featurize(self, batch: AudioBatch) -> FeatureFrames:
        x = Tensor(batch.items[:, None, :].astype(self.dtype))
        h = self.forward_raw(x)          # (B, C, T)
        values = ag.permute(h, (0, 2, 1))  # (B, T, C)
        valid = np.array([frame_validity(int(v), self) for v in batch.valid_len])
        return FeatureFrames(values, self.frame_period, valid, "conv")


@dataclass
class LogMelConfig:
    n_mels: int = 80
    win_seconds: float = 0.025
    hop_seconds: float = 0.010
    n_fft: int = 512
    power_floor: float = 1e-10

    def validate(self):
        if self.n_mels <= 0:
            raise ValueError(f"logmel.n_mels: must be positive, got {self.n_mels}")
        if self.win_seconds <= 0 or self.hop_seconds <= 0:
            raise ValueError("logmel window/hop must be positive")
        if self.n_fft < int(round(self.win_seconds * SAMPLE_RATE)):
            raise ValueError("logmel.n_fft: must cover the analysis window")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sr: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """(n_mels, n_fft//2 + 1) triangular filters, mel-spaced edges, linear in Hz."""
    if fmax is None:
        fmax = sr / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bins = np.fft.rfftfreq(n_fft, d=1.0 / sr)
    fb = np.zeros((n_mels, bins.size))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bins - lo) / max(center - lo, 1e-12)
        falling = (hi - bins) / max(hi - center, 1e-12)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


class LogMelFeaturizer:
    """Framed Hann-window power spectrum -> mel filterbank -> floored natural log."""

    def __init__(self, cfg: LogMelConfig, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        self.win_len = int(round(cfg.win_seconds * SAMPLE_RATE))
        self.hop_len = int(round(cfg.hop_seconds * SAMPLE_RATE))
        self.window = np.hanning(self.win_len)
        self.filterbank = mel_filterbank(cfg.n_mels, cfg.n_fft)

    @property
    def output_dim(self) -> int:
        return self.cfg.n_mels

    @property
    def frame_period(self) -> float:
        return self.cfg.hop_seconds

    def frame_count(self, n_samples: int) -> int:
        if n_samples < self.win_len:
            raise ValueError("input shorter than one analysis window")
        return 1 + (n_samples - self.win_len) // self.hop_len

    def params(self, prefix: str = "") -> dict:
        return {}

    def featurize(self, batch: AudioBatch) -> FeatureFrames:
        x = batch.items.astype(np.float64)
        b, length = x.shape
        n_frames = self.frame_count(length)
        idx = self.hop_len * np.arange(n_frames)[:, None] + np.arange(self.win_len)
        frames = x[:, idx] * self.window  # (B, T, win)
        spec = np.fft.rfft(frames, n=self.cfg.n_fft, axis=-1)
        power = (spec.real ** 2 + spec.imag ** 2)
        mel = power @ self.filterbank.T  # (B, T, n_mels)
        out = np.log(np.maximum(mel, self.cfg.power_floor)).astype(self.dtype)
        valid = np.array([frame_validity(int(v), self) for v in batch.valid_len])
        return FeatureFrames(Tensor(out), self.frame_period, valid, "logmel")


def frame_validity(valid_len: int, featurizer) -> int:
    """Frames fully covered by valid samples, floored at one frame.

    Applies the featurizer's own output-length arithmetic to valid_len and
    clamps to [1, frames(full length)], so a single valid sample still
    yields the one frame whose receptive field contains it.
    """
    if valid_len < 1:
        raise ValueError("valid_len must be >= 1")
    try:
        n = featurizer.frame_count(valid_len)
    except ValueError:
        n = 0
    return max(1, n)


def conv_featurize(batch: AudioBatch, featurizer: ConvFeaturizer) -> FeatureFrames:
    return featurizer.featurize(batch)


def logmel_featurize(batch: AudioBatch, featurizer: LogMelFeaturizer) -> FeatureFrames:
    return featurizer.featurize(batch)
