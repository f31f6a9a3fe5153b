"""Span-based random masking of feature frames.

Each valid frame independently starts a mask span with probability
mask_prob; a span covers span_frames consecutive frames (overlaps union,
clipped at the item's valid length). Items that sample no span get one
forced span so every batch item contributes loss terms. Masked positions
are replaced with Gaussian noise on the encoder path only; the label
path never sees the mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .features import FeatureFrames


@dataclass
class MaskParams:
    mask_prob: float = 0.01     # per-frame span-start probability
    mask_time: float = 0.4      # seconds covered by one span
    stride_time: float = 0.01   # seconds per span slot
    noise_std: float = 0.1
    use_frame_period: bool = False  # span from the featurizer frame period instead
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValueError(f"mask.mask_prob: must be in [0, 1], got {self.mask_prob}")
        if self.mask_time <= 0:
            raise ValueError(f"mask.mask_time: must be > 0, got {self.mask_time}")
        if self.stride_time <= 0:
            raise ValueError(f"mask.stride_time: must be > 0, got {self.stride_time}")
        if self.noise_std < 0:
            raise ValueError(f"mask.noise_std: must be >= 0, got {self.noise_std}")

    def span_frames(self, frame_period: float) -> int:
        unit = frame_period if self.use_frame_period else self.stride_time
        span = int(round(self.mask_time / unit))
        if span < 1:
            raise ValueError("mask span shorter than one frame")
        return span


@dataclass
class MaskSpec:
    mask: np.ndarray   # (B, T) bool, True only at valid frames
    starts: list       # per-item arrays of span start indices
    span_frames: int

    def any_masked(self) -> bool:
        return bool(self.mask.any())


def make_masks(valid_frames: np.ndarray, total_frames: int, params: MaskParams,
               frame_period: float, rng: np.random.Generator | None = None) -> MaskSpec:
    """Sample span starts and dilate them into the boolean mask."""
    params.validate()
    valid_frames = np.asarray(valid_frames)
    if (valid_frames < 1).any():
        raise ValueError("every item needs at least one valid frame")
    if rng is None:
        rng = np.random.default_rng(params.seed)
    span = params.span_frames(frame_period)
    b = valid_frames.shape[0]
    pos = np.arange(total_frames)
    valid = pos[None, :] < valid_frames[:, None]
    starts = (rng.random((b, total_frames)) < params.mask_prob) & valid
    # minimum-coverage guarantee: force one random span where none was drawn
    for i in np.flatnonzero(~starts.any(axis=1)):
        starts[i, int(rng.integers(0, valid_frames[i]))] = True
    # union of spans via windowed running sum of start indicators
    c = np.cumsum(starts, axis=1)
    shifted = np.zeros_like(c)
    shifted[:, span:] = c[:, :-span]
    mask = (c - shifted) > 0
    mask &= valid  # spans clip at each item's valid length
    start_lists = [np.flatnonzero(starts[i]) for i in range(b)]
    return MaskSpec(mask, start_lists, span)


def apply_mask(frames: FeatureFrames, spec: MaskSpec, noise_std: float,
               rng: np.random.Generator | None = None, seed: int = 0) -> FeatureFrames:
    """Replace masked positions with N(0, noise_std^2) noise.

    Unmasked positions pass through bit-identical and keep their gradient
    path; noise is a constant, so masked positions carry no gradient.
    """
    if frames.values.shape[:2] != spec.mask.shape:
        raise ValueError("mask shape does not match frames")
    if not spec.mask.any():
        return frames
    if rng is None:
        rng = np.random.default_rng(seed)
    dtype = frames.values.dtype
    m = spec.mask[:, :, None].astype(dtype)
    noise = (noise_std * rng.standard_normal(frames.values.shape)).astype(dtype)
    values = ag.add(ag.mul(frames.values, 1.0 - m), Tensor(noise * m))
    return FeatureFrames(values, frames.frame_period, frames.valid_frames.copy(),
                         frames.source)
