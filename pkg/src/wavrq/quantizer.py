"""Frozen random-projection quantizer.

Frames are projected through a fixed random matrix and each projected
vector is assigned the index of its nearest codebook row. Projection and
codebook are drawn once from a seed and never trained; the labels they
produce are the pretraining targets. No gradient flows through any of
this: it operates on raw arrays, never on the autograd graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureFrames

INVALID_LABEL = -1


@dataclass
class RandomQuantizer:
    projection: np.ndarray  # (D_in, d), frozen
    codebook: np.ndarray    # (V, d), frozen, unit rows when normalize
    seed: int
    normalize: bool = True

    @property
    def input_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def code_dim(self) -> int:
        return self.projection.shape[1]

    @property
    def vocab(self) -> int:
        return self.codebook.shape[0]

    def num_params(self) -> int:
        return self.projection.size + self.codebook.size

    def fingerprint(self) -> bytes:
        """Byte-exact identity, for frozenness checks."""
        return self.projection.tobytes() + self.codebook.tobytes()


@dataclass
class LabelFrames:
    labels: np.ndarray        # (B, T) int32, INVALID_LABEL past valid_frames
    valid_frames: np.ndarray  # (B,) int

    def valid_mask(self) -> np.ndarray:
        t = np.arange(self.labels.shape[1])
        return t[None, :] < self.valid_frames[:, None]

    def valid_labels(self) -> np.ndarray:
        return self.labels[self.valid_mask()]


def init_quantizer(seed: int, d_in: int = 512, d: int = 16, vocab: int = 8192,
                   normalize: bool = True) -> RandomQuantizer:
    """Draw the frozen projection (Xavier-uniform) and codebook (unit-normalized
    standard normal rows). Same seed, same bits."""
    if d_in <= 0 or d <= 0 or vocab <= 0:
        raise ValueError("quantizer dims must be positive")
    rng = np.random.default_rng(seed)
    limit = np.sqrt(6.0 / (d_in + d))
    projection = rng.uniform(-limit, limit, size=(d_in, d))
    codebook = rng.standard_normal((vocab, d))
    if normalize:
        norms = np.linalg.norm(codebook, axis=1, keepdims=True)
        codebook = codebook / np.maximum(norms, 1e-12)
    return RandomQuantizer(projection, codebook, seed, normalize)


def standardize_frames(values: np.ndarray, valid: np.ndarray, eps: float = 1e-8):
    """Per-dimension zero-mean unit-variance using the batch's valid frames only."""
    pool = values[valid]  # (N_valid, D)
    mu = pool.mean(axis=0)
    sd = pool.std(axis=0)
    return (values - mu) / np.maximum(sd, eps)


def quantize(frames: FeatureFrames, q: RandomQuantizer,
             standardize: bool = True) -> LabelFrames:
    """Assign every valid frame its nearest-code index.

    Distances are squared L2 against the codebook; when q.normalize the
    projected vectors are unit-normalized first, making labels invariant
    to positive rescaling of the input. Ties break to the lowest index.
    """
    values = np.asarray(frames.values.data, dtype=np.float64)
    if values.shape[-1] != q.input_dim:
        raise ValueError(
            f"feature dim {values.shape[-1]} does not match quantizer input dim {q.input_dim}")
    valid = frames.frame_mask()
    if standardize:
        values = standardize_frames(values, valid)
    proj = values @ q.projection  # (B, T, d)
    if q.normalize:
        norms = np.linalg.norm(proj, axis=-1, keepdims=True)
        proj = proj / np.maximum(norms, 1e-12)
    labels = nearest_code(proj.reshape(-1, q.code_dim), q.codebook)
    labels = labels.reshape(values.shape[:2]).astype(np.int32)
    labels[~valid] = INVALID_LABEL
    return LabelFrames(labels, frames.valid_frames.copy())


def nearest_code(vectors: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """argmin_v ||x - c_v||^2 per row; first (lowest) index wins ties."""
    # ||x||^2 is constant per row, so compare ||c||^2 - 2 x.c
    d2 = np.sum(codebook ** 2, axis=1)[None, :] - 2.0 * (vectors @ codebook.T)
    return np.argmin(d2, axis=1)


def label_histogram(labels: LabelFrames, vocab: int) -> np.ndarray:
    """Counts over [0, vocab) of valid-frame labels."""
    flat = labels.valid_labels()
    if flat.size and (flat.min() < 0 or flat.max() >= vocab):
        raise ValueError("labels out of range for vocab")
    return np.bincount(flat, minlength=vocab).astype(np.int64)
