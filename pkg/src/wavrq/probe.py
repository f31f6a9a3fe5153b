"""Linear probing over a frozen encoder.

The probe trains two things only: a softmax-normalized weighting over
the (layers + 1) encoder states and a linear classifier on the pooled
weighted sum. Encoder and featurizer stay byte-identical: their states
are computed once, detached, and cached, so no gradient can reach them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .audio import AudioBatch, trim_pad
from .autograd import Tensor, parameter
from .config import ProbeConfig
from .encoder import EncoderOutput
from .training import PretrainTask


@dataclass
class ProbeResult:
    train_acc: float
    test_acc: float
    layer_weights: np.ndarray  # softmaxed, sums to 1
    num_classes: int


def weighted_layer_sum(out: EncoderOutput, weights: Tensor) -> Tensor:
    """Convex combination of layer states under softmax(weights)."""
    states = out.layer_states
    if weights.shape[0] != len(states):
        raise ValueError(
            f"need {len(states)} layer weights, got {weights.shape[0]}")
    w = ag.softmax(ag.reshape(weights, (1, -1)), axis=-1)
    total = None
    for i, s in enumerate(states):
        term = ag.mul(s, ag.reshape(ag.take_labels(w, np.array([i])), (1, 1, 1)))
        total = term if total is None else ag.add(total, term)
    return total


def _pool(states: list, valid_frames: np.ndarray, pooling: str) -> list:
    """Detach and pool each layer state over valid frames -> (B, hidden) arrays."""
    pooled = []
    for s in states:
        data = s.data
        if pooling == "mean":
            b = data.shape[0]
            out = np.stack([data[i, :valid_frames[i]].mean(axis=0) for i in range(b)])
        else:
            out = data[:, 0]
        pooled.append(out)
    return pooled


def _fixed_batch(waves: list, target_len: int) -> "AudioBatch":
    """Assemble a batch preserving clip order (labels stay aligned)."""
    items = np.zeros((len(waves), target_len), dtype=np.float32)
    valid = np.zeros(len(waves), dtype=np.int64)
    for i, w in enumerate(waves):
        fitted, vl = trim_pad(w, target_len, np.random.default_rng(i))
        items[i] = fitted.samples
        valid[i] = vl
    return AudioBatch(items, valid, np.zeros(len(waves), dtype=bool))


def encode_dataset(task: PretrainTask, waves: list, batch_size: int = 8):
    """Frozen forward passes over labeled clips -> per-layer pooled features."""
    layers = None
    for start in range(0, len(waves), batch_size):
        chunk = waves[start:start + batch_size]
        batch = _fixed_batch(chunk, task.cfg.audio.target_len)
        frames = task.featurizer.featurize(batch)
        out = task.encoder.encode(frames, rng=None)
        pooled = _pool(out.layer_states, frames.valid_frames, task.cfg.probe.pooling)
        if layers is None:
            layers = [[p] for p in pooled]
        else:
            for acc, p in zip(layers, pooled):
                acc.append(p)
    return [np.concatenate(chunks, axis=0) for chunks in layers]


def probe_train(task: PretrainTask, waves: list, labels: np.ndarray,
                cfg: ProbeConfig | None = None) -> ProbeResult:
    """Fit layer weights + linear head on cached frozen features.

    Plain full-batch Adam on softmax cross-entropy; reports train and
    held-out accuracy.
    """
    cfg = cfg or task.cfg.probe
    cfg.validate()
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= cfg.num_classes:
        raise ValueError(
            f"labels span [{labels.min()}, {labels.max()}] but probe.num_classes is "
            f"{cfg.num_classes}")
    layer_feats = encode_dataset(task, waves)  # (L+1) x (N, hidden) constants
    n = labels.shape[0]
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(n)
    n_test = max(1, int(round(cfg.test_fraction * n)))
    test_idx, train_idx = order[:n_test], order[n_test:]

    n_layers = len(layer_feats)
    hidden = layer_feats[0].shape[1]
    dtype = layer_feats[0].dtype
    stack = np.stack(layer_feats, axis=0)  # (L+1, N, hidden)
    lw = parameter(np.zeros(n_layers, dtype=dtype))
    w = parameter((0.01 * rng.standard_normal((hidden, cfg.num_classes))).astype(dtype))
    b = parameter(np.zeros(cfg.num_classes, dtype=dtype))
    params = [lw, w, b]
    m = [np.zeros_like(p.data) for p in params]
    v = [np.zeros_like(p.data) for p in params]

    def batch_logits(idx):
        wsm = ag.softmax(ag.reshape(lw, (1, -1)), axis=-1)  # (1, L+1)
        flat = ag.reshape(wsm, (n_layers, 1, 1))
        mixed = ag.tsum(ag.mul(Tensor(stack[:, idx]), flat), axis=0)  # (n, hidden)
        return ag.add(ag.matmul(mixed, w), b)

    def accuracy(idx):
        logits = batch_logits(idx).data
        return float(np.mean(np.argmax(logits, axis=1) == labels[idx]))

    for t in range(1, cfg.steps + 1):
        logits = batch_logits(train_idx)
        logp = ag.log_softmax(logits, axis=-1)
        loss = ag.mul(ag.tmean(ag.take_labels(logp, labels[train_idx])), -1.0)
        for p in params:
            p.zero_grad()
        loss.backward()
        for i, p in enumerate(params):
            g = p.grad
            m[i] = 0.9 * m[i] + 0.1 * g
            v[i] = 0.999 * v[i] + 0.001 * g * g
            mhat = m[i] / (1 - 0.9 ** t)
            vhat = v[i] / (1 - 0.999 ** t)
            p.data -= (cfg.lr * mhat / (np.sqrt(vhat) + 1e-8)).astype(p.data.dtype)

    softw = np.exp(lw.data - lw.data.max())
    softw /= softw.sum()
    return ProbeResult(accuracy(train_idx), accuracy(test_idx), softw, cfg.num_classes)
