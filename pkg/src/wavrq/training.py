"""Two-path pretraining loop.

Each step runs the clean features through the frozen quantizer to get
integer targets (path 1) and the masked features through the encoder to
get logits (path 2), then minimizes cross-entropy at masked valid
positions with AdamW under a linear warmup schedule. All per-step
randomness (mixing, masks, noise, dropout) is drawn from generators
seeded by (section seed, purpose, step), so a run is a pure function of
its config and resuming from a checkpoint is bit-stable.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .audio import AudioBatch, make_batches, mix_utterances
from .autograd import Tensor
from .config import RunConfig, TrainConfig, canonical_json, config_from_dict, config_hash
from .encoder import Encoder
from .features import ConvFeaturizer, FeatureFrames, LogMelFeaturizer
from .masking import MaskSpec, apply_mask, make_masks
from .quantizer import LabelFrames, init_quantizer, label_histogram, quantize

CHECKPOINT_VERSION = 1

_PURPOSE = {"mix": 1, "mask": 2, "noise": 3, "dropout": 4}


def step_rng(seed: int, purpose: str, step: int) -> np.random.Generator:
    """Stateless per-step stream; reproducible regardless of execution history."""
    return np.random.default_rng(np.random.SeedSequence((seed, _PURPOSE[purpose], step)))


class TrainingDiverged(RuntimeError):
    pass


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear 0 -> peak over warmup, then linear decay to zero (or constant)."""
    if step < 0 or step > cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if step <= cfg.warmup_steps:
        if cfg.warmup_steps == 0:
            return cfg.peak_lr
        return cfg.peak_lr * step / cfg.warmup_steps
    if cfg.decay == "constant":
        return cfg.peak_lr
    span = cfg.total_steps - cfg.warmup_steps
    return cfg.peak_lr * (cfg.total_steps - step) / span


def masked_ce_loss(logits: Tensor, labels: LabelFrames, spec: MaskSpec):
    """Mean cross-entropy over masked valid positions; also top-1 accuracy there.

    Positions outside the mask (or past an item's valid frames) contribute
    nothing to either number.
    """
    select = spec.mask & labels.valid_mask()
    if not select.any():
        raise ValueError("no masked valid positions in batch")
    b_idx, t_idx = np.nonzero(select)
    target = labels.labels[b_idx, t_idx].astype(np.int64)
    rows = ag.select_positions(logits, b_idx, t_idx)       # (N, V)
    logp = ag.log_softmax(rows, axis=-1)
    loss = ag.mul(ag.tmean(ag.take_labels(logp, target)), -1.0)
    acc = float(np.mean(np.argmax(rows.data, axis=-1) == target))
    return loss, acc


class AdamW:
    """Decoupled weight decay applied uniformly to every parameter group."""

    def __init__(self, params: dict, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def step(self, grads: dict, lr: float):
        cfg = self.cfg
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.data *= 1.0 - lr * cfg.weight_decay
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            p.data -= (lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)).astype(p.data.dtype)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total


@dataclass
class TrainState:
    step: int
    params: dict       # name -> Tensor, shared with the live modules
    optimizer: AdamW
    seed: int


class PretrainTask:
    """Wires featurizer, quantizer, masking, and encoder from one RunConfig."""

    def __init__(self, cfg: RunConfig):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.float32 if cfg.dtype == "float32" else np.float64
        model_rng = np.random.default_rng(np.random.SeedSequence((cfg.train.seed, 0)))
        if cfg.featurizer == "conv":
            self.featurizer = ConvFeaturizer(cfg.conv, model_rng, self.dtype)
        else:
            self.featurizer = LogMelFeaturizer(cfg.logmel, self.dtype)
        self.encoder = Encoder(cfg.encoder, model_rng, self.dtype)
        self.quantizer = init_quantizer(
            cfg.quantizer.seed, cfg.feature_dim(), cfg.quantizer.code_dim,
            cfg.quantizer.vocab, cfg.quantizer.normalize)

    def params(self) -> dict:
        out = dict(self.featurizer.params("featurizer."))
        out.update(self.encoder.params("encoder."))
        return out

    def init_state(self) -> TrainState:
        params = self.params()
        return TrainState(0, params, AdamW(params, self.cfg.train), self.cfg.train.seed)

    # -- one optimization step ------------------------------------------------

    def forward(self, batch: AudioBatch, step: int, train: bool = True):
        """Both paths up to the loss; returns (loss Tensor, metrics, parts)."""
        cfg = self.cfg
        if cfg.mix.utterance_mix_prob > 0 or cfg.mix.noise_mix_prob > 0:
            batch = mix_utterances(batch, cfg.mix, step_rng(cfg.mix.seed, "mix", step))
        frames = self.featurizer.featurize(batch)
        labels = quantize(frames, self.quantizer, cfg.quantizer.standardize)
        spec = make_masks(frames.valid_frames, frames.total_frames, cfg.mask,
                          frames.frame_period, step_rng(cfg.mask.seed, "mask", step))
        masked = apply_mask(frames, spec, cfg.mask.noise_std,
                            step_rng(cfg.mask.seed, "noise", step))
        drop_rng = step_rng(cfg.train.seed, "dropout", step) if train else None
        out = self.encoder.encode(masked, drop_rng)
        loss, acc = masked_ce_loss(out.logits, labels, spec)
        return loss, acc, labels

    def train_step(self, state: TrainState, batch: AudioBatch) -> dict:
        """Advance one step in place; raises TrainingDiverged on non-finite loss
        without touching the parameters."""
        cfg = self.cfg
        loss, acc, labels = self.forward(batch, state.step, train=True)
        loss_value = float(loss.data)
        if not np.isfinite(loss_value):
            raise TrainingDiverged(f"non-finite loss at step {state.step}")
        for p in state.params.values():
            p.zero_grad()
        loss.backward()
        grads = {k: p.grad for k, p in state.params.items()}
        grad_norm = clip_gradients(grads, cfg.train.grad_clip_norm)
        lr = lr_schedule(state.step, cfg.train)
        state.optimizer.step(grads, lr)
        state.step += 1
        return {
            "step": state.step,
            "loss": loss_value,
            "masked_acc": acc,
            "lr": lr,
            "grad_norm": grad_norm,
            "labels": labels,
        }


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, task: PretrainTask, state: TrainState) -> None:
    arrays = {
        "meta/version": np.int64(CHECKPOINT_VERSION),
        "meta/step": np.int64(state.step),
        "meta/opt_t": np.int64(state.optimizer.t),
        "meta/config": np.frombuffer(canonical_json(task.cfg).encode(), dtype=np.uint8),
        "quantizer/projection": task.quantizer.projection,
        "quantizer/codebook": task.quantizer.codebook,
    }
    for k, p in state.params.items():
        arrays[f"param/{k}"] = p.data
        arrays[f"opt_m/{k}"] = state.optimizer.m[k]
        arrays[f"opt_v/{k}"] = state.optimizer.v[k]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> tuple:
    """Rebuild (task, state) bit-exactly from a checkpoint file."""
    with np.load(path) as z:
        if int(z["meta/version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version")
        cfg = config_from_dict(json.loads(bytes(z["meta/config"]).decode()))
        task = PretrainTask(cfg)
        state = task.init_state()
        state.step = int(z["meta/step"])
        state.optimizer.t = int(z["meta/opt_t"])
        for k, p in state.params.items():
            p.data = z[f"param/{k}"].copy()
            state.optimizer.m[k] = z[f"opt_m/{k}"].copy()
            state.optimizer.v[k] = z[f"opt_v/{k}"].copy()
        if not np.array_equal(z["quantizer/projection"], task.quantizer.projection) or \
           not np.array_equal(z["quantizer/codebook"], task.quantizer.codebook):
            raise ValueError(f"{path}: stored quantizer does not match its seed")
    return task, state


# -- full loop -------------------------------------------------------------------


def pretrain(cfg: RunConfig, corpus: list, out_dir, resume=None,
             total_steps: int | None = None) -> tuple:
    """Run the loop for cfg.train.total_steps (or an explicit cap), writing
    checkpoints and a line-delimited metrics log. Returns (task, state)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        task, state = load_checkpoint(resume)
        cfg = task.cfg
    else:
        task = PretrainTask(cfg)
        state = task.init_state()
    t_cfg = cfg.train
    end = total_steps if total_steps is not None else t_cfg.total_steps
    batches_per_epoch = max(1, len(corpus) // t_cfg.batch_size)
    metrics_path = out_dir / "metrics.jsonl"
    run_hash = config_hash(cfg)
    epoch_batches = None
    epoch = -1
    t0 = time.time()
    with open(metrics_path, "a") as log:
        while state.step < end:
            step = state.step
            e, idx = divmod(step, batches_per_epoch)
            if e != epoch:
                epoch = e
                # plain integer arithmetic: python's str hash is process-randomized
                epoch_seed = (t_cfg.seed * 1000003 + e) % 2 ** 31
                epoch_batches = make_batches(corpus, t_cfg.batch_size, seed=epoch_seed,
                                             target_len=cfg.audio.target_len)
            try:
                metrics = task.train_step(state, epoch_batches[idx])
            except TrainingDiverged:
                record = {"step": state.step, "event": "divergence", "config": run_hash}
                log.write(json.dumps(record) + "\n")
                raise
            if state.step % t_cfg.log_every == 0 or state.step == end:
                labels = metrics.pop("labels")
                hist = label_histogram(labels, cfg.quantizer.vocab)
                metrics["codebook_utilization"] = float(np.mean(hist > 0))
                metrics["wall_time"] = time.time() - t0
                metrics["config"] = run_hash
                log.write(json.dumps(metrics) + "\n")
                log.flush()
            if state.step % t_cfg.checkpoint_every == 0 or state.step == end:
                save_checkpoint(out_dir / f"step{state.step:08d}.npz", task, state)
    return task, state
