"""Quantizer health instruments.

Measures what the frozen quantizer actually does to a corpus: how much
of the codebook gets used, how concentrated the label distribution is,
and how fragile labels are to small feature perturbations. Also runs the
raw-waveform and log-Mel featurizers side by side through matched
quantizers on the same audio. These are descriptive instruments; only
their internal arithmetic has fixed expected values.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .autograd import Tensor
from .features import FeatureFrames
from .quantizer import RandomQuantizer, init_quantizer, label_histogram, quantize


@dataclass
class CodebookStats:
    utilization: float   # fraction of codes with nonzero count
    entropy_bits: float  # Shannon entropy of the label distribution
    perplexity: float    # 2 ** entropy_bits


@dataclass
class DiagnosticsReport:
    source: str
    feature_dim: int
    num_frames: int
    stats: CodebookStats
    stability: dict       # eps -> fraction of labels unchanged
    quantizer_seed: int
    standardize: bool
    config_hash: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def codebook_stats(hist: np.ndarray) -> CodebookStats:
    """Utilization / entropy / perplexity of a per-code count vector."""
    hist = np.asarray(hist, dtype=np.float64)
    total = hist.sum()
    if total <= 0:
        raise ValueError("all-zero histogram")
    p = hist / total
    nz = p[p > 0]
    entropy = float(-(nz * np.log2(nz)).sum())  # 0 log 0 = 0
    return CodebookStats(
        utilization=float(np.mean(hist > 0)),
        entropy_bits=entropy,
        perplexity=float(2.0 ** entropy),
    )


def label_stability(frames: FeatureFrames, q: RandomQuantizer, eps: float,
                    trials: int = 4, seed: int = 0, standardize: bool = True) -> float:
    """Mean fraction of valid-frame labels unchanged under N(0, eps^2) feature noise."""
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    base = quantize(frames, q, standardize).valid_labels()
    if eps == 0.0:
        return 1.0
    rng = np.random.default_rng(seed)
    values = frames.values.data
    agree = []
    for _ in range(trials):
        noisy = FeatureFrames(
            Tensor(values + eps * rng.standard_normal(values.shape)),
            frames.frame_period, frames.valid_frames, frames.source)
        labels = quantize(noisy, q, standardize).valid_labels()
        agree.append(float(np.mean(labels == base)))
    return float(np.mean(agree))


STABILITY_EPS_GRID = (0.0, 0.01, 0.05, 0.1, 0.5)


def diagnose_features(frames: FeatureFrames, q: RandomQuantizer,
                      standardize: bool = True, seed: int = 0,
                      eps_grid=STABILITY_EPS_GRID) -> DiagnosticsReport:
    labels = quantize(frames, q, standardize)
    stats = codebook_stats(label_histogram(labels, q.vocab))
    stability = {
        str(eps): label_stability(frames, q, eps, seed=seed, standardize=standardize)
        for eps in eps_grid
    }
    return DiagnosticsReport(
        source=frames.source,
        feature_dim=frames.dim,
        num_frames=int(frames.valid_frames.sum()),
        stats=stats,
        stability=stability,
        quantizer_seed=q.seed,
        standardize=standardize,
    )


def featurizer_target_report(batch, conv_featurizer, logmel_featurizer,
                             quantizer_seed: int, code_dim: int = 16,
                             vocab: int = 8192, normalize: bool = True,
                             standardize: bool = True) -> dict:
    """Side-by-side label quality for the two front ends on the same audio.

    Each featurizer gets a quantizer of matching input width drawn from the
    same seed. Output is descriptive: a report per featurizer plus deltas.
    """
    reports = {}
    for featurizer in (conv_featurizer, logmel_featurizer):
        frames = featurizer.featurize(batch)
        q = init_quantizer(quantizer_seed, frames.dim, code_dim, vocab, normalize)
        reports[frames.source] = diagnose_features(frames, q, standardize,
                                                   seed=quantizer_seed)
    conv_r, mel_r = reports["conv"], reports["logmel"]
    return {
        "conv": conv_r.to_dict(),
        "logmel": mel_r.to_dict(),
        "delta": {
            "utilization": conv_r.stats.utilization - mel_r.stats.utilization,
            "entropy_bits": conv_r.stats.entropy_bits - mel_r.stats.entropy_bits,
            "perplexity": conv_r.stats.perplexity - mel_r.stats.perplexity,
        },
    }


def format_report(report: dict) -> str:
    """Human-readable rendering of a featurizer comparison report."""
    lines = ["featurizer target comparison", "=" * 28]
    for name in ("conv", "logmel"):
        r = report[name]
        s = r["stats"]
        lines.append(
            f"{name:>7}: dim={r['feature_dim']:<4d} frames={r['num_frames']:<7d} "
            f"util={s['utilization']:.4f} entropy={s['entropy_bits']:.3f} bits "
            f"pplx={s['perplexity']:.1f}")
        stab = "  ".join(f"eps={k}:{v:.3f}" for k, v in r["stability"].items())
        lines.append(f"         stability: {stab}")
    d = report["delta"]
    lines.append(
        f"  delta: util={d['utilization']:+.4f} entropy={d['entropy_bits']:+.3f} "
        f"pplx={d['perplexity']:+.1f} (conv minus logmel)")
    return "\n".join(lines)


def write_report(path, report: dict) -> None:
    """Structured text plus machine-readable JSON next to it."""
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_report(report) + "\n")
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(report, indent=2))
