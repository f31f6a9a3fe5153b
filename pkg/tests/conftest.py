import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for gradcheck helpers

from wavrq.config import config_from_dict


def tiny_config(**over):
    """Small conv-path config used across the suite; sections merge over defaults."""
    base = {
        "featurizer": "conv",
        "dtype": "float32",
        "audio": {"target_len": 8000},
        "mix": {"utterance_mix_prob": 0.0},
        "conv": {"layers": [[32, 10, 5], [32, 3, 2], [32, 3, 2], [32, 2, 2]]},
        "quantizer": {"code_dim": 8, "vocab": 32},
        "mask": {"mask_time": 0.2},
        "encoder": {"layers": 2, "hidden": 32, "heads": 2, "ffn_dim": 64,
                     "input_dim": 32, "vocab": 32, "rel_pos_buckets": 32,
                     "max_rel_distance": 64, "dropout": 0.0},
        "train": {"warmup_steps": 10, "total_steps": 100, "peak_lr": 1e-3,
                   "batch_size": 4, "checkpoint_every": 50, "log_every": 10},
        "paths": {},
    }
    for key, val in over.items():
        if isinstance(val, dict):
            base.setdefault(key, {}).update(val)
        else:
            base[key] = val
    return config_from_dict(base)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
