"""Masked speech pretraining on raw waveforms with a frozen random-projection quantizer.

The pipeline: fixed-length 16 kHz batches (with utterance mixing) are
featurized either by a trainable conv stack or a log-Mel front end; a
frozen random projection + codebook turns the clean frames into integer
targets, while a span-masked copy goes through a transformer encoder
with gated relative position bias; training minimizes cross-entropy at
the masked positions. A linear probe and a diagnostics suite measure
what the frozen quantizer and the learned representations are doing.
"""

from .audio import (
    AudioBatch,
    MixConfig,
    Waveform,
    load_wav,
    make_batches,
    mix_utterances,
    save_wav,
    trim_pad,
)
from .config import RunConfig, config_hash, load_config
from .diagnostics import codebook_stats, featurizer_target_report, label_stability
from .encoder import Encoder, EncoderConfig, EncoderOutput, count_params
from .features import (
    ConvFeaturizer,
    ConvFeaturizerConfig,
    FeatureFrames,
    LogMelConfig,
    LogMelFeaturizer,
    frame_validity,
)
from .masking import MaskParams, MaskSpec, apply_mask, make_masks
from .probe import probe_train, weighted_layer_sum
from .quantizer import (
    LabelFrames,
    RandomQuantizer,
    init_quantizer,
    label_histogram,
    quantize,
)
from .training import (
    AdamW,
    PretrainTask,
    TrainConfig,
    TrainingDiverged,
    TrainState,
    load_checkpoint,
    lr_schedule,
    masked_ce_loss,
    pretrain,
    save_checkpoint,
)

__version__ = "0.1.0"
