"""Skeleton action recognition with DCT-based temporal encodings and a chronological loss.

Everything runs on a small float64 reverse-mode autodiff core in
:mod:`chrono_dce.tensor`.
"""

from .dct import DceConfig, basis, dce_encode, dct2, encode, idct2
from .losses import LossWeights, combined_loss, crl_loss, cross_entropy, naive_chron_loss
from .model import ModelConfig, RecognizerModel, init_model, load_checkpoint, save_checkpoint
from .skeleton import DEFAULT_GRAPH, Dataset, SkeletonSequence, load_dataset, save_dataset, synth_generate
from .training import FeatureConfig, TrainConfig, evaluate, prepare_inputs, train

__version__ = "0.1.0"
