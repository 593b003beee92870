"""Acoustic novelty detection with a variational recurrent sequence model."""

from .audio import FrameSequence, WavFile, frame_signal, mixdown, read_wav, write_wav
from .detector import Threshold, compute_threshold, detect_frames, group_events
from .evaluate import Metrics, frame_prf, robustness_suite, sweep_threshold
from .nn import GaussianParams, RngStream
from .trainer import AdamState, TrainConfig, adam_step, fit, train_epoch
from .vrnn import (VrnnConfig, VrnnParams, elbo_sequence, generate,
                   load_checkpoint, save_checkpoint, score_frames, vrnn_step)

__all__ = [
    "FrameSequence", "WavFile", "frame_signal", "mixdown", "read_wav",
    "write_wav", "Threshold", "compute_threshold", "detect_frames",
    "group_events", "Metrics", "frame_prf", "robustness_suite",
    "sweep_threshold", "GaussianParams", "RngStream", "AdamState",
    "TrainConfig", "adam_step", "fit", "train_epoch", "VrnnConfig",
    "VrnnParams", "elbo_sequence", "generate", "load_checkpoint",
    "save_checkpoint", "score_frames", "vrnn_step",
]

__version__ = "0.1.0"
