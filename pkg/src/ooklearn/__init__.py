"""Learned on-off-keying codebooks and decoders for dimmable visible-light links."""

__version__ = "0.1.0"

from .binarize import (BinarizerSpec, deterministic_binarize, solve_offset,
                       stochastic_binarize, ste_backward)
from .channel import (ChannelSpec, KINGBRIGHT_LED, LINEAR_LED, LedModel,
                      isi_geometry, led_forward, make_isi_channel, transmit)
from .codebook import (Codebook, audit, extract_codebook, flip_complement,
                       load_codebook, load_fixture, save_codebook)
from .config import EvalConfig, TrainConfig
from .nn import Adam, DenseNet, LayerSpec, ModelParams, build_model
from .training import (DualState, TrainResult, Trainer, cross_entropy_cost,
                       dimming_constraint, lagrangian, train)
from .baseline import CsiModel, SearchConfig, ml_decode, perturb_csi, search_codebook
from .evaluate import (DnnSystem, EvalReport, MlSystem, compare, measure_ser,
                       q_function, snr_to_sigma)
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Adam", "BinarizerSpec", "ChannelSpec", "Codebook", "CsiModel",
    "DenseNet", "DnnSystem", "DualState", "EvalConfig", "EvalReport",
    "KINGBRIGHT_LED", "LINEAR_LED", "LayerSpec", "LedModel", "MlSystem",
    "ModelParams", "SearchConfig", "TrainConfig", "TrainResult", "Trainer",
    "audit", "build_model", "compare", "cross_entropy_cost",
    "deterministic_binarize", "dimming_constraint", "extract_codebook",
    "flip_complement", "isi_geometry", "lagrangian", "led_forward",
    "load_checkpoint", "load_codebook", "load_fixture", "make_isi_channel",
    "measure_ser", "ml_decode", "perturb_csi", "q_function", "save_checkpoint",
    "save_codebook", "search_codebook", "snr_to_sigma", "solve_offset",
    "ste_backward", "stochastic_binarize", "train", "transmit",
]
