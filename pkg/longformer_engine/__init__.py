"""
Longformer Engine Package

Sliding-window ("band") self-attention with optional dilation and task-specific
global tokens, built on a small numpy autodiff core. Includes three band kernels
(loop, chunk, dense), character LM / MLM / encoder-decoder models, staged training,
sliding-window evaluation and memory/time benchmarking.

Version: 1.0.0
"""

from .attention import encoder_block, influence_width, longformer_self_attention
from .band_kernels import band_attention, band_pv, band_qk, band_softmax, band_to_dense, dense_to_band
from .band_pattern import PatternConfig, nonzero_count, receptive_field, render_pattern
from .bench import count_memory, time_scaling
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, load_json
from .corpus import load_corpus
from .embed_init import apply_freeze, copy_extend_positions, extend_model_positions
from .evaluation import EvalProtocol, eval_bpc_sliding
from .model import beam_search, build_model, charlm_forward, greedy_decode, led_forward, mlm_forward
from .schedule import make_phase_schedule
from .tensor import Tensor, backward, grad_check, no_grad
from .training import run_grad_check, run_staged_training, train_led, train_phase

__version__ = "1.0.0"

__all__ = [
    "PatternConfig",
    "nonzero_count",
    "receptive_field",
    "render_pattern",
    "band_qk",
    "band_softmax",
    "band_pv",
    "band_attention",
    "band_to_dense",
    "dense_to_band",
    "longformer_self_attention",
    "encoder_block",
    "influence_width",
    "ModelConfig",
    "load_json",
    "build_model",
    "charlm_forward",
    "mlm_forward",
    "led_forward",
    "greedy_decode",
    "beam_search",
    "copy_extend_positions",
    "extend_model_positions",
    "apply_freeze",
    "make_phase_schedule",
    "train_phase",
    "run_staged_training",
    "train_led",
    "run_grad_check",
    "EvalProtocol",
    "eval_bpc_sliding",
    "load_corpus",
    "save_checkpoint",
    "load_checkpoint",
    "count_memory",
    "time_scaling",
    "Tensor",
    "backward",
    "no_grad",
    "grad_check",
]
