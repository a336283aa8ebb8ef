"""Multimodal content fusion for click-through ranking, on a numpy autodiff engine."""

from .analysis import behavioral_similarity, material_similarity, top_k_neighbors
from .autodiff import Parameter, Tensor, no_grad
from .cache import OfflineFeatureCache, OnlineEmbeddingCache, build_offline_cache
from .checkpoint import load_checkpoint, save_checkpoint
from .cic import CicConfig, cic_loss, combine_loss
from .data import SynthConfig, generate, load, save
from .encoders import RawItemContent, StubEncoder, stub_encode
from .estimator import EM3Ranker
from .experiment import ExperimentConfig, RunReport, run_experiment, run_suite
from .fqformer import FqFormerParams, fuse
from .metrics import auc
from .model import EM3Model, ModelConfig
from .sequence import attention_pool, freeze_and_attach_lora
from .training import Trainer, TrainConfig

__version__ = "0.1.0"
