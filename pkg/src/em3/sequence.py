"""Candidate-aware attention pooling over behavior sequences, and LoRA switching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import DegenerateInputError, DimensionError, StateError
from .fqformer import MultimodalEmbedding
from .nn import Linear, LoraLinear, Module, lora_forward

__all__ = [
    "BehaviorSequence",
    "AttentionPoolParams",
    "attention_pool",
    "lora_forward",
    "freeze_and_attach_lora",
    "LoraLinear",
]


@dataclass
class BehaviorSequence:
    item_ids: list[int]
    n_max: int

    def __post_init__(self):
        if not 1 <= len(self.item_ids) <= self.n_max:
            raise DegenerateInputError(f"sequence length {len(self.item_ids)} outside [1, {self.n_max}]")

    @property
    def N(self) -> int:
        return len(self.item_ids)


class AttentionPoolParams(Module):
    """Score ``a(c, s) = <c Wc, s Ws> / sqrt(dim)``; both projections square and bias-free."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.dim = dim
        self.cand_proj = Linear(dim, dim, rng, bias=False)
        self.seq_proj = Linear(dim, dim, rng, bias=False)

    def scores(self, cand: Tensor, seq: Tensor) -> Tensor:
        """``cand`` (B, D), ``seq`` (B, N, D) -> (B, N)."""
        qc = ad.reshape(self.cand_proj(cand), (cand.shape[0], 1, self.dim))
        ks = self.seq_proj(seq)
        return ad.sum(ks * qc, axis=-1) * (1.0 / np.sqrt(self.dim))

    def pool(self, cand: Tensor, seq: Tensor, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        """Batched pooling; returns (u (B, D), weights (B, N)).  ``mask`` True marks real positions."""
        if seq.ndim != 3 or cand.ndim != 2 or seq.shape[0] != cand.shape[0] or seq.shape[2] != cand.shape[1]:
            raise DimensionError(f"attention pool: candidate {cand.shape} vs sequence {seq.shape}")
        if seq.shape[1] == 0:
            raise DegenerateInputError("attention pool over an empty sequence")
        w = ad.softmax(self.scores(cand, seq), axis=-1, mask=mask)
        b, n, _ = seq.shape
        u = ad.reshape(ad.matmul(ad.reshape(w, (b, 1, n)), seq), (b, self.dim))
        return u, w


def attention_pool(candidate: MultimodalEmbedding, sequence: list[MultimodalEmbedding],
                   params: AttentionPoolParams) -> Tensor:
    """User content interest for one candidate: softmax-weighted sum of sequence embeddings."""
    if not sequence:
        raise DegenerateInputError("attention pool over an empty sequence")
    dim = candidate.tokens.size
    if any(s.tokens.size != dim for s in sequence) or dim != params.dim:
        raise DimensionError("candidate and sequence embeddings must share the pooling dimension")
    cand = ad.reshape(candidate.flattened, (1, dim))
    seq = ad.reshape(ad.concat([s.flattened for s in sequence]), (1, len(sequence), dim))
    u, _ = params.pool(cand, seq)
    return ad.reshape(u, (dim,))


def _resolve(root: Module, path: str) -> tuple[Module, str]:
    parts = path.split(".")
    parent = root
    for p in parts[:-1]:
        parent = parent._modules[p]
    return parent, parts[-1]


def freeze_and_attach_lora(params: Module, r: int, targets: list[str], rng: np.random.Generator) -> Module:
    """Wrap each ``Linear`` at a dotted path in ``targets`` with a fresh adapter, in place.

    Base weights become frozen; only the adapters' ``A``/``B`` stay trainable.
    """
    if getattr(params, "_lora_attached", False):
        raise StateError("LoRA adapters are already attached to these parameters")
    for path in targets:
        parent, name = _resolve(params, path)
        layer = parent._modules.get(name)
        if isinstance(layer, LoraLinear):
            raise StateError(f"{path} is already LoRA-wrapped")
        if not isinstance(layer, Linear):
            raise StateError(f"{path} is not a Linear layer")
        setattr(parent, name, LoraLinear(layer, r, rng))
    object.__setattr__(params, "_lora_attached", True)
    return params
