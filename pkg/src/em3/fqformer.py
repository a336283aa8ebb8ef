"""Query-based transformer fusion of a variable number of modality tokens.

Shared trainable queries are prepended to the modality tokens, the sequence
runs through pre-norm self-attention blocks, and the first ``Q`` outputs form
the fused embedding.  No positional encoding is used anywhere, so the result
depends on the token *set* only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .encoders import ModalityToken
from .exceptions import ConfigError, DegenerateInputError, DimensionError
from .nn import LayerNorm, Linear, Module, ModuleList

STANDARD = "standard"
MASKED = "masked"


@dataclass
class MultimodalEmbedding:
    tokens: Tensor  # (Q, d)

    @property
    def flattened(self) -> Tensor:
        return ad.reshape(self.tokens, (self.tokens.size,))


class TransformerBlock(Module):
    """Pre-norm multi-head self-attention followed by a GELU feed-forward, both residual."""

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator, ffn_mult: int = 4):
        super().__init__()
        if d % n_heads:
            raise ConfigError(f"token dim {d} is not divisible by {n_heads} heads")
        self.d, self.n_heads = d, n_heads
        self.ln1 = LayerNorm(d)
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)
        self.ln2 = LayerNorm(d)
        self.ff1 = Linear(d, ffn_mult * d, rng)
        self.ff2 = Linear(ffn_mult * d, d, rng)

    def _heads(self, x: Tensor, u: int, t: int) -> Tensor:
        dh = self.d // self.n_heads
        return ad.transpose(ad.reshape(x, (u, t, self.n_heads, dh)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, key_mask: np.ndarray, attn_out: list | None = None) -> Tensor:
        u, t, d = x.shape
        h = self.ln1(x)
        q = self._heads(self.wq(h), u, t)
        k = self._heads(self.wk(h), u, t)
        v = self._heads(self.wv(h), u, t)
        scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(d // self.n_heads))
        attn = ad.softmax(scores, axis=-1, mask=key_mask[:, None, None, :])
        if attn_out is not None:
            attn_out.append(attn.data)
        o = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (u, t, d))
        x = x + self.wo(o)
        return x + self.ff2(ad.gelu(self.ff1(self.ln2(x))))


class FqFormerParams(Module):
    """Shared queries, ``L`` transformer blocks and a final layer norm."""

    def __init__(self, d: int = 32, n_queries: int = 2, n_layers: int = 1, n_heads: int = 4,
                 rng: np.random.Generator | None = None, mode: str = STANDARD,
                 ffn_mult: int = 4, query_std: float = 0.02):
        super().__init__()
        if n_queries < 1:
            raise ConfigError(f"need at least one query, got {n_queries}")
        if mode not in (STANDARD, MASKED):
            raise ConfigError(f"unknown fusion mode {mode!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d, self.n_queries, self.mode = d, n_queries, mode
        self.queries = Parameter(rng.normal(0.0, query_std, size=(n_queries, d)))
        self.layers = ModuleList(TransformerBlock(d, n_heads, rng, ffn_mult) for _ in range(n_layers))
        self.final_ln = LayerNorm(d)

    @property
    def out_dim(self) -> int:
        return self.n_queries * self.d

    def fuse_batch(self, tokens: Tensor, token_mask: np.ndarray, mode: str | None = None,
                   attn_out: list | None = None) -> Tensor:
        """Fuse a padded batch: ``tokens`` (U, T, d), ``token_mask`` (U, T) True where real.

        Returns (U, Q, d).
        """
        mode = mode or self.mode
        u, t, d = tokens.shape
        if d != self.d:
            raise DimensionError(f"token dim {d} != fusion dim {self.d}")
        token_mask = np.asarray(token_mask, dtype=bool).reshape(u, t)
        nq = self.n_queries
        x = ad.concat([ad.broadcast_to(self.queries, (u, nq, d)), tokens], axis=1)
        mask = np.concatenate([np.full((u, nq), mode == STANDARD), token_mask], axis=1)
        if mode == MASKED and not token_mask.any(axis=1).all():
            raise DegenerateInputError("masked fusion needs at least one modality token per item")
        for block in self.layers:
            x = block(x, mask, attn_out)
        return self.final_ln(ad.slice(x, 0, nq, axis=1))


def _canonical_order(vectors: np.ndarray) -> np.ndarray:
    # lexicographic order of token values; makes fusion of a token set bitwise order-free
    if len(vectors) <= 1:
        return np.arange(len(vectors))
    return np.lexsort(vectors.T[::-1])


def fuse(tokens: list[ModalityToken], params: FqFormerParams, mode: str | None = None) -> MultimodalEmbedding:
    for tok in tokens:
        if tok.vector.shape != (params.d,):
            raise DimensionError(f"modality token has shape {tok.vector.shape}, expected ({params.d},)")
    if tokens:
        order = _canonical_order(np.stack([t.vector.data for t in tokens]))
        seq = ad.concat([ad.reshape(tokens[i].vector, (1, 1, params.d)) for i in order], axis=1)
    else:
        seq = ad.Tensor(np.zeros((1, 0, params.d)))
    out = params.fuse_batch(seq, np.ones((1, len(tokens)), dtype=bool), mode=mode)
    return MultimodalEmbedding(ad.reshape(out, (params.n_queries, params.d)))


def fuse_masked(tokens: list[ModalityToken], params: FqFormerParams) -> MultimodalEmbedding:
    if not tokens:
        raise DegenerateInputError("masked fusion: no modality tokens, so no value vectors to pool")
    return fuse(tokens, params, mode=MASKED)
