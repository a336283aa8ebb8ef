"""Content-ID contrastive alignment with in-batch sampled negatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ConfigError, DimensionError
from .fqformer import MultimodalEmbedding
from .nn import Linear, Module


@dataclass(frozen=True)
class CicConfig:
    tau: float = 0.1
    alpha: float = 0.1
    n_negatives: int | None = None  # None -> B - 1

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"CIC temperature must be positive, got {self.tau}")
        if self.alpha < 0:
            raise ConfigError(f"CIC weight must be non-negative, got {self.alpha}")
        if self.n_negatives is not None and self.n_negatives < 0:
            raise ConfigError(f"negative count must be >= 0, got {self.n_negatives}")

    def negatives_for(self, batch_size: int) -> int:
        h = batch_size - 1 if self.n_negatives is None else self.n_negatives
        if h > batch_size - 1:
            raise ConfigError(f"H={h} negatives need a batch of at least {h + 1}, got {batch_size}")
        return h


@dataclass
class IdBundle:
    item_id_embedding: Tensor
    category_id_embedding: Tensor

    @property
    def concatenated(self) -> Tensor:
        return ad.concat([self.item_id_embedding, self.category_id_embedding], axis=-1)


class CicProjection(Module):
    """Bias-free linear maps of content and ID bundles into one shared space."""

    def __init__(self, content_dim: int, id_dim: int, out_dim: int, rng: np.random.Generator | None = None,
                 init: str = "xavier"):
        super().__init__()
        self.content_fc = Linear(content_dim, out_dim, rng, bias=False, init=init)
        self.id_fc = Linear(id_dim, out_dim, rng, bias=False, init=init)

    def __call__(self, content: Tensor, ids: Tensor) -> tuple[Tensor, Tensor]:
        return self.content_fc(content), self.id_fc(ids)


def project_pair(c_i: MultimodalEmbedding, id_i: IdBundle, proj: CicProjection) -> tuple[Tensor, Tensor]:
    return proj(c_i.flattened, id_i.concatenated)


def _check_h(batch_size: int, h: int) -> None:
    if h < 0 or h > batch_size - 1:
        raise ConfigError(f"H={h} negatives need 0 <= H <= B-1 = {batch_size - 1}")


def sample_negatives(batch_index: int, batch_size: int, h: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """``h`` distinct non-anchor indices per direction, drawn independently and uniformly."""
    _check_h(batch_size, h)
    if not 0 <= batch_index < batch_size:
        raise IndexError(f"anchor {batch_index} outside batch of {batch_size}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    draws = []
    for _ in range(2):
        pick = rng.choice(batch_size - 1, size=h, replace=False)
        draws.append(pick + (pick >= batch_index))
    return draws[0], draws[1]


def sample_negative_table(batch_size: int, h: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``sample_negatives`` for every anchor; returns two (B, H) index arrays."""
    _check_h(batch_size, h)
    out = []
    anchors = np.arange(batch_size)[:, None]
    for _ in range(2):
        if h == 0:
            out.append(np.zeros((batch_size, 0), dtype=np.int64))
            continue
        keys = rng.random((batch_size, batch_size - 1))
        pick = np.argsort(keys, axis=1, kind="stable")[:, :h]
        out.append(pick + (pick >= anchors))
    return out[0], out[1]


def _directional(sim: Tensor, neg: np.ndarray, tau: float) -> Tensor:
    b = sim.shape[0]
    idx = np.arange(b)[:, None]
    cols = np.concatenate([idx, neg], axis=1)
    logits = ad.take_along_axis(sim, cols, axis=1) * (1.0 / tau)
    pos = ad.slice(logits, 0, 1, axis=1)
    return -ad.mean(ad.reshape(pos, (b,)) - ad.logsumexp(logits, axis=1))


def cic_loss(content: Tensor, ids: Tensor, cfg: CicConfig,
             negatives: tuple[np.ndarray, np.ndarray]) -> tuple[Tensor, Tensor, Tensor]:
    """Return ``(L_C2I, L_I2C, 0.5 * (L_C2I + L_I2C))`` for (B, k) batches of paired projections.

    ``negatives`` is ``(I_neg, C_neg)``: for anchor ``i`` the C->I term contrasts
    ``C_i`` against ``I[I_neg[i]]`` and the I->C term contrasts ``I_i`` against ``C[C_neg[i]]``.
    """
    if content.shape != ids.shape or content.ndim != 2:
        raise DimensionError(f"CIC needs equal (B, k) batches, got {content.shape} and {ids.shape}")
    if not cfg.tau > 0:
        raise ConfigError(f"CIC temperature must be positive, got {cfg.tau}")
    i_neg, c_neg = (np.asarray(n, dtype=np.int64) for n in negatives)
    cn = ad.l2_normalize(content, axis=1)
    iden = ad.l2_normalize(ids, axis=1)
    sim = ad.matmul(cn, ad.transpose(iden))  # sim[i, j] = s(C_i, I_j)
    c2i = _directional(sim, i_neg, cfg.tau)
    i2c = _directional(ad.transpose(sim), c_neg, cfg.tau)
    return c2i, i2c, (c2i + i2c) * 0.5


def combine_loss(l_ranking, l_cic, alpha: float):
    """``L_ranking + alpha * L_CIC``; ``alpha == 0`` returns ``l_ranking`` unchanged."""
    if alpha == 0:
        return l_ranking
    return l_ranking + l_cic * alpha
