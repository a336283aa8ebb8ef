"""ID-feature ranking DNN with optional content features, and its binary log-loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .exceptions import DataError, DimensionError, NumericError
from .nn import Linear, Module, ModuleList

PROB_EPS = 1e-7


@dataclass(frozen=True)
class FeatureFlags:
    use_item_content: bool = True
    use_user_interest: bool = True


class RankingParams(Module):
    """ID embedding tables and a relu DNN with a single-logit head."""

    def __init__(self, n_users: int, n_items: int, n_categories: int, context_dim: int,
                 content_dim: int, rng: np.random.Generator, flags: FeatureFlags = FeatureFlags(),
                 user_dim: int = 16, item_dim: int = 16, category_dim: int = 8,
                 hidden: tuple[int, ...] = (64, 32), id_init_std: float = 0.01, zero_head: bool = False):
        super().__init__()
        self.flags = flags
        self.context_dim = context_dim
        self.content_dim = content_dim
        self.user_emb = Parameter(rng.normal(0.0, id_init_std, size=(n_users, user_dim)))
        self.item_emb = Parameter(rng.normal(0.0, id_init_std, size=(n_items, item_dim)))
        self.category_emb = Parameter(rng.normal(0.0, id_init_std, size=(n_categories, category_dim)))
        self.dnn = ModuleList()
        width = self.input_width
        for h in hidden:
            self.dnn.append(Linear(width, h, rng))
            width = h
        self.dnn.append(Linear(width, 1, rng, init="zeros" if zero_head else "xavier"))

    @property
    def id_width(self) -> int:
        return self.user_emb.shape[1] + self.item_emb.shape[1] + self.category_emb.shape[1]

    @property
    def input_width(self) -> int:
        w = self.id_width + self.context_dim
        if self.flags.use_item_content:
            w += self.content_dim
        if self.flags.use_user_interest:
            w += self.content_dim
        return w

    def id_features(self, users, items, categories) -> tuple[Tensor, Tensor, Tensor]:
        return (ad.embedding_lookup(self.user_emb, users),
                ad.embedding_lookup(self.item_emb, items),
                ad.embedding_lookup(self.category_emb, categories))


def assemble_features(id_parts: list[Tensor], context, c_a: Tensor | None, u_a: Tensor | None,
                      params: RankingParams) -> Tensor:
    """Concatenate ``[ID embeddings, context, c_A?, u_A?]`` along the feature axis."""
    parts = list(id_parts) + [ad.as_tensor(context)]
    if params.flags.use_item_content:
        if c_a is None:
            raise DimensionError("use_item_content is set but no item content embedding was given")
        parts.append(c_a)
    if params.flags.use_user_interest:
        if u_a is None:
            raise DimensionError("use_user_interest is set but no user interest vector was given")
        parts.append(u_a)
    x = ad.concat(parts, axis=-1)
    if x.shape[-1] != params.input_width:
        raise DimensionError(f"assembled width {x.shape[-1]} != DNN input width {params.input_width}")
    return x


def forward_logit(features: Tensor, params: RankingParams) -> Tensor:
    x = features
    n = len(params.dnn)
    for i, layer in enumerate(params.dnn):
        x = layer(x)
        if not np.all(np.isfinite(x.data)):
            raise NumericError(f"non-finite activation at DNN layer {i}")
        if i < n - 1:
            x = ad.relu(x)
    return ad.reshape(x, x.shape[:-1])


def forward(features: Tensor, params: RankingParams) -> Tensor:
    """Click probability in (0, 1)."""
    return ad.sigmoid(forward_logit(features, params))


def ranking_loss(y_hat: Tensor, y) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to ``[eps, 1 - eps]``."""
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise DataError("ranking loss over an empty batch")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0 or 1")
    p = ad.clip(y_hat, PROB_EPS, 1.0 - PROB_EPS)
    ll = ad.log(p) * y + ad.log(1.0 - p) * (1.0 - y)
    return -ad.mean(ll)
