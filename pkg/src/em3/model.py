"""The full ranking model: content tower, user interest pooling, CIC head and ranking DNN."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cic import CicConfig, CicProjection, cic_loss, combine_loss, sample_negative_table
from .encoders import TEXT, VISUAL, EncoderDims, ProjectionParams, project
from .exceptions import ConfigError, DimensionError, NumericError
from .fqformer import FqFormerParams, fuse
from .nn import Module
from .ranking import FeatureFlags, RankingParams, assemble_features, forward_logit, ranking_loss
from .sequence import AttentionPoolParams, freeze_and_attach_lora

VISUAL_MODES = ("video", "image", "none")

DEFAULT_LORA_TARGETS = (
    "pool.cand_proj",
    "pool.seq_proj",
    "fusion.layers.0.wq",
    "fusion.layers.0.wk",
    "fusion.layers.0.wv",
    "fusion.layers.0.wo",
    "fusion.layers.0.ff1",
    "fusion.layers.0.ff2",
)


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32
    n_queries: int = 2
    n_layers: int = 1
    n_heads: int = 4
    ffn_mult: int = 4
    fusion_mode: str = "standard"
    projection_depth: int = 1
    visual_mode: str = "video"
    use_text: bool = True
    use_item_content: bool = True
    use_user_interest: bool = True
    alpha: float = 0.1
    tau: float = 0.1
    n_negatives: int | None = None
    cic_unique_items: bool = True   # contrast each distinct item in a batch once
    cic_dim: int = 32
    user_dim: int = 16
    item_dim: int = 16
    category_dim: int = 8
    hidden: tuple[int, ...] = (64, 32)
    id_init_std: float = 0.01
    query_std: float = 0.02
    lora_rank: int = 4
    lora_targets: tuple[str, ...] = DEFAULT_LORA_TARGETS
    enc_visual: int = 48
    enc_text: int = 24

    def __post_init__(self):
        if self.visual_mode not in VISUAL_MODES:
            raise ConfigError(f"visual_mode must be one of {VISUAL_MODES}, got {self.visual_mode!r}")
        if self.visual_mode == "none" and not self.use_text and self.uses_content:
            raise ConfigError("content features requested with every modality disabled")
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        CicConfig(self.tau, self.alpha, self.n_negatives)

    @property
    def uses_content(self) -> bool:
        return self.use_item_content or self.use_user_interest or self.alpha > 0

    @property
    def content_dim(self) -> int:
        return self.n_queries * self.d

    @property
    def cic(self) -> CicConfig:
        return CicConfig(self.tau, self.alpha, self.n_negatives)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["lora_targets"] = list(self.lora_targets)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("hidden", "lora_targets"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class StepOutput:
    loss: Tensor
    ranking: Tensor
    cic: Tensor | None
    c2i: Tensor | None = None
    i2c: Tensor | None = None
    y_hat: Tensor | None = None
    extras: dict = field(default_factory=dict)


def _rngs(seed: int, names: tuple[str, ...]) -> dict[str, np.random.Generator]:
    # independent streams per component so enabling one part never shifts another's draws
    return {n: np.random.default_rng(np.random.SeedSequence([seed, i])) for i, n in enumerate(names)}


class EM3Model(Module):
    def __init__(self, config: ModelConfig, n_users: int, n_items: int, n_categories: int,
                 context_dim: int, raw_dims: EncoderDims | None = None, seed: int = 0):
        super().__init__()
        self.config = config
        c = config
        rng = _rngs(seed, ("ranking", "projection", "fusion", "pool", "cic", "lora"))
        raw_dims = raw_dims or EncoderDims()
        self.dims = EncoderDims(raw_dims.raw_visual, raw_dims.raw_text, c.enc_visual, c.enc_text, c.d)
        flags = FeatureFlags(c.use_item_content, c.use_user_interest)
        self.ranking = RankingParams(n_users, n_items, n_categories, context_dim, c.content_dim, rng["ranking"],
                                     flags, c.user_dim, c.item_dim, c.category_dim, c.hidden, c.id_init_std)
        self.projection = ProjectionParams(self.dims, rng["projection"], depth=c.projection_depth)
        self.fusion = FqFormerParams(c.d, c.n_queries, c.n_layers, c.n_heads, rng["fusion"], c.fusion_mode,
                                     c.ffn_mult, c.query_std)
        self.pool = AttentionPoolParams(c.content_dim, rng["pool"])
        self.cic_proj = CicProjection(c.content_dim, c.item_dim + c.category_dim, c.cic_dim, rng["cic"])
        self._lora_rng = rng["lora"]
        object.__setattr__(self, "init_args", {
            "n_users": n_users, "n_items": n_items, "n_categories": n_categories,
            "context_dim": context_dim, "raw_visual": raw_dims.raw_visual, "raw_text": raw_dims.raw_text,
            "seed": seed})
        object.__setattr__(self, "frozen_content", None)
        object.__setattr__(self, "lora_attached", False)

    # content tower

    def content_modules(self) -> list[Module]:
        return [self.projection, self.fusion]

    def content_parameters(self):
        yield from self.projection.named_parameters("projection.")
        yield from self.fusion.named_parameters("fusion.")

    def _select_modalities(self, vis, vm, txt, tm):
        c = self.config
        if c.visual_mode == "image":
            vis, vm = vis[:, :1], vm[:, :1]
        parts = []
        if c.visual_mode != "none":
            parts.append((VISUAL, vis, vm))
        if c.use_text:
            parts.append((TEXT, txt, tm))
        return parts

    def content_table(self, item_ids: np.ndarray, features) -> Tensor:
        """Fused flattened embeddings (U, Q*d) for ``item_ids`` through the padded batch path."""
        if self.frozen_content is not None:
            return Tensor(self.frozen_content[item_ids])
        parts = self._select_modalities(*features.lookup(item_ids))
        toks, masks = [], []
        for kind, arr, mask in parts:
            if arr.shape[1]:
                toks.append(self.projection(kind, Tensor(arr)))
                masks.append(mask)
        u = len(item_ids)
        if toks:
            tokens = ad.concat(toks, axis=1)
            mask = np.concatenate(masks, axis=1)
        else:
            tokens = Tensor(np.zeros((u, 0, self.config.d)))
            mask = np.zeros((u, 0), dtype=bool)
        out = self.fusion.fuse_batch(tokens, mask)
        return ad.reshape(out, (u, self.config.content_dim))

    def item_tokens(self, item_id: int, features):
        enc = features.encoded(int(item_id))
        c = self.config
        keep = []
        n_vis = 0
        for e in enc:
            if e.kind == VISUAL:
                if c.visual_mode == "none" or (c.visual_mode == "image" and n_vis >= 1):
                    continue
                n_vis += 1
            elif not c.use_text:
                continue
            keep.append(e)
        return project(keep, self.projection) if keep else []

    def embed_item(self, item_id: int, features) -> np.ndarray:
        """Per-item fusion (the serving / cache path)."""
        if self.frozen_content is not None:
            return self.frozen_content[int(item_id)].copy()
        with ad.no_grad():
            return fuse(self.item_tokens(item_id, features), self.fusion).flattened.data.copy()

    def all_content(self, features, chunk: int = 512) -> np.ndarray:
        n = len(features)
        out = np.empty((n, self.config.content_dim))
        with ad.no_grad():
            for s in range(0, n, chunk):
                ids = np.arange(s, min(n, s + chunk))
                out[ids] = self.content_table(ids, features).data
        return out

    def freeze_content(self, features) -> None:
        """Pre-extract every item's embedding and stop training the content tower."""
        self.freeze_content_table(self.all_content(features))

    def freeze_content_table(self, table: np.ndarray) -> None:
        """Serve content embeddings from ``table`` and stop training the content tower."""
        table = np.array(table, dtype=np.float64)
        if table.shape != (self.ranking.item_emb.shape[0], self.config.content_dim):
            raise DimensionError(f"content table shape {table.shape} does not match "
                                 f"({self.ranking.item_emb.shape[0]}, {self.config.content_dim})")
        for m in self.content_modules():
            m.freeze()
        object.__setattr__(self, "frozen_content", table)

    # sequence LoRA

    def attach_lora(self) -> None:
        freeze_and_attach_lora(self, self.config.lora_rank, list(self.config.lora_targets), self._lora_rng)
        object.__setattr__(self, "lora_attached", True)

    # forward

    def forward(self, batch, features) -> dict:
        c = self.config
        r = self.ranking
        user_e, item_e, cat_e = r.id_features(batch.user, batch.item, batch.category)
        out = {"item_e": item_e, "cat_e": cat_e}
        c_a = u_a = None
        if c.uses_content:
            seq_ids = batch.behavior[batch.behavior_mask] if c.use_user_interest else np.zeros(0, np.int64)
            uniq, inv = np.unique(np.concatenate([batch.item, seq_ids]), return_inverse=True)
            table = self.content_table(uniq, features)
            b = len(batch.item)
            c_a = ad.embedding_lookup(table, inv[:b])
            out["c_a"] = c_a
            if c.use_user_interest:
                pos = np.zeros(batch.behavior.shape, dtype=np.int64)
                pos[batch.behavior_mask] = inv[b:]
                seq = ad.embedding_lookup(table, pos)
                u_a, w = self.pool.pool(c_a, seq, batch.behavior_mask)
                out["u_a"], out["weights"] = u_a, w
        x = assemble_features([user_e, item_e, cat_e], batch.context, c_a, u_a, r)
        out["logit"] = forward_logit(x, r)
        out["y_hat"] = ad.sigmoid(out["logit"])
        return out

    def loss(self, batch, features, rng: np.random.Generator | None = None, negatives=None) -> StepOutput:
        c = self.config
        out = self.forward(batch, features)
        l_rank = ranking_loss(out["y_hat"], batch.label)
        if c.alpha == 0:
            return StepOutput(l_rank, l_rank, None, y_hat=out["y_hat"], extras=out)
        c_a, id_bundle = out["c_a"], ad.concat([out["item_e"], out["cat_e"]], axis=1)
        if c.cic_unique_items:
            # repeated rows of one item would otherwise serve as negatives for that same item
            _, rows = np.unique(batch.item, return_index=True)
            if len(rows) < len(batch.item):
                c_a, id_bundle = ad.take(c_a, rows), ad.take(id_bundle, rows)
        content, ids = self.cic_proj(c_a, id_bundle)
        if negatives is None:
            b = content.shape[0]
            h = b - 1 if c.n_negatives is None else min(c.n_negatives, b - 1)
            negatives = sample_negative_table(b, h, rng)
        c2i, i2c, l_cic = cic_loss(content, ids, c.cic, negatives)
        total = combine_loss(l_rank, l_cic, c.alpha)
        if not np.isfinite(total.data):
            raise NumericError(f"non-finite loss: ranking={l_rank.item()} cic={l_cic.item()}")
        return StepOutput(total, l_rank, l_cic, c2i, i2c, out["y_hat"], out)

    def predict_batch(self, batch, features) -> np.ndarray:
        with ad.no_grad():
            return self.forward(batch, features)["y_hat"].data
