"""Optimizer stepping, the warm/LoRA sequence-length schedule, and content pretraining."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .data import ExampleSet, batches
from .exceptions import ConfigError, NumericError
from .model import EM3Model, StepOutput
from .nn import Adam, Linear

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    lr: float = 1e-3
    epochs: int = 2
    max_steps: int | None = None
    n_warm: int = 20
    n_long: int = 50
    lora_switch: float | None = 0.5  # fraction of total steps; None keeps full training at n_warm
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.lora_switch is not None and not 0.0 <= self.lora_switch <= 1.0:
            raise ConfigError(f"lora_switch must be a fraction in [0, 1], got {self.lora_switch}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class History:
    loss: list[float] = field(default_factory=list)
    ranking: list[float] = field(default_factory=list)
    cic: list[float] = field(default_factory=list)
    switch_step: int | None = None


def train_step(model: EM3Model, batch, features, optimizer: Adam, rng: np.random.Generator,
               step: int = 0) -> StepOutput:
    """One Adam step on ``L_ranking + alpha * L_CIC`` over the optimizer's parameter set."""
    optimizer.zero_grad()
    try:
        out = model.loss(batch, features, rng)
    except NumericError as exc:
        raise NumericError(f"step {step}: {exc}") from exc
    if not np.isfinite(out.loss.data):
        term = "ranking" if not np.isfinite(out.ranking.data) else "cic"
        raise NumericError(f"step {step}: non-finite loss (offending term: {term})")
    out.loss.backward()
    optimizer.step()
    return out


class Trainer:
    def __init__(self, model: EM3Model, features, config: TrainConfig = TrainConfig()):
        self.model = model
        self.features = features
        self.config = config
        ss = np.random.SeedSequence([config.seed, 0x7EA1])
        self._batch_ss, self._neg_ss = ss.spawn(2)
        self.neg_rng = np.random.default_rng(self._neg_ss)
        self.optimizer = Adam(model.trainable_parameters(), lr=config.lr)
        self.history = History()
        self.step = 0

    @property
    def seq_len(self) -> int:
        return self.config.n_long if self.model.lora_attached else self.config.n_warm

    def total_steps(self, n_examples: int) -> int:
        per_epoch = n_examples // self.config.batch_size
        total = per_epoch * self.config.epochs
        return total if self.config.max_steps is None else min(total, self.config.max_steps)

    def switch_to_lora(self) -> None:
        old = self.optimizer
        self.model.attach_lora()
        self.optimizer = Adam(self.model.trainable_parameters(), lr=self.config.lr)
        self.optimizer.carry_over(old)
        self.history.switch_step = self.step

    def fit(self, examples: ExampleSet, callback=None) -> History:
        cfg = self.config
        total = self.total_steps(len(examples))
        switch_at = None
        if cfg.lora_switch is not None and self.model.config.uses_content:
            switch_at = int(round(cfg.lora_switch * total))
        epoch_seeds = self._batch_ss.spawn(cfg.epochs)
        for epoch in range(cfg.epochs):
            for batch in batches(examples, cfg.batch_size, np.random.default_rng(epoch_seeds[epoch])):
                if self.step >= total:
                    return self.history
                if switch_at is not None and self.step == switch_at and not self.model.lora_attached:
                    self.switch_to_lora()
                batch = _with_seq(batch, self.seq_len)
                out = train_step(self.model, batch, self.features, self.optimizer, self.neg_rng, self.step)
                self.history.loss.append(float(out.loss.data))
                self.history.ranking.append(float(out.ranking.data))
                self.history.cic.append(float(out.cic.data) if out.cic is not None else 0.0)
                self.step += 1
                if callback is not None:
                    callback(self)
        return self.history


def _with_seq(batch, n_active: int):
    beh = batch.behavior[:, batch.behavior.shape[1] - n_active:]
    batch.behavior = beh
    batch.behavior_mask = beh >= 0
    return batch


def predict(model: EM3Model, examples: ExampleSet, features, n_active: int, chunk: int = 4096) -> np.ndarray:
    out = np.empty(len(examples))
    for s in range(0, len(examples), chunk):
        pos = np.arange(s, min(len(examples), s + chunk))
        out[pos] = model.predict_batch(examples.batch(pos, n_active), features)
    return out


def pretrain_content_on_categories(model: EM3Model, features, categories: np.ndarray, steps: int = 300,
                                   batch_size: int = 128, lr: float = 1e-3, seed: int = 0) -> list[float]:
    """Content-only pretraining: classify each item's category from its fused embedding.

    Stands in for a content model tuned on a content-oriented task, with no
    access to interaction data.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E7]))
    n_cat = int(categories.max()) + 1
    head = Linear(model.config.content_dim, n_cat, rng)
    params = list(model.content_parameters()) + list(head.named_parameters("head."))
    opt = Adam(params, lr=lr)
    losses = []
    n = len(categories)
    for _ in range(steps):
        ids = rng.choice(n, size=min(batch_size, n), replace=False)
        opt.zero_grad()
        emb = model.content_table(ids, features)
        logits = head(emb)
        onehot = np.zeros((len(ids), n_cat))
        onehot[np.arange(len(ids)), categories[ids]] = 1.0
        loss = -ad.mean(ad.sum(logits * onehot, axis=1) - ad.logsumexp(logits, axis=1))
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
    return losses
