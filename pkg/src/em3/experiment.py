"""Experiment configs, training regimes, run reports and the ablation-suite driver.

Report schema (JSON, one file per run, keys sorted)::

    name            str    run label
    seed            int    model / training seed
    regime          str    "e2e" | "pe" | "task_specific_pe"
    config          obj    full ExperimentConfig (rerunnable as-is)
    losses          [f]    total loss per optimizer step of the final ranking phase
    ranking_losses  [f]    ranking term per step
    cic_losses      [f]    contrastive term per step (0 when disabled)
    stage_losses    [f]    content-stage losses (PE pretraining / task-specific first pass)
    switch_step     int?   step at which LoRA was attached
    auc             f      test AUC
    auc_warm        f      test AUC on items seen in training
    auc_cold        f      test AUC on cold-start items
    status          str    "ok" | "aborted"
    error           str?   reason for an aborted run
    wall_seconds    f      elapsed time

Suite directory layout::

    suite.json   {"base": <config delta>, "seeds": [...], "runs": {name: delta},
                  "checks": [{"name", "left", "op": "gt"|"ge", "right": [names]}]}

A check compares the seed-mean AUC of ``left`` against the seed-mean of each
run in ``right``.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .cache import build_offline_cache
from .data import SynthConfig, SynthDataset, generate, load
from .encoders import StubEncoder
from .exceptions import ConfigError, NumericError
from .metrics import auc
from .model import EM3Model, ModelConfig
from .training import Trainer, TrainConfig, predict, pretrain_content_on_categories

log = logging.getLogger(__name__)

REGIMES = ("e2e", "pe", "task_specific_pe")
CONFIG_DIR = Path(__file__).parent / "configs"


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "main"
    dataset: str | None = None           # path of a generated dataset; None generates from ``data``
    data: dict = field(default_factory=dict)
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    regime: str = "e2e"
    encoder_seed: int = 0
    pretrain_steps: int = 400
    content_stage_fraction: float = 0.5  # share of the train stream (earliest first) used to fit content
    output_dir: str | None = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if not 0.0 < self.content_stage_fraction <= 1.0:
            raise ConfigError("content_stage_fraction must lie in (0, 1]")
        if self.regime != "e2e" and not self.model.uses_content:
            raise ConfigError(f"regime {self.regime!r} needs content features")

    @property
    def seed(self) -> int:
        return self.train.seed

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, train=replace(self.train, seed=seed))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["model"] = self.model.to_dict()
        d["train"] = self.train.to_dict()
        d["data"] = dict(self.data)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        d = dict(d)
        d["model"] = ModelConfig.from_dict(d.get("model", {}))
        d["train"] = TrainConfig.from_dict(d.get("train", {}))
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def apply_delta(base: dict, delta: dict) -> dict:
    """Recursive dict merge; nested dicts merge, everything else replaces."""
    out = dict(base)
    for k, v in delta.items():
        out[k] = apply_delta(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


@dataclass
class RunReport:
    name: str
    seed: int
    regime: str
    config: dict
    losses: list = field(default_factory=list)
    ranking_losses: list = field(default_factory=list)
    cic_losses: list = field(default_factory=list)
    stage_losses: list = field(default_factory=list)
    switch_step: int | None = None
    auc: float = float("nan")
    auc_warm: float = float("nan")
    auc_cold: float = float("nan")
    status: str = "ok"
    error: str | None = None
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path) -> "RunReport":
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class RunResult:
    report: RunReport
    model: EM3Model
    trainer: Trainer | None


class DataContext:
    """A dataset with its offline feature cache, shared by every run on it."""

    def __init__(self, dataset: SynthDataset, encoder_seed: int = 0):
        self.dataset = dataset
        self.encoder = StubEncoder(encoder_seed, dataset.encoder_dims)
        c = dataset.config
        self.features = build_offline_cache(dataset.raw_items(), self.encoder, c.m_max, c.k_max)

    @classmethod
    def for_config(cls, cfg: ExperimentConfig) -> "DataContext":
        ds = load(cfg.dataset) if cfg.dataset else generate(SynthConfig.from_dict(cfg.data))
        return cls(ds, cfg.encoder_seed)


def _new_model(cfg: ExperimentConfig, ds: SynthDataset, model_cfg: ModelConfig | None = None) -> EM3Model:
    return EM3Model(model_cfg or cfg.model, ds.n_users, ds.n_items, ds.n_categories, ds.config.context_dim,
                    ds.encoder_dims, seed=cfg.seed)


def _train(model, ctx: DataContext, train_cfg: TrainConfig, examples) -> Trainer:
    tr = Trainer(model, ctx.features, train_cfg)
    tr.fit(examples)
    return tr


def run_experiment(cfg: ExperimentConfig, ctx: DataContext | None = None) -> RunResult:
    """Train under ``cfg.regime``, evaluate test AUC, and write the report when an output dir is set."""
    t0 = time.perf_counter()
    ctx = ctx or DataContext.for_config(cfg)
    ds = ctx.dataset
    report = RunReport(cfg.name, cfg.seed, cfg.regime, cfg.to_dict())
    model = _new_model(cfg, ds)
    trainer = None
    try:
        if cfg.regime == "pe":
            # content tower fitted on a content-only objective, then pre-extracted
            report.stage_losses = pretrain_content_on_categories(
                model, ctx.features, ds.item_category, steps=cfg.pretrain_steps, seed=cfg.seed)
            model.freeze_content(ctx.features)
        elif cfg.regime == "task_specific_pe":
            # content tower fitted end-to-end on the early part of the stream, then pre-extracted
            first = _new_model(cfg, ds)
            stage = _train(first, ctx, cfg.train, ds.train.head_by_time(cfg.content_stage_fraction))
            report.stage_losses = stage.history.loss
            first.freeze_content(ctx.features)
            model.freeze_content_table(first.frozen_content)
        trainer = _train(model, ctx, cfg.train, ds.train)
        h = trainer.history
        report.losses, report.ranking_losses, report.cic_losses = h.loss, h.ranking, h.cic
        report.switch_step = h.switch_step
        scores = predict(model, ds.test, ctx.features, trainer.seq_len)
        labels = ds.test.labels
        cold = ds.item_cold[ds.ex_item[ds.test.index]]
        report.auc = auc(scores, labels)
        report.auc_warm = auc(scores[~cold], labels[~cold])
        report.auc_cold = auc(scores[cold], labels[cold]) if cold.any() else float("nan")
    except NumericError as exc:
        report.status, report.error = "aborted", str(exc)
        if trainer is not None:
            h = trainer.history
            report.losses, report.ranking_losses, report.cic_losses = h.loss, h.ranking, h.cic
        log.error("run %s seed %d aborted: %s", cfg.name, cfg.seed, exc)
    report.wall_seconds = time.perf_counter() - t0
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.save(out / f"{cfg.name}.seed{cfg.seed}.json")
    return RunResult(report, model, trainer)


# suites


@dataclass
class CheckResult:
    name: str
    left: str
    right: list
    op: str
    left_mean: float
    right_means: dict
    passed: bool

    def line(self) -> str:
        rhs = ", ".join(f"{k}={v:.4f}" for k, v in self.right_means.items())
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.left}={self.left_mean:.4f} {self.op} [{rhs}]"


@dataclass
class SuiteResult:
    runs: dict          # name -> list[RunResult] (one per seed)
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def mean_auc(self, name: str) -> float:
        return float(np.mean([r.report.auc for r in self.runs[name]]))

    def summary(self) -> dict:
        out = {}
        for name, results in self.runs.items():
            a = [r.report.auc for r in results]
            out[name] = {"mean": float(np.mean(a)), "min": float(np.min(a)), "max": float(np.max(a)),
                         "seeds": [r.report.seed for r in results], "auc": a}
        return out


def load_suite(suite_dir) -> dict:
    path = Path(suite_dir) / "suite.json"
    if not path.exists():
        raise ConfigError(f"no suite.json in {suite_dir}")
    return json.loads(path.read_text())


def suite_configs(suite: dict) -> dict:
    """name -> ExperimentConfig (seed left at the base value)."""
    base = suite.get("base", {})
    return {name: ExperimentConfig.from_dict(apply_delta(base, dict(delta, name=name)))
            for name, delta in suite["runs"].items()}


def evaluate_checks(suite: dict, runs: dict) -> list:
    results = []
    for chk in suite.get("checks", []):
        op = chk.get("op", "ge")
        if op not in ("ge", "gt"):
            raise ConfigError(f"unknown check op {op!r}")
        left = float(np.mean([r.report.auc for r in runs[chk["left"]]]))
        rights = {n: float(np.mean([r.report.auc for r in runs[n]])) for n in chk["right"]}
        ok = all(left > v if op == "gt" else left >= v for v in rights.values())
        results.append(CheckResult(chk["name"], chk["left"], list(chk["right"]), op, left, rights, ok))
    return results


def run_suite(suite_dir, output_dir=None, seeds=None, ctx: DataContext | None = None,
              only: list | None = None) -> SuiteResult:
    suite = load_suite(suite_dir)
    configs = suite_configs(suite)
    seeds = list(seeds if seeds is not None else suite.get("seeds", [0]))
    if only is not None:
        configs = {k: v for k, v in configs.items() if k in only}
    if ctx is None:
        first = next(iter(configs.values()))
        ctx = DataContext.for_config(first)
    runs = {}
    for name, cfg in configs.items():
        runs[name] = []
        for seed in seeds:
            c = replace(cfg.with_seed(seed), output_dir=str(output_dir) if output_dir else None)
            res = run_experiment(c, ctx)
            log.info("%s seed %d auc %.4f (%.1fs)", name, seed, res.report.auc, res.report.wall_seconds)
            runs[name].append(res)
    checks = evaluate_checks(suite, runs) if only is None else []
    result = SuiteResult(runs, checks)
    if output_dir:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(
            {"runs": result.summary(), "checks": [asdict(c) for c in checks], "passed": result.passed},
            sort_keys=True, indent=1))
    return result
