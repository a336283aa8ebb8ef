"""Seeded synthetic interaction data with a known latent ground truth.

Generative model
----------------
* Each category ``c`` has a centroid ``mu_c ~ N(0, I_k)``.  Item latents are
  ``z_i = sqrt(rho) mu_c + sqrt(1 - rho) eps_i`` with ``rho = category_share``.
* Users have latents ``p_u ~ N(0, I_k)``.
* Raw visual / text materials are noisy affine views of ``z_i``:
  ``A_v z_i + material_noise * xi`` (and likewise with ``A_t``).  Each item gets
  ``1..M_max`` visual and ``1..K_max`` text materials, each modality dropped
  with ``modality_dropout_prob`` (never both).
* Exposure weight of item ``i`` is ``rank_i ** -popularity_exponent`` over a
  random ranking.  Impressions draw items proportionally to exposure.
* Click probability is
  ``sigmoid(base_logit + strength * signal_scale * <p_u, z_i> / sqrt(k)
  + item_bias_i + popularity_bias * pop_i + <w_ctx, x>)`` where ``pop_i`` is the
  standardized log exposure and ``item_bias_i ~ N(0, item_bias_std)`` is
  content-free.
* Every user first accumulates ``history_length`` clicks on warm items; the
  labelled stream follows.  An example's behavior sequence is the user's last
  ``n_max`` clicks strictly before it.
* The last ``test_fraction`` of the stream is the test split.  Cold-start
  items are only exposed during the test period.

On-disk layout (``schema_version`` 1)
-------------------------------------
``manifest.json``
    schema version, seed, the full config, counts, and the block table of
    ``vectors.bin`` (name, dtype, shape, byte offset).
``items.jsonl``
    one record per item: ``item_id, category, cold, n_images, n_texts, exposure``.
``examples.jsonl``
    one record per example in time order: ``t, user_id, item_id, label,
    split ("train"|"test"), behavior`` (oldest first, at most ``n_max`` ids).
``vectors.bin``
    little-endian float64 blocks: ``images`` (n_items, M_max, raw_visual),
    ``texts`` (n_items, K_max, raw_text), ``context`` (n_examples, context_dim),
    ``item_latent`` (n_items, k), ``user_latent`` (n_users, k).  Unused material
    slots are zero.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator

import numpy as np

from .encoders import EncoderDims, RawItemContent
from .exceptions import ConfigError, DataError

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 2000
    n_items: int = 1000
    n_categories: int = 20
    n_interactions: int = 60000
    content_signal_strength: float = 1.0
    popularity_exponent: float = 0.8
    popularity_bias: float = 0.3
    cold_start_fraction: float = 0.1
    m_max: int = 3
    k_max: int = 3
    modality_dropout_prob: float = 0.1
    seed: int = 0
    latent_dim: int = 8
    category_share: float = 0.3
    signal_scale: float = 2.5
    item_bias_std: float = 0.5
    base_logit: float = -0.8
    material_noise: float = 1.0
    context_dim: int = 4
    context_scale: float = 0.3
    history_length: int = 50
    n_max: int = 50
    test_fraction: float = 1 / 6
    raw_visual: int = 64
    raw_text: int = 32

    def __post_init__(self):
        for name in ("n_users", "n_items", "n_categories", "n_interactions", "m_max", "k_max",
                     "latent_dim", "history_length", "n_max", "raw_visual", "raw_text"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("content_signal_strength", "cold_start_fraction", "modality_dropout_prob",
                     "category_share", "test_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.popularity_exponent < 0:
            raise ConfigError("popularity_exponent must be >= 0")
        if self.n_max > self.history_length:
            raise ConfigError(
                f"sequence length n_max={self.n_max} exceeds the {self.history_length} clicks each user has")
        if self.n_cold >= self.n_items:
            raise ConfigError("cold_start_fraction leaves no warm items")
        if not 0 < self.n_test < self.n_interactions:
            raise ConfigError("test_fraction leaves an empty split")
        if self.context_dim < 0:
            raise ConfigError("context_dim must be >= 0")

    @property
    def n_cold(self) -> int:
        return int(round(self.cold_start_fraction * self.n_items))

    @property
    def n_test(self) -> int:
        return int(round(self.test_fraction * self.n_interactions))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown data config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SynthDataset:
    """In-memory dataset; every array is indexed by dense integer ids."""

    config: SynthConfig
    item_category: np.ndarray
    item_cold: np.ndarray
    item_exposure: np.ndarray
    images: np.ndarray
    n_images: np.ndarray
    texts: np.ndarray
    n_texts: np.ndarray
    item_latent: np.ndarray
    user_latent: np.ndarray
    ex_time: np.ndarray
    ex_user: np.ndarray
    ex_item: np.ndarray
    ex_label: np.ndarray
    ex_test: np.ndarray
    ex_context: np.ndarray
    ex_behavior: np.ndarray  # (n, n_max), right-aligned, -1 padded on the left
    _raw_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_items(self) -> int:
        return len(self.item_category)

    @property
    def n_users(self) -> int:
        return len(self.user_latent)

    @property
    def n_categories(self) -> int:
        return self.config.n_categories

    @property
    def n_examples(self) -> int:
        return len(self.ex_label)

    @property
    def encoder_dims(self) -> EncoderDims:
        return EncoderDims(raw_visual=self.config.raw_visual, raw_text=self.config.raw_text)

    def raw_item(self, item_id: int) -> RawItemContent:
        raw = self._raw_cache.get(item_id)
        if raw is None:
            m, k = int(self.n_images[item_id]), int(self.n_texts[item_id])
            raw = RawItemContent(item_id, self.images[item_id, :m], self.texts[item_id, :k],
                                 self.config.m_max, self.config.k_max)
            self._raw_cache[item_id] = raw
        return raw

    def raw_items(self) -> list[RawItemContent]:
        return [self.raw_item(i) for i in range(self.n_items)]

    @property
    def train(self) -> "ExampleSet":
        return ExampleSet(self, np.flatnonzero(~self.ex_test))

    @property
    def test(self) -> "ExampleSet":
        return ExampleSet(self, np.flatnonzero(self.ex_test))

    def split(self, name: str) -> "ExampleSet":
        if name not in ("train", "test"):
            raise ValueError(f"unknown split {name!r}")
        return self.train if name == "train" else self.test

    def behavior_of(self, example: int) -> list[int]:
        row = self.ex_behavior[example]
        return [int(i) for i in row[row >= 0]]


@dataclass
class Batch:
    index: np.ndarray
    user: np.ndarray
    item: np.ndarray
    category: np.ndarray
    context: np.ndarray
    behavior: np.ndarray
    behavior_mask: np.ndarray
    label: np.ndarray

    def __len__(self) -> int:
        return len(self.index)


@dataclass
class ExampleSet:
    """A subset of a dataset's examples (the sklearn-style ``X``)."""

    dataset: SynthDataset
    index: np.ndarray

    def __len__(self) -> int:
        return len(self.index)

    @property
    def labels(self) -> np.ndarray:
        return self.dataset.ex_label[self.index]

    def subset(self, positions) -> "ExampleSet":
        return ExampleSet(self.dataset, self.index[np.asarray(positions)])

    def head_by_time(self, fraction: float) -> "ExampleSet":
        order = np.argsort(self.dataset.ex_time[self.index], kind="stable")
        n = int(round(fraction * len(order)))
        return ExampleSet(self.dataset, np.sort(self.index[order[:n]]))

    def batch(self, positions=None, n_active: int | None = None) -> Batch:
        idx = self.index if positions is None else self.index[np.asarray(positions)]
        return make_batch(self.dataset, idx, n_active)


def make_batch(ds: SynthDataset, idx: np.ndarray, n_active: int | None = None) -> Batch:
    beh = ds.ex_behavior[idx]
    if n_active is not None:
        beh = beh[:, beh.shape[1] - n_active:]
    items = ds.ex_item[idx]
    return Batch(
        index=idx,
        user=ds.ex_user[idx],
        item=items,
        category=ds.item_category[items],
        context=ds.ex_context[idx],
        behavior=beh,
        behavior_mask=beh >= 0,
        label=ds.ex_label[idx],
    )


def batches(examples: ExampleSet, batch_size: int, seed, n_active: int | None = None) -> Iterator[Batch]:
    """Seeded shuffled mini-batches; the trailing partial batch is dropped."""
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(len(examples))
    for start in range(0, len(order) - batch_size + 1, batch_size):
        yield examples.batch(order[start:start + batch_size], n_active)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate(config: SynthConfig) -> SynthDataset:
    cfg = config
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xDA7A]))
    k = cfg.latent_dim
    n_items, n_users = cfg.n_items, cfg.n_users

    centroids = rng.normal(size=(cfg.n_categories, k))
    item_category = rng.integers(0, cfg.n_categories, size=n_items)
    z = (np.sqrt(cfg.category_share) * centroids[item_category]
         + np.sqrt(1.0 - cfg.category_share) * rng.normal(size=(n_items, k)))
    p = rng.normal(size=(n_users, k))

    proj_v = rng.normal(size=(k, cfg.raw_visual)) / np.sqrt(k)
    proj_t = rng.normal(size=(k, cfg.raw_text)) / np.sqrt(k)
    n_images = rng.integers(1, cfg.m_max + 1, size=n_items)
    n_texts = rng.integers(1, cfg.k_max + 1, size=n_items)
    drop = rng.random((n_items, 2)) < cfg.modality_dropout_prob
    both = drop[:, 0] & drop[:, 1]
    keep_visual = rng.random(n_items) < 0.5
    drop[both & keep_visual, 0] = False
    drop[both & ~keep_visual, 1] = False
    n_images[drop[:, 0]] = 0
    n_texts[drop[:, 1]] = 0
    images = (z @ proj_v)[:, None, :] + cfg.material_noise * rng.normal(size=(n_items, cfg.m_max, cfg.raw_visual))
    texts = (z @ proj_t)[:, None, :] + cfg.material_noise * rng.normal(size=(n_items, cfg.k_max, cfg.raw_text))
    images[np.arange(cfg.m_max)[None, :] >= n_images[:, None]] = 0.0
    texts[np.arange(cfg.k_max)[None, :] >= n_texts[:, None]] = 0.0

    ranks = rng.permutation(n_items) + 1
    exposure = ranks.astype(np.float64) ** (-cfg.popularity_exponent)
    log_exp = np.log(exposure)
    pop = (log_exp - log_exp.mean()) / (log_exp.std() + 1e-12)
    item_bias = cfg.item_bias_std * rng.normal(size=n_items)
    cold = np.zeros(n_items, dtype=bool)
    cold[rng.choice(n_items, size=cfg.n_cold, replace=False)] = True
    w_ctx = rng.normal(size=cfg.context_dim) * cfg.context_scale

    item_logit = cfg.base_logit + item_bias + cfg.popularity_bias * pop
    affinity_scale = cfg.content_signal_strength * cfg.signal_scale / np.sqrt(k)

    def click_prob(users, items, ctx_term=0.0):
        aff = np.einsum("ij,ij->i", p[users], z[items])
        return _sigmoid(item_logit[items] + affinity_scale * aff + ctx_term)

    warm_ids = np.flatnonzero(~cold)
    warm_w = exposure[warm_ids] / exposure[warm_ids].sum()
    all_w = exposure / exposure.sum()

    # pre-stream click histories on warm items
    histories: list[list[int]] = [[] for _ in range(n_users)]
    need = np.arange(n_users)
    while need.size:
        draws = 16
        users = np.repeat(need, draws)
        items = warm_ids[rng.choice(len(warm_ids), size=users.size, p=warm_w)]
        clicked = rng.random(users.size) < click_prob(users, items)
        for u, i in zip(users[clicked], items[clicked]):
            if len(histories[u]) < cfg.history_length:
                histories[u].append(int(i))
        need = np.array([u for u in need if len(histories[u]) < cfg.history_length], dtype=np.int64)

    n = cfg.n_interactions
    n_train = n - cfg.n_test
    ex_user = rng.integers(0, n_users, size=n)
    ex_item = np.empty(n, dtype=np.int64)
    ex_item[:n_train] = warm_ids[rng.choice(len(warm_ids), size=n_train, p=warm_w)]
    ex_item[n_train:] = rng.choice(n_items, size=n - n_train, p=all_w)
    ex_context = rng.normal(size=(n, cfg.context_dim))
    prob = click_prob(ex_user, ex_item, ex_context @ w_ctx)
    ex_label = (rng.random(n) < prob).astype(np.int64)
    ex_test = np.zeros(n, dtype=bool)
    ex_test[n_train:] = True

    ex_behavior = np.full((n, cfg.n_max), -1, dtype=np.int64)
    for t in range(n):
        u = ex_user[t]
        hist = histories[u]
        seq = hist[-cfg.n_max:]
        ex_behavior[t, cfg.n_max - len(seq):] = seq
        if ex_label[t]:
            hist.append(int(ex_item[t]))
            if len(hist) > 2 * cfg.n_max:
                del hist[:-cfg.n_max]

    return SynthDataset(
        config=cfg,
        item_category=item_category.astype(np.int64),
        item_cold=cold,
        item_exposure=exposure,
        images=images,
        n_images=n_images.astype(np.int64),
        texts=texts,
        n_texts=n_texts.astype(np.int64),
        item_latent=z,
        user_latent=p,
        ex_time=np.arange(n, dtype=np.int64),
        ex_user=ex_user.astype(np.int64),
        ex_item=ex_item,
        ex_label=ex_label,
        ex_test=ex_test,
        ex_context=ex_context,
        ex_behavior=ex_behavior,
    )


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save(ds: SynthDataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = ds.config
    blocks = [
        ("images", ds.images),
        ("texts", ds.texts),
        ("context", ds.ex_context),
        ("item_latent", ds.item_latent),
        ("user_latent", ds.user_latent),
    ]
    table, chunks, offset = [], [], 0
    for name, arr in blocks:
        buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "dtype": "<f8", "shape": list(arr.shape), "offset": offset})
        chunks.append(buf)
        offset += len(buf)
    _write_atomic(out / "vectors.bin", b"".join(chunks))

    item_lines = []
    for i in range(ds.n_items):
        item_lines.append(json.dumps({
            "item_id": i,
            "category": int(ds.item_category[i]),
            "cold": bool(ds.item_cold[i]),
            "n_images": int(ds.n_images[i]),
            "n_texts": int(ds.n_texts[i]),
            "exposure": float(ds.item_exposure[i]),
        }, sort_keys=True))
    _write_atomic(out / "items.jsonl", ("\n".join(item_lines) + "\n").encode())

    ex_lines = []
    for t in range(ds.n_examples):
        ex_lines.append(json.dumps({
            "t": int(ds.ex_time[t]),
            "user_id": int(ds.ex_user[t]),
            "item_id": int(ds.ex_item[t]),
            "label": int(ds.ex_label[t]),
            "split": "test" if ds.ex_test[t] else "train",
            "behavior": ds.behavior_of(t),
        }, sort_keys=True, separators=(",", ":")))
    _write_atomic(out / "examples.jsonl", ("\n".join(ex_lines) + "\n").encode())

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "config": asdict(cfg),
        "counts": {
            "users": ds.n_users,
            "items": ds.n_items,
            "cold_items": int(ds.item_cold.sum()),
            "categories": cfg.n_categories,
            "examples": ds.n_examples,
            "train": int((~ds.ex_test).sum()),
            "test": int(ds.ex_test.sum()),
        },
        "files": {"items": "items.jsonl", "examples": "examples.jsonl", "vectors": "vectors.bin"},
        "blocks": table,
    }
    _write_atomic(out / "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return out


def load(path) -> SynthDataset:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported dataset schema {manifest.get('schema_version')}")
    cfg = SynthConfig.from_dict(manifest["config"])
    raw = (root / manifest["files"]["vectors"]).read_bytes()
    blocks = {}
    for b in manifest["blocks"]:
        count = int(np.prod(b["shape"]))
        blocks[b["name"]] = np.frombuffer(raw, dtype=b["dtype"], count=count,
                                          offset=b["offset"]).reshape(b["shape"]).astype(np.float64)
    items = [json.loads(line) for line in (root / manifest["files"]["items"]).read_text().splitlines() if line]
    items.sort(key=lambda r: r["item_id"])
    exs = [json.loads(line) for line in (root / manifest["files"]["examples"]).read_text().splitlines() if line]
    n = len(exs)
    behavior = np.full((n, cfg.n_max), -1, dtype=np.int64)
    for t, r in enumerate(exs):
        seq = r["behavior"]
        if seq:
            behavior[t, cfg.n_max - len(seq):] = seq
        if r["label"] not in (0, 1):
            raise DataError(f"example {t} has non-binary label {r['label']!r}")
    return SynthDataset(
        config=cfg,
        item_category=np.array([r["category"] for r in items], dtype=np.int64),
        item_cold=np.array([r["cold"] for r in items], dtype=bool),
        item_exposure=np.array([r["exposure"] for r in items], dtype=np.float64),
        images=blocks["images"],
        n_images=np.array([r["n_images"] for r in items], dtype=np.int64),
        texts=blocks["texts"],
        n_texts=np.array([r["n_texts"] for r in items], dtype=np.int64),
        item_latent=blocks["item_latent"],
        user_latent=blocks["user_latent"],
        ex_time=np.array([r["t"] for r in exs], dtype=np.int64),
        ex_user=np.array([r["user_id"] for r in exs], dtype=np.int64),
        ex_item=np.array([r["item_id"] for r in exs], dtype=np.int64),
        ex_label=np.array([r["label"] for r in exs], dtype=np.int64),
        ex_test=np.array([r["split"] == "test" for r in exs], dtype=bool),
        ex_context=blocks["context"],
        ex_behavior=behavior,
    )
