"""Top-k neighbour similarity analyses between two embedding spaces.

Neighbours are found by cosine similarity in a *search* space; the chosen
pairs are then scored by cosine similarity in a *reference* space and the
score is averaged over all (anchor, neighbour) pairs.  An item is never its
own neighbour and equal similarities are broken by ascending item id.
"""

from __future__ import annotations

import numpy as np

from .autodiff import COSINE_EPS
from .data import SynthDataset
from .exceptions import ConfigError, DimensionError


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), COSINE_EPS)


def top_k_neighbors(space: np.ndarray, anchors, k: int = 3, pool=None) -> np.ndarray:
    """(len(anchors), k) ids of the most cosine-similar pool items to each anchor."""
    space = np.asarray(space, dtype=np.float64)
    if space.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got shape {space.shape}")
    anchors = np.asarray(anchors, dtype=np.int64)
    pool = np.arange(len(space)) if pool is None else np.unique(np.asarray(pool, dtype=np.int64))
    if len(pool) < k + 1:
        raise ConfigError(f"top-{k} neighbours need at least {k + 1} items, got {len(pool)}")
    unit = _unit_rows(space)
    sims = unit[anchors] @ unit[pool].T
    sims[anchors[:, None] == pool[None, :]] = -np.inf
    # stable sort on -sim keeps ascending pool ids (pool is sorted) among ties
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    return pool[order]


def neighbor_similarity(search_space: np.ndarray, reference_space: np.ndarray, anchors, k: int = 3,
                        pool=None) -> float:
    if len(search_space) != len(reference_space):
        raise DimensionError(
            f"search space has {len(search_space)} rows but reference space has {len(reference_space)}")
    anchors = np.asarray(anchors, dtype=np.int64)
    if anchors.size == 0:
        raise ConfigError("no anchor items to analyse")
    nbrs = top_k_neighbors(search_space, anchors, k, pool)
    ref = _unit_rows(reference_space)
    pair_sims = np.einsum("ad,akd->ak", ref[anchors], ref[nbrs])
    return float(pair_sims.mean())


def material_similarity(item_id_table: np.ndarray, reference_content_space: np.ndarray, cold_items,
                        top_k: int = 3, pool=None) -> float:
    """Neighbours in ItemID space, similarity in a fixed content space."""
    return neighbor_similarity(item_id_table, reference_content_space, cold_items, top_k, pool)


def behavioral_similarity(content_embeddings: np.ndarray, behavioral_reference: np.ndarray, popular_items,
                          top_k: int = 3, pool=None) -> float:
    """Neighbours in content space, similarity in a behavioural (ItemID) space."""
    return neighbor_similarity(content_embeddings, behavioral_reference, popular_items, top_k, pool)


def reference_content_space(features) -> np.ndarray:
    """Per-item mean stub encoding of each modality, concatenated (zeros for a missing modality)."""
    vis, vm, txt, tm = features.lookup(np.arange(len(features)))
    parts = []
    for arr, mask in ((vis, vm), (txt, tm)):
        cnt = mask.sum(axis=1, keepdims=True)
        parts.append((arr * mask[..., None]).sum(axis=1) / np.maximum(cnt, 1))
    return np.concatenate(parts, axis=1)


def train_exposure(ds: SynthDataset) -> np.ndarray:
    idx = ds.train.index
    return np.bincount(ds.ex_item[idx], minlength=ds.n_items)


def low_exposure_items(ds: SynthDataset, fraction: float = 0.2) -> np.ndarray:
    """The least-exposed items that still appear in training, lowest exposure first."""
    exp = train_exposure(ds)
    seen = np.flatnonzero(exp > 0)
    n = max(1, int(round(fraction * len(seen))))
    return seen[np.argsort(exp[seen], kind="stable")[:n]]


def popular_items(ds: SynthDataset, fraction: float = 0.3) -> np.ndarray:
    exp = train_exposure(ds)
    seen = np.flatnonzero(exp > 0)
    n = max(1, int(round(fraction * len(seen))))
    return seen[np.argsort(-exp[seen], kind="stable")[:n]]
