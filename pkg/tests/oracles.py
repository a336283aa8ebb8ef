"""Independent reference implementations used as test oracles.

Nothing here calls into the package's autodiff engine; the oracles work on
plain arrays (or ``np.longdouble`` where extra precision is wanted).
"""

from __future__ import annotations

import itertools

import numpy as np


def central_difference(f, x: np.ndarray, index, h: float = 1e-5) -> float:
    """``(f(x + h e_i) - f(x - h e_i)) / 2h`` for one coordinate; restores ``x``."""
    old = x[index]
    x[index] = old + h
    fp = f()
    x[index] = old - h
    fm = f()
    x[index] = old
    return (fp - fm) / (2.0 * h)


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def sample_coordinates(shape, n: int, rng: np.random.Generator) -> list[tuple]:
    total = int(np.prod(shape))
    flat = rng.choice(total, size=min(n, total), replace=False)
    return [np.unravel_index(i, shape) for i in flat]


def gradcheck(loss_fn, arrays: dict, grads: dict, rng: np.random.Generator, per_tensor: int = 6,
              h: float = 1e-5, tol: float = 1e-4, floor: float = 1e-8) -> list[tuple]:
    """Compare analytic ``grads`` to central differences of ``loss_fn()`` on sampled coordinates.

    Returns the list of failing ``(name, index, analytic, numeric, rel_err)``.
    """
    failures = []
    for name, arr in arrays.items():
        g = grads[name]
        for idx in sample_coordinates(arr.shape, per_tensor, rng):
            num = central_difference(loss_fn, arr, idx, h)
            ana = float(g[idx])
            err = relative_error(ana, num, floor)
            if err >= tol:
                failures.append((name, idx, ana, num, err))
    return failures


def auc_pairwise(scores, labels) -> float:
    """O(n^2) AUC: fraction of (positive, negative) pairs ranked correctly, ties half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def _ld_normalize(x):
    x = np.asarray(x, dtype=np.longdouble)
    return x / np.sqrt((x * x).sum(axis=1, keepdims=True))


def cic_bruteforce(content, ids, i_neg, c_neg, tau) -> tuple:
    """Per-anchor enumeration of both contrastive directions in extended precision."""
    c = _ld_normalize(content)
    it = _ld_normalize(ids)
    tau = np.longdouble(tau)
    b = len(c)

    def direction(a, other, negs):
        total = np.longdouble(0)
        for i in range(b):
            pos = np.exp((a[i] * other[i]).sum() / tau)
            den = pos
            for j in negs[i]:
                den += np.exp((a[i] * other[j]).sum() / tau)
            total += -np.log(pos / den)
        return total / b

    c2i = direction(c, it, i_neg)
    i2c = direction(it, c, c_neg)
    return c2i, i2c, (c2i + i2c) / 2


def attention_pool_direct(cand, seq, w_c, w_s, mask=None) -> tuple:
    """Score each position, softmax over the real ones, and take the weighted sum, one example at a time."""
    cand = np.asarray(cand, dtype=np.longdouble)
    seq = np.asarray(seq, dtype=np.longdouble)
    b, n, d = seq.shape
    mask = np.ones((b, n), dtype=bool) if mask is None else mask
    u = np.zeros((b, d), dtype=np.longdouble)
    w = np.zeros((b, n), dtype=np.longdouble)
    for i in range(b):
        q = cand[i] @ np.asarray(w_c, dtype=np.longdouble)
        scores = [float("-inf")] * n
        for j in range(n):
            if mask[i, j]:
                scores[j] = (q * (seq[i, j] @ np.asarray(w_s, dtype=np.longdouble))).sum() / np.sqrt(
                    np.longdouble(d))
        m = max(s for s, ok in zip(scores, mask[i]) if ok)
        e = [np.exp(s - m) if ok else np.longdouble(0) for s, ok in zip(scores, mask[i])]
        z = sum(e)
        for j in range(n):
            w[i, j] = e[j] / z
            u[i] += w[i, j] * seq[i, j]
    return u, w


def topk_bruteforce(space, anchors, k, pool=None) -> list[list[int]]:
    """Neighbours by explicit sort of (−similarity, id) tuples."""
    space = np.asarray(space, dtype=np.float64)
    pool = range(len(space)) if pool is None else sorted(set(int(p) for p in pool))
    norms = np.maximum(np.linalg.norm(space, axis=1), 1e-12)
    out = []
    for a in anchors:
        cands = []
        for j in pool:
            if j == a:
                continue
            s = float(space[a] @ space[j] / (norms[a] * norms[j]))
            cands.append((-s, j))
        cands.sort()
        out.append([j for _, j in cands[:k]])
    return out


def all_permutations(n: int):
    return list(itertools.permutations(range(n)))
