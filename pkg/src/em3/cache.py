"""Offline cache of frozen encoder outputs and the generation-swapped online embedding cache.

Online cache file format (little-endian)::

    magic        8 bytes   b"EM3EMBC\\0"
    version      uint32
    generation   uint64
    fingerprint  32 bytes  sha256 of the fusion parameters
    dim          uint32    floats per record (Q * d)
    count        uint64
    records      count x { id_len uint32, id utf-8, dim x float64 }
    checksum     uint32    crc32 of everything above

Offline cache file format::

    magic        8 bytes   b"EM3OFFC\\0"
    version      uint32
    content_hash 32 bytes  sha256 of the stub encoder and every raw input
    m_max, k_max, enc_visual, enc_text   4 x uint32
    count        uint64
    records      count x { item_id int64, M uint32, K uint32,
                           M x enc_visual float64, K x enc_text float64 }
    checksum     uint32    crc32 of everything above
"""

from __future__ import annotations

import base64
import hashlib
import io
import os
import struct
import threading
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .encoders import TEXT, VISUAL, EncodedModality, RawItemContent, StubEncoder, stub_encode
from .exceptions import CorruptFileError, DimensionError, StaleCacheError, StateError

ONLINE_MAGIC = b"EM3EMBC\0"
OFFLINE_MAGIC = b"EM3OFFC\0"
FORMAT_VERSION = 1


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _seal(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _unseal(blob: bytes, magic: bytes) -> io.BytesIO:
    if len(blob) < len(magic) + 8 or blob[: len(magic)] != magic:
        raise CorruptFileError("bad magic bytes")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptFileError("checksum mismatch")
    buf = io.BytesIO(body)
    buf.read(len(magic))
    (version,) = struct.unpack("<I", buf.read(4))
    if version != FORMAT_VERSION:
        raise CorruptFileError(f"unsupported format version {version}")
    return buf


def content_hash(items: Iterable[RawItemContent], encoder: StubEncoder) -> bytes:
    h = hashlib.sha256(encoder.fingerprint())
    for raw in items:
        h.update(struct.pack("<qII", int(raw.item_id), raw.M, raw.K))
        h.update(np.ascontiguousarray(raw.images, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(raw.texts, dtype="<f8").tobytes())
    return h.digest()


# offline side


class OfflineFeatureCache:
    """Precomputed stub-encoder outputs for every item, stored padded."""

    def __init__(self, visual: np.ndarray, n_visual: np.ndarray, text: np.ndarray, n_text: np.ndarray,
                 content_hash: bytes):
        self.visual = visual
        self.n_visual = n_visual
        self.text = text
        self.n_text = n_text
        self.content_hash = content_hash
        m_max, k_max = visual.shape[1], text.shape[1]
        self.visual_mask = np.arange(m_max)[None, :] < n_visual[:, None]
        self.text_mask = np.arange(k_max)[None, :] < n_text[:, None]

    def __len__(self) -> int:
        return len(self.visual)

    def lookup(self, ids: np.ndarray):
        """Padded ``(visual, visual_mask, text, text_mask)`` for ``ids``."""
        return self.visual[ids], self.visual_mask[ids], self.text[ids], self.text_mask[ids]

    def encoded(self, item_id: int) -> list[EncodedModality]:
        m, k = int(self.n_visual[item_id]), int(self.n_text[item_id])
        return ([EncodedModality(VISUAL, self.visual[item_id, j]) for j in range(m)]
                + [EncodedModality(TEXT, self.text[item_id, j]) for j in range(k)])

    def save(self, path) -> None:
        n, m_max, ev = self.visual.shape
        k_max, et = self.text.shape[1:]
        out = bytearray(OFFLINE_MAGIC)
        out += struct.pack("<I", FORMAT_VERSION)
        out += self.content_hash
        out += struct.pack("<IIIIQ", m_max, k_max, ev, et, n)
        for i in range(n):
            m, k = int(self.n_visual[i]), int(self.n_text[i])
            out += struct.pack("<qII", i, m, k)
            out += np.ascontiguousarray(self.visual[i, :m], dtype="<f8").tobytes()
            out += np.ascontiguousarray(self.text[i, :k], dtype="<f8").tobytes()
        _atomic_write(path, _seal(bytes(out)))

    @classmethod
    def load(cls, path, items: list[RawItemContent] | None = None,
             encoder: StubEncoder | None = None) -> "OfflineFeatureCache":
        """Read a cache file; when ``items``/``encoder`` are given, refuse a stale one."""
        buf = _unseal(Path(path).read_bytes(), OFFLINE_MAGIC)
        stored_hash = buf.read(32)
        m_max, k_max, ev, et, n = struct.unpack("<IIIIQ", buf.read(24))
        visual = np.zeros((n, m_max, ev))
        text = np.zeros((n, k_max, et))
        n_visual = np.zeros(n, dtype=np.int64)
        n_text = np.zeros(n, dtype=np.int64)
        for _ in range(n):
            i, m, k = struct.unpack("<qII", buf.read(16))
            visual[i, :m] = np.frombuffer(buf.read(8 * m * ev), dtype="<f8").reshape(m, ev)
            text[i, :k] = np.frombuffer(buf.read(8 * k * et), dtype="<f8").reshape(k, et)
            n_visual[i], n_text[i] = m, k
        if items is not None and encoder is not None and content_hash(items, encoder) != stored_hash:
            raise StaleCacheError("offline feature cache was built from different raw data or encoder; rebuild it")
        return cls(visual, n_visual, text, n_text, stored_hash)


def build_offline_cache(items: list[RawItemContent], encoder: StubEncoder,
                        m_max: int | None = None, k_max: int | None = None) -> OfflineFeatureCache:
    n = len(items)
    if [r.item_id for r in items] != list(range(n)):
        raise DimensionError("offline cache expects items with dense ids 0..n-1 in order")
    m_max = m_max if m_max is not None else max(r.M for r in items)
    k_max = k_max if k_max is not None else max(r.K for r in items)
    d = encoder.dims
    visual = np.zeros((n, m_max, d.enc_visual))
    text = np.zeros((n, k_max, d.enc_text))
    n_visual = np.zeros(n, dtype=np.int64)
    n_text = np.zeros(n, dtype=np.int64)
    for raw in items:
        i = raw.item_id
        visual[i, : raw.M] = encoder.encode_matrix(VISUAL, raw.images)
        text[i, : raw.K] = encoder.encode_matrix(TEXT, raw.texts)
        n_visual[i], n_text[i] = raw.M, raw.K
    return OfflineFeatureCache(visual, n_visual, text, n_text, content_hash(items, encoder))


class LiveFeatures:
    """Same interface as the offline cache, but invokes the stub encoder on every call."""

    def __init__(self, items: list[RawItemContent], encoder: StubEncoder, m_max: int, k_max: int):
        self.items = items
        self.encoder = encoder
        self.m_max, self.k_max = m_max, k_max
        self.calls = 0

    def __len__(self) -> int:
        return len(self.items)

    def lookup(self, ids: np.ndarray):
        self.calls += 1
        d = self.encoder.dims
        ids = np.asarray(ids)
        visual = np.zeros((len(ids), self.m_max, d.enc_visual))
        text = np.zeros((len(ids), self.k_max, d.enc_text))
        vm = np.zeros((len(ids), self.m_max), dtype=bool)
        tm = np.zeros((len(ids), self.k_max), dtype=bool)
        for row, i in enumerate(ids):
            raw = self.items[int(i)]
            visual[row, : raw.M] = self.encoder.encode_matrix(VISUAL, raw.images)
            text[row, : raw.K] = self.encoder.encode_matrix(TEXT, raw.texts)
            vm[row, : raw.M] = True
            tm[row, : raw.K] = True
        return visual, vm, text, tm

    def encoded(self, item_id: int) -> list[EncodedModality]:
        return stub_encode(self.items[item_id], self.encoder)


# online side


@dataclass(frozen=True)
class Generation:
    number: int
    fingerprint: bytes
    embeddings: dict  # item id (str) -> read-only float64 vector
    dim: int


@dataclass(frozen=True)
class CacheEntry:
    embedding: np.ndarray
    generation: int | None
    hit: bool


class RefreshJob:
    """An in-flight refresh.  Nothing is visible to readers until ``commit``."""

    def __init__(self, cache: "OnlineEmbeddingCache", fingerprint: bytes,
                 embed: Callable[[object], np.ndarray], item_ids: list):
        self._cache = cache
        self._fingerprint = fingerprint
        self._embed = embed
        self._pending = list(item_ids)
        self._built: dict = {}
        self.done = False

    @property
    def remaining(self) -> int:
        return len(self._pending)

    def step(self, n: int = 1) -> int:
        if self.done:
            raise StateError("refresh already finished")
        for _ in range(min(n, len(self._pending))):
            item = self._pending.pop(0)
            vec = np.array(self._embed(item), dtype=np.float64).reshape(-1)
            vec.setflags(write=False)
            self._built[str(item)] = vec
        return len(self._pending)

    def commit(self) -> Generation:
        if self.done:
            raise StateError("refresh already finished")
        self.step(len(self._pending))
        self.done = True
        return self._cache._publish(self._fingerprint, self._built)

    def abort(self) -> None:
        self.done = True
        self._built = {}


class OnlineEmbeddingCache:
    """Fused item embeddings served from the latest completed generation.

    Readers take one reference to the current ``Generation`` and read only
    from it; a refresh builds a separate dict and swaps the reference in one
    assignment, so a lookup never mixes two generations.
    """

    def __init__(self, refresh_interval: float | None = None):
        self.refresh_interval = refresh_interval
        self._current: Generation | None = None
        self._write_lock = threading.Lock()

    @property
    def generation(self) -> int | None:
        gen = self._current
        return None if gen is None else gen.number

    @property
    def current(self) -> Generation | None:
        return self._current

    def begin_refresh(self, fingerprint: bytes, embed: Callable[[object], np.ndarray], item_ids) -> RefreshJob:
        return RefreshJob(self, fingerprint, embed, list(item_ids))

    def refresh(self, fingerprint: bytes, embed: Callable[[object], np.ndarray], item_ids) -> Generation:
        job = self.begin_refresh(fingerprint, embed, item_ids)
        try:
            return job.commit()
        except BaseException:
            job.abort()
            raise

    def maybe_refresh(self, step: int, fingerprint: bytes, embed, item_ids) -> Generation | None:
        """Training-embedded cadence: refresh every ``refresh_interval`` optimizer steps."""
        if not self.refresh_interval or step % int(self.refresh_interval):
            return None
        return self.refresh(fingerprint, embed, item_ids)

    def _publish(self, fingerprint: bytes, built: dict) -> Generation:
        dims = {len(v) for v in built.values()}
        if len(dims) > 1:
            raise DimensionError(f"refresh produced embeddings of several widths {sorted(dims)}")
        with self._write_lock:
            prev = self._current
            number = 1 if prev is None else prev.number + 1
            gen = Generation(number, fingerprint, built, dims.pop() if dims else 0)
            self._current = gen
        return gen

    def install(self, gen: Generation) -> None:
        """Adopt a generation loaded from disk if it is newer than the current one."""
        with self._write_lock:
            if self._current is None or gen.number > self._current.number:
                self._current = gen

    def lookup(self, item_id, fallback: Callable[[object], np.ndarray] | None = None) -> CacheEntry | None:
        """Latest completed value, or the fallback's value, or ``None`` on a miss."""
        gen = self._current
        if gen is not None:
            vec = gen.embeddings.get(str(item_id))
            if vec is not None:
                return CacheEntry(vec, gen.number, True)
        if fallback is not None:
            return CacheEntry(np.asarray(fallback(item_id), dtype=np.float64).reshape(-1),
                              None if gen is None else gen.number, False)
        return None

    def save(self, path) -> None:
        gen = self._current
        if gen is None:
            raise StateError("no completed generation to save")
        save_generation(gen, path)

    @classmethod
    def load(cls, path, refresh_interval: float | None = None) -> "OnlineEmbeddingCache":
        cache = cls(refresh_interval)
        cache.install(load_generation(path))
        return cache


def save_generation(gen: Generation, path) -> None:
    out = bytearray(ONLINE_MAGIC)
    out += struct.pack("<IQ", FORMAT_VERSION, gen.number)
    fp = gen.fingerprint.ljust(32, b"\0")[:32]
    out += fp
    out += struct.pack("<IQ", gen.dim, len(gen.embeddings))
    for key in sorted(gen.embeddings, key=_id_sort_key):
        raw_id = key.encode("utf-8")
        out += struct.pack("<I", len(raw_id)) + raw_id
        out += np.ascontiguousarray(gen.embeddings[key], dtype="<f8").tobytes()
    _atomic_write(path, _seal(bytes(out)))


def load_generation(path) -> Generation:
    buf = _unseal(Path(path).read_bytes(), ONLINE_MAGIC)
    (number,) = struct.unpack("<Q", buf.read(8))
    fingerprint = buf.read(32)
    dim, count = struct.unpack("<IQ", buf.read(12))
    emb = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", buf.read(4))
        key = buf.read(n).decode("utf-8")
        vec = np.frombuffer(buf.read(8 * dim), dtype="<f8").astype(np.float64)
        vec.setflags(write=False)
        emb[key] = vec
    return Generation(number, fingerprint, emb, dim)


def _id_sort_key(key: str):
    return (0, int(key), "") if key.lstrip("-").isdigit() else (1, 0, key)


def encode_payload(vec: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(vec, dtype="<f8").tobytes()).decode("ascii")


def decode_payload(text: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f8").astype(np.float64)


def fusion_fingerprint(named_params: Iterable) -> bytes:
    h = hashlib.sha256()
    for name, p in named_params:
        h.update(name.encode())
        h.update(struct.pack("<I", p.data.ndim))
        h.update(np.asarray(p.data.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return h.digest()


def direct_embedder(model, features) -> Callable[[int], np.ndarray]:
    """Per-item fusion path shared by refreshes and cache-miss fallbacks."""

    def embed(item_id) -> np.ndarray:
        return model.embed_item(int(item_id), features)

    return embed
