"""Frozen stub single-modal encoders and the trainable projection to token space."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import DimensionError
from .nn import Linear, Module, ModuleList

VISUAL = "visual"
TEXT = "text"


@dataclass(frozen=True)
class EncoderDims:
    raw_visual: int = 64
    raw_text: int = 32
    enc_visual: int = 48
    enc_text: int = 24
    token: int = 32

    def raw(self, kind: str) -> int:
        return self.raw_visual if kind == VISUAL else self.raw_text

    def encoded(self, kind: str) -> int:
        return self.enc_visual if kind == VISUAL else self.enc_text


@dataclass(eq=False)
class RawItemContent:
    """Variable-count raw materials of one item: ``images`` is (M, raw_visual), ``texts`` is (K, raw_text)."""

    item_id: int
    images: np.ndarray
    texts: np.ndarray
    m_max: int | None = None
    k_max: int | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64).reshape(len(self.images), -1) \
            if len(self.images) else np.zeros((0, 0))
        self.texts = np.asarray(self.texts, dtype=np.float64).reshape(len(self.texts), -1) \
            if len(self.texts) else np.zeros((0, 0))
        if self.M + self.K < 1:
            raise DimensionError(f"item {self.item_id} has no raw materials")
        if self.m_max is not None and self.M > self.m_max:
            raise DimensionError(f"item {self.item_id}: M={self.M} exceeds M_max={self.m_max}")
        if self.k_max is not None and self.K > self.k_max:
            raise DimensionError(f"item {self.item_id}: K={self.K} exceeds K_max={self.k_max}")

    @property
    def M(self) -> int:
        return len(self.images)

    @property
    def K(self) -> int:
        return len(self.texts)


@dataclass
class EncodedModality:
    kind: str
    vector: np.ndarray


@dataclass
class ModalityToken:
    kind: str
    vector: Tensor


@dataclass
class StubEncoder:
    """Seeded Gaussian affine map followed by tanh, one per modality.  Never trained.

    Weights are plain arrays, not parameters, so nothing downstream can
    accumulate a gradient into them.
    """

    seed: int
    dims: EncoderDims = field(default_factory=EncoderDims)

    def __post_init__(self):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x57AB]))
        d = self.dims
        self._w = {
            VISUAL: rng.normal(0.0, 1.0 / np.sqrt(d.raw_visual), size=(d.raw_visual, d.enc_visual)),
            TEXT: rng.normal(0.0, 1.0 / np.sqrt(d.raw_text), size=(d.raw_text, d.enc_text)),
        }
        self._b = {
            VISUAL: rng.normal(0.0, 0.5, size=d.enc_visual),
            TEXT: rng.normal(0.0, 0.5, size=d.enc_text),
        }
        for arr in (*self._w.values(), *self._b.values()):
            arr.setflags(write=False)

    def encode_matrix(self, kind: str, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.size == 0:
            return np.zeros((0, self.dims.encoded(kind)))
        if raw.ndim != 2 or raw.shape[1] != self.dims.raw(kind):
            raise DimensionError(f"{kind} raw vectors must have dim {self.dims.raw(kind)}, got shape {raw.shape}")
        return np.tanh(raw @ self._w[kind] + self._b[kind])

    def fingerprint(self) -> bytes:
        h = hashlib.sha256()
        h.update(np.int64(self.seed).tobytes())
        for kind in (VISUAL, TEXT):
            h.update(self._w[kind].tobytes())
            h.update(self._b[kind].tobytes())
        return h.digest()


def stub_encode(raw: RawItemContent, encoder: StubEncoder) -> list[EncodedModality]:
    """Visual features first, then text, each in material order."""
    out = [EncodedModality(VISUAL, v) for v in encoder.encode_matrix(VISUAL, raw.images)]
    out += [EncodedModality(TEXT, v) for v in encoder.encode_matrix(TEXT, raw.texts)]
    return out


class _FCStack(Module):
    def __init__(self, in_dim: int, out_dim: int, depth: int, rng, init: str):
        super().__init__()
        self.layers = ModuleList()
        dim = in_dim
        for i in range(depth):
            self.layers.append(Linear(dim, out_dim, rng, init=init))
            dim = out_dim

    def __call__(self, x: Tensor) -> Tensor:
        n = len(self.layers)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < n - 1:
                x = ad.relu(x)
        return x


class ProjectionParams(Module):
    """The trainable f_v / f_t stacks downsizing encoder outputs to token dim."""

    def __init__(self, dims: EncoderDims, rng: np.random.Generator, depth: int = 1, init: str = "xavier"):
        super().__init__()
        self.dims = dims
        self.visual_fc = _FCStack(dims.enc_visual, dims.token, depth, rng, init)
        self.text_fc = _FCStack(dims.enc_text, dims.token, depth, rng, init)

    def stack(self, kind: str) -> _FCStack:
        return self.visual_fc if kind == VISUAL else self.text_fc

    def __call__(self, kind: str, x) -> Tensor:
        x = ad.as_tensor(x)
        if x.shape[-1] != self.dims.encoded(kind):
            raise DimensionError(f"{kind} projection expects dim {self.dims.encoded(kind)}, got {x.shape}")
        return self.stack(kind)(x)


def project(encoded: list[EncodedModality], params: ProjectionParams) -> list[ModalityToken]:
    if not encoded:
        raise DimensionError("project: no encoded modalities given")
    tokens = []
    for e in encoded:
        if e.kind not in (VISUAL, TEXT):
            raise DimensionError(f"unknown modality kind {e.kind!r}")
        tokens.append(ModalityToken(e.kind, params(e.kind, e.vector)))
    return tokens
