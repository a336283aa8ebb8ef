"""Parameter containers, dense layers, the LoRA adapter and the Adam optimizer."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .exceptions import DimensionError, StateError


class Module:
    """Registers ``Parameter`` and ``Module`` attributes in assignment order."""

    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        params = self.__dict__.get("_params")
        modules = self.__dict__.get("_modules")
        if params is None:
            raise StateError(f"{type(self).__name__}.__init__ must call Module.__init__ first")
        params.pop(name, None)
        modules.pop(name, None)
        if isinstance(value, Parameter):
            params[name] = value
        elif isinstance(value, Module):
            modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, m in self._modules.items():
            yield from m.named_modules(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[tuple[str, Parameter]]:
        return [(n, p) for n, p in self.named_parameters() if not p.frozen]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> None:
        for p in self.parameters():
            p.frozen = True

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.frozen = False

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for n, p in own.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"{n}: stored shape {arr.shape} != {p.shape}")
            p.data = arr.copy()


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._modules)), m)

    def __iter__(self):
        return iter(list(self._modules.values()))

    def __len__(self) -> int:
        return len(self._modules)

    def __getitem__(self, i: int) -> Module:
        n = len(self._modules)
        if not -n <= i < n:
            raise IndexError(f"index {i} out of range for {n} modules")
        return self._modules[str(i % n)]


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    """``y = x @ W + b`` with ``W`` stored as (in, out)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None,
                 bias: bool = True, init: str = "xavier"):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        if init == "xavier":
            w = xavier(rng, in_dim, out_dim)
        elif init == "zeros":
            w = np.zeros((in_dim, out_dim))
        elif init == "identity":
            if in_dim != out_dim:
                raise DimensionError(f"identity init needs a square weight, got {in_dim}x{out_dim}")
            w = np.eye(in_dim)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"Linear expects last dim {self.in_dim}, got shape {x.shape}")
        y = ad.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LoraLinear(Module):
    """Frozen base layer plus a trainable low-rank bypass: ``sg(base(x)) + (x @ A) @ B``.

    ``A`` is (in, r) Gaussian, ``B`` is (r, out) zero, so the wrapped layer
    reproduces the base output exactly at attach time.
    """

    def __init__(self, base: Linear, r: int, rng: np.random.Generator, std: float = 0.02):
        super().__init__()
        if not 0 < r < min(base.in_dim, base.out_dim):
            raise DimensionError(f"LoRA rank {r} must satisfy 0 < r < {min(base.in_dim, base.out_dim)}")
        base.freeze()
        self.base = base
        self.rank = r
        self.in_dim, self.out_dim = base.in_dim, base.out_dim
        self.lora_a = Parameter(rng.normal(0.0, std, size=(base.in_dim, r)))
        self.lora_b = Parameter(np.zeros((r, base.out_dim)))

    def __call__(self, x: Tensor) -> Tensor:
        return lora_forward(x, self)


def lora_forward(x: Tensor, adapter: LoraLinear) -> Tensor:
    if x.shape[-1] != adapter.in_dim:
        raise DimensionError(f"LoRA expects last dim {adapter.in_dim}, got shape {x.shape}")
    frozen_path = ad.stop_gradient(adapter.base(x))
    return frozen_path + ad.matmul(ad.matmul(x, adapter.lora_a), adapter.lora_b)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


class Adam:
    """Adaptive moment estimation over a named set of parameters.

    Step counts are kept per parameter so that parameters added mid-run
    (LoRA adapters) get their own bias correction.
    """

    def __init__(self, params: list[tuple[str, Parameter]], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.params = list(params)
        self.t = {n: 0 for n, _ in self.params}
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self) -> None:
        b1, b2 = self.beta1, self.beta2
        for n, p in self.params:
            g = p.grad
            if g is None or p.frozen:
                continue
            t = self.t[n] = self.t[n] + 1
            m = self.m[n]
            v = self.v[n]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data = p.data - self.lr * (m / (1.0 - b1 ** t)) / (np.sqrt(v / (1.0 - b2 ** t)) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def carry_over(self, old: "Adam") -> None:
        """Reuse moment state from ``old`` for parameters that are the same objects."""
        by_obj = {id(p): n for n, p in old.params}
        for n, p in self.params:
            src = by_obj.get(id(p))
            if src is not None:
                self.t[n], self.m[n], self.v[n] = old.t[src], old.m[src], old.v[src]
