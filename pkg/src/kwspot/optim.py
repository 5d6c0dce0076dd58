"""Weight initialisers and the two optimizers (plain SGD and Adam)."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import KwsError, ParameterError, ShapeError
from .tensor import Tensor


class InitKind(str, enum.Enum):
    XAVIER = "xavier"
    TRUNCATED_NORMAL = "trunc-normal"


@dataclass(frozen=True)
class InitSpec:
    kind: InitKind = InitKind.XAVIER
    std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", InitKind(self.kind))
        if self.std <= 0:
            raise ParameterError(f"std must be > 0, got {self.std}")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def fans(shape: Sequence[int]) -> tuple[int, int]:
    """``(fan_in, fan_out)``; conv kernels ``[kh, kw, in, out]`` scale both by ``kh*kw``."""
    if len(shape) < 2:
        raise ParameterError(f"fan computation needs >= 2 dims, got shape {tuple(shape)}")
    receptive = math.prod(shape[:-2])
    return receptive * shape[-2], receptive * shape[-1]


def xavier_bound(shape: Sequence[int]) -> float:
    m, n = fans(shape)
    return math.sqrt(6.0) / math.sqrt(m + n)


def xavier_init(shape: Sequence[int], seed=0, dtype=np.float32) -> np.ndarray:
    """Uniform on ``[-sqrt(6)/sqrt(m+n), +sqrt(6)/sqrt(m+n)]``."""
    eps = xavier_bound(shape)
    return _rng(seed).uniform(-eps, eps, size=tuple(shape)).astype(dtype)


def truncated_normal_rounds(shape: Sequence[int], std: float, rng) -> tuple[np.ndarray, int]:
    """Normal draws, redrawing any value beyond two standard deviations.

    Returns the sample and the number of redraw rounds needed, which bounds
    the retries of any single element.
    """
    if std <= 0:
        raise ParameterError(f"std must be > 0, got {std}")
    rng = _rng(rng)
    out = rng.normal(0.0, std, size=tuple(shape))
    bad = np.abs(out) > 2 * std
    rounds = 0
    while bad.any():
        rounds += 1
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out, rounds


def truncated_normal_init(shape: Sequence[int], std: float = 0.01, seed=0,
                          dtype=np.float32) -> np.ndarray:
    values, _ = truncated_normal_rounds(shape, std, seed)
    # float32 rounding can push a value just past the bound
    bound = dtype(2 * std)
    return np.clip(values.astype(dtype), -bound, bound)


def init_weight(shape: Sequence[int], spec: InitSpec, rng, dtype=np.float32) -> np.ndarray:
    if spec.kind is InitKind.XAVIER:
        return xavier_init(shape, rng, dtype)
    return truncated_normal_init(shape, spec.std, rng, dtype)


# --------------------------------------------------------------------------
# Optimizers
# --------------------------------------------------------------------------

def _check_pairs(params, grads):
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"parameter shape {p.shape} != gradient shape {g.shape}")


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> list[np.ndarray]:
    """Return ``p - lr * g`` for each pair (inputs are not modified)."""
    _check_pairs(params, grads)
    return [p - p.dtype.type(lr) * g for p, g in zip(params, grads)]


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None
    step: int = 0

    @classmethod
    def init(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **hyper)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; ``state`` moments are updated in place."""
    if state.m is None or state.v is None:
        raise KwsError("Adam state is not initialised; use AdamState.init(params)")
    _check_pairs(params, grads)
    _check_pairs(state.m, grads)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    lr_t = state.lr / (1.0 - b1 ** t)
    c2 = 1.0 / (1.0 - b2 ** t)
    out = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        out.append(p - (lr_t * m / (np.sqrt(v * c2) + state.eps)).astype(p.dtype, copy=False))
    return out, state


class Optimizer:
    """Applies one update to a list of parameter tensors from their ``.grad``."""

    def __init__(self, params: Sequence[Tensor], lr: float):
        if lr < 0:
            raise ParameterError(f"learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.steps = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def _update(self, data, grads):  # pragma: no cover - abstract
        raise NotImplementedError

    def step(self) -> None:
        grads = [p.grad for p in self.params]
        new = self._update([p.data for p in self.params], grads)
        for p, d in zip(self.params, new):
            if not np.all(np.isfinite(d)):
                raise FloatingPointError(f"optimizer produced non-finite values in {p.name or 'parameter'}")
            p.data = d
        self.steps += 1


class SGD(Optimizer):
    def __init__(self, params, lr: float = 0.01):
        super().__init__(params, lr)

    def _update(self, data, grads):
        return sgd_step(data, grads, self.lr)


class Adam(Optimizer):
    def __init__(self, params, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(params, lr)
        self.state = AdamState.init([p.data for p in self.params], lr=lr, beta1=beta1,
                                    beta2=beta2, eps=eps)

    def _update(self, data, grads):
        new, self.state = adam_step(data, grads, self.state)
        return new


OPTIMIZERS = {"sgd": SGD, "adam": Adam}
DEFAULT_LR = {"sgd": 0.01, "adam": 0.001}


def make_optimizer(kind: str, params, lr: float | None = None) -> Optimizer:
    kind = kind.lower()
    if kind not in OPTIMIZERS:
        raise ParameterError(f"unknown optimizer {kind!r}; choose from {sorted(OPTIMIZERS)}")
    return OPTIMIZERS[kind](params, DEFAULT_LR[kind] if lr is None else lr)


__all__ = [
    "InitKind", "InitSpec", "fans", "xavier_bound", "xavier_init", "truncated_normal_init",
    "truncated_normal_rounds", "init_weight", "sgd_step", "AdamState", "adam_step",
    "SGD", "Adam", "make_optimizer", "DEFAULT_LR",
]
