"""Sign- and std-perturbed copies of training images.

The default sign perturbation uses the sign of the pixel values themselves;
``sign_mode="gradient"`` switches to the fast-gradient-sign variant, which
needs a network to differentiate through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ParameterError
from .features import FeatureSet

ORIGINAL, SIGN, STD = 0, 1, 2


@dataclass(frozen=True)
class AugmentConfig:
    sign_epsilon: float = 0.001
    std_coefficient: float = 0.001
    sign: bool = True
    std: bool = True
    sign_mode: str = "input"  # "input" or "gradient"

    def __post_init__(self):
        if self.sign_epsilon < 0 or self.std_coefficient < 0:
            raise ParameterError("perturbation magnitudes must be >= 0")
        if self.sign_mode not in ("input", "gradient"):
            raise ParameterError(f"sign_mode must be 'input' or 'gradient', got {self.sign_mode!r}")

    @classmethod
    def from_vat(cls, vat: str, **kw) -> "AugmentConfig":
        """Translate a ``--vat`` choice (off, sign, fgsm, std, both)."""
        table = {
            "off": dict(sign=False, std=False),
            "sign": dict(sign=True, std=False),
            "fgsm": dict(sign=True, std=False, sign_mode="gradient"),
            "std": dict(sign=False, std=True),
            "both": dict(sign=True, std=True),
        }
        if vat not in table:
            raise ParameterError(f"vat must be one of {sorted(table)}, got {vat!r}")
        return cls(**{**table[vat], **kw})

    @property
    def multiplier(self) -> int:
        return 1 + int(self.sign) + int(self.std)


def normalize_pixels(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size and (raw.min() < 0 or raw.max() > 255):
        raise ParameterError("raw pixel values must lie in [0, 255]")
    return raw / 255.0


def sign_perturb(x, epsilon: float = 0.001) -> np.ndarray:
    """``clip(x + epsilon * sign(x), 0, 1)`` with ``sign(0) == 0``."""
    x = np.asarray(x)
    return np.clip(x + x.dtype.type(epsilon) * np.sign(x), 0.0, 1.0).astype(x.dtype)


def std_perturb(x, coefficient: float = 0.001) -> np.ndarray:
    """Shift every element by ``coefficient * std(x)`` (std over all of ``x``), then clip."""
    x = np.asarray(x)
    shift = coefficient * float(np.std(x, dtype=np.float64))
    return np.clip(x + x.dtype.type(shift), 0.0, 1.0).astype(x.dtype)


def fgsm_perturb(network, images: np.ndarray, labels: np.ndarray, epsilon: float = 0.001,
                 batch_size: int = 256) -> np.ndarray:
    """Step each image by ``epsilon`` along the sign of d(loss)/d(input)."""
    out = np.empty_like(images)
    for i in range(0, images.shape[0], batch_size):
        xb = T.Tensor(images[i:i + batch_size].copy(), requires_grad=True)
        with T.Tape():
            loss = T.softmax_cross_entropy(network.forward(xb), labels[i:i + batch_size])
            T.backward(loss)
        out[i:i + batch_size] = np.clip(xb.data + epsilon * np.sign(xb.grad), 0.0, 1.0)
    for p in network.parameters():
        p.zero_grad()
    return out


def augment_dataset(train: FeatureSet, config: AugmentConfig = AugmentConfig(),
                    network=None) -> FeatureSet:
    """Originals, then the sign block, then the std block; labels copied verbatim."""
    if len(train) == 0:
        raise ParameterError("cannot augment an empty training set")
    blocks = [train.images]
    labels = [train.labels]
    prov = [np.full(len(train), ORIGINAL, np.uint8)]
    if config.sign:
        if config.sign_mode == "gradient":
            if network is None:
                raise ParameterError("gradient-sign augmentation needs a network")
            perturbed = fgsm_perturb(network, train.images, train.labels, config.sign_epsilon)
        else:
            perturbed = sign_perturb(train.images, config.sign_epsilon)
        blocks.append(perturbed)
        labels.append(train.labels)
        prov.append(np.full(len(train), SIGN, np.uint8))
    if config.std:
        blocks.append(std_perturb(train.images, config.std_coefficient))
        labels.append(train.labels)
        prov.append(np.full(len(train), STD, np.uint8))
    return FeatureSet(train.mode, np.concatenate(blocks), np.concatenate(labels), np.concatenate(prov))


def equal_budget(augmented: FeatureSet, size: int, seed: int) -> FeatureSet:
    """Sample ``size`` examples without replacement from an augmented set."""
    if not 0 < size <= len(augmented):
        raise ParameterError(f"budget {size} outside (0, {len(augmented)}]")
    idx = np.sort(np.random.default_rng(seed).choice(len(augmented), size=size, replace=False))
    return augmented.subset(idx)
