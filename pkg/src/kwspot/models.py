"""The four network variants, parameter counting and checkpoints.

A :class:`ModelSpec` is a plain declarative record; :func:`expand` turns it
into a flat list of layer descriptors (tracing shapes on the way), and
:class:`Network` allocates parameters for those layers and runs them.
"""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import FormatError, IncompatibleCheckpointError, ShapeError
from .optim import InitSpec, init_weight

NUM_CLASSES = 12
REFERENCE_PARAMS = 63_800  # reported size of the low-latency model


class Variant(str, enum.Enum):
    LOW_LATENCY = "low-latency"
    MNIST_CNN = "mnist"
    SHALLOW_CRM = "shallow"
    DEEP_CRM = "deep"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    ``conv_filters`` lists output channels per conv layer and ``dense`` the
    hidden fully-connected widths; the final ``num_classes`` layer is
    implicit.  ``linear_dense`` holds indices of hidden dense layers that
    have no nonlinearity.  ``dropout_after`` names layers followed by
    dropout with ``keep_prob``.
    """

    variant: Variant
    input_height: int
    input_width: int
    num_classes: int = NUM_CLASSES
    conv_filters: tuple[int, ...] = ()
    conv_kernel: int = 3
    conv_stride: tuple[int, int] = (1, 1)
    conv_padding: str = "SAME"
    pool_after_conv: bool = True
    dense: tuple[int, ...] = ()
    linear_dense: tuple[int, ...] = ()
    activation: str = "relu"
    keep_prob: float | None = None
    dropout_after: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        for name in ("conv_filters", "conv_stride", "dense", "linear_dense", "dropout_after"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.activation not in T.ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(T.ACTIVATIONS)}, got {self.activation!r}")
        if self.keep_prob is not None and not 0.0 < self.keep_prob <= 1.0:
            raise ValueError(f"keep_prob must be in (0, 1], got {self.keep_prob}")

    def to_text(self) -> str:
        d = asdict(self)
        d["variant"] = self.variant.value
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_text(cls, text: str) -> "ModelSpec":
        d = json.loads(text)
        for k in ("conv_filters", "conv_stride", "dense", "linear_dense", "dropout_after"):
            d[k] = tuple(d[k])
        return cls(**d)

    def with_input(self, height: int, width: int) -> "ModelSpec":
        return replace(self, input_height=height, input_width=width)


# --------------------------------------------------------------------------
# Variant constructors
# --------------------------------------------------------------------------

def low_latency_spec(height: int = 40, width: int = 98, filter_size: int = 7, stride: int = 3,
                     feature_maps: int = 3, bottleneck: int = 51, hidden: int = 100,
                     freq_stride_only: bool = False, keep_prob: float | None = None,
                     dropout_after: Sequence[str] = ()) -> ModelSpec:
    """conv + relu -> linear bottleneck -> dense + relu -> logits.

    Frequency runs along rows, so ``freq_stride_only`` strides rows only.
    The default bottleneck of 51 puts a 40x98 input at 63,529 parameters.
    """
    return ModelSpec(
        Variant.LOW_LATENCY, height, width,
        conv_filters=(feature_maps,), conv_kernel=filter_size,
        conv_stride=(stride, 1) if freq_stride_only else (stride, stride),
        conv_padding="VALID", pool_after_conv=False,
        dense=(bottleneck, hidden), linear_dense=(0,),
        keep_prob=keep_prob, dropout_after=tuple(dropout_after),
    )


def mnist_spec(height: int = 28, width: int = 28, keep_prob: float = 0.5) -> ModelSpec:
    return ModelSpec(
        Variant.MNIST_CNN, height, width, conv_filters=(32, 64), conv_kernel=5,
        dense=(1024,), keep_prob=keep_prob, dropout_after=("fc1",),
    )


def shallow_crm_spec(height: int = 28, width: int = 28, filters: Sequence[int] = (16, 32, 64),
                     dense: int = 256, activation: str = "relu", keep_prob: float | None = None,
                     dropout_after: Sequence[str] = ()) -> ModelSpec:
    if len(filters) != 3:
        raise ValueError("the shallow C-R-M network has exactly 3 conv blocks")
    return ModelSpec(Variant.SHALLOW_CRM, height, width, conv_filters=tuple(filters), conv_kernel=3,
                     dense=(dense,), activation=activation, keep_prob=keep_prob,
                     dropout_after=tuple(dropout_after))


def deep_crm_spec(height: int = 28, width: int = 28, filters: Sequence[int] = (16, 32, 64, 128, 128),
                  dense: int = 256, activation: str = "relu", keep_prob: float | None = None,
                  dropout_after: Sequence[str] = ()) -> ModelSpec:
    if len(filters) != 5:
        raise ValueError("the deep C-R-M network has exactly 5 conv blocks")
    return ModelSpec(Variant.DEEP_CRM, height, width, conv_filters=tuple(filters), conv_kernel=3,
                     dense=(dense,), activation=activation, keep_prob=keep_prob,
                     dropout_after=tuple(dropout_after))


def default_spec(variant: Variant | str, height: int, width: int, **kw) -> ModelSpec:
    variant = Variant(variant)
    builder = {
        Variant.LOW_LATENCY: low_latency_spec,
        Variant.MNIST_CNN: mnist_spec,
        Variant.SHALLOW_CRM: shallow_crm_spec,
        Variant.DEEP_CRM: deep_crm_spec,
    }[variant]
    return builder(height, width, **kw)


# --------------------------------------------------------------------------
# Expansion
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Layer:
    kind: str                       # conv | act | pool | flatten | dense | dropout
    name: str = ""
    shape: tuple[int, ...] = ()     # weight shape for conv/dense
    stride: tuple[int, int] = (1, 1)
    padding: str = "SAME"
    fn: str = ""
    out_shape: tuple[int, ...] = field(default=(), compare=False)


def expand(spec: ModelSpec) -> list[Layer]:
    """Layer list for ``spec``; raises :class:`ShapeError` if any dim collapses."""
    if spec.variant is Variant.MNIST_CNN and (spec.input_height, spec.input_width) != (28, 28):
        raise ShapeError(f"mnist model expects 28x28 input, got {spec.input_height}x{spec.input_width}")
    h, w, c = spec.input_height, spec.input_width, 1
    if h < 1 or w < 1:
        raise ShapeError(f"input must be at least 1x1, got {h}x{w}")
    act = spec.activation
    layers: list[Layer] = []

    def maybe_dropout(name):
        if spec.keep_prob is not None and name in spec.dropout_after:
            layers.append(Layer("dropout", f"{name}.dropout", out_shape=layers[-1].out_shape))

    k = spec.conv_kernel
    sh, sw = spec.conv_stride
    for i, filters in enumerate(spec.conv_filters, 1):
        try:
            h = T.conv_output_size(h, k, sh, spec.conv_padding)
            w = T.conv_output_size(w, k, sw, spec.conv_padding)
        except ShapeError as e:
            raise ShapeError(f"{spec.variant.value}: conv{i} does not fit: {e}") from None
        name = f"conv{i}"
        layers.append(Layer("conv", name, (k, k, c, filters), (sh, sw), spec.conv_padding, out_shape=(h, w, filters)))
        layers.append(Layer("act", f"{name}.act", fn=act, out_shape=(h, w, filters)))
        c = filters
        if spec.pool_after_conv:
            if h < 2 or w < 2:
                raise ShapeError(f"{spec.variant.value}: input too small, {h}x{w} map cannot be halved "
                                 f"at pool{i}")
            h, w = T.pool_output_size(h, 2), T.pool_output_size(w, 2)
            layers.append(Layer("pool", f"pool{i}", out_shape=(h, w, c)))
        maybe_dropout(name)

    m = h * w * c
    layers.append(Layer("flatten", "flatten", out_shape=(m,)))
    for i, n in enumerate(spec.dense, 1):
        name = f"fc{i}"
        layers.append(Layer("dense", name, (m, n), out_shape=(n,)))
        if i - 1 not in spec.linear_dense:
            layers.append(Layer("act", f"{name}.act", fn=act, out_shape=(n,)))
        maybe_dropout(name)
        m = n
    layers.append(Layer("dense", "logits", (m, spec.num_classes), out_shape=(spec.num_classes,)))
    return layers


def count_params(spec: ModelSpec) -> int:
    """Closed-form parameter count: weights plus one bias per output unit."""
    total = 0
    for layer in expand(spec):
        if layer.kind in ("conv", "dense"):
            total += math.prod(layer.shape) + layer.shape[-1]
    return total


def spatial_trace(spec: ModelSpec) -> list[tuple[int, int]]:
    """Feature-map sizes after the input and after every conv block."""
    trace = [(spec.input_height, spec.input_width)]
    layers = expand(spec)
    for i, layer in enumerate(layers):
        if layer.kind == "conv":
            block_end = layer
            for nxt in layers[i + 1:]:
                if nxt.kind in ("conv", "flatten"):
                    break
                block_end = nxt
            trace.append(block_end.out_shape[:2])
    return trace


def solve_bottleneck(height: int, width: int, target: int = REFERENCE_PARAMS, **kw) -> int:
    """Bottleneck width whose low-latency parameter count is closest to ``target``."""
    best, best_err = 1, None
    for r in range(1, 4096):
        err = abs(count_params(low_latency_spec(height, width, bottleneck=r, **kw)) - target)
        if best_err is None or err < best_err:
            best, best_err = r, err
    return best


# --------------------------------------------------------------------------
# Network
# --------------------------------------------------------------------------

class Network:
    def __init__(self, spec: ModelSpec, params: dict[str, T.Tensor]):
        self.spec = spec
        self.layers = expand(spec)
        self.params = params
        for layer in self.layers:
            if layer.kind in ("conv", "dense"):
                for suffix, shape in ((".w", layer.shape), (".b", (layer.shape[-1],))):
                    p = params.get(layer.name + suffix)
                    if p is None or p.shape != tuple(shape):
                        got = None if p is None else p.shape
                        raise IncompatibleCheckpointError(
                            f"parameter {layer.name + suffix}: expected shape {tuple(shape)}, got {got}")

    @classmethod
    def build(cls, spec: ModelSpec, init: InitSpec | None = None, dtype=np.float32) -> "Network":
        """Allocate parameters: weights per ``init``, biases zero."""
        init = init or InitSpec()
        rng = np.random.default_rng(init.seed)
        params: dict[str, T.Tensor] = {}
        for layer in expand(spec):
            if layer.kind in ("conv", "dense"):
                w = init_weight(layer.shape, init, rng, dtype)
                params[layer.name + ".w"] = T.Tensor(w, requires_grad=True, name=layer.name + ".w")
                params[layer.name + ".b"] = T.Tensor(np.zeros(layer.shape[-1], dtype), requires_grad=True,
                                                     name=layer.name + ".b")
        return cls(spec, params)

    def parameters(self) -> list[T.Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    @property
    def input_shape(self) -> tuple[int, int]:
        return self.spec.input_height, self.spec.input_width

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> T.Tensor:
        """Logits ``[batch, num_classes]`` for images ``[batch, H, W]`` (or NHWC)."""
        if not isinstance(x, T.Tensor):
            x = T.Tensor(np.asarray(x, dtype=self.params["logits.w"].dtype))
        if x.ndim == 3:
            x = T.reshape(x, x.shape + (1,))
        if x.shape[1:] != (self.spec.input_height, self.spec.input_width, 1):
            raise ShapeError(f"network expects [batch, {self.spec.input_height}, {self.spec.input_width}, 1] "
                             f"input, got {x.shape}")
        for layer in self.layers:
            if layer.kind == "conv":
                x = T.conv2d(x, self.params[layer.name + ".w"], *layer.stride, padding=layer.padding)
                x = T.add(x, self.params[layer.name + ".b"])
            elif layer.kind == "act":
                x = T.ACTIVATIONS[layer.fn](x)
            elif layer.kind == "pool":
                x = T.maxpool2d(x, 2, 2, 2)
            elif layer.kind == "flatten":
                x = T.flatten(x)
            elif layer.kind == "dense":
                x = T.dense(x, self.params[layer.name + ".w"], self.params[layer.name + ".b"])
            elif layer.kind == "dropout":
                x = T.dropout(x, self.spec.keep_prob, training, rng)
        return x

    def logits(self, x, batch_size: int = 256) -> np.ndarray:
        """Inference-mode logits, evaluated in batches without recording."""
        x = np.asarray(x)
        outs = []
        with T.no_grad():
            for i in range(0, x.shape[0], batch_size):
                outs.append(self.forward(x[i:i + batch_size]).data)
        return np.concatenate(outs) if outs else np.zeros((0, self.spec.num_classes))


def build_low_latency(height: int = 40, width: int = 98, init: InitSpec | None = None, **kw) -> Network:
    return Network.build(low_latency_spec(height, width, **kw), init)


def build_mnist_cnn(height: int = 28, width: int = 28, init: InitSpec | None = None, **kw) -> Network:
    return Network.build(mnist_spec(height, width, **kw), init)


def build_shallow_crm(height: int = 28, width: int = 28, init: InitSpec | None = None, **kw) -> Network:
    return Network.build(shallow_crm_spec(height, width, **kw), init)


def build_deep_crm(height: int = 28, width: int = 28, init: InitSpec | None = None, **kw) -> Network:
    return Network.build(deep_crm_spec(height, width, **kw), init)


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

CKPT_MAGIC = b"KWSCKPT\x00"
CKPT_VERSION = 1


def save_checkpoint(network: Network, path: str | Path, seed: int = 0, epoch: int = 0) -> None:
    """Magic, version, spec text, provenance, then named float32 LE tensors."""
    spec = network.spec.to_text().encode("utf-8")
    chunks = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(spec)), spec,
              struct.pack("<qII", seed, epoch, len(network.params))]
    for name, p in network.params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", p.ndim))
        chunks.append(struct.pack(f"<{p.ndim}I", *p.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


@dataclass
class Checkpoint:
    network: Network
    seed: int
    epoch: int


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: checkpoint truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def read_checkpoint(path: str | Path, expected: ModelSpec | None = None) -> Checkpoint:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(len(CKPT_MAGIC)) != CKPT_MAGIC:
        raise FormatError(f"{path}: not a kwspot checkpoint")
    version, spec_len = r.unpack("<HI")
    if version != CKPT_VERSION:
        raise IncompatibleCheckpointError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    try:
        spec = ModelSpec.from_text(r.take(spec_len).decode("utf-8"))
    except (ValueError, TypeError, KeyError) as e:
        raise FormatError(f"{path}: unreadable model spec ({e})") from None
    if expected is not None and spec != expected:
        raise IncompatibleCheckpointError(
            f"{path}: checkpoint holds a {spec.variant.value} {spec.input_height}x{spec.input_width} model, "
            f"expected {expected.variant.value} {expected.input_height}x{expected.input_width}")
    seed, epoch, count = r.unpack("<qII")
    params = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n = math.prod(shape)
        data = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        params[name] = T.Tensor(data, requires_grad=True, name=name)
    if r.pos != len(r.data):
        raise FormatError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return Checkpoint(Network(spec, params), seed, epoch)


def load_checkpoint(path: str | Path, expected: ModelSpec | None = None) -> Network:
    return read_checkpoint(path, expected).network
