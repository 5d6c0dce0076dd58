"""Training loop, evaluation, sweeps and the adversarial-training comparison."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .adversarial import AugmentConfig, augment_dataset, equal_budget
from .dataset import (AudioClip, DatasetManifest, TRAIN, VALIDATION, build_manifest, cap_per_class,
                      load_examples, load_noise, mix_noise, noise_for)
from .errors import ConfigError, EmptyDatasetError, ParameterError, ShapeError
from .features import FeatureSet, Mode, SpectrogramConfig, featurize_many
from .models import ModelSpec, Network, Variant, default_spec, expand
from .optim import InitKind, InitSpec, make_optimizer
from .reporting import (MAX_EPOCHS, THRESHOLD, EpochRow, RunRecord, Series, emit_metrics, emit_plot,
                        svg_plot, write_sweep_csv)

log = logging.getLogger(__name__)

VAT_MODES = ("off", "sign", "fgsm", "std", "both")


@dataclass(frozen=True)
class TrainConfig:
    variant: Variant = Variant.LOW_LATENCY
    optimizer: str = "adam"
    lr: float | None = None
    init: InitKind = InitKind.XAVIER
    init_std: float = 0.01
    batch_size: int = 64
    max_epochs: int = 30
    cost_threshold: float | None = None
    keep_prob: float | None = None
    dropout_after: tuple[str, ...] = ()
    activation: str = "relu"
    freq_stride_only: bool = False
    vat: str = "off"
    vat_equal_budget: bool = False
    noise_ratio: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "init", InitKind(self.init))
        object.__setattr__(self, "dropout_after", tuple(self.dropout_after))
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.max_epochs < 1:
            out.append(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            out.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.cost_threshold is not None and not self.cost_threshold > 0:
            out.append(f"cost_threshold must be > 0, got {self.cost_threshold}")
        if self.keep_prob is not None and not 0 < self.keep_prob <= 1:
            out.append(f"keep_prob must be in (0, 1], got {self.keep_prob}")
        if self.vat not in VAT_MODES:
            out.append(f"vat must be one of {VAT_MODES}, got {self.vat!r}")
        if not 0 <= self.noise_ratio <= 1:
            out.append(f"noise_ratio must be in [0, 1], got {self.noise_ratio}")
        if self.optimizer not in ("sgd", "adam"):
            out.append(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.lr is not None and self.lr < 0:
            out.append(f"lr must be >= 0, got {self.lr}")
        return out

    def model_spec(self, height: int, width: int) -> ModelSpec:
        kw: dict = {}
        if self.variant is Variant.LOW_LATENCY:
            kw["freq_stride_only"] = self.freq_stride_only
        if self.variant in (Variant.SHALLOW_CRM, Variant.DEEP_CRM):
            kw["activation"] = self.activation
        if self.keep_prob is not None:
            kw["keep_prob"] = self.keep_prob
            if self.variant is not Variant.MNIST_CNN:
                default_pos = ("fc1", "fc2") if self.variant is Variant.LOW_LATENCY else ("fc1",)
                kw["dropout_after"] = self.dropout_after or default_pos
        spec = default_spec(self.variant, height, width, **kw)
        if self.variant is Variant.MNIST_CNN and self.dropout_after:
            spec = replace(spec, dropout_after=self.dropout_after)
        return spec

    def init_spec(self) -> InitSpec:
        return InitSpec(self.init, self.init_std, self.seed)


# --------------------------------------------------------------------------
# Training and evaluation
# --------------------------------------------------------------------------

def evaluate(network: Network, data: FeatureSet, batch_size: int = 256) -> tuple[float, float]:
    """``(accuracy, mean cross-entropy)`` in inference mode."""
    if len(data) == 0:
        raise EmptyDatasetError("cannot evaluate on an empty set")
    logits = network.logits(data.images, batch_size).astype(np.float64)
    acc = float(np.mean(np.argmax(logits, axis=1) == data.labels))
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    cost = float(np.mean(lse - z[np.arange(len(data)), data.labels]))
    return acc, cost


ProgressFn = Callable[[EpochRow], None]


def train(config: TrainConfig, train_set: FeatureSet, val_set: FeatureSet,
          progress: ProgressFn | None = None, name: str = "") -> tuple[RunRecord, Network]:
    """Minibatch training with per-epoch metrics and an optional cost-threshold exit."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptyDatasetError("training and validation sets must be nonempty")
    if train_set.shape != val_set.shape:
        raise ConfigError(f"train features {train_set.shape} and validation features {val_set.shape} differ")
    try:
        spec = config.model_spec(*train_set.shape)
        expand(spec)
    except ShapeError as e:
        raise ConfigError(f"features {train_set.shape[0]}x{train_set.shape[1]} do not fit the "
                          f"{config.variant.value} model: {e}") from None

    network = Network.build(spec, config.init_spec())
    fit_set = train_set
    if config.vat != "off":
        fit_set = augment_dataset(train_set, AugmentConfig.from_vat(config.vat), network)
        if config.vat_equal_budget:
            fit_set = equal_budget(fit_set, len(train_set), config.seed)
    log.info("training %s on %d examples (%d before augmentation)", spec.variant.value, len(fit_set),
             len(train_set))

    params = network.parameters()
    opt = make_optimizer(config.optimizer, params, config.lr)
    shuffle_rng = np.random.default_rng([config.seed, 0])
    dropout_rng = np.random.default_rng([config.seed, 1])
    n = len(fit_set)
    record = RunRecord(name=name)
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            with T.Tape():
                logits = network.forward(fit_set.images[idx], training=True, rng=dropout_rng)
                loss = T.softmax_cross_entropy(logits, fit_set.labels[idx])
                T.backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
        cost = total / n
        train_acc, _ = evaluate(network, train_set)
        val_acc, _ = evaluate(network, val_set)
        row = EpochRow(epoch, cost, train_acc, val_acc)
        record.rows.append(row)
        if progress:
            progress(row)
        if not math.isfinite(cost):
            raise FloatingPointError(f"training cost diverged at epoch {epoch}")
        if config.cost_threshold is not None and cost <= config.cost_threshold:
            record.exit_reason = THRESHOLD
            break
    record.exit_epoch = record.rows[-1].epoch
    return record, network


# --------------------------------------------------------------------------
# Feature sources
# --------------------------------------------------------------------------

class FeatureSource:
    """Produces (train, validation) feature sets for a featurizer configuration."""

    def features(self, config: SpectrogramConfig, noise_ratio: float = 0.0) -> tuple[FeatureSet, FeatureSet]:
        raise NotImplementedError

    can_refeaturize = False


class FixedFeatures(FeatureSource):
    def __init__(self, train: FeatureSet, val: FeatureSet, config: SpectrogramConfig | None = None):
        self.train, self.val, self.config = train, val, config

    def features(self, config=None, noise_ratio=0.0):
        if noise_ratio:
            raise ConfigError("noise mixing needs raw audio; these features are precomputed")
        if config is not None and self.config is not None and config != self.config:
            raise ConfigError("featurizer settings changed but only precomputed features are available")
        return self.train, self.val


class ClipSource(FeatureSource):
    """Decoded clips kept in memory and featurized on demand (with a small cache)."""

    can_refeaturize = True

    def __init__(self, clips: Sequence[tuple[AudioClip, str]], noise: Sequence[np.ndarray] = (), seed: int = 0):
        self.clips = list(clips)
        self.noise = list(noise)
        self.seed = seed
        self._cache: dict = {}

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, cap: int | None = None) -> "ClipSource":
        manifest = cap_per_class(manifest, cap)
        noise = load_noise(manifest) if manifest.noise_files else []
        return cls(load_examples(manifest, 0.0, noise), noise, manifest.seed)

    @classmethod
    def from_directory(cls, root, split_ratio: float = 0.8, seed: int = 0, silence_frac: float = 0.1,
                       cap: int | None = 300) -> "ClipSource":
        return cls.from_manifest(build_manifest(root, split_ratio, seed, silence_frac), cap)

    def _mixed(self, noise_ratio: float) -> list[tuple[AudioClip, str]]:
        if noise_ratio == 0:
            return self.clips
        if not self.noise:
            raise EmptyDatasetError("noise mixing requested but no background recordings are loaded")
        return [(mix_noise(c, noise_for(c.source_path, self.noise, self.seed), noise_ratio), p)
                for c, p in self.clips]

    def features(self, config: SpectrogramConfig, noise_ratio: float = 0.0):
        key = (config, noise_ratio)
        if key not in self._cache:
            clips = self._mixed(noise_ratio)
            sets = []
            for part in (TRAIN, VALIDATION):
                x, y = featurize_many((c for c, p in clips if p == part), config)
                sets.append(FeatureSet(config.mode, x, y))
            if len(self._cache) >= 8:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = tuple(sets)
        return self._cache[key]


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

FEATURE_PARAMS = {"num_buckets", "window_size", "window_stride", "noise_ratio"}
TRAINER_PARAMS = {"optimizer", "init", "vat"}
PARAM_ALIASES = {
    "buckets": "num_buckets", "num_buckets": "num_buckets",
    "window": "window_size", "window_size": "window_size",
    "stride": "window_stride", "window_stride": "window_stride",
    "noise": "noise_ratio", "noise_ratio": "noise_ratio",
    "optimizer": "optimizer", "init": "init", "vat": "vat",
}


def canonical_param(name: str) -> str:
    if name not in PARAM_ALIASES:
        raise ConfigError(f"unknown sweep parameter {name!r}; valid: {', '.join(sorted(PARAM_ALIASES))}")
    return PARAM_ALIASES[name]


@dataclass
class SweepSpec:
    param: str
    values: Sequence
    base: TrainConfig
    features: SpectrogramConfig = field(default_factory=lambda: SpectrogramConfig.for_mode(Mode.MFCC))
    repeats: int = 3

    def __post_init__(self):
        self.param = canonical_param(self.param)
        self.values = list(self.values)
        if not self.values:
            raise ConfigError("sweep value list is empty")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        for v in self.values:
            self.apply(v, 0)  # validates every value up front

    def apply(self, value, seed_offset: int) -> tuple[TrainConfig, SpectrogramConfig, float]:
        cfg, feat, noise = self.base, self.features, self.base.noise_ratio
        try:
            if self.param == "num_buckets":
                feat = replace(feat, num_buckets=int(value))
            elif self.param == "window_size":
                feat = replace(feat, window_size=int(value))
            elif self.param == "window_stride":
                feat = replace(feat, window_stride=int(value))
            elif self.param == "noise_ratio":
                noise = float(value)
                if not 0 <= noise <= 1:
                    raise ParameterError(f"noise ratio must be in [0, 1], got {value}")
            elif self.param == "optimizer":
                cfg = replace(cfg, optimizer=str(value))
            elif self.param == "init":
                cfg = replace(cfg, init=InitKind(value))
            elif self.param == "vat":
                cfg = replace(cfg, vat=str(value))
        except (ParameterError, ValueError) as e:
            raise ConfigError(f"invalid value {value!r} for {self.param}: {e}") from None
        return replace(cfg, seed=self.base.seed + seed_offset, noise_ratio=noise), feat, noise


@dataclass
class SweepResult:
    param: str
    rows: list[dict]
    failures: list[dict]
    records: dict[tuple, RunRecord]

    def accuracies(self, value) -> list[float]:
        return [r["final_val_acc"] for r in self.rows if r["value"] == value]

    def mean_accuracy(self, value) -> float:
        return float(np.mean(self.accuracies(value)))


def run_sweep(spec: SweepSpec, source: FeatureSource, out_dir: str | Path | None = None,
              progress: Callable[[str], None] | None = None) -> SweepResult:
    """Train once per (value, repeat); failures are recorded and skipped."""
    if spec.param in FEATURE_PARAMS and not source.can_refeaturize:
        raise ConfigError(f"sweeping {spec.param} needs raw audio (refeaturization)")
    rows, failures, records = [], [], {}
    for value in spec.values:
        for rep in range(spec.repeats):
            cfg, feat, noise = spec.apply(value, rep)
            try:
                train_set, val_set = source.features(feat, noise)
                record, _ = train(cfg, train_set, val_set, name=f"{spec.param}={value} seed={cfg.seed}")
            except Exception as e:  # a failed run must not sink the sweep
                log.warning("sweep run %s=%s seed=%d failed: %s", spec.param, value, cfg.seed, e)
                failures.append({"param": spec.param, "value": value, "seed": cfg.seed, "error": str(e)})
                continue
            records[(value, cfg.seed)] = record
            rows.append({
                "param": spec.param, "value": value, "seed": cfg.seed,
                "final_val_acc": record.final.val_acc, "exit_epoch": record.exit_epoch,
                "exit_reason": record.exit_reason,
            })
            if progress:
                progress(f"{spec.param}={value} seed={cfg.seed} val_acc={record.final.val_acc:.4f} "
                         f"exit_epoch={record.exit_epoch}")
    result = SweepResult(spec.param, rows, failures, records)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(rows, out / f"sweep_{spec.param}.csv")
        (out / f"sweep_{spec.param}.svg").write_text(sweep_svg(result, spec.values), encoding="utf-8")
    return result


def sweep_svg(result: SweepResult, values: Sequence) -> str:
    """Final validation accuracy against the swept value: per-seed points plus the mean."""
    numeric = all(isinstance(v, (int, float)) for v in values)
    pos = {v: (float(v) if numeric else float(i)) for i, v in enumerate(values)}
    ticks = None if numeric else [(float(i), str(v)) for i, v in enumerate(values)]
    seeds = sorted({r["seed"] for r in result.rows})
    series = []
    for s in seeds:
        pts = [(pos[r["value"]], r["final_val_acc"]) for r in result.rows if r["seed"] == s]
        series.append(Series(f"seed {s}", [p[0] for p in pts], [p[1] for p in pts], markers=True, line=False))
    present = [v for v in values if result.accuracies(v)]
    series.append(Series("mean", [pos[v] for v in present], [result.mean_accuracy(v) for v in present]))
    return svg_plot(series, f"final validation accuracy vs {result.param}", result.param,
                    "validation accuracy", xticks=ticks)


# --------------------------------------------------------------------------
# Adversarial-training comparison
# --------------------------------------------------------------------------

@dataclass
class VatReport:
    records: dict[str, RunRecord]
    configs: dict[str, TrainConfig]
    train_sizes: dict[str, int]

    def summary_rows(self) -> list[dict]:
        return [{
            "run": name, "seed": self.configs[name].seed, "train_examples": self.train_sizes[name],
            "final_train_acc": rec.final.train_acc, "final_val_acc": rec.final.val_acc,
            "final_cost": rec.final.train_cost, "exit_epoch": rec.exit_epoch, "exit_reason": rec.exit_reason,
        } for name, rec in self.records.items()]


def vat_variants(base: TrainConfig, keep_prob: float = 0.5) -> dict[str, TrainConfig]:
    """Vanilla, dropout and adversarially augmented configs differing only in regularization."""
    plain = replace(base, vat="off", keep_prob=None, vat_equal_budget=False)
    return {
        "vanilla": plain,
        "dropout": replace(plain, keep_prob=base.keep_prob or keep_prob),
        "vat": replace(plain, vat="both"),
        "vat-equal-budget": replace(plain, vat="both", vat_equal_budget=True),
    }


def compare_vat(base: TrainConfig, train_set: FeatureSet, val_set: FeatureSet,
                out_dir: str | Path | None = None, zoom_epochs: int = 10,
                progress: Callable[[str], None] | None = None) -> VatReport:
    configs = vat_variants(base)
    records, sizes = {}, {}
    for name, cfg in configs.items():
        record, _ = train(cfg, train_set, val_set, name=name)
        records[name] = record
        mult = AugmentConfig.from_vat(cfg.vat).multiplier
        sizes[name] = len(train_set) if cfg.vat_equal_budget else len(train_set) * mult
        if progress:
            progress(f"{name}: val_acc={record.final.val_acc:.4f} exit_epoch={record.exit_epoch} "
                     f"({record.exit_reason})")
    report = VatReport(records, configs, sizes)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        recs = list(records.values())
        for name, rec in records.items():
            emit_metrics(rec, out / f"{name}.csv")
        for metric in ("train_acc", "val_acc", "train_cost"):
            emit_plot(recs, out / f"{metric}_full.svg", metric)
            emit_plot(recs, out / f"{metric}_zoom{zoom_epochs}.svg", metric, max_epoch=zoom_epochs,
                      title=f"{metric} over the first {zoom_epochs} epochs")
        with open(out / "vat_report.csv", "w", newline="", encoding="utf-8") as fh:
            rows = report.summary_rows()
            w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return report
