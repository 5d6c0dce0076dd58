"""``kwspot`` command line: prepare, featurize, train, sweep, compare-vat, eval, synth.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
Every subcommand accepts ``--config FILE`` holding flat ``key=value`` lines
named after the flags (``epochs=40``, ``cost-threshold=0.5``); a key may be
prefixed with a subcommand (``train.epochs=40``) to scope it.  Flags given on
the command line win over the file, and the file wins over built-in defaults.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .adversarial import AugmentConfig
from .dataset import TRAIN, VALIDATION, DatasetManifest, build_manifest
from .errors import (ConfigError, EmptyDatasetError, FormatError, IncompatibleCheckpointError, KwsError,
                     ParameterError, ShapeError)
from .features import (FeatureSet, Mode, SpectrogramConfig, read_feature_cache, write_feature_cache,
                       write_pgm)
from .harness import (FEATURE_PARAMS, PARAM_ALIASES, VAT_MODES, ClipSource, FixedFeatures, SweepSpec,
                      TrainConfig, compare_vat, evaluate, run_sweep, train)
from .models import Variant, read_checkpoint, save_checkpoint
from .optim import InitKind
from .reporting import Series, emit_metrics, emit_plot, svg_plot
from .synth import generate_corpus

log = logging.getLogger("kwspot")

SAMPLES_PER_MS = 16
FEATURES_CFG = "features.cfg"
TRAIN_CACHE = "train.feat"
VAL_CACHE = "validation.feat"


class UsageError(Exception):
    """Invalid flags or configuration; carries one message per violation."""

    def __init__(self, problems: Sequence[str] | str):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("; ".join(self.problems))


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _add_featurizer_flags(p: argparse.ArgumentParser, mode_default: str) -> None:
    p.add_argument("--mode", choices=[m.value for m in Mode], default=mode_default, help="feature image type")
    p.add_argument("--window-ms", type=float, default=30.0, help="STFT window length in ms")
    p.add_argument("--stride-ms", type=float, default=10.0, help="hop between windows in ms")
    p.add_argument("--buckets", type=int, default=40, help="frequency buckets / DCT coefficients")
    p.add_argument("--height", type=int, default=None,
                   help="output rows; 0 keeps native geometry; unset means 28 (100 for amplitude)")
    p.add_argument("--width", type=int, default=None,
                   help="output columns; 0 keeps native geometry; unset means 28 (100 for amplitude)")
    p.add_argument("--max-per-class", type=int, default=300, help="cap on examples per class (0 = no cap)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=[v.value for v in Variant], default=Variant.LOW_LATENCY.value,
                   help="network architecture")
    p.add_argument("--optimizer", choices=["sgd", "adam"], default="adam", help="update rule")
    p.add_argument("--init", choices=[k.value for k in InitKind], default=InitKind.XAVIER.value,
                   help="weight initialization")
    p.add_argument("--lr", type=float, default=None, help="learning rate; unset means sgd 0.01, adam 0.001")
    p.add_argument("--epochs", type=int, default=30, help="maximum number of epochs")
    p.add_argument("--batch-size", type=int, default=64, help="minibatch size")
    p.add_argument("--cost-threshold", type=float, default=None,
                   help="stop once the mean epoch cost is at or below this value")
    p.add_argument("--dropout-keep", type=float, default=None, help="dropout keep probability (unset = off)")
    p.add_argument("--vat", choices=list(VAT_MODES), default="off", help="adversarial augmentation")
    p.add_argument("--seed", type=int, default=0, help="random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kwspot", description=__doc__, formatter_class=_Formatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress details to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=_Formatter)
        p.add_argument("--config", default=None, help="key=value file overlaying the defaults")
        return p

    p = add("prepare", "scan a dataset directory and write a train/validation manifest")
    p.add_argument("--data-dir", required=True, help="root holding one folder per word")
    p.add_argument("--out", required=True, help="manifest file to write")
    p.add_argument("--split-ratio", type=float, default=0.8, help="fraction of clips assigned to training")
    p.add_argument("--silence-frac", type=float, default=0.1, help="silence examples per word clip")
    p.add_argument("--seed", type=int, default=0, help="split and silence seed")

    p = add("featurize", "turn manifest clips into cached feature images")
    p.add_argument("--manifest", required=True, help="manifest written by prepare")
    _add_featurizer_flags(p, Mode.SPECTROGRAM.value)
    p.add_argument("--noise-ratio", type=float, default=0.0, help="background noise mixing ratio in [0, 1]")
    p.add_argument("--dump-pgm", action="store_true", help="also write one PGM image per example")
    p.add_argument("--out", required=True, help="output directory")

    p = add("train", "train one model and write metrics, checkpoint and plots")
    p.add_argument("--features", required=True, help="directory written by featurize")
    _add_train_flags(p)
    p.add_argument("--out-dir", required=True, help="output directory")

    p = add("sweep", "train across values of one parameter, several seeds each")
    p.add_argument("--features", default=None, help="directory written by featurize")
    p.add_argument("--manifest", default=None, help="manifest to featurize from (instead of --features)")
    p.add_argument("--param", required=True, help=f"one of {', '.join(sorted(PARAM_ALIASES))}")
    p.add_argument("--values", required=True, help="comma-separated values (window and stride in ms)")
    p.add_argument("--repeats", type=int, default=3, help="seeds per value")
    _add_featurizer_flags(p, Mode.MFCC.value)
    p.add_argument("--noise-ratio", type=float, default=0.0, help="background noise mixing ratio in [0, 1]")
    _add_train_flags(p)
    p.add_argument("--out-dir", required=True, help="output directory")

    p = add("compare-vat", "train vanilla, dropout and adversarially augmented variants side by side")
    p.add_argument("--features", required=True, help="directory written by featurize")
    _add_train_flags(p)
    p.add_argument("--zoom-epochs", type=int, default=10, help="horizon of the zoomed-in plots")
    p.add_argument("--out-dir", required=True, help="output directory")

    p = add("eval", "report accuracy and mean cost of a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    p.add_argument("--features", required=True, help="featurize directory or a single .feat file")
    p.add_argument("--split", choices=["train", "validation"], default="validation",
                   help="which cache to use when --features is a directory")

    p = add("synth", "write a synthetic corpus in the dataset folder layout")
    p.add_argument("--out", required=True, help="corpus root to create")
    p.add_argument("--clips-per-word", type=int, default=100, help="clips per command word")
    p.add_argument("--speakers", type=int, default=40, help="number of synthetic speakers")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def read_config_file(path: str | Path, command: str, sub: argparse.ArgumentParser) -> dict:
    """Parse a key=value file into argparse defaults for ``command``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"--config: cannot read {path}: {e.strerror}") from None
    actions = {a.dest: a for a in sub._actions if a.option_strings}
    values, problems = {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            problems.append(f"--config {path}:{lineno}: expected key=value")
            continue
        scope, dot, name = key.rpartition(".")
        if dot and scope != command:
            continue
        dest = name.lstrip("-").replace("-", "_")
        action = actions.get(dest)
        if action is None or dest in ("config", "help"):
            problems.append(f"--config {path}:{lineno}: unknown key {key!r} for {command}")
            continue
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() not in _TRUE | _FALSE:
                problems.append(f"{flag} (from --config): expected true/false, got {value!r}")
                continue
            values[dest] = value.lower() in _TRUE
            continue
        try:
            converted = action.type(value) if action.type else value
        except (TypeError, ValueError):
            problems.append(f"{flag} (from --config): invalid value {value!r}")
            continue
        if action.choices is not None and converted not in action.choices:
            problems.append(f"{flag} (from --config): {value!r} not in {sorted(action.choices)}")
            continue
        values[dest] = converted
    if problems:
        raise UsageError(problems)
    return values


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = _subparser(parser, args.command)
        overlay = read_config_file(args.config, args.command, sub)
        sub.set_defaults(**overlay)
        # required flags satisfied by the file are no longer required
        for action in sub._actions:
            if action.dest in overlay:
                action.required = False
        args = parser.parse_args(argv)
    return args


# --------------------------------------------------------------------------
# Validation helpers
# --------------------------------------------------------------------------

def _ms_to_samples(ms: float, flag: str, problems: list[str]) -> int:
    samples = ms * SAMPLES_PER_MS
    if samples <= 0 or abs(samples - round(samples)) > 1e-6:
        problems.append(f"{flag} must be a positive multiple of 1/{SAMPLES_PER_MS} ms, got {ms}")
        return 1
    return int(round(samples))


def featurizer_config(args, problems: list[str]) -> SpectrogramConfig | None:
    window = _ms_to_samples(args.window_ms, "--window-ms", problems)
    stride = _ms_to_samples(args.stride_ms, "--stride-ms", problems)
    kw = {}
    for flag, value in (("height", args.height), ("width", args.width)):
        if value is not None:
            if value < 0:
                problems.append(f"--{flag} must be >= 0, got {value}")
            kw[f"output_{flag}"] = value or None
    if args.max_per_class < 0:
        problems.append(f"--max-per-class must be >= 0, got {args.max_per_class}")
    try:
        return SpectrogramConfig.for_mode(args.mode, window_size=window, window_stride=stride,
                                          num_buckets=args.buckets, **kw)
    except ParameterError as e:
        problems.append(_flagify(str(e)))
        return None


_FIELD_FLAGS = {"window_size": "--window-ms", "window_stride": "--stride-ms", "num_buckets": "--buckets",
                "output_height": "--height", "output_width": "--width", "max_epochs": "--epochs",
                "batch_size": "--batch-size", "cost_threshold": "--cost-threshold",
                "keep_prob": "--dropout-keep", "vat": "--vat", "noise_ratio": "--noise-ratio",
                "optimizer": "--optimizer", "lr": "--lr"}


def _flagify(message: str) -> str:
    for field_name, flag in _FIELD_FLAGS.items():
        if message.startswith(field_name + " "):
            return f"{flag} ({field_name}) {message[len(field_name) + 1:]}"
    return message


def train_config(args, problems: list[str], noise_ratio: float = 0.0) -> TrainConfig | None:
    kw = dict(variant=args.model, optimizer=args.optimizer, lr=args.lr, init=args.init,
              batch_size=args.batch_size, max_epochs=args.epochs, cost_threshold=args.cost_threshold,
              keep_prob=args.dropout_keep, vat=args.vat, noise_ratio=noise_ratio, seed=args.seed)
    try:
        return TrainConfig(**kw)
    except ConfigError:
        # rebuild without validation to list every violation separately
        probe = object.__new__(TrainConfig)
        for k, v in kw.items():
            object.__setattr__(probe, k, v)
        problems.extend(_flagify(p) for p in TrainConfig.problems(probe))
        return None


def _check(problems: list[str]) -> None:
    if problems:
        raise UsageError(problems)


# --------------------------------------------------------------------------
# Feature directories
# --------------------------------------------------------------------------

def write_features_cfg(path: Path, manifest: Path, config: SpectrogramConfig, cap: int, noise: float) -> None:
    lines = [f"manifest={manifest.resolve()}", f"mode={config.mode.value}",
             f"window_size={config.window_size}", f"window_stride={config.window_stride}",
             f"num_buckets={config.num_buckets}", f"output_height={config.output_height or 0}",
             f"output_width={config.output_width or 0}", f"max_per_class={cap}", f"noise_ratio={noise!r}"]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_features_cfg(directory: Path) -> tuple[Path, SpectrogramConfig, int, float] | None:
    path = directory / FEATURES_CFG
    if not path.is_file():
        return None
    kv = dict(line.split("=", 1) for line in path.read_text(encoding="utf-8").splitlines() if "=" in line)
    config = SpectrogramConfig(window_size=int(kv["window_size"]), window_stride=int(kv["window_stride"]),
                               num_buckets=int(kv["num_buckets"]), mode=kv["mode"],
                               output_height=int(kv["output_height"]) or None,
                               output_width=int(kv["output_width"]) or None)
    return Path(kv["manifest"]), config, int(kv["max_per_class"]), float(kv["noise_ratio"])


def load_feature_dir(path: str | Path) -> tuple[FeatureSet, FeatureSet]:
    d = Path(path)
    if not d.is_dir():
        raise UsageError(f"--features: {d} is not a directory")
    missing = [n for n in (TRAIN_CACHE, VAL_CACHE) if not (d / n).is_file()]
    if missing:
        raise UsageError(f"--features: {d} lacks {', '.join(missing)} (run featurize first)")
    return read_feature_cache(d / TRAIN_CACHE), read_feature_cache(d / VAL_CACHE)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    problems = []
    if not 0 < args.split_ratio <= 1:
        problems.append(f"--split-ratio must be in (0, 1], got {args.split_ratio}")
    if args.silence_frac < 0:
        problems.append(f"--silence-frac must be >= 0, got {args.silence_frac}")
    if not Path(args.data_dir).is_dir():
        problems.append(f"--data-dir: {args.data_dir} is not a directory")
    _check(problems)
    manifest = build_manifest(args.data_dir, args.split_ratio, args.seed, args.silence_frac)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest.save(out)
    print(f"{'label':<10}{'train':>8}{'validation':>12}")
    for name, row in manifest.histogram().items():
        print(f"{name:<10}{row[TRAIN]:>8}{row[VALIDATION]:>12}")
    print(f"wrote {out} ({len(manifest.examples)} examples)")
    return 0


def _clip_source(manifest_path: str | Path, cap: int) -> ClipSource:
    path = Path(manifest_path)
    if not path.is_file():
        raise UsageError(f"--manifest: {path} does not exist")
    manifest = DatasetManifest.load(path)
    return ClipSource.from_manifest(manifest, cap or None)


def cmd_featurize(args) -> int:
    problems: list[str] = []
    config = featurizer_config(args, problems)
    if not 0 <= args.noise_ratio <= 1:
        problems.append(f"--noise-ratio must be in [0, 1], got {args.noise_ratio}")
    _check(problems)
    source = _clip_source(args.manifest, args.max_per_class)
    train_set, val_set = source.features(config, args.noise_ratio)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_feature_cache(out / TRAIN_CACHE, train_set)
    write_feature_cache(out / VAL_CACHE, val_set)
    write_features_cfg(out / FEATURES_CFG, Path(args.manifest), config, args.max_per_class, args.noise_ratio)
    if args.dump_pgm:
        for part, fs in (("train", train_set), ("validation", val_set)):
            pgm_dir = out / "pgm" / part
            pgm_dir.mkdir(parents=True, exist_ok=True)
            for i, (img, label) in enumerate(zip(fs.images, fs.labels)):
                write_pgm(pgm_dir / f"{i:05d}_{int(label):02d}.pgm", img)
    h, w = train_set.shape
    print(f"wrote {len(train_set)} train and {len(val_set)} validation {config.mode.value} images "
          f"of {h}x{w} to {out}")
    return 0


def _epoch_line(row) -> None:
    print(f"epoch {row.epoch:4d}  cost {row.train_cost:.6f}  train_acc {row.train_acc:.4f}  "
          f"val_acc {row.val_acc:.4f}", flush=True)


def _accuracy_svg(record, path: Path) -> None:
    epochs = [r.epoch for r in record.rows]
    series = [Series("train", epochs, [r.train_acc for r in record.rows]),
              Series("validation", epochs, [r.val_acc for r in record.rows])]
    path.write_text(svg_plot(series, "accuracy vs epoch", "epoch", "accuracy"), encoding="utf-8")


def cmd_train(args) -> int:
    problems: list[str] = []
    config = train_config(args, problems)
    _check(problems)
    train_set, val_set = load_feature_dir(args.features)
    if config.vat != "off":
        mult = AugmentConfig.from_vat(config.vat).multiplier
        print(f"vat={config.vat}: training on {mult * len(train_set)} examples "
              f"({len(train_set)} originals x{mult})")
    record, network = train(config, train_set, val_set, progress=_epoch_line, name=config.variant.value)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emit_metrics(record, out / "metrics.csv")
    save_checkpoint(network, out / "model.ckpt", config.seed, record.exit_epoch)
    emit_plot([record], out / "train_cost.svg", "train_cost")
    _accuracy_svg(record, out / "accuracy.svg")
    print(f"exit_epoch {record.exit_epoch} ({record.exit_reason}); final val_acc {record.final.val_acc:.4f}")
    return 0


def _sweep_values(param: str, text: str, problems: list[str]) -> list:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        problems.append("--values must list at least one value")
        return []
    out = []
    for item in items:
        try:
            if param == "num_buckets":
                out.append(int(item))
            elif param in ("window_size", "window_stride"):
                out.append(_ms_to_samples(float(item), "--values", problems))
            elif param == "noise_ratio":
                out.append(float(item))
            else:
                out.append(item)
        except ValueError:
            problems.append(f"--values: {item!r} is not valid for {param}")
    return out


def cmd_sweep(args) -> int:
    problems: list[str] = []
    if args.param not in PARAM_ALIASES:
        raise UsageError(f"--param: unknown parameter {args.param!r}; valid names: "
                         f"{', '.join(sorted(PARAM_ALIASES))}")
    param = PARAM_ALIASES[args.param]
    values = _sweep_values(param, args.values, problems)
    if args.repeats < 1:
        problems.append(f"--repeats must be >= 1, got {args.repeats}")
    if not 0 <= args.noise_ratio <= 1:
        problems.append(f"--noise-ratio must be in [0, 1], got {args.noise_ratio}")
    base = train_config(args, problems, args.noise_ratio)
    features = featurizer_config(args, problems)
    if (args.features is None) == (args.manifest is None):
        problems.append("exactly one of --features and --manifest is required")
    _check(problems)

    if args.features is not None:
        saved = read_features_cfg(Path(args.features))
        if param in FEATURE_PARAMS:
            # featurizer knobs need raw audio: refeaturize from the manifest behind the cache
            if saved is None:
                raise UsageError(f"--param {args.param} needs refeaturization but {args.features} "
                                 f"has no {FEATURES_CFG}; pass --manifest instead")
            manifest, features, cap, noise = saved
            source = _clip_source(manifest, cap)
            base = replace(base, noise_ratio=noise)
        else:
            train_set, val_set = load_feature_dir(args.features)
            source = FixedFeatures(train_set, val_set, saved[1] if saved else None)
            features = saved[1] if saved else None
    else:
        source = _clip_source(args.manifest, args.max_per_class)
    try:
        spec = SweepSpec(param, values, base, features, args.repeats) if features is not None else \
            SweepSpec(param, values, base, repeats=args.repeats)
    except ConfigError as e:
        raise UsageError(f"--values: {e}") from None
    result = run_sweep(spec, source, args.out_dir, progress=print)
    for f in result.failures:
        print(f"failed: {f['param']}={f['value']} seed={f['seed']}: {f['error']}", file=sys.stderr)
    for v in values:
        accs = result.accuracies(v)
        if accs:
            print(f"{param}={v}: mean val_acc {np.mean(accs):.4f} +/- {np.std(accs):.4f} over {len(accs)} runs")
    print(f"wrote {Path(args.out_dir) / f'sweep_{param}.csv'}")
    return 0 if result.rows else 1


def cmd_compare_vat(args) -> int:
    problems: list[str] = []
    base = train_config(args, problems)
    if args.zoom_epochs < 1:
        problems.append(f"--zoom-epochs must be >= 1, got {args.zoom_epochs}")
    _check(problems)
    train_set, val_set = load_feature_dir(args.features)
    report = compare_vat(base, train_set, val_set, args.out_dir, args.zoom_epochs, progress=print)
    for row in report.summary_rows():
        print(f"{row['run']:<18} train_examples {row['train_examples']:6d}  val_acc {row['final_val_acc']:.4f}  "
              f"exit_epoch {row['exit_epoch']} ({row['exit_reason']})")
    return 0


def cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise UsageError(f"--checkpoint: {ckpt_path} does not exist")
    feat = Path(args.features)
    if feat.is_dir():
        feat = feat / (TRAIN_CACHE if args.split == "train" else VAL_CACHE)
    if not feat.is_file():
        raise UsageError(f"--features: {feat} does not exist")
    ckpt = read_checkpoint(ckpt_path)
    data = read_feature_cache(feat)
    expected = (ckpt.network.spec.input_height, ckpt.network.spec.input_width)
    if data.shape != expected:
        raise UsageError(f"--features: images are {data.shape[0]}x{data.shape[1]} but the checkpoint "
                         f"expects {expected[0]}x{expected[1]}")
    acc, cost = evaluate(ckpt.network, data)
    print(f"accuracy {acc:.4f}  mean_cost {cost:.6f}  examples {len(data)}")
    return 0


def cmd_synth(args) -> int:
    problems = []
    if args.clips_per_word < 1:
        problems.append(f"--clips-per-word must be >= 1, got {args.clips_per_word}")
    if args.speakers < 1:
        problems.append(f"--speakers must be >= 1, got {args.speakers}")
    _check(problems)
    root = generate_corpus(args.out, args.clips_per_word, speakers=args.speakers, seed=args.seed)
    print(f"wrote synthetic corpus to {root}")
    return 0


COMMANDS = {"prepare": cmd_prepare, "featurize": cmd_featurize, "train": cmd_train, "sweep": cmd_sweep,
            "compare-vat": cmd_compare_vat, "eval": cmd_eval, "synth": cmd_synth}

USAGE_ERRORS = (UsageError, ConfigError, ParameterError, ShapeError, IncompatibleCheckpointError)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as e:
        for p in e.problems:
            print(f"kwspot: error: {p}", file=sys.stderr)
        return 2
    except SystemExit as e:  # argparse usage errors and --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    prog = f"kwspot {args.command}"
    try:
        return COMMANDS[args.command](args)
    except USAGE_ERRORS as e:
        for p in getattr(e, "problems", [str(e)]):
            print(f"{prog}: error: {p}", file=sys.stderr)
        return 2
    except (FormatError, EmptyDatasetError, KwsError, OSError, FloatingPointError, ValueError) as e:
        print(f"{prog}: failed: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # never exit without a diagnostic line
        print(f"{prog}: failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
