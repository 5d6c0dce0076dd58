"""End-to-end acceptance checks on the synthetic desk corpus.

Desk setup shared by the training criteria: 300 clips per command word,
capped at 300 per class, 28x28 log spectrograms, the low-latency model,
30 epochs, batch 64, seeds 0-2.
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from kwspot import tensor as T
from kwspot.cli import main
from kwspot.dataset import CLIP_SAMPLES, SAMPLE_RATE
from kwspot.features import FeatureSet, Mode, SpectrogramConfig, dft_magnitude, frame_signal, hann_window
from kwspot.harness import ClipSource, SweepSpec, TrainConfig, compare_vat, run_sweep, train
from kwspot.adversarial import augment_dataset
from kwspot.models import Variant, count_params, low_latency_spec, mnist_spec
from kwspot.optim import truncated_normal_init, xavier_bound, xavier_init
from kwspot.reporting import THRESHOLD
from kwspot.synth import generate_corpus

pytestmark = pytest.mark.acceptance

SEEDS = 3
BASE = TrainConfig(max_epochs=30, batch_size=64)
COST_THRESHOLD = 1.5
SPECTROGRAM = SpectrogramConfig.for_mode(Mode.SPECTROGRAM)
AMPLITUDE = SpectrogramConfig.for_mode(Mode.AMPLITUDE)


@pytest.fixture(scope="session")
def desk_source(tmp_path_factory):
    root = generate_corpus(tmp_path_factory.mktemp("desk"), clips_per_word=300)
    return ClipSource.from_directory(root, cap=300)


@pytest.fixture(scope="session")
def spectrograms(desk_source):
    return desk_source.features(SPECTROGRAM)


def exit_epochs(result, value, horizon):
    """Epoch at which each seed first met the threshold; a miss counts as horizon + 1."""
    return [r["exit_epoch"] if r["exit_reason"] == THRESHOLD else horizon + 1
            for r in result.rows if r["value"] == value]


# --------------------------------------------------------------------------
# Property and oracle criteria
# --------------------------------------------------------------------------

def weighted_sum(y, rng):
    """Scalar loss with a random readout so no gradient is trivially uniform."""
    return T.tensor_sum(T.mul(y, T.Tensor(rng.standard_normal(y.shape))))


def t64(a):
    return T.Tensor(np.asarray(a, np.float64))


def distinct(rng, shape, gap=0.01):
    """Values at least ``gap`` apart, so max pooling has no near ties."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap - n * gap / 2).reshape(shape)


def gradient_cases(rng):
    """(name, f, x, exclude) per primitive for one random instance."""
    seed = int(rng.integers(1 << 30))
    r = np.random.default_rng(seed)
    h, w, c, k, o = (int(v) for v in (r.integers(4, 8), r.integers(4, 8), r.integers(1, 3),
                                       r.integers(1, 4), r.integers(1, 3)))
    stride, pad = int(r.integers(1, 3)), ("SAME", "VALID")[int(r.integers(2))]
    image, kern = r.standard_normal((2, h, w, c)), r.standard_normal((k, k, c, o))
    n_in, n_out = int(r.integers(2, 7)), int(r.integers(2, 7))
    xd, wd, bd = r.standard_normal((3, n_in)), r.standard_normal((n_in, n_out)), r.standard_normal(n_out)
    v = r.standard_normal((3, 5)) * 2
    near_zero = np.abs(v) < 1e-3
    labels = r.integers(0, 12, 4)

    def readout(y):
        return weighted_sum(y, np.random.default_rng(seed + 1))

    return [
        ("conv2d/input", lambda x: readout(T.conv2d(x, t64(kern), stride, stride, pad)), t64(image), None),
        ("conv2d/kernel", lambda q: readout(T.conv2d(t64(image), q, stride, stride, pad)), t64(kern), None),
        ("maxpool", lambda x: readout(T.maxpool2d(x)), t64(distinct(r, (2, h, w, c))), None),
        ("dense/x", lambda x: readout(T.dense(x, t64(wd), t64(bd))), t64(xd), None),
        ("dense/W", lambda q: readout(T.dense(t64(xd), q, t64(bd))), t64(wd), None),
        ("dense/b", lambda q: readout(T.dense(t64(xd), t64(wd), q)), t64(bd), None),
        ("relu", lambda x: readout(T.relu(x)), t64(v), near_zero),
        ("elu", lambda x: readout(T.elu(x)), t64(v), near_zero),
        ("sigmoid", lambda x: readout(T.sigmoid(x)), t64(v), None),
        ("tanh", lambda x: readout(T.tanh(x)), t64(v), None),
        ("dropout", lambda x: readout(T.dropout(x, 0.6, True, seed=seed)), t64(v), None),
        ("softmax-ce", lambda x: T.softmax_cross_entropy(x, labels), t64(r.standard_normal((4, 12))), None),
    ]


@pytest.mark.criterion(1, "gradient oracle")
def test_gradient_oracle(record_property):
    """Every primitive matches central differences on 20 random float64 instances."""
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst: dict[str, float] = {}
    counts: dict[str, int] = {}
    for _ in range(20):
        for name, f, x, exclude in gradient_cases(rng):
            err = T.finite_diff_check(f, x, exclude=exclude)
            worst[name] = max(worst.get(name, 0.0), err)
            counts[name] = counts.get(name, 0) + 1
    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    record_property("detail", f"max rel err {worst[top]:.2e} ({top}); {elapsed:.1f} s")
    assert all(n >= 20 for n in counts.values())
    assert max(worst.values()) < 1e-4
    assert elapsed < 60


@pytest.mark.criterion(2, "parameter-count oracle")
def test_parameter_counts(record_property):
    """MNIST CNN is exact; low-latency matches a hand sum for 40x98."""
    mnist = 5 * 5 * 1 * 32 + 32 + 5 * 5 * 32 * 64 + 64 + 7 * 7 * 64 * 1024 + 1024 + 1024 * 12 + 12
    conv_h, conv_w = (40 - 7) // 3 + 1, (98 - 7) // 3 + 1
    low = (7 * 7 * 1 * 3 + 3) + (conv_h * conv_w * 3 * 51 + 51) + (51 * 100 + 100) + (100 * 12 + 12)
    got = count_params(low_latency_spec(40, 98))
    record_property("detail", f"mnist {count_params(mnist_spec())}; low-latency {got}, "
                              f"ratio to 63.8k = {got / 63_800:.5f}")
    assert count_params(mnist_spec()) == mnist == 3_276_684
    assert got == low


@pytest.mark.criterion(3, "initialization properties")
def test_initialization(record_property):
    """1e5 draws each stay in support and repeat under a fixed seed."""
    start = time.perf_counter()
    shape = (100, 1000)
    xa, xb = xavier_init(shape, seed=7), xavier_init(shape, seed=7)
    ta, tb = truncated_normal_init((100_000,), 0.01, seed=7), truncated_normal_init((100_000,), 0.01, seed=7)
    elapsed = time.perf_counter() - start
    record_property("detail", f"xavier max {np.abs(xa).max():.5f} <= {xavier_bound(shape):.5f}; "
                              f"trunc max {np.abs(ta).max():.5f} <= 0.02; {elapsed:.2f} s")
    assert xa.size == ta.size == 100_000
    assert np.abs(xa).max() <= xavier_bound(shape)
    assert np.abs(ta).max() <= 0.02
    np.testing.assert_array_equal(xa, xb)
    np.testing.assert_array_equal(ta, tb)
    assert elapsed < 10


@pytest.mark.criterion(4, "DSP oracles")
def test_dsp(record_property):
    """Parseval on random frames, on-bin tone peaks, 98 frames per second."""
    rng = np.random.default_rng(11)
    frames = rng.standard_normal((100, 480))
    mags = dft_magnitude(frames)
    n = frames.shape[1]
    spectral = (mags[:, 0] ** 2 + 2 * np.sum(mags[:, 1:n // 2] ** 2, axis=1) + mags[:, n // 2] ** 2) / n
    rel = np.abs(spectral - np.sum(frames ** 2, axis=1)) / np.sum(frames ** 2, axis=1)
    t = np.arange(n) / SAMPLE_RATE
    peaks = [int(np.argmax(dft_magnitude(hann_window(n) * np.sin(2 * np.pi * k * SAMPLE_RATE / n * t))))
             for k in (4, 8, 16)]
    count = len(frame_signal(np.zeros(CLIP_SAMPLES), 480, 160))
    record_property("detail", f"parseval rel {rel.max():.1e}; peaks {peaks}; frames {count}")
    assert rel.max() < 1e-6
    assert peaks == [4, 8, 16]
    assert count == 98


# --------------------------------------------------------------------------
# Desk-scale training criteria
# --------------------------------------------------------------------------

@pytest.mark.criterion(5, "overfit smoke test")
def test_overfit(spectrograms, record_property):
    """MNIST CNN memorizes 50 examples of two classes."""
    start = time.perf_counter()
    tr = spectrograms[0]
    idx = np.concatenate([np.flatnonzero(tr.labels == c)[:25] for c in (0, 1)])
    tiny = FeatureSet(tr.mode, tr.images[idx], tr.labels[idx])
    cfg = TrainConfig(variant=Variant.MNIST_CNN, optimizer="adam", lr=1e-3, max_epochs=200, cost_threshold=0.01)
    rec, _ = train(cfg, tiny, tiny)
    elapsed = time.perf_counter() - start
    first = next((r.epoch for r in rec.rows if r.train_acc >= 0.95), None)
    record_property("detail", f"train acc {rec.final.train_acc:.3f}, >=0.95 first at epoch {first}; "
                              f"{elapsed:.0f} s")
    assert len(tiny) == 50
    assert first is not None and first <= 200
    assert elapsed < 300


@pytest.mark.criterion(6, "Adam converges faster than SGD")
def test_optimizer_comparison(desk_source, tmp_path, record_property):
    start = time.perf_counter()
    spec = SweepSpec("optimizer", ["sgd", "adam"], replace(BASE, cost_threshold=COST_THRESHOLD),
                     SPECTROGRAM, repeats=SEEDS)
    result = run_sweep(spec, desk_source, tmp_path)
    sgd, adam = exit_epochs(result, "sgd", BASE.max_epochs), exit_epochs(result, "adam", BASE.max_epochs)
    wins = sum(a < s for a, s in zip(adam, sgd))
    elapsed = time.perf_counter() - start
    record_property("detail", f"epochs to cost {COST_THRESHOLD}: adam {adam} sgd {sgd} "
                              f"(31 = never); {elapsed:.0f} s")
    assert wins >= 2
    assert elapsed < 1800


@pytest.mark.criterion(7, "Xavier converges faster than truncated normal")
def test_init_comparison(desk_source, tmp_path, record_property):
    spec = SweepSpec("init", ["xavier", "trunc-normal"], replace(BASE, cost_threshold=COST_THRESHOLD),
                     SPECTROGRAM, repeats=SEEDS)
    result = run_sweep(spec, desk_source, tmp_path)
    xa = exit_epochs(result, "xavier", BASE.max_epochs)
    tn = exit_epochs(result, "trunc-normal", BASE.max_epochs)
    record_property("detail", f"epochs to cost {COST_THRESHOLD}: xavier {xa} trunc-normal {tn} (31 = never)")
    assert sum(a < b for a, b in zip(xa, tn)) >= 2


@pytest.mark.criterion(8, "spectrogram beats amplitude plot")
def test_feature_format(desk_source, spectrograms, record_property):
    acc = {}
    for name, sets in (("spectrogram", spectrograms), ("amplitude", desk_source.features(AMPLITUDE))):
        acc[name] = [train(replace(BASE, seed=s), *sets)[0].final.val_acc for s in range(SEEDS)]
    means = {k: float(np.mean(v)) for k, v in acc.items()}
    record_property("detail", f"mean val acc spectrogram {means['spectrogram']:.3f} "
                              f"amplitude {means['amplitude']:.3f}")
    assert means["spectrogram"] > means["amplitude"]


@pytest.mark.criterion(9, "bucket-count trend")
def test_bucket_sweep(desk_source, tmp_path, record_property):
    values = [10, 20, 30, 40]
    result = run_sweep(SweepSpec("buckets", values, BASE, SPECTROGRAM, repeats=SEEDS), desk_source, tmp_path)
    means = {v: result.mean_accuracy(v) for v in values}
    noise = float(np.std(result.accuracies(40), ddof=1))
    best = max(means[v] for v in values[:-1])
    monotone = all(means[a] >= means[b] for a, b in zip(values, values[1:]))
    record_property("detail", "mean val acc " + " ".join(f"{v}:{m:.3f}" for v, m in means.items())
                    + f"; std@40 {noise:.3f}; monotone worsening {'yes' if monotone else 'no'}")
    assert len(result.rows) == len(values) * SEEDS and not result.failures
    assert (tmp_path / "sweep_num_buckets.svg").is_file()
    assert means[40] <= best + noise


@pytest.mark.criterion(10, "noise robustness")
def test_noise_sweep(desk_source, tmp_path, record_property):
    values = [0.0, 0.1, 0.25, 0.5]
    result = run_sweep(SweepSpec("noise", values, BASE, SPECTROGRAM, repeats=SEEDS), desk_source, tmp_path)
    means = {v: result.mean_accuracy(v) for v in values}
    record_property("detail", "mean val acc " + " ".join(f"{v}:{m:.3f}" for v, m in means.items()))
    assert not result.failures
    assert abs(means[0.0] - means[0.5]) <= 0.15


@pytest.mark.criterion(11, "adversarial augmentation suite")
def test_vat(spectrograms, tmp_path, record_property):
    tr, val = spectrograms
    tripled = len(augment_dataset(tr)) == 3 * len(tr)
    reports = [compare_vat(replace(BASE, seed=s), tr, val, out_dir=tmp_path / f"seed{s}") for s in range(SEEDS)]
    vat = [r.records["vat"].final.val_acc for r in reports]
    drop = [r.records["dropout"].final.val_acc for r in reports]
    conv = {k: [r.records[k].epochs_to(1.0) for r in reports] for k in ("vat", "dropout")}
    record_property("detail", f"mean val acc vat {np.mean(vat):.3f} dropout {np.mean(drop):.3f}; "
                              f"epochs to cost 1.0 vat {conv['vat']} dropout {conv['dropout']}")
    assert tripled
    assert all(r.train_sizes["vat"] == 3 * len(tr) for r in reports)
    assert np.mean(vat) >= np.mean(drop)


@pytest.mark.criterion(12, "determinism")
def test_determinism(small_corpus, tmp_path, record_property):
    """The train command twice with one config gives byte-identical metrics."""
    assert main(["prepare", "--data-dir", str(small_corpus), "--out", str(tmp_path / "m.tsv")]) == 0
    assert main(["featurize", "--manifest", str(tmp_path / "m.tsv"), "--out", str(tmp_path / "f")]) == 0
    outputs = []
    for run in ("a", "b"):
        args = ["train", "--features", str(tmp_path / "f"), "--epochs", "4", "--vat", "both",
                "--dropout-keep", "0.7", "--seed", "5", "--out-dir", str(tmp_path / run)]
        assert main(args) == 0
        outputs.append((tmp_path / run / "metrics.csv").read_bytes())
    record_property("detail", f"{len(outputs[0])} bytes, identical={outputs[0] == outputs[1]}")
    assert outputs[0] == outputs[1]
