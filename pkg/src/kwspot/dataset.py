"""Speech Commands directory loading, labelling, splitting and noise mixing.

The on-disk layout is ``<root>/<word>/<file>.wav`` with background noise
recordings under ``<root>/_background_noise_/``.  Every function here is a
pure function of its arguments (and the files it reads), so clips can be
decoded from several workers at once.
"""

from __future__ import annotations

import hashlib
import logging
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyDatasetError, FormatError, ParameterError, UnsupportedFormatError

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
CLIP_SAMPLES = 16000
BACKGROUND_DIR = "_background_noise_"
SILENCE_PREFIX = "_silence_"

COMMAND_WORDS = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")
LABEL_NAMES = tuple(w.upper() for w in COMMAND_WORDS) + ("UNKNOWN", "SILENCE")
UNKNOWN_INDEX = 10
SILENCE_INDEX = 11
NUM_CLASSES = len(LABEL_NAMES)

TRAIN = "TRAIN"
VALIDATION = "VALIDATION"


@dataclass(frozen=True)
class Label:
    index: int
    name: str

    def __post_init__(self):
        if not 0 <= self.index < NUM_CLASSES or LABEL_NAMES[self.index] != self.name:
            raise ParameterError(f"invalid label ({self.index}, {self.name!r})")

    @classmethod
    def from_index(cls, index: int) -> "Label":
        if not 0 <= index < NUM_CLASSES:
            raise ParameterError(f"label index {index} outside [0, {NUM_CLASSES - 1}]")
        return cls(index, LABEL_NAMES[index])


SILENCE = Label(SILENCE_INDEX, "SILENCE")
UNKNOWN = Label(UNKNOWN_INDEX, "UNKNOWN")


@dataclass(frozen=True)
class AudioClip:
    """Exactly one second of mono audio in [-1, 1]."""

    samples: np.ndarray
    source_path: str = ""
    label: Label | None = None
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float32)
        if s.ndim != 1 or s.shape[0] != CLIP_SAMPLES:
            raise ParameterError(f"clip must hold {CLIP_SAMPLES} samples, got shape {s.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise ParameterError(f"clip sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if not np.all(np.isfinite(s)) or np.any(np.abs(s) > 1.0):
            raise ParameterError("clip samples must be finite and within [-1, 1]")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)


def fit_length(samples: np.ndarray, length: int = CLIP_SAMPLES) -> np.ndarray:
    """Zero-pad at the end or truncate to ``length`` samples."""
    samples = np.asarray(samples, dtype=np.float32)
    if samples.shape[0] >= length:
        return samples[:length].copy()
    out = np.zeros(length, dtype=np.float32)
    out[: samples.shape[0]] = samples
    return out


# --------------------------------------------------------------------------
# WAV decoding
# --------------------------------------------------------------------------

def read_pcm16(path: str | Path) -> np.ndarray:
    """Decode a 16 kHz mono 16-bit PCM RIFF/WAVE file to floats in [-1, 1).

    Recordings of any length are returned whole; use :func:`load_wav` for a
    fixed one-second clip.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size and chunk_id in (b"fmt ", b"data"):
            raise FormatError(f"{path}: {chunk_id.decode().strip()} chunk truncated "
                              f"({len(body)} of {size} bytes)")
        if chunk_id == b"fmt ":
            if size < 16:
                raise FormatError(f"{path}: fmt chunk too short ({size} bytes)")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            pcm = body
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk")
    if pcm is None:
        raise FormatError(f"{path}: missing data chunk")

    format_tag, channels, rate, _byte_rate, _align, bits = fmt
    if format_tag != 1:
        raise UnsupportedFormatError(f"{path}: format_tag={format_tag}, expected 1 (PCM)")
    if channels != 1:
        raise UnsupportedFormatError(f"{path}: channels={channels}, expected 1")
    if rate != SAMPLE_RATE:
        raise UnsupportedFormatError(f"{path}: sample_rate={rate}, expected {SAMPLE_RATE}")
    if bits != 16:
        raise UnsupportedFormatError(f"{path}: bits_per_sample={bits}, expected 16")
    if len(pcm) % 2:
        raise FormatError(f"{path}: odd number of bytes in 16-bit data chunk")

    raw = np.frombuffer(pcm, dtype="<i2")
    return raw.astype(np.float32) / 32768.0


def load_wav(path: str | Path, label: Label | None = None) -> AudioClip:
    samples = fit_length(read_pcm16(path))
    return AudioClip(samples, source_path=str(path), label=label)


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write float samples in [-1, 1] as 16-bit mono PCM."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.astype("<i2").tobytes())


# --------------------------------------------------------------------------
# Labels and manifests
# --------------------------------------------------------------------------

def assign_label(folder_name: str) -> Label | None:
    """Map a word folder to its 12-way label; background noise yields ``None``."""
    if folder_name == BACKGROUND_DIR:
        return None
    name = folder_name.lower()
    if name in COMMAND_WORDS:
        return Label.from_index(COMMAND_WORDS.index(name))
    return UNKNOWN


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: Label
    partition: str

    @property
    def is_silence(self) -> bool:
        return self.path.startswith(SILENCE_PREFIX + "/")


@dataclass
class DatasetManifest:
    examples: list[ManifestEntry]
    seed: int
    root: str = ""
    noise_files: list[str] = field(default_factory=list)

    def partition(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.examples if e.partition == name]

    def histogram(self) -> dict[str, dict[str, int]]:
        hist: dict[str, dict[str, int]] = {}
        for e in self.examples:
            row = hist.setdefault(e.label.name, {TRAIN: 0, VALIDATION: 0})
            row[e.partition] += 1
        return {name: hist[name] for name in LABEL_NAMES if name in hist}

    def silence_count(self) -> int:
        return sum(e.is_silence for e in self.examples)

    def to_text(self) -> str:
        lines = [f"# root\t{self.root}", f"# seed\t{self.seed}"]
        lines += [f"# noise\t{n}" for n in self.noise_files]
        lines += [f"{e.path}\t{e.label.index}\t{e.partition}" for e in self.examples]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        root, seed, noise, examples = "", 0, [], []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if line.startswith("#"):
                key = parts[0][1:].strip()
                if key == "root":
                    root = parts[1]
                elif key == "seed":
                    seed = int(parts[1])
                elif key == "noise":
                    noise.append(parts[1])
                continue
            if len(parts) != 3 or parts[2] not in (TRAIN, VALIDATION):
                raise FormatError(f"{path}:{lineno}: expected path<TAB>label<TAB>partition")
            examples.append(ManifestEntry(parts[0], Label.from_index(int(parts[1])), parts[2]))
        return cls(examples, seed, root, noise)


def _rank_key(seed: int, rel_path: str) -> bytes:
    return hashlib.sha256(f"{seed}\0{rel_path}".encode()).digest()


def split_paths(rel_paths: Iterable[str], split_ratio: float, seed: int) -> dict[str, str]:
    """Assign each path to TRAIN/VALIDATION by a seeded hash ranking.

    The first ``round(ratio * n)`` paths in hash order are TRAIN, so the
    split is exact and depends only on the set of paths and the seed.
    """
    if not 0.0 <= split_ratio <= 1.0:
        raise ParameterError(f"split_ratio must be in [0, 1], got {split_ratio}")
    paths = sorted(set(rel_paths), key=lambda p: _rank_key(seed, p))
    n_train = int(round(split_ratio * len(paths)))
    return {p: TRAIN if i < n_train else VALIDATION for i, p in enumerate(paths)}


def scan_root(root: str | Path) -> tuple[list[tuple[str, Label]], list[str]]:
    """Return ``(word files with labels, background noise files)`` as root-relative paths."""
    root = Path(root)
    if not root.is_dir():
        raise EmptyDatasetError(f"{root}: not a directory")
    words, noise = [], []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        label = assign_label(sub.name)
        files = sorted(f.relative_to(root).as_posix() for f in sub.glob("*.wav"))
        if label is None:
            noise.extend(files)
        else:
            words.extend((f, label) for f in files)
    return words, noise


def build_manifest(
    root: str | Path,
    split_ratio: float = 0.8,
    seed: int = 0,
    silence_frac: float = 0.1,
) -> DatasetManifest:
    """Scan ``root`` and split its clips into TRAIN and VALIDATION.

    ``silence_frac * n_words`` synthetic SILENCE entries are added when the
    root has background noise recordings; they are regenerated from the noise
    files and the manifest seed by :func:`load_examples`.
    """
    if silence_frac < 0:
        raise ParameterError(f"silence_frac must be >= 0, got {silence_frac}")
    words, noise = scan_root(root)
    if not words:
        raise EmptyDatasetError(f"{root}: no word clips found")

    n_silence = int(round(silence_frac * len(words))) if noise else 0
    if silence_frac > 0 and not noise:
        log.warning("%s has no %s recordings; no silence examples generated", root, BACKGROUND_DIR)
    labelled = dict(words)
    for k in range(n_silence):
        labelled[f"{SILENCE_PREFIX}/{k:05d}"] = SILENCE

    parts = split_paths(labelled, split_ratio, seed)
    examples = [ManifestEntry(p, labelled[p], parts[p]) for p in sorted(labelled)]
    return DatasetManifest(examples, seed, str(Path(root).resolve()), noise)


def cap_per_class(manifest: DatasetManifest, cap: int | None) -> DatasetManifest:
    """Keep at most ``cap`` examples per label, chosen by the manifest's hash order."""
    if cap is None or cap <= 0:
        return manifest
    kept: list[ManifestEntry] = []
    counts: dict[int, int] = {}
    for e in sorted(manifest.examples, key=lambda e: _rank_key(manifest.seed + 1, e.path)):
        if counts.get(e.label.index, 0) < cap:
            counts[e.label.index] = counts.get(e.label.index, 0) + 1
            kept.append(e)
    kept.sort(key=lambda e: e.path)
    return DatasetManifest(kept, manifest.seed, manifest.root, list(manifest.noise_files))


# --------------------------------------------------------------------------
# Silence and noise
# --------------------------------------------------------------------------

def _as_samples(x) -> np.ndarray:
    return np.asarray(x.samples if isinstance(x, AudioClip) else x, dtype=np.float32)


def random_window(recording: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """A contiguous one-second window at a random offset (zero-padded if short)."""
    if recording.shape[0] <= CLIP_SAMPLES:
        return fit_length(recording)
    start = int(rng.integers(0, recording.shape[0] - CLIP_SAMPLES + 1))
    return recording[start : start + CLIP_SAMPLES].copy()


def make_silence(noise_clips: Sequence, count: int, seed: int) -> list[AudioClip]:
    """Cut ``count`` random one-second windows of noise, each scaled by U[0, 1]."""
    if not noise_clips:
        raise EmptyDatasetError("make_silence needs at least one noise recording")
    if count < 0:
        raise ParameterError(f"count must be >= 0, got {count}")
    recordings = [_as_samples(n) for n in noise_clips]
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        rec = recordings[int(rng.integers(len(recordings)))]
        amp = np.float32(rng.uniform(0.0, 1.0))
        window = np.clip(random_window(rec, rng) * amp, -1.0, 1.0)
        out.append(AudioClip(window, source_path=f"{SILENCE_PREFIX}/{k:05d}", label=SILENCE))
    return out


def mix_noise(clip: AudioClip, noise, ratio: float) -> AudioClip:
    """``clamp(clip + ratio * noise, -1, 1)``; ratio is an amplitude ratio."""
    if ratio < 0:
        raise ParameterError(f"noise ratio must be >= 0, got {ratio}")
    noise = _as_samples(noise)
    if noise.shape != clip.samples.shape:
        raise ParameterError(f"noise length {noise.shape[0]} != clip length {clip.samples.shape[0]}")
    if ratio == 0:
        return clip
    mixed = np.clip(clip.samples + np.float32(ratio) * noise, -1.0, 1.0)
    return AudioClip(mixed, clip.source_path, clip.label)


def noise_for(path: str, noise_recordings: Sequence[np.ndarray], seed: int) -> np.ndarray:
    """The background window mixed into ``path``; fixed for a given (path, seed)."""
    key = int.from_bytes(_rank_key(seed, "noise:" + path)[:8], "little")
    rng = np.random.default_rng(key)
    rec = noise_recordings[int(rng.integers(len(noise_recordings)))]
    return random_window(rec, rng)


def load_noise(manifest: DatasetManifest) -> list[np.ndarray]:
    return [read_pcm16(Path(manifest.root) / n) for n in manifest.noise_files]


def load_examples(
    manifest: DatasetManifest,
    noise_ratio: float = 0.0,
    noise: Sequence[np.ndarray] | None = None,
) -> list[tuple[AudioClip, str]]:
    """Decode every manifest entry into ``(clip, partition)`` pairs.

    SILENCE entries are regenerated deterministically from the manifest's
    noise recordings and seed.  With ``noise_ratio > 0`` a background window
    chosen per path is mixed into every clip.
    """
    if noise is None:
        noise = load_noise(manifest) if manifest.noise_files else []
    silence_entries = [e for e in manifest.examples if e.is_silence]
    silence = {}
    if silence_entries:
        if not noise:
            raise EmptyDatasetError("manifest lists silence examples but has no noise recordings")
        n_total = max(int(e.path.rsplit("/", 1)[1]) for e in silence_entries) + 1
        silence = {c.source_path: c for c in make_silence(noise, n_total, manifest.seed)}
    if noise_ratio > 0 and not noise:
        raise EmptyDatasetError("noise mixing requested but no background recordings are available")

    out = []
    for e in manifest.examples:
        if e.is_silence:
            clip = silence[e.path]
        else:
            clip = load_wav(Path(manifest.root) / e.path, label=e.label)
            clip = AudioClip(clip.samples, e.path, e.label)
        if noise_ratio > 0:
            clip = mix_noise(clip, noise_for(e.path, noise, manifest.seed), noise_ratio)
        out.append((clip, e.partition))
    return out
