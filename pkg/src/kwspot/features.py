"""Audio to grayscale feature images.

Three modes share one output contract (a 2-D array in [0, 1]):

* ``spectrogram``: Hann-windowed STFT magnitudes, log-compressed and
  mean-pooled into ``num_buckets`` frequency bands;
* ``mfcc``: a 40-band triangular mel filterbank, log-compressed, keeping the
  first ``num_buckets`` DCT-II coefficients;
* ``amplitude``: a binary raster of the waveform polyline.

Spectral images have frequency bands on rows and frames (time) on columns.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct

from .dataset import CLIP_SAMPLES, SAMPLE_RATE, AudioClip
from .errors import FormatError, ParameterError

NUM_MEL = 40
MEL_FMIN = 20.0


class Mode(str, enum.Enum):
    SPECTROGRAM = "spectrogram"
    MFCC = "mfcc"
    AMPLITUDE = "amplitude"


MODE_CODES = {Mode.SPECTROGRAM: 0, Mode.MFCC: 1, Mode.AMPLITUDE: 2}


@dataclass(frozen=True)
class SpectrogramConfig:
    """Featurization settings.

    ``output_height``/``output_width`` of ``None`` keep the native geometry
    (``num_buckets`` rows by frame-count columns) without resampling.
    """

    window_size: int = 480
    window_stride: int = 160
    num_buckets: int = 40
    log_offset: float = 1e-6
    mode: Mode = Mode.SPECTROGRAM
    output_height: int | None = 28
    output_width: int | None = 28

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        self.validate()

    @classmethod
    def for_mode(cls, mode: Mode | str, **overrides) -> "SpectrogramConfig":
        mode = Mode(mode)
        if mode is Mode.AMPLITUDE:
            overrides.setdefault("output_height", 100)
            overrides.setdefault("output_width", 100)
        return cls(mode=mode, **overrides)

    def validate(self) -> None:
        if self.mode is not Mode.AMPLITUDE:
            if not 2 <= self.window_size <= CLIP_SAMPLES:
                raise ParameterError(f"window_size must be in [2, {CLIP_SAMPLES}], got {self.window_size}")
            if self.window_stride < 1:
                raise ParameterError(f"window_stride must be >= 1, got {self.window_stride}")
            n_bins = self.window_size // 2 + 1
            if not 1 <= self.num_buckets <= n_bins:
                raise ParameterError(
                    f"num_buckets must be in [1, {n_bins}] for window_size {self.window_size}, "
                    f"got {self.num_buckets}")
            if self.mode is Mode.MFCC and self.num_buckets > NUM_MEL:
                raise ParameterError(f"num_buckets must be <= {NUM_MEL} in mfcc mode, got {self.num_buckets}")
            if self.log_offset <= 0:
                raise ParameterError(f"log_offset must be > 0, got {self.log_offset}")
        for name in ("output_height", "output_width"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ParameterError(f"{name} must be >= 1, got {v}")

    def num_frames(self, n_samples: int = CLIP_SAMPLES) -> int:
        return (n_samples - self.window_size) // self.window_stride + 1

    def image_shape(self) -> tuple[int, int]:
        if self.mode is Mode.AMPLITUDE:
            return self.output_height or 100, self.output_width or 100
        return (self.output_height or self.num_buckets, self.output_width or self.num_frames())


@dataclass(frozen=True)
class FeatureImage:
    pixels: np.ndarray
    mode: Mode
    label: int | None = None


# --------------------------------------------------------------------------
# Spectral primitives
# --------------------------------------------------------------------------

def frame_signal(samples, window_size: int, window_stride: int) -> np.ndarray:
    """Slice ``samples`` into frames; frame ``i`` starts at ``i * window_stride``."""
    samples = np.asarray(samples.samples if isinstance(samples, AudioClip) else samples)
    if window_size < 1 or window_stride < 1:
        raise ParameterError("window_size and window_stride must be positive")
    if window_size > samples.shape[0]:
        raise ParameterError(f"window_size {window_size} exceeds signal length {samples.shape[0]}")
    return sliding_window_view(samples, window_size)[::window_stride]


def hann_window(n: int) -> np.ndarray:
    """Symmetric Hann window with zero endpoints."""
    if n < 2:
        raise ParameterError(f"hann window needs n >= 2, got {n}")
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / (n - 1)))


def dft_magnitude(frames: np.ndarray) -> np.ndarray:
    """Magnitudes of the real DFT along the last axis, bins ``0..N/2``."""
    return np.abs(np.fft.rfft(frames, axis=-1))


def log_compress(magnitudes: np.ndarray, log_offset: float = 1e-6) -> np.ndarray:
    return np.log(np.asarray(magnitudes) + log_offset)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_bins: int, num_mel: int = NUM_MEL, sample_rate: int = SAMPLE_RATE,
                   fmin: float = MEL_FMIN, fmax: float | None = None) -> np.ndarray:
    """Triangular mel filters as a ``(num_mel, n_bins)`` matrix with unit row sums.

    Unit row sums make a flat spectrum map to a flat filterbank output.  A
    filter too narrow to cover any bin collapses onto its nearest bin.
    """
    fmax = sample_rate / 2 if fmax is None else fmax
    n_fft = 2 * (n_bins - 1)
    bin_hz = np.arange(n_bins) * sample_rate / max(n_fft, 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_mel + 2))
    fb = np.zeros((num_mel, n_bins))
    for m in range(num_mel):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rise = (bin_hz - lo) / (mid - lo)
        fall = (hi - bin_hz) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rise, fall))
        total = fb[m].sum()
        if total <= 0:
            fb[m, int(np.argmin(np.abs(bin_hz - mid)))] = 1.0
        else:
            fb[m] /= total
    return fb


def _bucket_edges(n: int, num_buckets: int) -> np.ndarray:
    return (np.arange(num_buckets + 1) * n) // num_buckets


def bucketize(values: np.ndarray, num_buckets: int, mode: Mode | str = Mode.SPECTROGRAM,
              log_offset: float = 1e-6, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Reduce the last axis to ``num_buckets`` values.

    In spectrogram mode ``values`` are log magnitudes, mean-pooled over
    contiguous, (near-)equal bin ranges.  In mfcc mode ``values`` are linear
    magnitudes fed through the mel filterbank.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[-1]
    mode = Mode(mode)
    if num_buckets < 1 or num_buckets > n:
        raise ParameterError(f"num_buckets must be in [1, {n}], got {num_buckets}")
    if mode is Mode.SPECTROGRAM:
        edges = _bucket_edges(n, num_buckets)
        sums = np.add.reduceat(values, edges[:-1], axis=-1)
        return sums / np.diff(edges)
    if mode is Mode.MFCC:
        if num_buckets > NUM_MEL:
            raise ParameterError(f"mfcc keeps at most {NUM_MEL} coefficients, got {num_buckets}")
        energies = values @ mel_filterbank(n, NUM_MEL, sample_rate).T
        return dct(np.log(energies + log_offset), type=2, norm="ortho", axis=-1)[..., :num_buckets]
    raise ParameterError(f"bucketize does not apply to mode {mode.value}")


def area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``(n_out, n_in)`` weights averaging each output cell's span of the input."""
    scale = n_in / n_out
    lo = np.arange(n_out)[:, None] * scale
    hi = lo + scale
    j = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, j + 1) - np.maximum(lo, j), 0.0, None)
    return overlap / scale


def area_resample(image: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = image.shape
    if (h, w) == (height, width):
        return image.copy()
    return area_matrix(h, height) @ image @ area_matrix(w, width).T


def normalize_minmax(image: np.ndarray) -> np.ndarray:
    lo, hi = float(image.min()), float(image.max())
    if hi - lo <= 0 or not np.isfinite(hi - lo):
        return np.full(image.shape, 0.5)
    return (image - lo) / (hi - lo)


def assemble_image(frame_features: np.ndarray, output_height: int | None = 28,
                   output_width: int | None = 28) -> np.ndarray:
    """Stack per-frame vectors as columns, normalize to [0, 1], area-resample."""
    frame_features = np.asarray(frame_features, dtype=np.float64)
    if frame_features.ndim != 2 or frame_features.shape[0] < 1:
        raise ParameterError("need at least one frame of features")
    image = normalize_minmax(frame_features.T)
    height, width = output_height or image.shape[0], output_width or image.shape[1]
    if image.min() == image.max():
        return np.full((height, width), image.flat[0])  # keep degenerate images exact
    out = area_resample(image, height, width)
    return np.clip(out, 0.0, 1.0)


def amplitude_plot(clip, height: int = 100, width: int = 100) -> np.ndarray:
    """Binary raster of the waveform drawn as a polyline through every sample.

    Column ``c`` covers an equal share of the samples and lights every row
    between the lowest and highest value it spans, including the segment
    joining it to the previous column.  Row 0 is amplitude +1.
    """
    s = np.asarray(clip.samples if isinstance(clip, AudioClip) else clip, dtype=np.float64)
    s = np.clip(s, -1.0, 1.0)
    edges = _bucket_edges(s.shape[0], width)
    hi = np.maximum.reduceat(s, edges[:-1])
    lo = np.minimum.reduceat(s, edges[:-1])
    prev = s[np.maximum(edges[:-1] - 1, 0)]
    hi = np.maximum(hi, prev)
    lo = np.minimum(lo, prev)

    def row(v):
        return np.floor((1.0 - v) / 2.0 * (height - 1) + 0.5).astype(int)

    top, bottom = row(hi), row(lo)
    rows = np.arange(height)[:, None]
    return ((rows >= top[None, :]) & (rows <= bottom[None, :])).astype(np.float64)


def spectral_features(samples: np.ndarray, config: SpectrogramConfig) -> np.ndarray:
    """Per-frame feature vectors, shape ``(n_frames, num_buckets)``."""
    frames = frame_signal(samples, config.window_size, config.window_stride).astype(np.float64)
    mags = dft_magnitude(frames * hann_window(config.window_size))
    if config.mode is Mode.SPECTROGRAM:
        return bucketize(log_compress(mags, config.log_offset), config.num_buckets, Mode.SPECTROGRAM)
    return bucketize(mags, config.num_buckets, Mode.MFCC, config.log_offset)


def featurize(clip: AudioClip, config: SpectrogramConfig) -> FeatureImage:
    label = clip.label.index if clip.label is not None else None
    if config.mode is Mode.AMPLITUDE:
        h, w = config.image_shape()
        pixels = amplitude_plot(clip, h, w)
    else:
        feats = spectral_features(clip.samples, config)
        pixels = assemble_image(feats, config.output_height, config.output_width)
    return FeatureImage(pixels.astype(np.float32), config.mode, label)


def featurize_many(clips: Iterable[AudioClip], config: SpectrogramConfig) -> tuple[np.ndarray, np.ndarray]:
    """Stack images into ``(N, H, W)`` float32 plus an int label vector."""
    images, labels = [], []
    for clip in clips:
        img = featurize(clip, config)
        images.append(img.pixels)
        labels.append(-1 if img.label is None else img.label)
    h, w = config.image_shape()
    x = np.stack(images) if images else np.zeros((0, h, w), np.float32)
    return x, np.asarray(labels, dtype=np.int64)


# --------------------------------------------------------------------------
# Files
# --------------------------------------------------------------------------

def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    """Binary 8-bit PGM (P5) with ``round(255 * value)`` gray levels."""
    img = np.round(np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    raw = np.frombuffer(parts[4][: w * h], dtype=np.uint8)
    if raw.size != w * h:
        raise FormatError(f"{path}: truncated PGM body")
    return raw.reshape(h, w).astype(np.float64) / maxval


CACHE_MAGIC = b"KWSF"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sBBBIII")  # magic, version, mode, has_provenance, height, width, count


@dataclass
class FeatureSet:
    """A batch of feature images with labels (and optional provenance tags)."""

    mode: Mode
    images: np.ndarray          # (N, H, W) float32
    labels: np.ndarray          # (N,) int64
    provenance: np.ndarray | None = None  # (N,) uint8: 0 original, 1 sign, 2 std

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3 or self.images.shape[0] != self.labels.shape[0]:
            raise ParameterError(f"images {self.images.shape} do not match labels {self.labels.shape}")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    def subset(self, idx) -> "FeatureSet":
        prov = None if self.provenance is None else self.provenance[idx]
        return replace(self, images=self.images[idx], labels=self.labels[idx], provenance=prov)


def write_feature_cache(path: str | Path, features: FeatureSet) -> None:
    """Header then, per image, an int32 label, [uint8 provenance], float32 pixels (LE)."""
    n = len(features)
    h, w = features.shape
    has_prov = features.provenance is not None
    rec = [("label", "<i4")]
    if has_prov:
        rec.append(("prov", "u1"))
    rec.append(("pix", "<f4", (h * w,)))
    body = np.zeros(n, dtype=np.dtype(rec))  # packed, no alignment padding
    body["label"] = features.labels
    if has_prov:
        body["prov"] = features.provenance
    body["pix"] = features.images.reshape(n, h * w)
    header = _HEADER.pack(CACHE_MAGIC, CACHE_VERSION, MODE_CODES[features.mode], int(has_prov), h, w, n)
    Path(path).write_bytes(header + body.tobytes())


def read_feature_cache(path: str | Path) -> FeatureSet:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated feature cache header")
    magic, version, mode_code, has_prov, h, w, n = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise FormatError(f"{path}: unsupported feature cache version {version}")
    modes = {v: k for k, v in MODE_CODES.items()}
    if mode_code not in modes:
        raise FormatError(f"{path}: unknown mode code {mode_code}")
    rec = [("label", "<i4")]
    if has_prov:
        rec.append(("prov", "u1"))
    rec.append(("pix", "<f4", (h * w,)))
    dtype = np.dtype(rec)
    if len(data) != _HEADER.size + n * dtype.itemsize:
        raise FormatError(f"{path}: expected {n} records of {dtype.itemsize} bytes")
    body = np.frombuffer(data, dtype=dtype, offset=_HEADER.size, count=n)
    prov = body["prov"].copy() if has_prov else None
    return FeatureSet(modes[mode_code], body["pix"].reshape(n, h, w).copy(), body["label"].astype(np.int64), prov)
