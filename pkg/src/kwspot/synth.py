"""Synthetic Speech-Commands-style corpus for offline runs.

Words are rendered with a crude source-filter model: a harmonic voice source
shaped by moving formant resonances, band-limited noise for fricatives,
short broadband bursts for plosives and a low resonance for nasals.  Each
clip is spoken by one of a pool of synthetic speakers (pitch, vocal-tract
scale, tempo, loudness), so classes overlap the way real recordings do.
The files land in the standard ``<root>/<word>/<speaker>_nohash_<n>.wav``
layout together with a ``_background_noise_`` folder.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import BACKGROUND_DIR, CLIP_SAMPLES, COMMAND_WORDS, SAMPLE_RATE, write_wav

SR = SAMPLE_RATE

# first three formants (Hz) of a typical adult voice
VOWELS = {
    "i": (270, 2290, 3010), "ih": (390, 1990, 2550), "e": (530, 1840, 2480),
    "ae": (660, 1720, 2410), "a": (730, 1090, 2440), "uh": (520, 1190, 2390),
    "o": (570, 840, 2410), "u": (300, 870, 2240), "er": (490, 1350, 1690),
}

FRICATIVES = {"s": (4000, 7800, 0.35), "sh": (2000, 6000, 0.35), "f": (1500, 7000, 0.12),
              "h": (500, 4000, 0.08), "v": (800, 5000, 0.08)}

# segment: ("v", start vowel, end vowel, seconds) | ("f", fricative, seconds)
#          ("b", seconds) burst | ("n", seconds) nasal | ("-", seconds) gap
WORDS = {
    "yes": [("v", "i", "e", 0.2), ("v", "e", "e", 0.08), ("f", "s", 0.13)],
    "no": [("n", 0.06), ("v", "o", "u", 0.28)],
    "up": [("v", "uh", "uh", 0.16), ("-", 0.05), ("b", 0.02)],
    "down": [("b", 0.02), ("v", "a", "u", 0.26), ("n", 0.07)],
    "left": [("v", "u", "e", 0.08), ("v", "e", "e", 0.14), ("f", "f", 0.08), ("b", 0.02)],
    "right": [("v", "er", "a", 0.1), ("v", "a", "i", 0.2), ("-", 0.03), ("b", 0.02)],
    "on": [("v", "o", "o", 0.2), ("n", 0.1)],
    "off": [("v", "o", "o", 0.18), ("f", "f", 0.14)],
    "stop": [("f", "s", 0.12), ("-", 0.03), ("b", 0.015), ("v", "a", "a", 0.16), ("-", 0.04), ("b", 0.02)],
    "go": [("b", 0.02), ("v", "o", "u", 0.28)],
    # words outside the command set
    "bed": [("b", 0.02), ("v", "e", "e", 0.18), ("-", 0.03), ("b", 0.02)],
    "bird": [("b", 0.02), ("v", "er", "er", 0.22), ("-", 0.03), ("b", 0.02)],
    "cat": [("b", 0.025), ("v", "ae", "ae", 0.18), ("-", 0.04), ("b", 0.02)],
    "dog": [("b", 0.02), ("v", "o", "o", 0.2), ("-", 0.03), ("b", 0.02)],
    "happy": [("f", "h", 0.05), ("v", "ae", "ae", 0.12), ("-", 0.03), ("b", 0.015), ("v", "i", "i", 0.12)],
    "house": [("f", "h", 0.05), ("v", "a", "u", 0.2), ("f", "s", 0.12)],
    "sheila": [("f", "sh", 0.1), ("v", "i", "i", 0.12), ("v", "e", "a", 0.15)],
    "tree": [("b", 0.02), ("v", "er", "i", 0.24)],
    "wow": [("v", "u", "a", 0.15), ("v", "a", "u", 0.15)],
    "marvin": [("n", 0.05), ("v", "a", "a", 0.12), ("v", "er", "er", 0.08), ("f", "v", 0.04),
               ("v", "ih", "ih", 0.1), ("n", 0.06)],
}
UNKNOWN_WORDS = tuple(w for w in WORDS if w not in COMMAND_WORDS)


@dataclass(frozen=True)
class Speaker:
    ident: str
    f0: float            # mean pitch, Hz
    tract: float         # formant scale
    tempo: float         # duration scale
    loudness: float      # peak amplitude


def make_speakers(n: int, rng: np.random.Generator) -> list[Speaker]:
    out = []
    for _ in range(n):
        high = rng.random() < 0.5
        f0 = rng.uniform(170, 250) if high else rng.uniform(90, 150)
        tract = rng.uniform(1.05, 1.18) if high else rng.uniform(0.88, 1.02)
        out.append(Speaker(f"{int(rng.integers(16 ** 8)):08x}", f0, tract, rng.uniform(0.8, 1.25),
                           rng.uniform(0.25, 0.85)))
    return out


def _envelope(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    r = min(ramp, n // 2)
    if r > 0:
        edge = 0.5 * (1 - np.cos(np.pi * np.arange(r) / r))
        env[:r] = edge
        env[n - r:] = edge[::-1]
    return env


def _band_noise(n: int, lo: float, hi: float, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / SR)
    spec[(f < lo) | (f > hi)] = 0
    x = np.fft.irfft(spec, n)
    return x / (np.std(x) + 1e-12)


def _voiced(n: int, v0: str, v1: str, f0a: float, f0b: float, tract: float,
            rng: np.random.Generator, nasal: bool = False) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)
    f0 = f0a + (f0b - f0a) * t
    phase = 2 * np.pi * np.cumsum(f0) / SR + rng.uniform(0, 2 * np.pi)
    if nasal:
        formants = np.array([[250.0, 1100.0, 2300.0]] * 2)
    else:
        jitter = rng.uniform(0.95, 1.05, size=3)
        formants = np.array([VOWELS[v0], VOWELS[v1]], dtype=float) * jitter
    formants = formants * tract
    fmt = formants[0][None, :] + (formants[1] - formants[0])[None, :] * t[:, None]  # (n, 3)
    bandwidth = np.array([90.0, 120.0, 170.0])
    gains = np.array([1.0, 0.6, 0.3]) * (0.25 if nasal else 1.0)
    out = np.zeros(n)
    n_harm = int(7000 // max(f0a, f0b))
    for h in range(1, n_harm + 1):
        fh = h * f0
        amp = (gains[None, :] / (1.0 + ((fh[:, None] - fmt) / bandwidth[None, :]) ** 2)).sum(axis=1)
        out += amp * np.cos(h * phase) / np.sqrt(h)
    return out


def render_word(word: str, speaker: Speaker, rng: np.random.Generator) -> np.ndarray:
    """One second of audio with ``word`` placed at a random onset."""
    segments = WORDS[word]
    tempo = speaker.tempo * rng.uniform(0.9, 1.1)
    pieces = []
    f0 = speaker.f0 * rng.uniform(0.92, 1.08)
    for seg in segments:
        kind = seg[0]
        n = max(int(seg[-1] * tempo * rng.uniform(0.85, 1.15) * SR), 16)
        if kind == "v":
            f_end = f0 * rng.uniform(0.85, 1.0)
            x = _voiced(n, seg[1], seg[2], f0, f_end, speaker.tract, rng)
            f0 = f_end
            x = x / (np.max(np.abs(x)) + 1e-12) * _envelope(n, int(0.02 * SR))
        elif kind == "n":
            x = _voiced(n, "u", "u", f0, f0, speaker.tract, rng, nasal=True)
            x = 0.35 * x / (np.max(np.abs(x)) + 1e-12) * _envelope(n, int(0.01 * SR))
        elif kind == "f":
            lo, hi, level = FRICATIVES[seg[1]]
            x = level * _band_noise(n, lo * speaker.tract, min(hi * speaker.tract, 7900), rng)
            x = np.clip(x, -1, 1) * _envelope(n, int(0.015 * SR))
        elif kind == "b":
            x = 0.5 * rng.standard_normal(n) * np.exp(-np.arange(n) / (0.25 * n))
        else:
            x = np.zeros(n)
        pieces.append(x)
    word_audio = np.concatenate(pieces)[:CLIP_SAMPLES]
    out = np.zeros(CLIP_SAMPLES)
    start = int(rng.integers(0, CLIP_SAMPLES - word_audio.shape[0] + 1))
    out[start:start + word_audio.shape[0]] = word_audio
    out = out / (np.max(np.abs(out)) + 1e-12) * speaker.loudness * rng.uniform(0.8, 1.0)
    out += rng.uniform(0.001, 0.01) * rng.standard_normal(CLIP_SAMPLES)
    return np.clip(out, -1.0, 1.0)


NOISE_RMS = 0.064  # mean RMS of rendered word clips


def render_noise(kind: str, seconds: float, rng: np.random.Generator) -> np.ndarray:
    n = int(seconds * SR)
    white = rng.standard_normal(n)
    if kind == "white_noise":
        x = white
    elif kind == "pink_noise":
        spec = np.fft.rfft(white)
        f = np.fft.rfftfreq(n, 1 / SR)
        spec[1:] /= np.sqrt(f[1:])
        spec[0] = 0
        x = np.fft.irfft(spec, n)
    elif kind == "brown_noise":
        x = np.cumsum(white)
        x -= np.convolve(x, np.ones(801) / 801, mode="same")
    elif kind == "dishwasher":
        t = np.arange(n) / SR
        hum = sum(np.sin(2 * np.pi * 120 * k * t + rng.uniform(0, 6.3)) / k for k in range(1, 6))
        slosh = _band_noise(n, 200, 3000, rng) * (0.6 + 0.4 * np.sin(2 * np.pi * 0.7 * t))
        x = 0.5 * hum + slosh
    elif kind == "running_tap":
        x = _band_noise(n, 1000, 7000, rng) * (1 + 0.3 * rng.standard_normal(n).cumsum() / np.sqrt(n))
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    x = x - x.mean()
    # level matched to a typical rendered word clip, so a mixing ratio r gives
    # roughly -20*log10(r) dB SNR
    x = NOISE_RMS * x / (np.std(x) + 1e-12)
    return np.clip(x, -1.0, 1.0)


NOISE_KINDS = ("white_noise", "pink_noise", "brown_noise", "dishwasher", "running_tap")


def generate_corpus(root: str | Path, clips_per_word: int = 100, unknown_per_word: int | None = None,
                    speakers: int = 40, noise_seconds: float = 10.0, seed: int = 0) -> Path:
    """Write the corpus under ``root`` and return it; output depends only on the arguments."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    pool = make_speakers(speakers, rng)
    unknown_per_word = clips_per_word // 4 if unknown_per_word is None else unknown_per_word
    for word in WORDS:
        count = clips_per_word if word in COMMAND_WORDS else unknown_per_word
        for k in range(count):
            word_rng = np.random.default_rng([seed, list(WORDS).index(word), k])
            spk = pool[int(word_rng.integers(len(pool)))]
            write_wav(root / word / f"{spk.ident}_nohash_{k}.wav", render_word(word, spk, word_rng))
    for i, kind in enumerate(NOISE_KINDS):
        write_wav(root / BACKGROUND_DIR / f"{kind}.wav",
                  render_noise(kind, noise_seconds, np.random.default_rng([seed, 1000 + i])))
    return root
