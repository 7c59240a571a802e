"""Speech-commands ingestion: WAV parsing, resampling, cropping, noise mixing.

The dataset directory follows the public speech-commands layout: one
subdirectory per word plus a ``_background_noise_`` folder.  Twelve-class
labels: the configured keywords map to ids 0..k-1, every other word maps
to "unknown", and "silence" clips are drawn from the noise bank.

Every clip leaving this module is exactly CLIP_SAMPLES samples at 20 kHz.
All randomness derives from per-clip seed sequences so results are
independent of worker scheduling.
"""

from __future__ import annotations

import hashlib
import os
import re
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import upfirdn

SOURCE_RATE = 16000
TARGET_RATE = 20000
CLIP_SECONDS = 1.0
CLIP_SAMPLES = int(TARGET_RATE * CLIP_SECONDS)
PAD_SAMPLES = int(0.1 * TARGET_RATE)  # 0.1 s of silence at each end

DEFAULT_KEYWORDS = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")
UNKNOWN_WORD = "unknown"
SILENCE_WORD = "silence"
NOISE_DIR = "_background_noise_"
NUM_CLASSES = 12

NOISE_MIX_PROB = 0.8
TRAIN_SNR_RANGE = (5.0, 20.0)
SNR_CAP_DB = 100.0

# fraction of each split emitted as synthetic silence clips
SILENCE_FRACTION = 0.1

_MAX_WAVS_PER_CLASS = 2**27 - 1  # hash-bucket granularity for split assignment


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

def load_wav(path) -> np.ndarray:
    """Read a 16-bit PCM mono WAV, normalized to [-1, 1)."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
        raw = wf.readframes(wf.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, samples: np.ndarray, rate: int) -> None:
    """Write float samples in [-1, 1) as 16-bit PCM mono."""
    pcm = np.clip(np.asarray(samples) * 32768.0, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(rate)
        wf.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# 16 kHz -> 20 kHz polyphase resampler
# ---------------------------------------------------------------------------

_UP, _DOWN = 5, 4
_TAPS_PER_PHASE = 64
_KAISER_BETA = 8.6


def _design_resample_filter() -> np.ndarray:
    n = _UP * _TAPS_PER_PHASE
    cut = 0.5 / _UP  # cycles per up-rate sample; passband edge at input Nyquist
    k = np.arange(n) - (n - 1) / 2.0
    h = 2.0 * cut * np.sinc(2.0 * cut * k) * np.kaiser(n, _KAISER_BETA) * _UP
    # exact DC gain per polyphase branch
    for p in range(_UP):
        h[p::_UP] /= h[p::_UP].sum()
    return h


_RESAMPLE_H = _design_resample_filter()


def resample_16k_to_20k(x: np.ndarray) -> np.ndarray:
    """5:4 polyphase windowed-sinc resampling (64 taps per phase).

    Output length is ceil(len(x) * 5/4).  Edges are extended by sample
    replication so constants are preserved end to end.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    n = x.shape[0]
    out_len = (n * _UP + _DOWN - 1) // _DOWN
    pad = _TAPS_PER_PHASE // 2 + 1
    xp = np.concatenate([np.full(pad, x[0]), x, np.full(pad, x[-1])])
    y_full = upfirdn(_RESAMPLE_H, xp, up=_UP, down=_DOWN)
    # group delay (n_taps-1)/2 plus the left padding, in output samples
    offset = (pad * _UP + (_UP * _TAPS_PER_PHASE) // 2) // _DOWN
    return y_full[offset : offset + out_len]


# ---------------------------------------------------------------------------
# padding / cropping / noise mixing
# ---------------------------------------------------------------------------

def pad_and_crop(x: np.ndarray, rng: np.random.Generator | None) -> np.ndarray:
    """0.1 s zero padding at both ends, then a 1 s crop window.

    With an rng the crop offset is uniform; rng=None means evaluation mode
    and takes the centre crop (offset 2000 for a full 1 s utterance).
    Inputs shorter than 1 s are zero-extended symmetrically first.
    """
    x = np.asarray(x, dtype=np.float64)
    padded = np.concatenate([np.zeros(PAD_SAMPLES), x, np.zeros(PAD_SAMPLES)])
    if padded.shape[0] < CLIP_SAMPLES:
        deficit = CLIP_SAMPLES - padded.shape[0]
        padded = np.concatenate(
            [np.zeros(deficit // 2), padded, np.zeros(deficit - deficit // 2)]
        )
    slack = padded.shape[0] - CLIP_SAMPLES
    offset = int(rng.integers(0, slack + 1)) if rng is not None else slack // 2
    return padded[offset : offset + CLIP_SAMPLES]


def mix_noise_at_snr(clean: np.ndarray, noise_segment: np.ndarray, snr_db: float) -> np.ndarray:
    """Add noise scaled so the clean/noise power ratio hits snr_db.

    SNR targets are capped at 100 dB; zero-power noise is rejected.
    """
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise_segment, dtype=np.float64)
    if clean.shape != noise.shape:
        raise ValueError("clean and noise must have equal lengths")
    p_clean = float(np.mean(clean**2))
    p_noise = float(np.mean(noise**2))
    if p_clean <= 0:
        raise ValueError("clean signal has zero power")
    if p_noise <= 0:
        raise ValueError("noise segment has zero power")
    snr_db = min(snr_db, SNR_CAP_DB)
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return clean + gain * noise


# ---------------------------------------------------------------------------
# dataset manifest
# ---------------------------------------------------------------------------

def which_set(filename: str, validation_pct: float = 10.0, testing_pct: float = 10.0) -> str:
    """Stable hash-based split assignment (speech-commands convention).

    The speaker id before ``_nohash_`` keys the hash so all utterances of
    one speaker land in the same split.
    """
    base = os.path.basename(filename)
    speaker = re.sub(r"_nohash_.*$", "", base)
    digest = hashlib.sha1(speaker.encode("utf-8")).hexdigest()
    bucket = (int(digest, 16) % (_MAX_WAVS_PER_CLASS + 1)) * (100.0 / _MAX_WAVS_PER_CLASS)
    if bucket < validation_pct:
        return "validation"
    if bucket < validation_pct + testing_pct:
        return "testing"
    return "training"


@dataclass(frozen=True)
class Clip:
    """One preprocessed utterance."""

    samples: np.ndarray  # (CLIP_SAMPLES,) at 20 kHz
    label: int
    source_path: str

    def __post_init__(self):
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("clip samples must be finite")
        if not 0 <= self.label < NUM_CLASSES:
            raise ValueError("label out of range")


@dataclass
class SplitManifest:
    """File lists per split, with integer labels resolved from keywords."""

    keywords: tuple[str, ...]
    train: list[tuple[str, int]] = field(default_factory=list)
    validation: list[tuple[str, int]] = field(default_factory=list)
    test: list[tuple[str, int]] = field(default_factory=list)

    def split(self, name: str) -> list[tuple[str, int]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]


def label_of(word: str, keywords) -> int:
    keywords = tuple(keywords)
    if word in keywords:
        return keywords.index(word)
    if word == SILENCE_WORD:
        return silence_label(keywords)
    return unknown_label(keywords)


def unknown_label(keywords) -> int:
    return len(tuple(keywords))


def silence_label(keywords) -> int:
    return len(tuple(keywords)) + 1


def build_manifest(
    root,
    keywords=DEFAULT_KEYWORDS,
    validation_pct: float = 10.0,
    testing_pct: float = 10.0,
) -> SplitManifest:
    """Scan a speech-commands tree and assign splits by filename hash."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(
            f"dataset root {root} not found; expected one subdirectory per word "
            f"plus {NOISE_DIR}/"
        )
    manifest = SplitManifest(keywords=tuple(keywords))
    words = sorted(
        d.name for d in root.iterdir() if d.is_dir() and d.name != NOISE_DIR
    )
    if not words:
        raise FileNotFoundError(f"no word directories under {root}")
    for word in words:
        label = label_of(word, keywords)
        for wav in sorted((root / word).glob("*.wav")):
            rel = f"{word}/{wav.name}"
            split = which_set(wav.name, validation_pct, testing_pct)
            target = {
                "training": manifest.train,
                "validation": manifest.validation,
                "testing": manifest.test,
            }[split]
            target.append((rel, label))
    return manifest


def save_manifest(manifest: SplitManifest, path) -> None:
    """Cache as ``path<TAB>label<TAB>split`` lines, keywords in a comment."""
    lines = ["# keywords: " + ",".join(manifest.keywords)]
    for split_name, items in (
        ("train", manifest.train),
        ("validation", manifest.validation),
        ("test", manifest.test),
    ):
        lines.extend(f"{p}\t{lab}\t{split_name}" for p, lab in items)
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path) -> SplitManifest:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# keywords: "):
        raise ValueError(f"{path}: missing keywords header")
    manifest = SplitManifest(keywords=tuple(lines[0][len("# keywords: ") :].split(",")))
    for line in lines[1:]:
        if not line.strip():
            continue
        p, lab, split_name = line.split("\t")
        manifest.split(split_name if split_name != "testing" else "test").append((p, int(lab)))
    return manifest


# ---------------------------------------------------------------------------
# noise bank
# ---------------------------------------------------------------------------

@dataclass
class NoiseBank:
    """Long background-noise waveforms at 20 kHz."""

    segments: list[np.ndarray]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("noise bank is empty")

    @classmethod
    def from_dir(cls, root) -> "NoiseBank":
        noise_dir = Path(root) / NOISE_DIR
        files = sorted(noise_dir.glob("*.wav"))
        if not files:
            raise FileNotFoundError(f"no noise files under {noise_dir}")
        return cls([resample_16k_to_20k(load_wav(f)) for f in files])

    def random_segment(self, rng: np.random.Generator, n: int = CLIP_SAMPLES) -> np.ndarray:
        idx = int(rng.integers(0, len(self.segments)))
        seg = self.segments[idx]
        if seg.shape[0] < n:
            raise ValueError("noise file shorter than one clip")
        start = int(rng.integers(0, seg.shape[0] - n + 1))
        return seg[start : start + n]


# ---------------------------------------------------------------------------
# clip pipelines
# ---------------------------------------------------------------------------

def clip_rng(seed: int, *keys: int) -> np.random.Generator:
    """Deterministic per-clip generator, independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


class ClipCache:
    """Bounded cache of resampled utterances keyed by relative path."""

    def __init__(self, root, max_items: int = 8192):
        self.root = Path(root)
        self.max_items = max_items
        self._cache: dict[str, np.ndarray] = {}

    def get(self, rel_path: str) -> np.ndarray:
        hit = self._cache.get(rel_path)
        if hit is None:
            hit = resample_16k_to_20k(load_wav(self.root / rel_path))
            if len(self._cache) < self.max_items:
                self._cache[rel_path] = hit
        return hit


def training_sampler(
    manifest: SplitManifest,
    noise_bank: NoiseBank,
    cache: ClipCache,
    seed: int,
    epoch: int,
    mix_prob: float = NOISE_MIX_PROB,
    snr_range=TRAIN_SNR_RANGE,
):
    """Yield augmented training Clips for one epoch.

    Noise is mixed with probability ``mix_prob`` at an SNR uniform in
    ``snr_range``; silence clips are raw noise-bank segments.  Order and
    augmentations are fully determined by (seed, epoch).
    """
    order_rng = clip_rng(seed, 0xE0, epoch)
    items = list(manifest.train)
    n_silence = int(round(SILENCE_FRACTION * len(items)))
    sil = silence_label(manifest.keywords)
    items.extend((f"{SILENCE_WORD}#{k}", sil) for k in range(n_silence))
    order = order_rng.permutation(len(items))
    for idx in order:
        rel, label = items[idx]
        rng = clip_rng(seed, 0xC1, epoch, int(idx))
        if label == sil and rel.startswith(f"{SILENCE_WORD}#"):
            samples = noise_bank.random_segment(rng)
            yield Clip(samples, label, rel)
            continue
        samples = pad_and_crop(cache.get(rel), rng)
        if rng.random() < mix_prob and np.mean(samples**2) > 0:
            snr = rng.uniform(*snr_range)
            samples = mix_noise_at_snr(samples, noise_bank.random_segment(rng), snr)
        yield Clip(samples, label, rel)


def eval_clips(
    manifest: SplitManifest,
    split: str,
    noise_bank: NoiseBank,
    cache: ClipCache,
    seed: int,
    snr_db: float | None,
    mixed: bool = False,
):
    """Yield evaluation Clips with fixed per-clip noise seeds.

    ``snr_db=None`` evaluates clean.  ``mixed=True`` reproduces the
    training protocol (probability 0.8, SNR uniform in the training range)
    with seeds independent of the epoch, for comparable per-epoch curves.
    Silence clips are appended deterministically from the noise bank.
    """
    items = list(manifest.split(split))
    n_silence = int(round(SILENCE_FRACTION * len(items)))
    sil = silence_label(manifest.keywords)
    for k in range(n_silence):
        items.append((f"{SILENCE_WORD}#{k}", sil))
    split_key = {"train": 0, "validation": 1, "test": 2}[split]
    for idx, (rel, label) in enumerate(items):
        rng = clip_rng(seed, 0xE5, split_key, idx)
        if label == sil and rel.startswith(f"{SILENCE_WORD}#"):
            yield Clip(noise_bank.random_segment(rng), label, rel)
            continue
        samples = pad_and_crop(cache.get(rel), None)
        if np.mean(samples**2) > 0:
            if mixed:
                if rng.random() < NOISE_MIX_PROB:
                    snr = rng.uniform(*TRAIN_SNR_RANGE)
                    samples = mix_noise_at_snr(samples, noise_bank.random_segment(rng), snr)
            elif snr_db is not None:
                samples = mix_noise_at_snr(samples, noise_bank.random_segment(rng), snr_db)
        yield Clip(samples, label, rel)
