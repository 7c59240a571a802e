"""Spike-count spectrogram: rectify, frame-sum, divide by threshold.

The half-wave rectifier is a ReLU; the integrate-and-fire stage is
approximated by summing rectified samples over fixed-length frames and
dividing by the firing threshold.  The continuous-valued form keeps the
whole front-end differentiable; a quantized mode floors the counts for
hardware parity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_FRAME_LEN = 200   # samples; 10 ms at 20 kHz
DEFAULT_THETA = 1.0

TRANSIENT_FS = 20000.0
TRANSIENT_STEP_TOL = 0.01  # relative tolerance on the 50 us time step


@dataclass
class SpikeSpectrogram:
    """Non-negative (channels x frames) feature map."""

    values: np.ndarray
    frame_len: int
    theta: float
    quantized: bool = False

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValueError("spike counts must be non-negative")

    def to_csv(self, path) -> None:
        np.savetxt(path, self.values, delimiter=",", fmt="%.9g")


def spectrogram(
    filtered: np.ndarray,
    frame_len: int = DEFAULT_FRAME_LEN,
    theta: float = DEFAULT_THETA,
    quantized: bool = False,
) -> SpikeSpectrogram:
    """Frame-summed rectified outputs divided by the threshold.

    ``filtered`` is (channels, T) with T >= frame_len; samples beyond the
    last full frame are dropped (F = T // frame_len).
    """
    if theta <= 0:
        raise ValueError("theta must be > 0")
    if frame_len < 1:
        raise ValueError("frame_len must be >= 1")
    x = np.asarray(filtered)
    if x.ndim != 2 or x.shape[1] < frame_len:
        raise ValueError("filtered must be (channels, T) with T >= frame_len")
    n_ch, t = x.shape
    f = t // frame_len
    framed = np.maximum(x[:, : f * frame_len], 0.0).reshape(n_ch, f, frame_len)
    values = framed.sum(axis=2) / theta
    if quantized:
        values = np.floor(values)
    return SpikeSpectrogram(values, frame_len, theta, quantized)


def spectrogram_batch(
    filtered: np.ndarray,
    frame_len: int = DEFAULT_FRAME_LEN,
    theta: float = DEFAULT_THETA,
) -> np.ndarray:
    """Continuous-mode spectrograms for a (B, channels, T) batch."""
    if theta <= 0:
        raise ValueError("theta must be > 0")
    b, n_ch, t = filtered.shape
    f = t // frame_len
    framed = np.maximum(filtered[:, :, : f * frame_len], 0.0).reshape(b, n_ch, f, frame_len)
    return framed.sum(axis=3) / theta


def grad_spectrogram(
    filtered: np.ndarray,
    upstream: np.ndarray,
    frame_len: int = DEFAULT_FRAME_LEN,
    theta: float = DEFAULT_THETA,
    quantized: bool = False,
) -> np.ndarray:
    """Gradient w.r.t. the filtered samples (continuous mode only).

    Each sample strictly above zero receives upstream/theta from its frame;
    non-positive samples (including exact zeros) receive 0.  Samples past
    the last full frame never contribute and get zero gradient.
    """
    if quantized:
        raise ValueError("gradients are undefined in quantized mode")
    x = np.asarray(filtered)
    single = x.ndim == 2
    if single:
        x = x[None]
        upstream = np.asarray(upstream)[None]
    b, n_ch, t = x.shape
    f = t // frame_len
    if np.shape(upstream) != (b, n_ch, f):
        raise ValueError("upstream shape does not match spectrogram shape")
    grad = np.zeros_like(x)
    spread = np.repeat(np.asarray(upstream) / theta, frame_len, axis=2)
    grad[:, :, : f * frame_len] = spread * (x[:, :, : f * frame_len] > 0)
    return grad[0] if single else grad


def import_transient(path) -> np.ndarray:
    """Load externally simulated channel waveforms from CSV.

    Expected format: header ``time_s,ch01,...,ch16``, then one row per
    50 us step.  The time column must be uniform within 1%; violations,
    wrong channel counts and malformed rows raise ValueError.  Returns a
    (16, T) array at 20 kHz.
    """
    with open(path) as fh:
        header = fh.readline().strip()
        cols = header.split(",")
        expected = ["time_s"] + [f"ch{c + 1:02d}" for c in range(16)]
        if cols != expected:
            raise ValueError(
                f"bad transient header in {path}: expected {','.join(expected)}"
            )
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise ValueError(f"malformed transient rows in {path}: {exc}") from exc
    if data.shape[1] != 17:
        raise ValueError(f"expected 17 columns, got {data.shape[1]}")
    if data.shape[0] < 2:
        raise ValueError("transient file must contain at least 2 samples")
    step = 1.0 / TRANSIENT_FS
    dt = np.diff(data[:, 0])
    if np.any(np.abs(dt - step) > TRANSIENT_STEP_TOL * step):
        raise ValueError(
            f"non-uniform or off-nominal time step (need {step * 1e6:.0f} us within "
            f"{TRANSIENT_STEP_TOL:.0%})"
        )
    return np.ascontiguousarray(data[:, 1:].T)


def export_transient(path, waveforms: np.ndarray) -> None:
    """Write (16, T) channel waveforms in the transient CSV format."""
    if waveforms.shape[0] != 16:
        raise ValueError("expected 16 channels")
    t = waveforms.shape[1]
    times = np.arange(t) / TRANSIENT_FS
    header = "time_s," + ",".join(f"ch{c + 1:02d}" for c in range(16))
    table = np.column_stack([times, waveforms.T])
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.9g")
