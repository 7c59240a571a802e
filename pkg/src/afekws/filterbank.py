"""Second-order bandpass filterbank: analytic response and two signal paths.

The training path multiplies the waveform spectrum by the exact transfer
function H(j*2*pi*f) of each channel (frequency-domain filtering); it is
linear in the input and analytically differentiable with respect to the
scaling factors.  A bilinear-transform biquad path provides time-domain
parity for inference experiments and for features generated the way an
external transient simulation would produce them.

H(s) = -(g_m1/(2 C_1)) s / (s^2 + (g_m1/(2 C_2)) s + g_m1 g_m2 / (4 C_1 C_2))
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .circuit import BankParams, ChannelParams, PdkConstants, derive_response, physical_values


@dataclass(frozen=True)
class ComplexGain:
    re: float
    im: float

    @property
    def magnitude(self) -> float:
        return math.hypot(self.re, self.im)

    @property
    def phase(self) -> float:
        return math.atan2(self.im, self.re)


@dataclass
class AcResponseTable:
    """Gain/phase of all channels on a log-spaced frequency grid."""

    frequencies: np.ndarray          # (F,)
    gains_db: np.ndarray             # (16, F)
    phases: np.ndarray               # (16, F) radians

    def __post_init__(self):
        if np.any(np.diff(self.frequencies) <= 0):
            raise ValueError("frequency grid must be strictly increasing")
        if self.gains_db.shape != self.phases.shape or self.gains_db.shape[1] != len(
            self.frequencies
        ):
            raise ValueError("inconsistent table dimensions")

    def to_csv(self, path) -> None:
        n_ch = self.gains_db.shape[0]
        header = "freq_hz," + ",".join(f"ch{c + 1:02d}_db" for c in range(n_ch))
        rows = [header]
        for j, f in enumerate(self.frequencies):
            rows.append(
                f"{f:.9g}," + ",".join(f"{self.gains_db[c, j]:.9g}" for c in range(n_ch))
            )
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")


@dataclass(frozen=True)
class BiquadCoeffs:
    """Normalized (a0 = 1) discrete bandpass section at sample rate fs."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float
    fs: float

    def poles(self) -> np.ndarray:
        return np.roots([1.0, self.a1, self.a2])


# ---------------------------------------------------------------------------
# transfer function and its parameter gradients
# ---------------------------------------------------------------------------

def _transfer_from_physical(gm1, gm2, c1, c2, f):
    s = 1j * 2.0 * np.pi * np.asarray(f, dtype=float)
    num = -(gm1 / (2.0 * c1)) * s
    den = s * s + (gm1 / (2.0 * c2)) * s + gm1 * gm2 / (4.0 * c1 * c2)
    return num / den


def transfer_at(ch: ChannelParams, f: float, pdk: PdkConstants) -> ComplexGain:
    """H(j*2*pi*f) for one channel."""
    if f < 0:
        raise ValueError("frequency must be >= 0")
    gm1, gm2, c1, c2 = physical_values(ch, pdk)
    h = _transfer_from_physical(gm1, gm2, c1, c2, f)
    return ComplexGain(float(np.real(h)), float(np.imag(h)))


def transfer_grid(ch: ChannelParams, freqs: np.ndarray, pdk: PdkConstants) -> np.ndarray:
    """Vectorized H over a frequency grid."""
    gm1, gm2, c1, c2 = physical_values(ch, pdk)
    return _transfer_from_physical(gm1, gm2, c1, c2, freqs)


def transfer_grads_physical(ch: ChannelParams, freqs: np.ndarray, pdk: PdkConstants):
    """H plus its partial derivatives in (g_m1, g_m2, C_1, C_2).

    Derivatives follow from H = N/D with N, D polynomial in s:
    dH/dx = H * (N_x/N - D_x/D).
    """
    gm1, gm2, c1, c2 = physical_values(ch, pdk)
    s = 1j * 2.0 * np.pi * np.asarray(freqs, dtype=float)
    num = -(gm1 / (2.0 * c1)) * s
    den = s * s + (gm1 / (2.0 * c2)) * s + gm1 * gm2 / (4.0 * c1 * c2)
    h = num / den

    d_gm1 = h * (1.0 / gm1 - (s / (2.0 * c2) + gm2 / (4.0 * c1 * c2)) / den)
    d_gm2 = -h * (gm1 / (4.0 * c1 * c2)) / den
    d_c1 = h * (-1.0 / c1 + (gm1 * gm2 / (4.0 * c1 * c1 * c2)) / den)
    d_c2 = -h * (-(gm1 / (2.0 * c2 * c2)) * s - gm1 * gm2 / (4.0 * c1 * c2 * c2)) / den
    return h, d_gm1, d_gm2, d_c1, d_c2


def transfer_grads_phi(ch: ChannelParams, freqs: np.ndarray, pdk: PdkConstants):
    """H plus dH/dphi_i and dH/dphi_c.

    Only g_m2 depends on phi_i and only C_2 depends on phi_c.
    """
    h, _, d_gm2, _, d_c2 = transfer_grads_physical(ch, freqs, pdk)
    d_phi_i = d_gm2 * (ch.i2_base / pdk.nut_nmos)
    d_phi_c = d_c2 * ch.c1_base
    return h, d_phi_i, d_phi_c


# ---------------------------------------------------------------------------
# AC response table
# ---------------------------------------------------------------------------

def ac_response(
    bank: BankParams, f_lo: float, f_hi: float, points_per_decade: int = 48
) -> AcResponseTable:
    """Per-channel gain (dB) and phase on a log grid covering [f_lo, f_hi].

    Grid points are f_lo * 10^(k/ppd); evaluation is pointwise, so any
    denser grid agrees exactly at shared frequencies.
    """
    if not (0 < f_lo < f_hi):
        raise ValueError("need 0 < f_lo < f_hi")
    n = int(math.ceil(points_per_decade * math.log10(f_hi / f_lo)))
    freqs = f_lo * 10.0 ** (np.arange(n + 1) / points_per_decade)
    gains = np.empty((len(bank.channels), len(freqs)))
    phases = np.empty_like(gains)
    for c, ch in enumerate(bank.channels):
        h = transfer_grid(ch, freqs, bank.pdk)
        gains[c] = 20.0 * np.log10(np.abs(h))
        phases[c] = np.angle(h)
    return AcResponseTable(freqs, gains, phases)


# ---------------------------------------------------------------------------
# frequency-domain filtering (training path)
# ---------------------------------------------------------------------------

def _fft_plan(n: int) -> int:
    nfft = 1
    while nfft < n:
        nfft <<= 1
    return nfft


def apply_ideal(bank: BankParams, waveform: np.ndarray, fs: float = 20000.0) -> np.ndarray:
    """Filter a waveform through all channels in the frequency domain.

    Accepts (T,) or (B, T); returns (16, T) or (B, 16, T).  The waveform is
    zero-padded to the next power of two, multiplied bin-wise by H and
    inverse-transformed; circular-convolution edge effects are accepted
    because utterances are padded with silence.  Output dtype follows the
    input dtype (float32 in, float32 out).
    """
    x = np.asarray(waveform)
    if x.size == 0:
        raise ValueError("empty waveform")
    single = x.ndim == 1
    if single:
        x = x[None, :]
    t = x.shape[1]
    nfft = _fft_plan(t)
    freqs = np.fft.rfftfreq(nfft, d=1.0 / fs)
    spec = np.fft.rfft(x, n=nfft, axis=1)
    out_dtype = np.float32 if x.dtype == np.float32 else np.float64
    cplx = np.complex64 if out_dtype == np.float32 else np.complex128
    out = np.empty((x.shape[0], len(bank.channels), t), dtype=out_dtype)
    for c, ch in enumerate(bank.channels):
        h = transfer_grid(ch, freqs, bank.pdk).astype(cplx)
        y = np.fft.irfft(spec * h, n=nfft, axis=1)[:, :t]
        out[:, c, :] = y
    return out[0] if single else out


def _parseval_dot(a_spec: np.ndarray, b_spec: np.ndarray, nfft: int) -> np.ndarray:
    """sum_t a[t] b[t] from rfft spectra of the real signals a, b.

    Returns the dot product per batch row.  Weights: DC and Nyquist once,
    interior bins twice.
    """
    prod = np.real(np.conj(a_spec) * b_spec)
    total = 2.0 * prod.sum(axis=-1) - prod[..., 0]
    if nfft % 2 == 0:
        total -= prod[..., -1]
    return total / nfft


def grad_apply_ideal(
    bank: BankParams,
    waveform: np.ndarray,
    upstream: np.ndarray,
    fs: float = 20000.0,
):
    """Gradients of sum(upstream * apply_ideal(...)) w.r.t. (phi_i, phi_c).

    ``upstream`` must match the forward output shape.  Returns two (16,)
    arrays (summed over the batch when the input is batched).
    """
    d_gm1, d_gm2, d_c1, d_c2 = grad_apply_ideal_physical(bank, waveform, upstream, fs)
    d_phi_i = np.empty(len(bank.channels))
    d_phi_c = np.empty(len(bank.channels))
    for c, ch in enumerate(bank.channels):
        d_phi_i[c] = d_gm2[c] * (ch.i2_base / bank.pdk.nut_nmos)
        d_phi_c[c] = d_c2[c] * ch.c1_base
    return d_phi_i, d_phi_c


def grad_apply_ideal_physical(
    bank: BankParams,
    waveform: np.ndarray,
    upstream: np.ndarray,
    fs: float = 20000.0,
):
    """Gradients w.r.t. the physical values (g_m1, g_m2, C_1, C_2).

    Used directly when training raw circuit values.  Each gradient is the
    Parseval pairing of the upstream spectrum with X * dH/dparam, which
    equals the time-domain dot product with the truncated inverse FFT.
    """
    x = np.asarray(waveform, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    g = np.asarray(upstream, dtype=float)
    if single:
        g = g[None, ...]
    t = x.shape[1]
    if g.shape != (x.shape[0], len(bank.channels), t):
        raise ValueError("upstream shape does not match forward output")
    nfft = _fft_plan(t)
    freqs = np.fft.rfftfreq(nfft, d=1.0 / fs)
    x_spec = np.fft.rfft(x, n=nfft, axis=1)                    # (B, K)
    g_spec = np.fft.rfft(g, n=nfft, axis=2)                    # (B, 16, K)
    n_ch = len(bank.channels)
    grads = np.zeros((4, n_ch))
    for c, ch in enumerate(bank.channels):
        _, dg1, dg2, dc1, dc2 = transfer_grads_physical(ch, freqs, bank.pdk)
        gs = g_spec[:, c, :]
        for k, dh in enumerate((dg1, dg2, dc1, dc2)):
            grads[k, c] = _parseval_dot(gs, x_spec * dh, nfft).sum()
    return grads[0], grads[1], grads[2], grads[3]


# ---------------------------------------------------------------------------
# bilinear-transform biquad (parity path)
# ---------------------------------------------------------------------------

def discretize_biquad(ch: ChannelParams, fs: float, pdk: PdkConstants) -> BiquadCoeffs:
    """Bilinear transform of the channel with prewarping at its centre.

    Prewarping pins the centre frequency exactly, so the discrete gain at
    f_c equals the analog passband gain.
    """
    resp = derive_response(ch, pdk)
    if fs <= 2.0 * resp.fc:
        raise ValueError(
            f"sample rate {fs} Hz aliases the {resp.fc:.1f} Hz channel (need fs > 2 fc)"
        )
    w0 = 2.0 * math.pi * resp.fc
    k = w0 / math.tan(w0 / (2.0 * fs))
    bw = w0 / resp.q
    a0 = k * k + k * bw + w0 * w0
    return BiquadCoeffs(
        b0=-resp.a * k * bw / a0,
        b1=0.0,
        b2=resp.a * k * bw / a0,
        a1=2.0 * (w0 * w0 - k * k) / a0,
        a2=(k * k - k * bw + w0 * w0) / a0,
        fs=fs,
    )


def filter_biquad(coeffs: BiquadCoeffs, waveform: np.ndarray) -> np.ndarray:
    """Run the direct-form recurrence over a waveform."""
    x = np.ascontiguousarray(waveform, dtype=np.float64)
    return kernels.biquad_apply(coeffs.b0, coeffs.b1, coeffs.b2, coeffs.a1, coeffs.a2, x)


def apply_biquad_bank(bank: BankParams, waveform: np.ndarray, fs: float = 20000.0) -> np.ndarray:
    """Time-domain counterpart of apply_ideal: (16, T) filtered outputs."""
    x = np.asarray(waveform, dtype=np.float64)
    out = np.empty((len(bank.channels), x.shape[0]))
    for c, ch in enumerate(bank.channels):
        out[c] = filter_biquad(discretize_biquad(ch, fs, bank.pdk), x)
    return out
