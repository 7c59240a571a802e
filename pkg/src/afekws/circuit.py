"""Subthreshold circuit model of the 16-channel bandpass filterbank.

Maps between physical quantities (bias currents in amperes, square
capacitor widths in micrometres) and the trainable per-channel scaling
factors ``phi_i = I1/I2`` and ``phi_c = C2/C1``, and derives the analog
characteristics (centre frequency, quality factor, passband gain) plus
the power and capacitor-area estimates used as training regularizers.

Unit conventions
----------------
* currents: amperes; capacitances: farads; voltages: volts
* capacitor widths: micrometres (square plates, W = L)
* plate capacitance density ``cap_density_t``: fF/um^2
* fringe coefficient ``cap_fringe_ceff``: fF/um

The scaling factors are stored through an unconstrained reparameterization
``phi = 1 + softplus(u)`` so that ``phi > 1`` holds for every value of the
trainable ``u`` without projection steps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

N_CHANNELS = 16

# defaults for the filterbank initialization
INIT_PHI_I = 3.0
INIT_PHI_C = 7.36
INIT_FC_HZ = 100.0
CURRENT_RATIO = 1.298
DEFAULT_C1_F = 1e-12


def softplus(u: float) -> float:
    """Numerically stable log(1 + exp(u))."""
    if u > 30.0:
        return u
    if u < -30.0:
        return math.exp(u)
    return math.log1p(math.exp(u))


def inv_softplus(y: float) -> float:
    """Inverse of softplus for y > 0."""
    if y <= 0.0:
        raise ValueError("softplus output must be positive")
    if y > 30.0:
        return y
    return math.log(math.expm1(y))


def softplus_grad(u: np.ndarray | float):
    """d softplus(u) / du = sigmoid(u)."""
    return 1.0 / (1.0 + np.exp(-np.asarray(u, dtype=float)))


@dataclass(frozen=True)
class PdkConstants:
    """Technology constants consumed by the circuit model.

    All values strictly positive.  ``nut_nmos``/``nut_pmos`` are the
    fitted subthreshold slope constants n*U_T in volts.
    """

    nut_nmos: float = 0.038
    nut_pmos: float = 0.059
    vdd: float = 0.6
    cap_density_t: float = 2.0      # fF / um^2
    cap_fringe_ceff: float = 0.19   # fF / um

    def __post_init__(self):
        for name in ("nut_nmos", "nut_pmos", "vdd", "cap_density_t", "cap_fringe_ceff"):
            if getattr(self, name) <= 0:
                raise ValueError(f"PdkConstants.{name} must be > 0")

    @classmethod
    def from_file(cls, path) -> "PdkConstants":
        """Load constants from a JSON file keyed by the field names."""
        with open(path) as fh:
            raw = json.load(fh)
        return cls(**raw)

    def to_dict(self) -> dict:
        return {
            "nut_nmos": self.nut_nmos,
            "nut_pmos": self.nut_pmos,
            "vdd": self.vdd,
            "cap_density_t": self.cap_density_t,
            "cap_fringe_ceff": self.cap_fringe_ceff,
        }


@dataclass(frozen=True)
class SubthresholdModel:
    """Exponential I-V law I_d = prefactor * exp((Vgs - Vth)/nut)."""

    prefactor_i0: float
    vth: float
    nut: float

    def __post_init__(self):
        if self.prefactor_i0 <= 0:
            raise ValueError("prefactor_i0 must be > 0")
        if self.nut <= 0:
            raise ValueError("nut must be > 0")

    def current(self, vgs) -> np.ndarray:
        return self.prefactor_i0 * np.exp((np.asarray(vgs) - self.vth) / self.nut)


@dataclass(frozen=True)
class CapGeometry:
    """Square MIM capacitor, side length in micrometres."""

    w_c: float

    def __post_init__(self):
        if self.w_c <= 0:
            raise ValueError("capacitor width must be > 0")


@dataclass
class ChannelParams:
    """One filter channel: frozen baselines plus trainable scaling factors.

    ``i2_base`` and ``c1_base`` never receive gradients; training moves the
    unconstrained ``u_i``/``u_c`` from which phi_i and phi_c derive.
    """

    i2_base: float  # A
    c1_base: float  # F
    u_i: float
    u_c: float

    def __post_init__(self):
        if self.i2_base <= 0:
            raise ValueError("i2_base must be > 0")
        if self.c1_base <= 0:
            raise ValueError("c1_base must be > 0")

    @classmethod
    def from_phi(cls, i2_base: float, c1_base: float, phi_i: float, phi_c: float):
        if phi_i <= 1.0 or phi_c <= 1.0:
            raise ValueError("phi_i and phi_c must be strictly greater than 1")
        return cls(i2_base, c1_base, inv_softplus(phi_i - 1.0), inv_softplus(phi_c - 1.0))

    @property
    def phi_i(self) -> float:
        return 1.0 + softplus(self.u_i)

    @property
    def phi_c(self) -> float:
        return 1.0 + softplus(self.u_c)


@dataclass(frozen=True)
class ChannelResponse:
    """Analog characteristics of one channel."""

    fc: float  # Hz
    q: float
    a: float   # linear passband gain

    @property
    def a_db(self) -> float:
        return 20.0 * math.log10(self.a)


@dataclass
class BankParams:
    """The 16-channel filterbank with its technology constants."""

    channels: list[ChannelParams]
    pdk: PdkConstants = field(default_factory=PdkConstants)

    def validate(self) -> None:
        if len(self.channels) != N_CHANNELS:
            raise ValueError(f"expected {N_CHANNELS} channels, got {len(self.channels)}")
        fcs = [derive_response(ch, self.pdk).fc for ch in self.channels]
        if any(b <= a for a, b in zip(fcs, fcs[1:])):
            raise ValueError("channel centre frequencies must be strictly increasing")

    def copy(self) -> "BankParams":
        return BankParams([replace(ch) for ch in self.channels], self.pdk)

    def phi_i_vector(self) -> np.ndarray:
        return np.array([ch.phi_i for ch in self.channels])

    def phi_c_vector(self) -> np.ndarray:
        return np.array([ch.phi_c for ch in self.channels])


# ---------------------------------------------------------------------------
# transistor / capacitor primitives
# ---------------------------------------------------------------------------

def gm_from_current(i_d: float, nut: float) -> float:
    """Subthreshold transconductance I_d / (n*U_T), in siemens."""
    if nut <= 0:
        raise ValueError("nut must be > 0")
    if i_d < 0:
        raise ValueError("drain current must be >= 0")
    return i_d / nut


def gm2_from(phi_i: float, gm1: float, pdk: PdkConstants) -> float:
    """Second transconductance implied by the current ratio phi_i."""
    if phi_i <= 1.0:
        raise ValueError("phi_i must be strictly greater than 1")
    return (phi_i - 1.0) * gm1 * pdk.nut_pmos / pdk.nut_nmos


def capacitance_of(geom: CapGeometry, pdk: PdkConstants) -> float:
    """Capacitance in farads of a square plate of side geom.w_c um.

    Plate term W^2 * t plus fringe term 2W * C_eff, evaluated in fF.
    """
    w = geom.w_c
    c_ff = w * w * pdk.cap_density_t + 2.0 * w * pdk.cap_fringe_ceff
    return c_ff * 1e-15


def cap_slope(w_um: float, pdk: PdkConstants) -> float:
    """dC/dW in farads per micrometre."""
    return (2.0 * w_um * pdk.cap_density_t + 2.0 * pdk.cap_fringe_ceff) * 1e-15


def width_for_capacitance(c: float, pdk: PdkConstants) -> CapGeometry:
    """Side length (um) of the square capacitor realizing c farads.

    Unique positive root of t*W^2 + 2*C_eff*W - C_fF = 0.
    """
    if c <= 0:
        raise ValueError("capacitance must be > 0")
    c_ff = c * 1e15
    t = pdk.cap_density_t
    ceff = pdk.cap_fringe_ceff
    w = (-ceff + math.sqrt(ceff * ceff + t * c_ff)) / t
    return CapGeometry(w)


# ---------------------------------------------------------------------------
# channel-level derivations
# ---------------------------------------------------------------------------

def physical_values(ch: ChannelParams, pdk: PdkConstants):
    """(g_m1, g_m2, C_1, C_2) realizing the channel.

    g_m1 is set by the PMOS pair biased at I_2; g_m2 follows from the
    current ratio; C_2 scales C_1 by phi_c.
    """
    gm1 = ch.i2_base / pdk.nut_pmos
    gm2 = (ch.phi_i - 1.0) * ch.i2_base / pdk.nut_nmos
    c1 = ch.c1_base
    c2 = ch.phi_c * ch.c1_base
    return gm1, gm2, c1, c2


def derive_response(ch: ChannelParams, pdk: PdkConstants) -> ChannelResponse:
    """Closed-form centre frequency, Q and passband gain of a channel."""
    phi_i = ch.phi_i
    phi_c = ch.phi_c
    fc = (
        ch.i2_base
        * math.sqrt(phi_i - 1.0)
        / (4.0 * math.pi * ch.c1_base * math.sqrt(pdk.nut_nmos * pdk.nut_pmos * phi_c))
    )
    q = math.sqrt((pdk.nut_pmos / pdk.nut_nmos) * phi_c * (phi_i - 1.0))
    return ChannelResponse(fc=fc, q=q, a=phi_c)


def i2_for_fc(fc: float, c1: float, phi_i: float, phi_c: float, pdk: PdkConstants) -> float:
    """Bias current placing the channel centre at fc hertz."""
    if fc <= 0:
        raise ValueError("fc must be > 0")
    return (
        fc
        * 4.0
        * math.pi
        * c1
        * math.sqrt(pdk.nut_nmos * pdk.nut_pmos * phi_c)
        / math.sqrt(phi_i - 1.0)
    )


@dataclass(frozen=True)
class BankInitConfig:
    """Knobs for init_bank; defaults reproduce the reference filterbank."""

    c1_base: float = DEFAULT_C1_F
    phi_i: float = INIT_PHI_I
    phi_c: float = INIT_PHI_C
    fc_start: float = INIT_FC_HZ
    current_ratio: float = CURRENT_RATIO
    pdk: PdkConstants = field(default_factory=PdkConstants)


def init_bank(cfg: BankInitConfig | None = None) -> BankParams:
    """16 channels with geometric bias currents anchored at fc_start.

    C_1 is identical across channels; consecutive I_2 scale by the
    configured ratio so the centre frequencies form a geometric series.
    """
    cfg = cfg or BankInitConfig()
    i2_first = i2_for_fc(cfg.fc_start, cfg.c1_base, cfg.phi_i, cfg.phi_c, cfg.pdk)
    channels = [
        ChannelParams.from_phi(
            i2_first * cfg.current_ratio**k, cfg.c1_base, cfg.phi_i, cfg.phi_c
        )
        for k in range(N_CHANNELS)
    ]
    bank = BankParams(channels, cfg.pdk)
    bank.validate()
    return bank


# ---------------------------------------------------------------------------
# hardware cost estimators
# ---------------------------------------------------------------------------

def estimate_power(bank: BankParams):
    """Total static power 2*Vdd*(I_1 + I_2) summed over channels.

    Returns (total watts, per-channel array).  The second bias branch
    carries I_2, so per channel P = 2*Vdd*I_2*(phi_i + 1).
    """
    per = np.array(
        [2.0 * bank.pdk.vdd * ch.i2_base * (ch.phi_i + 1.0) for ch in bank.channels]
    )
    return float(per.sum()), per


def estimate_cap_area(bank: BankParams):
    """Total capacitor plate area in mm^2 and the per-channel breakdown."""
    per = []
    for ch in bank.channels:
        w1 = width_for_capacitance(ch.c1_base, bank.pdk).w_c
        w2 = width_for_capacitance(ch.phi_c * ch.c1_base, bank.pdk).w_c
        per.append((w1 * w1 + w2 * w2) * 1e-6)  # um^2 -> mm^2
    per = np.array(per)
    return float(per.sum()), per


# ---------------------------------------------------------------------------
# subthreshold slope fitting
# ---------------------------------------------------------------------------

def fit_subthreshold_slope(iv_points) -> SubthresholdModel:
    """Least-squares fit of ln(I_d) = ln(prefactor) + Vgs/nut.

    The threshold voltage is absorbed into the prefactor; the slope
    constant nut is the quantity of interest.
    """
    pts = np.asarray(iv_points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("need at least 3 (Vgs, Id) points")
    vgs = pts[:, 0]
    i_d = pts[:, 1]
    if np.any(i_d <= 0):
        raise ValueError("all drain currents must be > 0")
    if np.ptp(vgs) == 0:
        raise ValueError("singular fit: all Vgs identical")
    slope, intercept = np.polyfit(vgs, np.log(i_d), 1)
    if slope <= 0:
        raise ValueError("singular fit: non-positive subthreshold slope")
    return SubthresholdModel(prefactor_i0=float(np.exp(intercept)), vth=0.0, nut=float(1.0 / slope))
