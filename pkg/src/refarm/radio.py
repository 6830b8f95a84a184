"""Propagation, antenna, fading and noise primitives.

All powers are linear Watts, angles are radians, distances metres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "RadioParams",
    "FadingModel",
    "AntennaPattern",
    "antenna_gain",
    "path_gain",
    "noise_power",
    "draw_fade",
    "db_to_linear",
    "linear_to_db",
    "dbm_to_watt",
    "wrap_angle",
]


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x)


def dbm_to_watt(x_dbm):
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def wrap_angle(phi):
    """Map angles into [-pi, pi)."""
    return (np.asarray(phi, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class RadioParams:
    """Link-budget constants shared by the analysis and the simulator.

    ``P_l`` may be left as ``None`` until the small-cell power is calibrated
    (see :func:`refarm.spectrum_plan.calibrate_power`).  ``L_0`` defaults to
    the free-space gain at 1 m, ``(wavelength / 4 pi)**2``.
    """

    P_g: float = 40.0
    P_l: float | None = None
    alpha: float = 3.0
    noise_psd: float = dbm_to_watt(-174.0)
    eta: float = float(db_to_linear(3.0))
    wavelength: float = 0.375
    L_0: float | None = None

    def __post_init__(self):
        if not self.alpha > 2.0:
            raise ValueError(f"alpha must exceed 2 (got {self.alpha})")
        if not self.P_g > 0.0:
            raise ValueError("P_g must be positive")
        if self.P_l is not None and self.P_l < 0.0:
            raise ValueError("P_l must be non-negative")
        if not self.noise_psd > 0.0:
            raise ValueError("noise_psd must be positive")
        if not self.eta >= 1.0:
            raise ValueError("Shannon gap eta must be >= 1")
        if self.L_0 is None and not self.wavelength > 0.0:
            raise ValueError("wavelength must be positive")

    @property
    def L0(self) -> float:
        if self.L_0 is not None:
            return self.L_0
        return (self.wavelength / (4.0 * math.pi)) ** 2

    @property
    def Pg_hat(self) -> float:
        return self.P_g * self.L0

    @property
    def Pl_hat(self) -> float:
        if self.P_l is None:
            raise ValueError("small-cell power P_l has not been set or calibrated")
        return self.P_l * self.L0

    def with_power(self, P_l: float) -> "RadioParams":
        return replace(self, P_l=P_l)


@dataclass(frozen=True)
class FadingModel:
    """Power fading distribution with unit mean.

    ``rayleigh`` draws Exp(1) power gains; ``deterministic_unit`` is the
    no-fading limit (gain identically 1).
    """

    kind: str = "rayleigh"

    def __post_init__(self):
        if self.kind not in ("rayleigh", "deterministic_unit"):
            raise ValueError(f"unknown fading kind {self.kind!r}")

    @property
    def mean(self) -> float:
        return 1.0

    def laplace(self, w):
        """E[exp(-w F)]."""
        w = np.asarray(w, dtype=float)
        if self.kind == "rayleigh":
            return 1.0 / (1.0 + w)
        return np.exp(-w)

    def complement_ratio(self, y):
        """(1 - E[exp(-y F)]) / y, continuous at y = 0 where it equals E[F]."""
        y = np.asarray(y, dtype=float)
        if self.kind == "rayleigh":
            return 1.0 / (1.0 + y)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = -np.expm1(-y) / y
        return np.where(y < 1e-12, 1.0 - 0.5 * y, out)

    def draw(self, rng: np.random.Generator, size=None):
        if self.kind == "rayleigh":
            return rng.standard_exponential(size=size)
        if size is None:
            return 1.0
        return np.ones(size)


@dataclass(frozen=True)
class AntennaPattern:
    """Horizontal antenna pattern; ``tri_sector_3gpp`` is
    ``-min(12 (phi/beamwidth)^2, floor_db)`` dB."""

    kind: str = "tri_sector_3gpp"
    beamwidth_deg: float = 70.0
    floor_db: float = 20.0

    def __post_init__(self):
        if self.kind not in ("omni", "tri_sector_3gpp"):
            raise ValueError(f"unknown antenna pattern {self.kind!r}")

    @property
    def floor_angle(self) -> float:
        """|phi| (rad) beyond which the gain sits on the floor."""
        if self.kind == "omni":
            return 0.0
        return math.radians(self.beamwidth_deg * math.sqrt(self.floor_db / 12.0))

    @property
    def floor_gain(self) -> float:
        if self.kind == "omni":
            return 1.0
        return 10.0 ** (-self.floor_db / 10.0)

    def gain_db(self, phi):
        phi = wrap_angle(phi)
        if self.kind == "omni":
            return np.zeros_like(phi)
        deg = np.degrees(phi)
        return -np.minimum(12.0 * (deg / self.beamwidth_deg) ** 2, self.floor_db)

    def gain(self, phi):
        return 10.0 ** (self.gain_db(phi) / 10.0)


def antenna_gain(p: AntennaPattern, phi):
    """Linear antenna gain at azimuth ``phi`` (radians, any range)."""
    g = p.gain(phi)
    return float(g) if np.ndim(g) == 0 else g


def path_gain(rp: RadioParams, r):
    """Deterministic path gain ``L_0 * r**-alpha``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("distance must be positive")
    g = rp.L0 * r ** (-rp.alpha)
    return float(g) if g.ndim == 0 else g


def noise_power(rp: RadioParams, bandwidth: float) -> float:
    """Thermal noise power over ``bandwidth`` Hz."""
    if not bandwidth > 0.0:
        raise ValueError("bandwidth must be positive")
    return rp.noise_psd * bandwidth


def draw_fade(f: FadingModel, rng: np.random.Generator, size=None):
    """Draw linear power fades from ``f`` using the caller's stream."""
    return f.draw(rng, size)
