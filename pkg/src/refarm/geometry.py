"""Deterministic geometry of the macro/small-cell layout.

Conventions
-----------
* Flat-topped hexagons of side ``R_m``; the serving macro BS sits at the
  origin and sector 1 has its boresight along +x.  Sector boresights are at
  ``0, 2pi/3, 4pi/3``.
* The small cell is at polar position ``(D, theta)`` relative to its BS.
* A GSM user is described by ``(r, psi)`` relative to the small cell, where
  ``psi`` is measured counter-clockwise from the outward radial direction
  ``theta`` (so ``psi = 0`` points away from the BS and ``psi = pi`` towards
  it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .radio import wrap_angle

__all__ = [
    "NetworkGeometry",
    "HexGrid",
    "GuardRadii",
    "SECTOR_BORESIGHTS",
    "band_guard_radii",
    "gsm_link_geometry",
    "gsm_cochannel_radius",
    "validate_placement",
    "bs_density",
    "sector_area",
    "serving_boresight",
    "user_position",
    "user_offset_from_bs_polar",
    "outage_probes",
]

SECTOR_BORESIGHTS = (0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0)


@dataclass(frozen=True)
class NetworkGeometry:
    R_m: float = 1000.0
    D: float = 500.0
    theta: float = 0.0
    R_c: float = 50.0
    R_s: float = 262.5187839521660
    delta_R_s: float = 50.0

    def __post_init__(self):
        if not self.R_m > 0.0:
            raise ValueError("R_m must be positive")
        if not 0.0 < self.R_c <= self.R_s:
            raise ValueError("need 0 < R_c <= R_s")
        if self.delta_R_s < 0.0:
            raise ValueError("delta_R_s must be non-negative")
        if self.D < 0.0:
            raise ValueError("D must be non-negative")
        if not -math.pi < self.theta <= math.pi:
            raise ValueError("theta must lie in (-pi, pi]")

    @property
    def small_cell_xy(self) -> np.ndarray:
        return np.array([self.D * math.cos(self.theta), self.D * math.sin(self.theta)])


@dataclass(frozen=True)
class GuardRadii:
    R_1: float
    R_2: float
    R_3: float
    R_0: float | None = None

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.R_1, self.R_2, self.R_3)


def bs_density(R_m: float) -> float:
    """Density of a PPP with the same mean cell area as the hexagonal grid."""
    return 2.0 / (3.0 * math.sqrt(3.0) * R_m**2)


def sector_area(R_m: float) -> float:
    """Area of one 120-degree sector of a hexagonal cell."""
    return math.sqrt(3.0) / 2.0 * R_m**2


def band_guard_radii(g: NetworkGeometry) -> GuardRadii:
    """Exclusion radii of the three LTE band interference fields.

    Band 1 is the serving sector's own carrier group, whose nearest
    transmitter is the serving site itself; bands 2 and 3 are first
    reached at the nearest neighbouring site.
    """
    if g.D <= g.R_c:
        raise ValueError(f"small cell must not cover its macro BS (D={g.D}, R_c={g.R_c})")
    R_1 = g.D - g.R_c
    R_2 = math.sqrt((1.5 * g.R_m - g.D + g.R_c) ** 2 + 0.75 * g.R_m**2)
    return GuardRadii(R_1, R_2, R_2)


def gsm_link_geometry(g: NetworkGeometry, r, psi):
    """Distance ``d`` and azimuth ``beta`` of a GSM user seen from its BS.

    ``beta`` is measured from sector 1's boresight; it equals ``theta`` plus
    (for ``psi`` in [0, pi)) or minus (for ``psi`` in [pi, 2pi)) the angle
    subtended at the BS between the small cell and the user.

    Works element-wise on arrays.
    """
    r = np.asarray(r, dtype=float)
    psi = np.mod(np.asarray(psi, dtype=float), 2.0 * math.pi)
    if np.any(r < 0.0):
        raise ValueError("r must be non-negative")
    D = g.D
    if D == 0.0 and np.any(r == 0.0):
        raise ValueError("user coincides with the BS (r = 0 and D = 0)")
    d = np.sqrt(np.maximum(D * D + r * r - 2.0 * r * D * np.cos(math.pi - psi), 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_b = (D * D + d * d - r * r) / (2.0 * D * d)
    # d == 0 (user on the BS) leaves the azimuth undefined; any value works
    # because the link then has zero path loss exponent argument
    cos_b = np.where(np.isfinite(cos_b), cos_b, 1.0)
    beta_t = np.arccos(np.clip(cos_b, -1.0, 1.0))
    beta = np.where(psi < math.pi, g.theta + beta_t, g.theta - beta_t)
    if d.ndim == 0:
        return float(d), float(beta)
    return d, beta


def gsm_cochannel_radius(g: NetworkGeometry, variant: str = "theorem", beta: float | None = None) -> float:
    """Exclusion radius of the co-channel GSM interferers (3/9 control reuse).

    ``theorem``: distance from the small cell to the nearest co-channel site
    whose main lobe faces the serving sector, ``sqrt(9 R_m^2 + D^2 - 6 D R_m
    cos(2pi/3 - |theta|))``.

    ``proof``: ``sqrt((sqrt3/2 R_m - D sin beta)^2 + (3/2 R_m + D cos beta)^2)``.
    The two disagree (their leading terms are 9 R_m^2 and 3 R_m^2); both
    are kept so results can be compared.  ``beta`` defaults to ``theta``.
    """
    R_m, D = g.R_m, g.D
    if variant == "theorem":
        return math.sqrt(9.0 * R_m**2 + D**2 - 6.0 * D * R_m * math.cos(2.0 * math.pi / 3.0 - abs(g.theta)))
    if variant == "proof":
        b = g.theta if beta is None else beta
        return math.sqrt((math.sqrt(3.0) / 2.0 * R_m - D * math.sin(b)) ** 2 + (1.5 * R_m + D * math.cos(b)) ** 2)
    raise ValueError(f"unknown R_0 variant {variant!r}")


def serving_boresight(azimuth):
    """Boresight of the sector geometrically serving a given azimuth."""
    az = np.asarray(azimuth, dtype=float)
    k = np.round(np.mod(az, 2.0 * math.pi) / (2.0 * math.pi / 3.0)) % 3
    b = k * (2.0 * math.pi / 3.0)
    return float(b) if b.ndim == 0 else b


def _hexagon_normals() -> np.ndarray:
    ang = math.pi / 6.0 + np.arange(6) * math.pi / 3.0
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def validate_placement(g: NetworkGeometry) -> bool:
    """True iff the guard disk lies inside the serving hexagon and inside the
    120-degree wedge of the sector serving azimuth ``theta``."""
    c = g.small_cell_xy
    apothem = math.sqrt(3.0) / 2.0 * g.R_m
    if np.any(_hexagon_normals() @ c + g.R_s > apothem + 1e-9):
        return False
    b = serving_boresight(g.theta)
    for side in (+1.0, -1.0):
        edge = b + side * math.pi / 3.0
        # inward unit normal of the wedge edge at angle ``edge``
        n = np.array([math.sin(edge), -math.cos(edge)]) * side
        if n @ c < g.R_s - 1e-9:
            return False
    return True


def user_position(g: NetworkGeometry, r, psi) -> np.ndarray:
    """Cartesian position (relative to the serving BS) of a user at (r, psi)."""
    r = np.asarray(r, dtype=float)
    ang = g.theta + np.asarray(psi, dtype=float)
    return np.stack([g.D * math.cos(g.theta) + r * np.cos(ang), g.D * math.sin(g.theta) + r * np.sin(ang)], axis=-1)


def user_offset_from_bs_polar(g: NetworkGeometry, rho: float, phi: float) -> tuple[float, float]:
    """Convert a BS-relative polar position into small-cell-relative (r, psi)."""
    p = np.array([rho * math.cos(phi), rho * math.sin(phi)]) - g.small_cell_xy
    r = float(np.hypot(*p))
    psi = float(np.mod(math.atan2(p[1], p[0]) - g.theta, 2.0 * math.pi)) if r > 0.0 else 0.0
    return r, psi


def outage_probes(g: NetworkGeometry) -> list[tuple[float, float]]:
    """The three reference GSM user positions as (r, psi) w.r.t. the small cell.

    In BS-relative polar form they are ``(D + R_s, theta)``,
    ``(sqrt(D^2 - R_s^2), theta + arccos(R_s / D))`` and ``(D - R_s, theta)``.
    """
    if g.D <= g.R_s:
        raise ValueError("reference probes need D > R_s")
    dtheta = math.acos(g.R_s / g.D)
    polar = [
        (g.D + g.R_s, g.theta),
        (math.sqrt(g.D**2 - g.R_s**2), g.theta + dtheta),
        (g.D - g.R_s, g.theta),
    ]
    return [user_offset_from_bs_polar(g, rho, phi) for rho, phi in polar]


@dataclass(frozen=True)
class HexGrid:
    """Regular grid of flat-topped hexagonal cells, no wraparound.

    Cells are laid out in ``cols`` columns of ``rows`` cells with odd
    columns shifted up by half a cell.  Positions are relative to the
    typical cell, taken as column ``(cols-1)//2``, row ``(rows-1)//2``.
    """

    rows: int = 6
    cols: int = 6
    R_m: float = 1000.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one cell")

    @cached_property
    def _layout(self):
        cols, rows = np.meshgrid(np.arange(self.cols), np.arange(self.rows), indexing="ij")
        cols, rows = cols.ravel(), rows.ravel()
        x = 1.5 * self.R_m * cols
        y = math.sqrt(3.0) * self.R_m * (rows + 0.5 * (cols & 1))
        axial_r = rows - (cols - (cols & 1)) // 2
        labels = (cols - axial_r) % 3
        tc, tr = (self.cols - 1) // 2, (self.rows - 1) // 2
        typical = tc * self.rows + tr
        pos = np.stack([x, y], axis=1)
        pos = pos - pos[typical]
        return pos, labels, typical

    @property
    def bs_positions(self) -> np.ndarray:
        return self._layout[0]

    @property
    def reuse_labels(self) -> np.ndarray:
        """Cluster label 0..2 of each site for 3-cell reuse; co-labelled
        sites are at least ``3 R_m`` apart."""
        return self._layout[1]

    @property
    def typical_cell_index(self) -> int:
        return int(self._layout[2])

    def cochannel_sites(self) -> np.ndarray:
        """Indices of sites sharing the typical cell's control carriers."""
        labels = self.reuse_labels
        t = self.typical_cell_index
        idx = np.flatnonzero(labels == labels[t])
        return idx[idx != t]
