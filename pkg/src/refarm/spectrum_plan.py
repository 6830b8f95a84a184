"""Deployment planning: carrier grid, punctured PRBs, guard region, power.

Frequencies are offsets in Hz from the low edge of the shared 10 MHz block.
GSM and LTE occupy the same block, so the GSM carrier raster and the LTE PRB
raster are aligned on the block edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import AnalysisContext, mean_cochannel_interference
from .geometry import NetworkGeometry, sector_area
from .radio import RadioParams

__all__ = [
    "PlanInfeasible",
    "CarrierGrid",
    "PrbGrid",
    "CellIdPlan",
    "build_carrier_grid",
    "size_guard_region",
    "reserved_bandwidth",
    "reserve_prbs",
    "prbs_covering",
    "pcfich_prbs",
    "plan_cell_ids",
    "calibrate_power",
    "sinr_degradation_db",
]

CONTROL = "control"


class PlanInfeasible(RuntimeError):
    """No placement satisfies the puncturing constraints."""


@dataclass(frozen=True)
class CarrierGrid:
    """GSM carrier raster over the shared block.

    ``blocks`` maps an owner (sector index 0..2, or ``"control"``) to the
    contiguous carrier indices it uses.
    """

    total_bandwidth: float
    carrier_bandwidth: float
    edge_guard: float
    blocks: dict

    @property
    def n_carriers(self) -> int:
        return sum(len(v) for v in self.blocks.values())

    @property
    def centers(self) -> np.ndarray:
        return self.edge_guard + self.carrier_bandwidth * (np.arange(self.n_carriers) + 0.5)

    def carrier_edges(self, idx) -> tuple[float, float]:
        lo = self.edge_guard + self.carrier_bandwidth * min(idx)
        return lo, lo + self.carrier_bandwidth * len(idx)

    def traffic_block(self, sector: int) -> list[int]:
        return list(self.blocks[sector])


def build_carrier_grid(total_bandwidth: float = 10e6, carrier_bandwidth: float = 200e3,
                       traffic_per_sector: int = 13, control_carriers: int = 9,
                       order=(0, 1, 2, CONTROL)) -> CarrierGrid:
    """Lay out per-sector traffic blocks and the control block edge to edge.

    Whatever bandwidth the carriers leave free is split evenly between the
    two band edges as guard.
    """
    n = 3 * traffic_per_sector + control_carriers
    guard = (total_bandwidth - n * carrier_bandwidth) / 2.0
    if guard < 0.0:
        raise ValueError("carriers do not fit in the block")
    if sorted(map(str, order)) != sorted(map(str, (0, 1, 2, CONTROL))):
        raise ValueError(f"order must be a permutation of sectors 0..2 and 'control', got {order}")
    blocks, k = {}, 0
    for owner in order:
        size = control_carriers if owner == CONTROL else traffic_per_sector
        blocks[owner] = tuple(range(k, k + size))
        k += size
    return CarrierGrid(total_bandwidth, carrier_bandwidth, guard, blocks)


@dataclass(frozen=True)
class PrbGrid:
    n_prb: int = 50
    prb_bandwidth: float = 180e3
    total_bandwidth: float = 10e6
    n_sync: int = 6

    @property
    def start(self) -> float:
        """Low edge of PRB 0 (the occupied band is centred in the block)."""
        return (self.total_bandwidth - self.n_prb * self.prb_bandwidth) / 2.0

    @property
    def occupied(self) -> tuple[float, float]:
        return self.start, self.start + self.n_prb * self.prb_bandwidth

    @property
    def sync_prbs(self) -> frozenset:
        """PRBs carrying PSS/SSS/PBCH: the central ``n_sync``."""
        first = (self.n_prb - self.n_sync) // 2
        return frozenset(range(first, first + self.n_sync))


def prbs_covering(prbs: PrbGrid, lo: float, hi: float) -> frozenset:
    """Smallest PRB set whose span covers [lo, hi) within the occupied band."""
    a, b = prbs.occupied
    lo, hi = max(lo, a), min(hi, b)
    if hi <= lo:
        return frozenset()
    first = math.floor((lo - a) / prbs.prb_bandwidth + 1e-9)
    last = math.ceil((hi - a) / prbs.prb_bandwidth - 1e-9)
    return frozenset(range(first, last))


def reserve_prbs(grid: CarrierGrid, prbs: PrbGrid, sector: int, reserved_bw: float,
                 position: str = "far_edge", forbidden=frozenset()) -> tuple[frozenset, tuple[int, ...]]:
    """Pick the sector's reserved GSM carriers and the PRBs LTE must mute.

    The reserved carriers are a contiguous window inside the sector's own
    traffic block.  Windows lying inside the LTE occupied band are tried
    first, starting from the block edge farthest from the channel centre
    (``position="far_edge"``) or nearest to it (``"near_edge"``); the first
    window whose PRB cover avoids the central sync PRBs and ``forbidden``
    wins.

    Returns
    -------
    (prb_set, carrier_indices)

    Raises
    ------
    PlanInfeasible
        If every window collides with the sync PRBs (or ``forbidden``).
    """
    if reserved_bw < 0.0:
        raise ValueError("reserved bandwidth must be non-negative")
    n = int(round(reserved_bw / grid.carrier_bandwidth))
    if n == 0:
        return frozenset(), ()
    block = grid.traffic_block(sector)
    if n > len(block):
        raise PlanInfeasible(f"{reserved_bw/1e6:g} MHz exceeds sector {sector}'s {len(block)}-carrier block")
    windows = [tuple(block[j:j + n]) for j in range(len(block) - n + 1)]
    center = grid.total_bandwidth / 2.0

    def distance(w):
        lo, hi = grid.carrier_edges(w)
        return abs(0.5 * (lo + hi) - center)

    a, b = prbs.occupied

    def outside(w):
        # windows hanging over the LTE band edge cannot be fully punctured
        lo, hi = grid.carrier_edges(w)
        return lo < a - 1e-6 or hi > b + 1e-6

    if position == "far_edge":
        windows.sort(key=lambda w: (outside(w), -distance(w)))
    elif position == "near_edge":
        windows.sort(key=lambda w: (outside(w), distance(w)))
    else:
        raise ValueError(f"unknown reservation position {position!r}")
    blocked = prbs.sync_prbs | frozenset(forbidden)
    for w in windows:
        cover = prbs_covering(prbs, *grid.carrier_edges(w))
        if not cover & blocked:
            return cover, w
    raise PlanInfeasible(
        f"sector {sector}: every {n}-carrier window overlaps the central sync PRBs "
        f"{sorted(prbs.sync_prbs)} or forbidden PRBs"
    )


def size_guard_region(sector_area_m2: float, reserved_fraction: float) -> float:
    """Guard radius whose disk is ``reserved_fraction`` of the sector area.

    With uniform traffic the share of GSM users to move onto punctured
    carriers equals the share of the sector area inside the guard disk.
    """
    if not 0.0 <= reserved_fraction <= 1.0:
        raise ValueError("reserved_fraction must lie in [0, 1]")
    return math.sqrt(reserved_fraction * sector_area_m2 / math.pi)


def reserved_bandwidth(grid: CarrierGrid, reserved_fraction: float, sector: int = 0) -> float:
    """Bandwidth (Hz) of whole carriers closest to ``reserved_fraction`` of a
    sector's traffic block, the share of its users inside the guard disk."""
    if not 0.0 <= reserved_fraction <= 1.0:
        raise ValueError("reserved_fraction must lie in [0, 1]")
    n = int(round(reserved_fraction * len(grid.traffic_block(sector))))
    return n * grid.carrier_bandwidth


def pcfich_prbs(cell_id: int, n_prb: int = 50) -> frozenset:
    """PRBs touched by the four PCFICH resource-element groups of a cell.

    The REG positions follow the LTE downlink mapping: a cell-ID dependent
    start ``6 * (cell_id mod 2 n_prb)`` subcarriers plus quarter-band steps.
    """
    n_sc = 12
    start = (n_sc // 2) * (cell_id % (2 * n_prb))
    out = set()
    for n in range(4):
        k = (start + (n * n_prb // 2) * n_sc // 2) % (n_prb * n_sc)
        for sc in range(k, k + n_sc // 2):
            out.add((sc % (n_prb * n_sc)) // n_sc)
    return frozenset(out)


@dataclass(frozen=True)
class CellIdPlan:
    allowed: tuple[int, ...]
    feasible: bool
    candidates_checked: int = 0
    note: str = ""

    @property
    def count(self) -> int:
        return len(self.allowed)


def plan_cell_ids(reserved_prbs, n_prb: int = 50, max_ids: int = 8, candidates=range(504)) -> CellIdPlan:
    """Choose a small set of physical cell IDs whose PCFICH stays clear of
    every reserved PRB.  PHICH placement is not modelled."""
    reserved = frozenset().union(*reserved_prbs) if reserved_prbs else frozenset()
    ok = [c for c in candidates if not pcfich_prbs(c, n_prb) & reserved]
    chosen = tuple(ok[:max_ids])
    return CellIdPlan(chosen, bool(chosen), len(candidates),
                      "PCFICH checked; PHICH/PDCCH tolerance assumed")


def sinr_degradation_db(P_l: float, g: NetworkGeometry, ctx: AnalysisContext) -> float:
    """Mean-SINR loss (dB) of a GSM user on the guard border caused by the
    small cell transmitting ``P_l`` Watts."""
    rp = ctx.radio
    base = mean_cochannel_interference(ctx) + ctx.gsm_noise
    lte = P_l * rp.L0 * g.R_s ** (-rp.alpha)
    return 10.0 * math.log10((base + lte) / base)


def calibrate_power(g: NetworkGeometry, rp: RadioParams, ctx: AnalysisContext,
                    max_degradation_db: float = 1.0) -> float:
    """Largest small-cell power keeping the guard-border SINR loss within
    ``max_degradation_db``.  Returns P_l in Watts."""
    if not g.R_s > 0.0:
        raise ValueError("R_s must be positive")
    base = mean_cochannel_interference(ctx.with_(geometry=g, radio=rp)) + ctx.gsm_noise
    Pl_hat = (10.0 ** (max_degradation_db / 10.0) - 1.0) * base * g.R_s**rp.alpha
    return Pl_hat / rp.L0


@dataclass
class SectorReservation:
    sector: int
    carriers: tuple[int, ...]
    prbs: tuple[int, ...]


@dataclass
class DeploymentPlan:
    grid: CarrierGrid
    prb_grid: PrbGrid
    reservations: list[SectorReservation]
    cell_ids: CellIdPlan
    R_s: float
    P_l: float
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "carrier_grid": {
                "total_bandwidth_hz": self.grid.total_bandwidth,
                "carrier_bandwidth_hz": self.grid.carrier_bandwidth,
                "edge_guard_hz": self.grid.edge_guard,
                "n_carriers": self.grid.n_carriers,
                "blocks": {str(k): list(v) for k, v in self.grid.blocks.items()},
            },
            "prb_grid": {
                "n_prb": self.prb_grid.n_prb,
                "prb_bandwidth_hz": self.prb_grid.prb_bandwidth,
                "sync_prbs": sorted(self.prb_grid.sync_prbs),
            },
            "reservations": [
                {"sector": r.sector, "carriers": list(r.carriers), "prbs": list(r.prbs)} for r in self.reservations
            ],
            "cell_ids": {"allowed": list(self.cell_ids.allowed), "feasible": self.cell_ids.feasible,
                         "note": self.cell_ids.note},
            "R_s_m": self.R_s,
            "P_l_w": self.P_l,
            **self.extras,
        }


def build_plan(g: NetworkGeometry, ctx: AnalysisContext, reserved_bw: float = 1e6,
               max_degradation_db: float = 1.0, position: str = "far_edge",
               order=(0, 1, 2, CONTROL), max_cell_ids: int = 8) -> DeploymentPlan:
    grid = build_carrier_grid(order=order)
    prbs = PrbGrid()
    reservations = []
    for sector in range(3):
        cover, carriers = reserve_prbs(grid, prbs, sector, reserved_bw, position)
        reservations.append(SectorReservation(sector, carriers, tuple(sorted(cover))))
    ids = plan_cell_ids([frozenset(r.prbs) for r in reservations], prbs.n_prb, max_cell_ids)
    if not ids.feasible:
        raise PlanInfeasible("no cell ID keeps PCFICH clear of the reserved PRBs")
    P_l = calibrate_power(g, ctx.radio, ctx, max_degradation_db)
    return DeploymentPlan(grid, prbs, reservations, ids, g.R_s, P_l)


__all__ += ["SectorReservation", "DeploymentPlan", "build_plan", "sector_area"]
