"""Monte Carlo system-level simulator.

Two placement modes for the macro BSs:

``hex``
    the regular grid of :class:`~refarm.geometry.HexGrid`, three co-located
    sectors per site (the deployment-realistic model);
``ppp``
    a fresh Poisson field per drop, drawn exactly as the analysis assumes
    (interferer-free ball, uniform azimuths).  This mode is the exact-model
    counterpart of :mod:`refarm.analysis`.

Each drop owns a random stream derived from ``(seed, stream tag, drop
index)``, so results do not depend on how drops are spread over workers.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import gain_integral
from .geometry import (
    SECTOR_BORESIGHTS,
    HexGrid,
    NetworkGeometry,
    band_guard_radii,
    bs_density,
    gsm_cochannel_radius,
    gsm_link_geometry,
    serving_boresight,
    user_position,
    validate_placement,
)
from .radio import AntennaPattern, FadingModel, RadioParams, linear_to_db

__all__ = [
    "SimConfig",
    "DropRecord",
    "EmpiricalResult",
    "SweepPoint",
    "run_rate_sim",
    "run_outage_sim",
    "sweep_small_cell_position",
    "wilson_interval",
    "write_debug_log",
    "default_workers",
]

log = logging.getLogger(__name__)

_RATE_STREAM = 0
_OUTAGE_STREAM = 1
_Z95 = 1.959963984540054


def default_workers() -> int:
    """Worker count from ``REFARM_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("REFARM_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SimConfig:
    geometry: NetworkGeometry
    radio: RadioParams
    bandwidths: tuple = (2e6, 3e6, 3e6)
    rows: int = 6
    cols: int = 6
    fading: FadingModel = field(default_factory=FadingModel)
    pattern: AntennaPattern = field(default_factory=AntennaPattern)
    scheduler: str = "proportional_fair"
    n_drops: int = 200
    n_tti_per_drop: int = 500
    pf_window: float = 100.0
    seed: int = 20130601
    bs_mode: str = "hex"
    log_base: float = 2.0
    ppp_radius_factor: float = 30.0
    far_field_correction: bool = True
    r0_variant: str = "theorem"
    gsm_bandwidth: float = 200e3

    def __post_init__(self):
        if self.n_drops < 1 or self.n_tti_per_drop < 1:
            raise ValueError("n_drops and n_tti_per_drop must be >= 1")
        if self.pf_window < 1.0:
            raise ValueError("pf_window must be >= 1")
        if self.scheduler not in ("round_robin", "proportional_fair"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.bs_mode not in ("hex", "ppp"):
            raise ValueError(f"unknown bs_mode {self.bs_mode!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def grid(self) -> HexGrid:
        return HexGrid(self.rows, self.cols, self.geometry.R_m)

    def rng(self, stream: int, drop: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(stream, drop)))


@dataclass
class DropRecord:
    drop_id: int
    bs_positions: np.ndarray
    ue_positions: np.ndarray
    desired_fades: np.ndarray
    sinr: np.ndarray
    shares: np.ndarray
    rates: np.ndarray


@dataclass
class EmpiricalResult:
    """Aggregated Monte Carlo output.

    Rate runs fill ``ue_rates``/``ue_ci`` (95% normal half-widths over drop
    means); outage runs fill ``outage`` with Wilson intervals.
    """

    n_drops: int
    ue_rates: np.ndarray | None = None
    ue_ci: np.ndarray | None = None
    per_drop_rates: np.ndarray | None = None
    thresholds_db: np.ndarray | None = None
    outage_counts: np.ndarray | None = None
    trials: int = 0
    records: list = field(default_factory=list)

    @property
    def outage(self) -> np.ndarray:
        return self.outage_counts / self.trials

    def outage_interval(self, z: float = _Z95):
        return wilson_interval(self.outage_counts, self.trials, z)

    @property
    def cell_rate(self) -> float:
        return float(self.per_drop_rates.sum(axis=1).mean())

    @property
    def cell_ci(self) -> float:
        return _mean_ci(self.per_drop_rates.sum(axis=1))


def wilson_interval(successes, n: int, z: float = _Z95):
    """Wilson score interval for a binomial proportion."""
    k = np.asarray(successes, dtype=float)
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1.0 - p) / n + z * z / (4 * n * n)) / denom
    # the bounds are exactly 0 and 1 at k = 0 and k = n; avoid rounding residue
    lo = np.where(k == 0, 0.0, np.clip(centre - half, 0.0, 1.0))
    hi = np.where(k == n, 1.0, np.clip(centre + half, 0.0, 1.0))
    return lo, hi


def _mean_ci(x, z: float = _Z95):
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        return np.zeros(x.shape[1:]) if x.ndim > 1 else 0.0
    return z * x.std(axis=0, ddof=1) / math.sqrt(n)


def _map_drops(fn, payload, n_drops: int, workers: int | None):
    """Run ``fn(payload, drops)`` over contiguous chunks, results in drop order."""
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or n_drops == 1:
        return fn(payload, range(n_drops))
    n_chunks = min(n_drops, 4 * workers)
    edges = np.linspace(0, n_drops, n_chunks + 1).astype(int)
    chunks = [range(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(fn, [payload] * len(chunks), chunks))
    return [item for part in parts for item in part]


def _far_field_mean(lam, rp, pattern, R_trunc):
    """Mean interference of the Poisson field beyond the truncation radius."""
    return lam * rp.Pg_hat * gain_integral(pattern) * R_trunc ** (2.0 - rp.alpha) / (rp.alpha - 2.0)


def _ppp_annulus(rng, lam, r_min, r_max):
    n = rng.poisson(lam * math.pi * (r_max**2 - r_min**2))
    rad = np.sqrt(rng.uniform(r_min**2, r_max**2, size=n))
    ang = rng.uniform(-math.pi, math.pi, size=n)
    return rad, ang


# -- rates -------------------------------------------------------------------


def _schedule(rates, scheduler, window):
    """Return shares (n_tti, n_ue, n_band) for instantaneous ``rates``."""
    n_tti, n_ue, n_band = rates.shape
    if scheduler == "round_robin" or n_ue == 1:
        return np.full(rates.shape, 1.0 / n_ue)
    shares = np.zeros(rates.shape)
    avg = rates[0].copy()
    avg[avg <= 0.0] = 1e-9
    a = 1.0 / window
    bands = np.arange(n_band)
    for t in range(n_tti):
        sel = np.argmax(rates[t] / avg, axis=0)
        shares[t, sel, bands] = 1.0
        avg *= 1.0 - a
        avg += a * rates[t] * shares[t]
        np.maximum(avg, 1e-9, out=avg)
    return shares


def _rate_chunk(payload, drops):
    cfg, ue_xy, record = payload
    g, rp = cfg.geometry, cfg.radio
    B = np.asarray(cfg.bandwidths, dtype=float)
    noise = rp.noise_psd * B
    n_ue = ue_xy.shape[0]
    sc = g.small_cell_xy
    r = np.hypot(*(ue_xy - sc).T)
    signal = rp.Pl_hat * r ** (-rp.alpha)
    offsets = np.asarray(SECTOR_BORESIGHTS)
    T = cfg.n_tti_per_drop
    if cfg.bs_mode == "hex":
        sites = cfg.grid.bs_positions
        vec = ue_xy[None, :, :] - sites[:, None, :]
        dist = np.hypot(vec[..., 0], vec[..., 1])
        ang = np.arctan2(vec[..., 1], vec[..., 0])
        mean_gain = rp.Pg_hat * cfg.pattern.gain(ang[..., None] - offsets) * dist[..., None] ** (-rp.alpha)
    else:
        radii = np.asarray(band_guard_radii(g).as_tuple())
        lam = bs_density(g.R_m)
        R_t = cfg.ppp_radius_factor * g.R_m
        far = _far_field_mean(lam, rp, cfg.pattern, R_t) if cfg.far_field_correction else 0.0
    out = []
    for drop in drops:
        rng = cfg.rng(_RATE_STREAM, drop)
        H = cfg.fading.draw(rng, (T, n_ue, 3))
        if cfg.bs_mode == "hex":
            F = cfg.fading.draw(rng, (T,) + mean_gain.shape)
            interf = np.einsum("tsub,sub->tub", F, mean_gain)
        else:
            interf = np.empty((T, n_ue, 3))
            for u in range(n_ue):
                rad, ang = _ppp_annulus(rng, lam, radii.min(), R_t)
                gain = rp.Pg_hat * cfg.pattern.gain(offsets[None, :] - ang[:, None]) * rad[:, None] ** (-rp.alpha)
                gain = np.where(rad[:, None] >= radii[None, :], gain, 0.0)
                F = cfg.fading.draw(rng, (T,) + gain.shape)
                interf[:, u, :] = np.einsum("tpb,pb->tb", F, gain) + far
        sinr = signal[None, :, None] * H / (interf + noise)
        inst = B * np.log1p(sinr / rp.eta) / math.log(cfg.log_base)
        shares = _schedule(inst, cfg.scheduler, cfg.pf_window)
        rates = (inst * shares).sum(axis=2).mean(axis=0)
        rec = None
        if record:
            bs = cfg.grid.bs_positions if cfg.bs_mode == "hex" else np.empty((0, 2))
            rec = DropRecord(drop, bs, ue_xy, H, sinr, shares, rates)
        out.append((rates, rec))
    return out


def run_rate_sim(cfg: SimConfig, ue_positions, workers: int | None = None, record: bool = False) -> EmpiricalResult:
    """Simulated mean rate of each UE (offsets in metres from the small cell)."""
    offs = np.atleast_2d(np.asarray(ue_positions, dtype=float))
    if offs.size == 0:
        raise ValueError("at least one UE position is required")
    if offs.shape[1] != 2:
        raise ValueError("UE positions must be 2-D offsets")
    g = cfg.geometry
    r = np.hypot(*offs.T)
    if np.any(r > g.R_c * (1 + 1e-12)) or np.any(r <= 0.0):
        raise ValueError(f"UE offsets must lie in (0, R_c={g.R_c}]")
    ue_xy = offs + g.small_cell_xy
    parts = _map_drops(_rate_chunk, (cfg, ue_xy, record), cfg.n_drops, workers)
    per_drop = np.array([p[0] for p in parts])
    return EmpiricalResult(
        n_drops=cfg.n_drops,
        ue_rates=per_drop.mean(axis=0),
        ue_ci=_mean_ci(per_drop),
        per_drop_rates=per_drop,
        records=[p[1] for p in parts] if record else [],
    )


# -- GSM outage --------------------------------------------------------------


def _outage_chunk(payload, drops):
    cfg, probes, thresholds, with_lte = payload
    g, rp = cfg.geometry, cfg.radio
    n_p = len(probes)
    r = np.array([p[0] for p in probes])
    psi = np.array([p[1] for p in probes])
    d, beta = gsm_link_geometry(g, r, psi)
    bore = serving_boresight(beta)
    S = rp.Pg_hat * cfg.pattern.gain(beta - bore) * d ** (-rp.alpha)
    noise = rp.noise_psd * cfg.gsm_bandwidth
    P_l = rp.P_l or 0.0
    with np.errstate(divide="ignore"):
        lte_mean = P_l * rp.L0 * r ** (-rp.alpha) if with_lte else np.zeros(n_p)
    T = cfg.n_tti_per_drop
    if cfg.bs_mode == "hex":
        grid = cfg.grid
        sites = grid.bs_positions[grid.cochannel_sites()]
        users = user_position(g, r, psi)
        vec = users[:, None, :] - sites[None, :, :]
        dist = np.hypot(vec[..., 0], vec[..., 1])
        ang = np.arctan2(vec[..., 1], vec[..., 0])
        co_gain = rp.Pg_hat * cfg.pattern.gain(ang - bore[:, None]) * dist ** (-rp.alpha)
    else:
        lam0 = bs_density(g.R_m) / 3.0
        R0 = np.array([gsm_cochannel_radius(g, cfg.r0_variant, b) for b in beta])
        R_t = cfg.ppp_radius_factor * g.R_m
        far = _far_field_mean(lam0, rp, cfg.pattern, R_t) if cfg.far_field_correction else 0.0
    out = []
    for drop in drops:
        rng = cfg.rng(_OUTAGE_STREAM, drop)
        Fg = cfg.fading.draw(rng, (T, n_p))
        Fl = cfg.fading.draw(rng, (T, n_p))
        if cfg.bs_mode == "hex":
            F = cfg.fading.draw(rng, (T,) + co_gain.shape)
            interf = np.einsum("tpk,pk->tp", F, co_gain)
        else:
            interf = np.empty((T, n_p))
            for j in range(n_p):
                rad, ang = _ppp_annulus(rng, lam0, R0[j], R_t)
                gain = rp.Pg_hat * cfg.pattern.gain(-ang) * rad ** (-rp.alpha)
                F = cfg.fading.draw(rng, (T, rad.size))
                interf[:, j] = F @ gain + far
        with np.errstate(invalid="ignore"):
            lte = np.where(lte_mean > 0.0, Fl * lte_mean, 0.0)
        sinr = S * Fg / (interf + lte + noise)
        counts = (sinr[:, :, None] < thresholds[None, None, :]).sum(axis=0)
        out.append(counts)
    return out


def run_outage_sim(cfg: SimConfig, probes, thresholds_db, with_lte: bool,
                   workers: int | None = None) -> EmpiricalResult:
    """Empirical GSM outage P(SINR_g < T) at each probe (r, psi) and threshold.

    Each drop contributes ``n_tti_per_drop`` independent fading samples.
    The small-cell fade is drawn even when ``with_lte`` is false so both
    settings consume identical random streams.
    """
    probes = [(float(a), float(b)) for a, b in probes]
    if not probes:
        raise ValueError("at least one probe is required")
    t_db = np.asarray(thresholds_db, dtype=float)
    thresholds = 10.0 ** (t_db / 10.0)
    parts = _map_drops(_outage_chunk, (cfg, probes, thresholds, with_lte), cfg.n_drops, workers)
    counts = np.sum(parts, axis=0, dtype=np.int64)
    return EmpiricalResult(
        n_drops=cfg.n_drops,
        thresholds_db=t_db,
        outage_counts=counts,
        trials=cfg.n_drops * cfg.n_tti_per_drop,
    )


# -- placement sweep ---------------------------------------------------------


@dataclass
class SweepPoint:
    D: float
    theta: float
    valid: bool
    mean_rate: float = float("nan")
    ci: float = float("nan")


def sweep_small_cell_position(cfg: SimConfig, positions, ue_positions, workers: int | None = None) -> list[SweepPoint]:
    """Mean small-cell throughput (sum of UE rates) over a grid of (D, theta).

    Placements whose guard region leaves the serving sector are flagged and
    skipped.  Every valid placement reuses the same seed.
    """
    out = []
    for D, theta in positions:
        try:
            g = replace(cfg.geometry, D=float(D), theta=float(theta))
            valid = validate_placement(g)
        except ValueError:
            valid = False
        if not valid:
            log.warning("placement (D=%g, theta=%g) leaves the serving sector; skipped", D, theta)
            out.append(SweepPoint(float(D), float(theta), False))
            continue
        res = run_rate_sim(replace(cfg, geometry=g), ue_positions, workers)
        out.append(SweepPoint(float(D), float(theta), True, res.cell_rate, res.cell_ci))
    return out


def write_debug_log(records, fh) -> None:
    """Write ``drop_id,tti,ue_id,band,sinr_db,scheduled`` lines for each record."""
    fh.write("drop_id,tti,ue_id,band,sinr_db,scheduled\n")
    for rec in records:
        sinr_db = linear_to_db(rec.sinr)
        n_tti, n_ue, n_band = rec.sinr.shape
        for t in range(n_tti):
            for u in range(n_ue):
                for b in range(n_band):
                    fh.write(f"{rec.drop_id},{t},{u},{b},{float(sinr_db[t, u, b])!r},{float(rec.shares[t, u, b])!r}\n")
