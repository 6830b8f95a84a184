"""Stochastic-geometry analysis of LTE small-cell rates and GSM outage.

Every interference field here is a Poisson field of macro transmitters with
i.i.d. unit-mean fading and a sectorised antenna, excluded from a ball of
radius ``R`` around the receiver.  Its Laplace transform follows from the
probability generating functional,

    L(s) = exp(-lam * int_0^{2pi} int_R^inf v (1 - L_F(s P_g G(phi) v^-alpha)) dv dphi).

The radial integral is mapped onto [0, 1] with ``x = (R / v)**(alpha - 2)``:

    int_R^inf v (1 - L_F(c v^-alpha)) dv = R^2/(alpha-2) * k * int_0^1 phi_F(k x^p) dx

with ``k = c R^-alpha``, ``p = alpha / (alpha - 2)`` and
``phi_F(y) = (1 - L_F(y)) / y``, which is bounded by one.  Both the radial
and the angular integral are evaluated by adaptive Gauss-Kronrod
quadrature; nothing relies on incomplete-gamma closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .geometry import (
    SECTOR_BORESIGHTS,
    NetworkGeometry,
    band_guard_radii,
    bs_density,
    gsm_cochannel_radius,
    gsm_link_geometry,
    serving_boresight,
)
from .radio import AntennaPattern, FadingModel, RadioParams

__all__ = [
    "QuadratureError",
    "QuadratureSpec",
    "Band",
    "BandPlanAnalysis",
    "AnalysisContext",
    "OutageCurve",
    "SCENARIOS",
    "angular_integral",
    "laplace_interference",
    "lte_band_sinr_ccdf",
    "lte_user_rate",
    "gsm_outage",
    "gsm_outage_pair",
    "scenario_average_outage",
    "scenario_average_outages",
    "outage_curve",
    "mean_cochannel_interference",
    "gain_integral",
    "threshold_at",
]

SCENARIOS = ("no_lte", "direct_overlay", "dsr")


class QuadratureError(ArithmeticError):
    """A quadrature did not reach its requested tolerance."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances of the nested quadratures.

    ``inner_rel`` controls the Laplace-transform integrals, ``outer_rel``
    the rate and disk-average integrals.  ``tail_tol`` is the integrand
    level below which the outer rate integral is truncated.
    """

    inner_rel: float = 1e-6
    outer_rel: float = 1e-4
    abs_tol: float = 1e-13
    limit: int = 200
    tail_tol: float = 1e-12
    laplace_method: str = "table"

    def __post_init__(self):
        if min(self.inner_rel, self.outer_rel, self.abs_tol, self.tail_tol) <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.laplace_method not in ("table", "direct"):
            raise ValueError("laplace_method must be 'table' or 'direct'")

    def tightened(self, factor: float = 0.5) -> "QuadratureSpec":
        return replace(
            self,
            inner_rel=self.inner_rel * factor,
            outer_rel=self.outer_rel * factor,
            abs_tol=self.abs_tol * factor,
            tail_tol=self.tail_tol * factor,
        )


def _quad(f, a, b, rel, abs_tol, limit, points=None, what="integral"):
    res = integrate.quad(f, a, b, epsrel=rel, epsabs=abs_tol, limit=limit, points=points, full_output=1)
    val, err = res[0], res[1]
    if len(res) > 3 and err > 10.0 * max(abs_tol, rel * abs(val)):
        raise QuadratureError(f"{what} on [{a}, {b}] did not converge: {res[3]} (value {val}, error {err})")
    return val


# -- Laplace transform kernel ---------------------------------------------------


def _radial_ratio(k, fading, p, rel, abs_tol, limit):
    """int_0^1 phi_F(k x^p) dx, a number in (0, 1]."""
    if k == 0.0:
        return fading.mean
    pts = None
    if k > 1.0:
        knee = k ** (-1.0 / p)
        pts = [knee, 10.0 * knee] if 10.0 * knee < 1.0 else [knee]
    return _quad(
        lambda x: float(fading.complement_ratio(k * x**p)),
        0.0, 1.0, rel, abs_tol, limit, pts, "radial Laplace integral",
    )


@lru_cache(maxsize=200_000)
def _angular_ratio_direct(k0, pattern, fading, alpha, rel, abs_tol, limit):
    """A(k0) / k0, where A is the angular-radial Laplace exponent."""
    p = alpha / (alpha - 2.0)
    if pattern.kind == "omni":
        return 2.0 * math.pi * _radial_ratio(k0, fading, p, rel, abs_tol, limit)
    phi_f = pattern.floor_angle

    def lobe(phi):
        gain = float(pattern.gain(phi))
        return gain * _radial_ratio(k0 * gain, fading, p, rel, abs_tol, limit)

    main = _quad(lobe, 0.0, phi_f, rel, abs_tol, limit, None, "angular Laplace integral")
    g_f = pattern.floor_gain
    floor = (math.pi - phi_f) * g_f * _radial_ratio(k0 * g_f, fading, p, rel, abs_tol, limit)
    return 2.0 * (main + floor)


class _KernelTable:
    """Spline of log A(k) - log k over log k, built from direct quadrature.

    Node spacing is refined until every midpoint agrees with direct
    quadrature to ``rel``.  Arguments outside the table fall back to direct
    evaluation.
    """

    LOG_K_MIN = math.log(1e-12)
    LOG_K_MAX = math.log(1e12)

    def __init__(self, pattern, fading, alpha, rel, abs_tol, limit):
        self.args = (pattern, fading, alpha, rel, abs_tol, limit)
        n = 193
        while True:
            u = np.linspace(self.LOG_K_MIN, self.LOG_K_MAX, n)
            y = np.array([self._direct_log_ratio(t) for t in u])
            spline = CubicSpline(u, y)
            mid = 0.5 * (u[:-1] + u[1:])
            ym = np.array([self._direct_log_ratio(t) for t in mid])
            err = np.max(np.abs(np.expm1(spline(mid) - ym)))
            if err <= rel or n > 6000:
                break
            n = 2 * n - 1
        if err > rel:
            raise QuadratureError(f"Laplace kernel table failed to reach {rel} (max error {err})")
        self.spline = spline
        self.max_error = float(err)

    def _direct_log_ratio(self, u):
        return math.log(_angular_ratio_direct(math.exp(u), *self.args))

    def __call__(self, k0: float) -> float:
        if k0 == 0.0:
            return 0.0
        u = math.log(k0)
        if u < self.LOG_K_MIN or u > self.LOG_K_MAX:
            return k0 * _angular_ratio_direct(k0, *self.args)
        return k0 * math.exp(float(self.spline(u)))


@lru_cache(maxsize=64)
def _kernel_table(pattern, fading, alpha, rel, abs_tol, limit):
    return _KernelTable(pattern, fading, alpha, rel, abs_tol, limit)


def angular_integral(k0: float, pattern: AntennaPattern, fading: FadingModel, alpha: float,
                     q: QuadratureSpec = QuadratureSpec()) -> float:
    """A(k0) = int_0^{2pi} k0 G(phi) int_0^1 phi_F(k0 G(phi) x^p) dx dphi."""
    if k0 < 0.0:
        raise ValueError("k0 must be non-negative")
    args = (pattern, fading, float(alpha), q.inner_rel, q.abs_tol, q.limit)
    if q.laplace_method == "table":
        return _kernel_table(*args)(float(k0))
    return float(k0) * _angular_ratio_direct(float(k0), *args)


def laplace_interference(s: float, R_i: float, lam: float, pattern: AntennaPattern,
                         fading: FadingModel, rp: RadioParams,
                         q: QuadratureSpec = QuadratureSpec(laplace_method="direct")) -> float:
    """Laplace transform E[exp(-s I)] of the macro interference field.

    Parameters
    ----------
    s : float
        Transform argument (1/W), ``s >= 0``.
    R_i : float
        Radius of the interferer-free ball around the receiver (m).
    lam : float
        Density of interfering transmitters (1/m^2).
    """
    if s < 0.0:
        raise ValueError("s must be non-negative")
    if R_i <= 0.0:
        raise ValueError("R_i must be positive")
    if s == 0.0 or lam == 0.0:
        return 1.0
    alpha = rp.alpha
    k0 = s * rp.Pg_hat * R_i ** (-alpha)
    expo = lam * R_i**2 / (alpha - 2.0) * angular_integral(k0, pattern, fading, alpha, q)
    return math.exp(-expo)


# -- context --------------------------------------------------------------------


@dataclass(frozen=True)
class Band:
    bandwidth: float
    R: float
    offset: float


@dataclass(frozen=True)
class BandPlanAnalysis:
    bands: tuple[Band, ...]
    lambda_bs: float
    lambda_ue: float = 0.0

    @classmethod
    def from_geometry(cls, g: NetworkGeometry, bandwidths=(2e6, 3e6, 3e6), lambda_ue: float = 0.0):
        radii = band_guard_radii(g).as_tuple()
        bands = tuple(Band(float(b), R, off) for b, R, off in zip(bandwidths, radii, SECTOR_BORESIGHTS))
        return cls(bands, bs_density(g.R_m), lambda_ue)

    @property
    def occupied_bandwidth(self) -> float:
        return sum(b.bandwidth for b in self.bands)


@dataclass(frozen=True)
class AnalysisContext:
    """Everything the analytical formulas need, bundled and immutable."""

    geometry: NetworkGeometry
    radio: RadioParams
    bands: BandPlanAnalysis
    pattern: AntennaPattern = field(default_factory=AntennaPattern)
    fading: FadingModel = field(default_factory=FadingModel)
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)
    n_ue: float | None = None
    log_base: float = 2.0
    r0_variant: str = "theorem"
    gsm_bandwidth: float = 200e3

    @classmethod
    def build(cls, geometry: NetworkGeometry, radio: RadioParams, bandwidths=(2e6, 3e6, 3e6),
              lambda_ue: float = 0.0, **kw) -> "AnalysisContext":
        return cls(geometry, radio, BandPlanAnalysis.from_geometry(geometry, bandwidths, lambda_ue), **kw)

    @property
    def users_per_cell(self) -> float:
        """Number of UEs sharing the small cell (floored at one)."""
        if self.n_ue is not None:
            return max(1.0, float(self.n_ue))
        return max(1.0, self.bands.lambda_ue * math.pi * self.geometry.R_c**2)

    @property
    def gsm_noise(self) -> float:
        return self.radio.noise_psd * self.gsm_bandwidth

    def band_noise(self, i: int) -> float:
        return self.radio.noise_psd * self.bands.bands[i].bandwidth

    def cochannel_radius(self, beta: float | None = None) -> float:
        return gsm_cochannel_radius(self.geometry, self.r0_variant, beta)

    def with_(self, **changes) -> "AnalysisContext":
        return replace(self, **changes)


# -- LTE rate ------------------------------------------------------------------


def lte_band_sinr_ccdf(r: float, i: int, x: float, ctx: AnalysisContext) -> float:
    """P(SINR_i(r) > x) for a UE at distance ``r`` from its small cell.

    ``i`` is the zero-based band index.
    """
    if r <= 0.0:
        raise ValueError("r must be positive")
    if x < 0.0:
        raise ValueError("x must be non-negative")
    if x == 0.0:
        return 1.0
    rp = ctx.radio
    band = ctx.bands.bands[i]
    s = x * r**rp.alpha / rp.Pl_hat
    return math.exp(-s * ctx.band_noise(i)) * laplace_interference(
        s, band.R, ctx.bands.lambda_bs, ctx.pattern, ctx.fading, rp, ctx.quad
    )


def _band_rate(r: float, i: int, ctx: AnalysisContext) -> float:
    rp, q = ctx.radio, ctx.quad
    b = ctx.log_base
    ln_b = math.log(b)
    # the noise term alone bounds the ccdf: exp(-x r^a sigma^2 / P_l)
    snr = rp.Pl_hat * r ** (-rp.alpha) / ctx.band_noise(i)
    x_max = -math.log(q.tail_tol) * snr
    t_max = math.log1p(x_max / rp.eta) / ln_b

    def integrand(t):
        return lte_band_sinr_ccdf(r, i, rp.eta * math.expm1(t * ln_b), ctx)

    return _quad(integrand, 0.0, t_max, q.outer_rel, q.abs_tol, q.limit, None, "rate integral")


def lte_user_rate(r: float, ctx: AnalysisContext, per_band: bool = False):
    """Mean rate (bit/s for ``log_base=2``) of an LTE UE at link length ``r``.

    Sums ``B_i E[log(1 + SINR_i / eta)]`` over the bands and divides by the
    number of UEs sharing the cell under round-robin.
    """
    if not 0.0 < r <= ctx.geometry.R_c * (1.0 + 1e-12):
        raise ValueError(f"r={r} outside small-cell coverage (0, {ctx.geometry.R_c}]")
    rates = [b.bandwidth * _band_rate(r, i, ctx) / ctx.users_per_cell for i, b in enumerate(ctx.bands.bands)]
    return rates if per_band else float(sum(rates))


# -- GSM outage ----------------------------------------------------------------


def _gsm_terms(r, psi, T, ctx):
    """Return (coverage without LTE, LTE Laplace factor) at one point."""
    g, rp = ctx.geometry, ctx.radio
    d, beta = gsm_link_geometry(g, r, psi)
    if d == 0.0:
        return 1.0, 1.0
    gain = float(ctx.pattern.gain(beta - serving_boresight(beta)))
    s = T * d**rp.alpha / (rp.Pg_hat * gain)
    R0 = ctx.cochannel_radius(beta)
    cov = math.exp(-s * ctx.gsm_noise) * laplace_interference(
        s, R0, ctx.bands.lambda_bs / 3.0, ctx.pattern, ctx.fading, rp, ctx.quad
    )
    P_l = rp.P_l or 0.0
    if P_l == 0.0:
        return cov, 1.0
    if r == 0.0:
        return cov, 0.0
    lte = float(ctx.fading.laplace(s * rp.Pl_hat * r ** (-rp.alpha)))
    return cov, lte


def gsm_outage(r: float, psi: float, T: float, with_lte: bool, ctx: AnalysisContext) -> float:
    """P(SINR_g < T) for a GSM control-channel user at (r, psi).

    ``T`` is linear.  ``with_lte=False`` drops the small-cell interference.
    Co-channel macro interferers form a Poisson field of density ``lam/3``
    outside radius ``R_0``.
    """
    if T <= 0.0:
        raise ValueError("threshold must be positive")
    cov, lte = _gsm_terms(r, psi, T, ctx)
    return 1.0 - cov * (lte if with_lte else 1.0)


def gsm_outage_pair(r: float, psi: float, T: float, ctx: AnalysisContext) -> tuple[float, float]:
    """(outage without LTE, outage with LTE) evaluated with shared terms."""
    cov, lte = _gsm_terms(r, psi, T, ctx)
    return 1.0 - cov, 1.0 - cov * lte


def _disk_integral(T, ctx, r_lo, r_hi):
    """Integral of [P_hat_out, P_out] * r over an annulus (vector result)."""
    q = ctx.quad
    if r_hi <= r_lo:
        return np.zeros(2)

    def inner(r):
        val, _ = integrate.quad_vec(
            lambda psi: np.array(gsm_outage_pair(r, psi, T, ctx)),
            0.0, 2.0 * math.pi, epsrel=q.outer_rel, epsabs=1e-10, limit=q.limit, points=[math.pi],
        )
        return val * r

    val, err = integrate.quad_vec(inner, r_lo, r_hi, epsrel=q.outer_rel, epsabs=1e-10 * r_hi**2, limit=q.limit)
    if np.any(err > 10.0 * np.maximum(q.outer_rel * np.abs(val), 1e-9 * r_hi**2)):
        raise QuadratureError(f"disk average over [{r_lo}, {r_hi}] did not converge (error {err})")
    return val


def scenario_average_outages(T: float, ctx: AnalysisContext) -> dict[str, float]:
    """Disk-averaged GSM outage around the small cell for all scenarios.

    The disk has radius ``R_s + delta_R_s``.  ``dsr`` uses the LTE-free
    outage inside the guard radius and the full outage in the annulus.
    All three share the same quadrature nodes, so the pointwise ordering of
    the integrands carries over to the results.
    """
    g = ctx.geometry
    outer = g.R_s + g.delta_R_s
    inside = _disk_integral(T, ctx, 0.0, g.R_s)
    annulus = _disk_integral(T, ctx, g.R_s, outer)
    norm = math.pi * outer**2
    return {
        "no_lte": float((inside[0] + annulus[0]) / norm),
        "direct_overlay": float((inside[1] + annulus[1]) / norm),
        "dsr": float((inside[0] + annulus[1]) / norm),
    }


def scenario_average_outage(scenario: str, T: float, ctx: AnalysisContext) -> float:
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    return scenario_average_outages(T, ctx)[scenario]


@dataclass
class OutageCurve:
    thresholds_db: list[float]
    probabilities: dict[str, list[float]]

    def __post_init__(self):
        for name, p in self.probabilities.items():
            if len(p) != len(self.thresholds_db):
                raise ValueError(f"curve {name!r} has {len(p)} points for {len(self.thresholds_db)} thresholds")


def outage_curve(r: float, psi: float, thresholds_db, ctx: AnalysisContext) -> OutageCurve:
    """Outage versus threshold at one position, with and without LTE."""
    no, yes = [], []
    for t_db in thresholds_db:
        a, b = gsm_outage_pair(r, psi, 10.0 ** (t_db / 10.0), ctx)
        no.append(a)
        yes.append(b)
    return OutageCurve(list(thresholds_db), {"no_lte": no, "with_lte": yes})


def threshold_at(level: float, thresholds_db, probs) -> float:
    """Threshold (dB) where a nondecreasing outage curve crosses ``level``.

    Linear interpolation between grid points; NaN if the curve never
    brackets ``level``.
    """
    t = np.asarray(thresholds_db, dtype=float)
    p = np.maximum.accumulate(np.asarray(probs, dtype=float))
    if p[0] > level or p[-1] < level:
        return float("nan")
    j = int(np.searchsorted(p, level))
    if j == 0:
        return float(t[0])
    if p[j] == p[j - 1]:
        return float(t[j])
    return float(t[j - 1] + (level - p[j - 1]) * (t[j] - t[j - 1]) / (p[j] - p[j - 1]))


@lru_cache(maxsize=16)
def gain_integral(pattern: AntennaPattern) -> float:
    """int_0^{2pi} G(phi) dphi."""
    if pattern.kind == "omni":
        return 2.0 * math.pi
    phi_f = pattern.floor_angle
    main = _quad(lambda phi: float(pattern.gain(phi)), 0.0, phi_f, 1e-12, 1e-15, 200, None, "gain integral")
    return 2.0 * (main + (math.pi - phi_f) * pattern.floor_gain)


def mean_cochannel_interference(ctx: AnalysisContext, beta: float | None = None) -> float:
    """Mean co-channel GSM interference power at a user (unit-mean fading).

    E[I_0] = (lam/3) P_g L_0 int G(phi) dphi R_0^(2-alpha) / (alpha - 2).
    """
    rp = ctx.radio
    g_int = gain_integral(ctx.pattern)
    R0 = ctx.cochannel_radius(beta)
    lam0 = ctx.bands.lambda_bs / 3.0
    return lam0 * rp.Pg_hat * ctx.fading.mean * g_int * R0 ** (2.0 - rp.alpha) / (rp.alpha - 2.0)
