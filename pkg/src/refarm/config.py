"""Scenario configuration: YAML documents layered over built-in defaults.

The defaults reproduce the reference deployment (6x6 hexagonal macro grid,
R_m = 1 km, 40 W GSM sites, 2/3/3 MHz LTE bands).  Each command section may
override the small-cell distance and power; the ``rate`` section ships the
four reference UE offsets at D = 350 m with a 1 W small cell, the
``outage`` and ``plan`` sections use D = 500 m with calibrated power.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass

import numpy as np
import yaml

from .analysis import AnalysisContext, QuadratureSpec
from .geometry import NetworkGeometry, sector_area
from .radio import AntennaPattern, FadingModel, RadioParams, db_to_linear, dbm_to_watt
from .simulator import SimConfig

__all__ = ["ConfigError", "ScenarioConfig", "DEFAULTS", "load_config", "default_config"]


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


DEFAULTS = {
    "seed": 20130601,
    "geometry": {
        "R_m": 1000.0,
        "D": 500.0,
        "theta": 0.0,
        "R_c": 50.0,
        # guard disk is a quarter of the sector area
        "guard_fraction": 0.25,
        "R_s": None,
        "delta_R_s": 50.0,
    },
    "radio": {
        "P_g": 40.0,
        "P_l": None,
        "alpha": 3.0,
        "noise_psd_dbm_hz": -174.0,
        "eta_db": 3.0,
        "wavelength": 0.375,
        "L_0": None,
        "fading": "rayleigh",
    },
    "antenna": {"kind": "tri_sector_3gpp", "beamwidth_deg": 70.0, "floor_db": 20.0},
    "bands": {
        "bandwidths_hz": [2e6, 3e6, 3e6],
        "reserved_hz": 1e6,
        "lambda_ue": 0.0,
        "n_ue": None,
        "log_base": 2.0,
    },
    "analysis": {
        "inner_rel": 1e-6,
        "outer_rel": 1e-4,
        "r0_variant": "theorem",
        "gsm_bandwidth_hz": 200e3,
    },
    "sim": {
        "rows": 6,
        "cols": 6,
        "scheduler": "proportional_fair",
        "n_drops": 200,
        "n_tti_per_drop": 500,
        "pf_window": 100.0,
        "bs_mode": "hex",
    },
    "plan": {"max_degradation_db": 1.0, "position": "far_edge", "max_cell_ids": 8},
    "rate": {
        "D": 350.0,
        "P_l": 1.0,
        "ue_positions": [[-22.1, 4.6], [17.8, 25.7], [-7.8, 41.5], [30.0, -35.8]],
        "n_drops": 400,
        "n_tti_per_drop": 1000,
    },
    "outage": {
        "D": None,
        "P_l": None,
        "probes": None,
        "thresholds_db": {"start": -10.0, "stop": 20.0, "step": 1.0},
        "scenarios": ["no_lte", "direct", "dsr"],
        "n_drops": 200,
        "n_tti_per_drop": 500,
    },
    "sweep": {
        "d_grid": [350.0, 400.0, 450.0, 500.0, 550.0, 600.0],
        "theta_grid": [-0.3, -0.15, 0.0, 0.15, 0.3],
        "P_l": 1.0,
        "n_drops": 20,
        "n_tti_per_drop": 200,
    },
    "output": {"dir": "results"},
}

_OCCUPIED_HZ = 50 * 180e3

# keys that never change a result
_NON_SEMANTIC = ("output",)


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(where, "unknown key")
        if not path and isinstance(base[k], dict) and not isinstance(v, dict):
            raise ConfigError(where, "expected a mapping")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, where)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _num(d, key, path, positive=False, allow_none=False, nonneg=False):
    v = d[key]
    where = f"{path}.{key}"
    if v is None:
        if allow_none:
            return None
        raise ConfigError(where, "value required")
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(where, f"expected a finite number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(where, f"must be positive, got {v}")
    if nonneg and v < 0:
        raise ConfigError(where, f"must be non-negative, got {v}")
    return float(v)


def _int(d, key, path, minimum=1):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{path}.{key}", f"expected an integer >= {minimum}, got {v!r}")
    return v


def _choice(d, key, path, options):
    v = d[key]
    if v not in options:
        raise ConfigError(f"{path}.{key}", f"expected one of {list(options)}, got {v!r}")
    return v


def _positions(v, where):
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(where, "expected a list of [x, y] pairs") from None
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ConfigError(where, "expected a list of [x, y] pairs")
    if arr.shape[0] == 0:
        raise ConfigError(where, "at least one entry is required")
    return [tuple(map(float, p)) for p in arr]


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated, fully resolved configuration document."""

    data: dict

    @classmethod
    def from_dict(cls, overrides: dict | None = None) -> "ScenarioConfig":
        if overrides is None:
            overrides = {}
        if not isinstance(overrides, dict):
            raise ConfigError("<root>", "configuration must be a mapping")
        data = _merge(DEFAULTS, overrides)
        cfg = cls(data)
        cfg.validate()
        return cfg

    def override(self, section: str, **values) -> "ScenarioConfig":
        return ScenarioConfig.from_dict(_merge(self.data, {section: values}))

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        d = self.data
        seed = d["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ConfigError("seed", "expected an integer in [0, 2^64)")
        geo = d["geometry"]
        for k in ("R_m", "R_c"):
            _num(geo, k, "geometry", positive=True)
        _num(geo, "D", "geometry", nonneg=True)
        _num(geo, "delta_R_s", "geometry", nonneg=True)
        _num(geo, "R_s", "geometry", positive=True, allow_none=True)
        frac = _num(geo, "guard_fraction", "geometry", positive=True)
        if frac > 1.0:
            raise ConfigError("geometry.guard_fraction", "must lie in (0, 1]")
        th = _num(geo, "theta", "geometry")
        if not -math.pi < th <= math.pi:
            raise ConfigError("geometry.theta", "must lie in (-pi, pi]")
        rad = d["radio"]
        _num(rad, "P_g", "radio", positive=True)
        _num(rad, "P_l", "radio", nonneg=True, allow_none=True)
        if _num(rad, "alpha", "radio") <= 2.0:
            raise ConfigError("radio.alpha", "must exceed 2")
        _num(rad, "noise_psd_dbm_hz", "radio")
        if _num(rad, "eta_db", "radio") < 0.0:
            raise ConfigError("radio.eta_db", "Shannon gap must be >= 0 dB")
        _num(rad, "wavelength", "radio", positive=True)
        _num(rad, "L_0", "radio", positive=True, allow_none=True)
        _choice(rad, "fading", "radio", ("rayleigh", "deterministic_unit"))
        ant = d["antenna"]
        _choice(ant, "kind", "antenna", ("tri_sector_3gpp", "omni"))
        _num(ant, "beamwidth_deg", "antenna", positive=True)
        _num(ant, "floor_db", "antenna", positive=True)
        b = d["bands"]
        bw = b["bandwidths_hz"]
        if not isinstance(bw, list) or len(bw) != 3:
            raise ConfigError("bands.bandwidths_hz", "expected three bandwidths")
        for j, x in enumerate(bw):
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not x > 0:
                raise ConfigError(f"bands.bandwidths_hz[{j}]", f"must be positive, got {x!r}")
        reserved = _num(b, "reserved_hz", "bands", nonneg=True)
        # the three bands plus the punctured PRBs fill the 9 MHz occupied by 50 PRBs
        if abs(sum(bw) + reserved - _OCCUPIED_HZ) > 1.0:
            raise ConfigError("bands", f"band widths plus reserved must total {_OCCUPIED_HZ / 1e6:g} MHz, "
                                       f"got {(sum(bw) + reserved) / 1e6:g} MHz")
        _num(b, "lambda_ue", "bands", nonneg=True)
        _num(b, "n_ue", "bands", positive=True, allow_none=True)
        if _num(b, "log_base", "bands", positive=True) == 1.0:
            raise ConfigError("bands.log_base", "must differ from 1")
        an = d["analysis"]
        _num(an, "inner_rel", "analysis", positive=True)
        _num(an, "outer_rel", "analysis", positive=True)
        _num(an, "gsm_bandwidth_hz", "analysis", positive=True)
        _choice(an, "r0_variant", "analysis", ("theorem", "proof"))
        sim = d["sim"]
        _int(sim, "rows", "sim")
        _int(sim, "cols", "sim")
        _int(sim, "n_drops", "sim")
        _int(sim, "n_tti_per_drop", "sim")
        if _num(sim, "pf_window", "sim") < 1.0:
            raise ConfigError("sim.pf_window", "must be >= 1")
        _choice(sim, "scheduler", "sim", ("round_robin", "proportional_fair"))
        _choice(sim, "bs_mode", "sim", ("hex", "ppp"))
        pl = d["plan"]
        _num(pl, "max_degradation_db", "plan", positive=True)
        _choice(pl, "position", "plan", ("far_edge", "near_edge"))
        _int(pl, "max_cell_ids", "plan")
        for sec in ("rate", "outage", "sweep"):
            for k in ("n_drops", "n_tti_per_drop"):
                _int(d[sec], k, sec)
        for sec in ("rate", "outage"):
            _num(d[sec], "D", sec, nonneg=True, allow_none=True)
        for sec in ("rate", "outage", "sweep"):
            _num(d[sec], "P_l", sec, nonneg=True, allow_none=True)
        self.ue_positions()
        if d["outage"]["probes"] is not None:
            _positions(d["outage"]["probes"], "outage.probes")
        self.thresholds_db()
        for s in d["outage"]["scenarios"]:
            if s not in ("no_lte", "direct", "dsr"):
                raise ConfigError("outage.scenarios", f"unknown scenario {s!r}")
        for k in ("d_grid", "theta_grid"):
            v = d["sweep"][k]
            if not isinstance(v, list) or not v:
                raise ConfigError(f"sweep.{k}", "expected a non-empty list")
        for sec in (None, "rate", "outage"):
            try:
                g = self.geometry(sec)
                if g.D <= g.R_c:
                    raise ValueError(f"small cell must not cover its macro BS (D={g.D} <= R_c={g.R_c})")
            except ValueError as exc:
                raise ConfigError("geometry" if sec is None else f"{sec}.D", str(exc)) from None
            try:
                self.radio(sec)
            except ValueError as exc:
                raise ConfigError("radio", str(exc)) from None

    # -- typed views ---------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def guard_radius(self) -> float:
        geo = self.data["geometry"]
        if geo["R_s"] is not None:
            return float(geo["R_s"])
        return math.sqrt(geo["guard_fraction"] * sector_area(geo["R_m"]) / math.pi)

    def geometry(self, section: str | None = None) -> NetworkGeometry:
        geo = self.data["geometry"]
        D = geo["D"]
        if section is not None and self.data.get(section, {}).get("D") is not None:
            D = self.data[section]["D"]
        return NetworkGeometry(
            R_m=float(geo["R_m"]), D=float(D), theta=float(geo["theta"]), R_c=float(geo["R_c"]),
            R_s=self.guard_radius(), delta_R_s=float(geo["delta_R_s"]),
        )

    def radio(self, section: str | None = None) -> RadioParams:
        rad = self.data["radio"]
        P_l = rad["P_l"]
        if section is not None and self.data.get(section, {}).get("P_l") is not None:
            P_l = self.data[section]["P_l"]
        return RadioParams(
            P_g=float(rad["P_g"]),
            P_l=None if P_l is None else float(P_l),
            alpha=float(rad["alpha"]),
            noise_psd=dbm_to_watt(float(rad["noise_psd_dbm_hz"])),
            eta=float(db_to_linear(rad["eta_db"])),
            wavelength=float(rad["wavelength"]),
            L_0=None if rad["L_0"] is None else float(rad["L_0"]),
        )

    def pattern(self) -> AntennaPattern:
        a = self.data["antenna"]
        return AntennaPattern(a["kind"], float(a["beamwidth_deg"]), float(a["floor_db"]))

    def fading(self) -> FadingModel:
        return FadingModel(self.data["radio"]["fading"])

    def bandwidths(self) -> tuple[float, float, float]:
        return tuple(float(x) for x in self.data["bands"]["bandwidths_hz"])

    def quadrature(self) -> QuadratureSpec:
        an = self.data["analysis"]
        return QuadratureSpec(inner_rel=float(an["inner_rel"]), outer_rel=float(an["outer_rel"]))

    def analysis_context(self, section: str | None = None, radio: RadioParams | None = None,
                         n_ue: float | None = None) -> AnalysisContext:
        b, an = self.data["bands"], self.data["analysis"]
        if n_ue is None and b["n_ue"] is not None:
            n_ue = float(b["n_ue"])
        return AnalysisContext.build(
            self.geometry(section),
            radio if radio is not None else self.radio(section),
            self.bandwidths(),
            float(b["lambda_ue"]),
            pattern=self.pattern(),
            fading=self.fading(),
            quad=self.quadrature(),
            n_ue=n_ue,
            log_base=float(b["log_base"]),
            r0_variant=an["r0_variant"],
            gsm_bandwidth=float(an["gsm_bandwidth_hz"]),
        )

    def sim_config(self, section: str, radio: RadioParams | None = None) -> SimConfig:
        s = self.data["sim"]
        sec = self.data[section]
        return SimConfig(
            geometry=self.geometry(section),
            radio=radio if radio is not None else self.radio(section),
            bandwidths=self.bandwidths(),
            rows=s["rows"],
            cols=s["cols"],
            fading=self.fading(),
            pattern=self.pattern(),
            scheduler=s["scheduler"],
            n_drops=sec["n_drops"],
            n_tti_per_drop=sec["n_tti_per_drop"],
            pf_window=float(s["pf_window"]),
            seed=self.seed,
            bs_mode=s["bs_mode"],
            log_base=float(self.data["bands"]["log_base"]),
            r0_variant=self.data["analysis"]["r0_variant"],
            gsm_bandwidth=float(self.data["analysis"]["gsm_bandwidth_hz"]),
        )

    def ue_positions(self) -> list[tuple[float, float]]:
        return _positions(self.data["rate"]["ue_positions"], "rate.ue_positions")

    def thresholds_db(self) -> list[float]:
        t = self.data["outage"]["thresholds_db"]
        where = "outage.thresholds_db"
        if isinstance(t, dict):
            try:
                start, stop, step = (float(t[k]) for k in ("start", "stop", "step"))
            except (KeyError, TypeError, ValueError):
                raise ConfigError(where, "expected start/stop/step numbers") from None
            if not step > 0 or stop < start:
                raise ConfigError(where, "need step > 0 and stop >= start")
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + j * step, 12) for j in range(n)]
        if isinstance(t, list) and t and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in t):
            return [float(x) for x in t]
        raise ConfigError(where, "expected a start/stop/step mapping or a non-empty list")

    # -- identity ------------------------------------------------------------

    def semantic_dict(self) -> dict:
        return {k: v for k, v in self.data.items() if k not in _NON_SEMANTIC}

    def config_hash(self) -> str:
        """SHA-256 over the canonical JSON form of the result-relevant fields."""
        blob = json.dumps(_canonical(self.semantic_dict()), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_geometry(self, **changes) -> "ScenarioConfig":
        return self.override("geometry", **changes)


def _canonical(x):
    """Normalise numbers so 500 and 500.0 hash alike."""
    if isinstance(x, dict):
        return {str(k): _canonical(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_canonical(v) for v in x]
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, int) and abs(x) >= 2**53:
        return x
    if isinstance(x, (int, float)):
        return float(x)
    return x


def default_config() -> ScenarioConfig:
    return ScenarioConfig.from_dict({})


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``2e6`` / ``2.0e6`` as floats (YAML 1.2 style)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*)?(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"""),
    list("-+0123456789."),
)


def load_config(path) -> ScenarioConfig:
    """Read a YAML scenario file (``None`` gives the defaults)."""
    if path is None:
        return default_config()
    try:
        with open(path) as fh:
            raw = yaml.load(fh, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return ScenarioConfig.from_dict(raw or {})

