"""Pipeline configuration and its flat ``key = value`` text format.

Every field that can change an indicator value is part of the flat form,
and the config fingerprint is a SHA-256 over that form, so any parameter
change yields a different fingerprint.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace
from typing import Optional

from pavetex.enhance import ClaheParams, GaussianParams
from pavetex.errors import DataError
from pavetex.indicators import DEFAULT_SMI_BAND_MM
from pavetex.raster import RoiSpec
from pavetex.stats import normalize_mixture

CONFIG_ENV_VAR = "PAVETEX_CONFIG"

INDICATORS = ("area", "ar", "smi", "fd")
AGGREGATIONS = ("mean", "median", "per-image")
THRESHOLD_MODES = ("fixed", "isodata")

# Per-mixture gray-level thresholds from the laboratory calibration.
PAPER_THRESHOLDS = {"DGAC": 127, "ChipSeal": 124, "OGFC": 115}


@dataclass(frozen=True)
class PipelineConfig:
    roi: RoiSpec = field(default_factory=RoiSpec)
    clahe: ClaheParams = field(default_factory=ClaheParams)
    clahe_enabled: bool = True
    gaussian: GaussianParams = field(default_factory=GaussianParams)
    gaussian_enabled: bool = True
    threshold_mode: str = "fixed"
    threshold_table: dict = field(default_factory=lambda: dict(PAPER_THRESHOLDS))
    isodata_epsilon: float = 0.5
    indicators: tuple = INDICATORS
    smi_band_mm: tuple = DEFAULT_SMI_BAND_MM
    smi_levels: Optional[int] = None
    smi_weights: Optional[tuple] = None
    fd_box_sizes: Optional[tuple] = None
    aggregate: str = "mean"

    def __post_init__(self):
        if self.threshold_mode not in THRESHOLD_MODES:
            raise DataError(f"threshold mode must be one of {THRESHOLD_MODES}, got {self.threshold_mode!r}")
        bad = [i for i in self.indicators if i not in INDICATORS]
        if bad or not self.indicators:
            raise DataError(f"unknown or empty indicator selection {list(self.indicators)}")
        if self.aggregate not in AGGREGATIONS:
            raise DataError(f"aggregate must be one of {AGGREGATIONS}, got {self.aggregate!r}")
        if not self.isodata_epsilon > 0:
            raise DataError("isodata epsilon must be positive")
        lo, hi = self.smi_band_mm
        if not 0 < lo < hi:
            raise DataError(f"invalid SMI band {self.smi_band_mm}")
        if self.smi_levels is not None and self.smi_levels < 1:
            raise DataError("smi levels must be >= 1")
        for mix, t in self.threshold_table.items():
            if not 0 <= int(t) <= 255:
                raise DataError(f"threshold for {mix} outside [0, 255]")

    def threshold_for(self, mixture: str) -> int:
        key = normalize_mixture(mixture)
        for mix, t in self.threshold_table.items():
            if normalize_mixture(mix) == key:
                return int(t)
        raise DataError(f"no threshold configured for mixture {mixture!r}")

    def to_flat(self) -> dict:
        r, c, g = self.roi, self.clahe, self.gaussian
        flat = {
            "roi.x0": r.x0,
            "roi.y0": r.y0,
            "roi.width_px": r.width_px,
            "roi.height_px": r.height_px,
            "roi.width_mm": r.roi_width_mm,
            "roi.height_mm": r.roi_height_mm,
            "roi.target_width_px": r.target_width_px,
            "roi.target_height_px": r.target_height_px,
            "clahe.enabled": self.clahe_enabled,
            "clahe.tiles_x": c.tiles_x,
            "clahe.tiles_y": c.tiles_y,
            "clahe.clip_limit": c.clip_limit,
            "clahe.bins": c.bins,
            "gaussian.enabled": self.gaussian_enabled,
            "gaussian.sigma": g.sigma,
            "gaussian.radius": g.radius,
            "threshold.mode": self.threshold_mode,
            "threshold.epsilon": self.isodata_epsilon,
            "indicators": list(self.indicators),
            "smi.band_mm": list(self.smi_band_mm),
            "smi.levels": self.smi_levels,
            "smi.weights": None if self.smi_weights is None else list(self.smi_weights),
            "fd.box_sizes": None if self.fd_box_sizes is None else list(self.fd_box_sizes),
            "aggregate": self.aggregate,
        }
        for mix in sorted(self.threshold_table):
            flat[f"threshold.table.{mix}"] = int(self.threshold_table[mix])
        return flat

    def fingerprint(self) -> str:
        text = dumps_flat(self.to_flat())
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_flat(cls, flat: dict) -> "PipelineConfig":
        return _from_flat(flat)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def dumps_flat(flat: dict) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in flat.items())


def _parse_bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("true", "yes", "1", "on"):
        return True
    if s in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(conv):
    def parse(s: str):
        s = s.strip()
        return None if s in ("", "auto", "none") else conv(s)

    return parse


def _list(conv):
    return lambda s: tuple(conv(p.strip()) for p in s.split(",") if p.strip())


_PARSERS = {
    "roi.x0": ("roi", "x0", int),
    "roi.y0": ("roi", "y0", int),
    "roi.width_px": ("roi", "width_px", _opt(int)),
    "roi.height_px": ("roi", "height_px", _opt(int)),
    "roi.width_mm": ("roi", "roi_width_mm", float),
    "roi.height_mm": ("roi", "roi_height_mm", float),
    "roi.target_width_px": ("roi", "target_width_px", int),
    "roi.target_height_px": ("roi", "target_height_px", int),
    "clahe.enabled": (None, "clahe_enabled", _parse_bool),
    "clahe.tiles_x": ("clahe", "tiles_x", int),
    "clahe.tiles_y": ("clahe", "tiles_y", int),
    "clahe.clip_limit": ("clahe", "clip_limit", float),
    "clahe.bins": ("clahe", "bins", int),
    "gaussian.enabled": (None, "gaussian_enabled", _parse_bool),
    "gaussian.sigma": ("gaussian", "sigma", float),
    "gaussian.radius": ("gaussian", "radius", int),
    "threshold.mode": (None, "threshold_mode", str.strip),
    "threshold.epsilon": (None, "isodata_epsilon", float),
    "indicators": (None, "indicators", _list(str)),
    "smi.band_mm": (None, "smi_band_mm", _list(float)),
    "smi.levels": (None, "smi_levels", _opt(int)),
    "smi.weights": (None, "smi_weights", _opt(_list(float))),
    "fd.box_sizes": (None, "fd_box_sizes", _opt(_list(int))),
    "aggregate": (None, "aggregate", str.strip),
}


def _from_flat(flat: dict) -> PipelineConfig:
    base = PipelineConfig()
    groups = {"roi": {}, "clahe": {}, "gaussian": {}}
    top = {}
    table = None
    for key, raw in flat.items():
        raw = _fmt(raw) if not isinstance(raw, str) else raw
        if key.startswith("threshold.table."):
            table = {} if table is None else table
            try:
                table[key[len("threshold.table."):]] = int(raw)
            except ValueError as exc:
                raise DataError(f"config key {key}: {exc}") from None
            continue
        if key not in _PARSERS:
            raise DataError(f"unknown config key {key!r}")
        group, attr, conv = _PARSERS[key]
        try:
            value = conv(raw)
        except ValueError as exc:
            raise DataError(f"config key {key}: {exc}") from None
        (groups[group] if group else top)[attr] = value
    if table is not None:
        top["threshold_table"] = table
    try:
        return replace(
            base,
            roi=replace(base.roi, **groups["roi"]),
            clahe=replace(base.clahe, **groups["clahe"]),
            gaussian=replace(base.gaussian, **groups["gaussian"]),
            **top,
        )
    except TypeError as exc:
        raise DataError(f"invalid configuration: {exc}") from None


def loads_config(text: str) -> PipelineConfig:
    flat = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        flat[key.strip()] = value.strip()
    return _from_flat(flat)


def load_config(path=None) -> PipelineConfig:
    """Read a config file; falls back to $PAVETEX_CONFIG, then to the defaults."""
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return PipelineConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            return loads_config(fh.read())
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None


def save_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_flat(cfg.to_flat()))
