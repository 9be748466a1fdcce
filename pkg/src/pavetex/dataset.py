"""Manifest ingestion and the image -> indicator pipeline."""

from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from pavetex.config import PipelineConfig
from pavetex.enhance import clahe, gaussian_smooth
from pavetex.errors import DataError, PavetexError, StageError
from pavetex.indicators import (
    DegenerateFitWarning,
    aggregate_ratio,
    box_count,
    fractal_dimension,
    haar_dwt2,
    level_energies,
    max_levels,
    smi,
)
from pavetex.raster import GrayRaster, crop_resize, load_image, to_grayscale
from pavetex.segment import (
    area_mm2,
    binarize,
    histogram,
    isodata_threshold,
    max_entropy_threshold,
    otsu_threshold,
)

REQUIRED_COLUMNS = ("image_path", "mixture")
OPTIONAL_COLUMNS = ("dft40", "polish_cycles_k", "lighting_tag")

INDICATOR_KEYS = {"area": "area_mm2", "ar": "ar", "smi": "smi", "fd": "fd"}


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    mixture: str
    dft40: Optional[float] = None
    polish_cycles_k: Optional[float] = None
    lighting_tag: Optional[str] = None

    def __post_init__(self):
        if not self.image_path:
            raise DataError("image_path is required")
        if not self.mixture:
            raise DataError("mixture is required")
        if self.dft40 is not None and not 0.0 < self.dft40 < 1.5:
            raise DataError(f"dft40 must lie in (0, 1.5), got {self.dft40}")
        if self.polish_cycles_k is not None and self.polish_cycles_k < 0:
            raise DataError(f"polish_cycles_k must be >= 0, got {self.polish_cycles_k}")

    def sort_key(self):
        cycles = self.polish_cycles_k
        return (
            self.mixture,
            cycles is None,
            cycles if cycles is not None else 0.0,
            self.image_path,
            self.lighting_tag or "",
        )

    def to_dict(self) -> dict:
        return {
            "image_path": self.image_path,
            "mixture": self.mixture,
            "dft40": self.dft40,
            "polish_cycles_k": self.polish_cycles_k,
            "lighting_tag": self.lighting_tag,
        }


@dataclass(frozen=True)
class IndicatorResult:
    record: SampleRecord
    values: dict
    threshold: int
    fingerprint: str
    provenance: dict = field(default_factory=dict)
    flags: tuple = ()

    def to_dict(self) -> dict:
        d = self.record.to_dict()
        d.update(
            threshold=self.threshold,
            config_fingerprint=self.fingerprint,
            indicators=dict(self.values),
            flags=list(self.flags),
            provenance=self.provenance,
        )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IndicatorResult":
        rec = SampleRecord(**{k: d.get(k) for k in ("image_path", "mixture", "dft40", "polish_cycles_k", "lighting_tag")})
        return cls(rec, dict(d["indicators"]), d["threshold"], d["config_fingerprint"], d.get("provenance", {}), tuple(d.get("flags", ())))


@dataclass(frozen=True)
class Failure:
    record: SampleRecord
    stage: str
    message: str

    def to_dict(self) -> dict:
        d = self.record.to_dict()
        d.update(stage=self.stage, error=self.message)
        return d


def _opt_float(raw: Optional[str], column: str, lineno: int) -> Optional[float]:
    if raw is None or raw.strip() == "":
        return None
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"manifest line {lineno}: unparseable {column} value {raw!r}") from None
    if not math.isfinite(value):
        raise DataError(f"manifest line {lineno}: non-finite {column} value {raw!r}")
    return value


def load_manifest(path) -> list[SampleRecord]:
    """Read a manifest CSV (header required).

    Relative image paths are resolved against the manifest's directory.
    Blank ``dft40``/``polish_cycles_k`` cells give prediction-only records.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    records, seen = [], set()
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DataError(f"manifest {path} is missing required column(s): {', '.join(missing)}")
        unknown = [c for c in header if c not in REQUIRED_COLUMNS + OPTIONAL_COLUMNS]
        if unknown:
            raise DataError(f"manifest {path} has unknown column(s): {', '.join(unknown)}")
        reader.fieldnames = header
        for lineno, row in enumerate(reader, start=2):
            if not any((v or "").strip() for v in row.values() if isinstance(v, str)):
                continue
            image = (row.get("image_path") or "").strip()
            if image and not os.path.isabs(image):
                image = os.path.join(base, image)
            tag = (row.get("lighting_tag") or "").strip() or None
            key = (image, tag)
            if key in seen:
                raise DataError(f"manifest line {lineno}: duplicate image_path/lighting_tag {row.get('image_path')!r}")
            seen.add(key)
            try:
                records.append(
                    SampleRecord(
                        image,
                        (row.get("mixture") or "").strip(),
                        _opt_float(row.get("dft40"), "dft40", lineno),
                        _opt_float(row.get("polish_cycles_k"), "polish_cycles_k", lineno),
                        tag,
                    )
                )
            except DataError as exc:
                raise DataError(f"manifest line {lineno}: {exc}") from None
    return records


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (PavetexError, ValueError, ArithmeticError, OSError) as exc:
        raise StageError(name, exc) from exc


def preprocess(gray: GrayRaster, cfg: PipelineConfig):
    """ROI normalisation followed by the configured enhancement stages.

    Returns (normalised grayscale, enhanced grayscale).
    """
    norm = _stage("crop_resize", crop_resize, gray, cfg.roi)
    enhanced = norm
    if cfg.clahe_enabled:
        enhanced = _stage("clahe", clahe, enhanced, cfg.clahe)
    if cfg.gaussian_enabled:
        enhanced = _stage("gaussian", gaussian_smooth, enhanced, cfg.gaussian)
    return norm, enhanced


def select_threshold(enhanced: GrayRaster, mixture: str, cfg: PipelineConfig):
    """Return (threshold, provenance dict) for the Area binarisation."""
    if cfg.threshold_mode == "fixed":
        return cfg.threshold_for(mixture), {"source": "fixed", "mixture": mixture}
    res = isodata_threshold(histogram(enhanced), cfg.isodata_epsilon)
    return res.threshold, {"source": "isodata", "iterations": res.iterations, "converged": res.converged}


def compute_indicators(norm: GrayRaster, enhanced: GrayRaster, threshold: int, cfg: PipelineConfig):
    """Evaluate the configured indicators; returns (values, provenance, flags)."""
    values, prov, flags = {}, {}, []
    wanted = set(cfg.indicators)
    if "area" in wanted:
        mask = _stage("binarize", binarize, enhanced, threshold, "above")
        values["area_mm2"] = _stage("indicators.area", area_mm2, mask)
        prov["area"] = {"image": "enhanced", "threshold": threshold, "polarity": "above", "foreground_px": mask.count}
    if "ar" in wanted:
        t_ar = _stage("indicators.ar", otsu_threshold, histogram(norm)).threshold
        values["ar"] = _stage("indicators.ar", aggregate_ratio, binarize(norm, t_ar, "above"))
        prov["ar"] = {"image": "normalised", "method": "otsu", "threshold": t_ar, "polarity": "above"}
    if "smi" in wanted:
        levels = cfg.smi_levels or max_levels(enhanced.values.shape, enhanced.mm_per_px, cfg.smi_band_mm)
        pyr = _stage("indicators.smi", haar_dwt2, enhanced, levels)
        energies = level_energies(pyr)
        values["smi"] = _stage("indicators.smi", smi, energies, enhanced.mm_per_px, cfg.smi_band_mm, cfg.smi_weights)
        prov["smi"] = {"image": "enhanced", "wavelet": "haar", "levels": levels, "band_mm": list(cfg.smi_band_mm), "energies": energies}
    if "fd" in wanted:
        t_fd = _stage("indicators.fd", max_entropy_threshold, histogram(enhanced)).threshold
        concave = binarize(enhanced, t_fd, "below")
        curve = _stage("indicators.fd", box_count, concave, cfg.fd_box_sizes)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateFitWarning)
            values["fd"] = _stage("indicators.fd", fractal_dimension, curve)
        if any(issubclass(w.category, DegenerateFitWarning) for w in caught):
            flags.append("fd_degenerate")
        prov["fd"] = {
            "image": "enhanced",
            "method": "max_entropy",
            "threshold": t_fd,
            "polarity": "below",
            "box_sizes": list(curve.sizes),
            "box_counts": list(curve.counts),
        }
    return values, prov, flags


def run_pipeline(record: SampleRecord, cfg: PipelineConfig) -> IndicatorResult:
    """load -> grayscale -> crop/resize -> CLAHE -> Gaussian -> threshold -> binarize -> indicators."""
    color = _stage("load", load_image, record.image_path)
    gray = _stage("grayscale", to_grayscale, color)
    norm, enhanced = preprocess(gray, cfg)
    threshold, t_prov = _stage("threshold", select_threshold, enhanced, record.mixture, cfg)
    values, prov, flags = compute_indicators(norm, enhanced, threshold, cfg)
    provenance = {
        "config": cfg.to_flat(),
        "source_dims": [gray.width, gray.height],
        "output_dims": [norm.width, norm.height],
        "mm_per_px": norm.mm_per_px,
        "threshold": t_prov,
        "stages": ["load", "grayscale", "crop_resize"]
        + (["clahe"] if cfg.clahe_enabled else [])
        + (["gaussian"] if cfg.gaussian_enabled else [])
        + ["threshold", "binarize", "indicators"],
        **prov,
    }
    return IndicatorResult(record, values, threshold, cfg.fingerprint(), provenance, tuple(flags))


def _run_one(record, cfg):
    try:
        return run_pipeline(record, cfg)
    except StageError as exc:
        return Failure(record, exc.stage, str(exc.cause))
    except PavetexError as exc:
        return Failure(record, "pipeline", str(exc))


def run_batch(records: Sequence[SampleRecord], cfg: PipelineConfig, jobs: int = 1):
    """Run every record, continuing past failures.

    Returns (results, failures), each sorted by (mixture, cycles, image path)
    independently of ``jobs``.
    """
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(lambda r: _run_one(r, cfg), records))
    else:
        outcomes = [_run_one(r, cfg) for r in records]
    results = sorted((o for o in outcomes if isinstance(o, IndicatorResult)), key=lambda o: o.record.sort_key())
    failures = sorted((o for o in outcomes if isinstance(o, Failure)), key=lambda o: o.record.sort_key())
    return results, failures
