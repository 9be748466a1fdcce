"""Report persistence, per-mixture aggregation, model fitting and indicator comparison."""

from __future__ import annotations

import csv
import datetime
import json
import os
import statistics
from collections import defaultdict
from typing import Iterable, Optional, Sequence

from pavetex.dataset import INDICATOR_KEYS, Failure, IndicatorResult
from pavetex.errors import ComputationError, DataError
from pavetex.stats import CALIBRATION_NOTE, RegressionModel, normalize_mixture, ols_fit

REPORT_FORMAT = "pavetex-report/1"


def _stem(path) -> str:
    path = os.fspath(path)
    return path[:-5] if path.endswith(".json") else path


def _safe(label: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in label)


def _by_mixture(results: Iterable[IndicatorResult]) -> dict:
    groups = defaultdict(list)
    for r in results:
        groups[r.record.mixture].append(r)
    return dict(sorted(groups.items()))


def write_plot_csvs(results: Sequence[IndicatorResult], stem: str) -> dict:
    """One CSV per (mixture, indicator): indicator value against measured DFT40.

    Returns {mixture: {indicator: file name}} with names relative to the stem's directory.
    """
    index = {}
    for mixture, rows in _by_mixture(results).items():
        keys = sorted({k for r in rows for k in r.values})
        index[mixture] = {}
        for key in keys:
            name = f"{os.path.basename(stem)}.plot.{_safe(mixture)}.{key}.csv"
            with open(os.path.join(os.path.dirname(stem) or ".", name), "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["image_path", "lighting_tag", "polish_cycles_k", key, "dft40"])
                for r in sorted(rows, key=lambda r: r.record.sort_key()):
                    rec = r.record
                    w.writerow([
                        rec.image_path,
                        rec.lighting_tag or "",
                        "" if rec.polish_cycles_k is None else repr(rec.polish_cycles_k),
                        "" if key not in r.values else repr(r.values[key]),
                        "" if rec.dft40 is None else repr(rec.dft40),
                    ])
            index[mixture][key] = name
    return index


def write_metadata(path, extra: Optional[dict] = None) -> None:
    """Timestamped sidecar; primary outputs stay byte-identical between runs."""
    from pavetex import __version__

    doc = {"created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(), "pavetex_version": __version__}
    doc.update(extra or {})
    with open(_stem(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report(
    results: Sequence[IndicatorResult],
    models: Sequence[RegressionModel],
    path,
    failures: Sequence[Failure] = (),
) -> None:
    """Write the report JSON plus plot-data CSV sidecars next to it."""
    if not results and not failures:
        raise DataError("nothing to report: no results")
    results = sorted(results, key=lambda r: r.record.sort_key())
    stem = _stem(path)
    try:
        plot_index = write_plot_csvs(results, stem)
        fingerprints = sorted({r.fingerprint for r in results})
        doc = {
            "format": REPORT_FORMAT,
            "config_fingerprint": fingerprints[0] if len(fingerprints) == 1 else fingerprints,
            "config": results[0].provenance.get("config") if results else None,
            "samples": [r.to_dict() for r in results],
            "failures": [f.to_dict() for f in failures],
            "models": [m.to_dict() for m in models],
            "plot_data": plot_index,
            "note": CALIBRATION_NOTE,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")
    except OSError as exc:
        raise DataError(f"cannot write report {path}: {exc}") from exc


def read_report(path):
    """Returns (results, models, failures) from a report JSON."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed report {path}: {exc}") from None
    if doc.get("format") != REPORT_FORMAT:
        raise DataError(f"{path} is not a {REPORT_FORMAT} document")
    try:
        results = [IndicatorResult.from_dict(d) for d in doc["samples"]]
        models = [RegressionModel.from_dict(d) for d in doc.get("models", [])]
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed report {path}: {exc}") from None
    return results, models, doc.get("failures", [])


def observations(results: Sequence[IndicatorResult], indicator: str, how: str = "mean") -> dict:
    """Per-mixture (x, y) pairs for fitting.

    Rows sharing a wear level (mixture, polish_cycles_k) collapse into one
    point whose x is the mean or median indicator over lighting variants;
    ``per-image`` keeps every row. Rows without dft40 are skipped.
    """
    key = INDICATOR_KEYS.get(indicator, indicator)
    agg = {"mean": statistics.fmean, "median": statistics.median}
    out = {}
    for mixture, rows in _by_mixture(results).items():
        rows = [r for r in rows if r.record.dft40 is not None and key in r.values]
        if how == "per-image":
            pts = [(float(r.values[key]), r.record.dft40) for r in rows]
        elif how in agg:
            levels = defaultdict(list)
            for r in rows:
                cycles = r.record.polish_cycles_k
                level = ("cycles", cycles) if cycles is not None else ("image", r.record.image_path, r.record.lighting_tag)
                levels[level].append(r)
            pts = [
                (agg[how]([float(r.values[key]) for r in grp]), statistics.fmean(r.record.dft40 for r in grp))
                for _, grp in sorted(levels.items(), key=lambda kv: repr(kv[0]))
            ]
        else:
            raise DataError(f"unknown aggregation {how!r}")
        out[mixture] = sorted(pts)
    return out


def fit_models(results: Sequence[IndicatorResult], indicator: str = "area", how: str = "mean"):
    """Fit one model per mixture; returns (models, {mixture: reason skipped})."""
    models, skipped = [], {}
    for mixture, pts in observations(results, indicator, how).items():
        if len(pts) < 3:
            skipped[mixture] = f"only {len(pts)} point(s) with dft40; need at least 3"
            continue
        xs, ys = zip(*pts)
        try:
            models.append(ols_fit(xs, ys, mixture, indicator))
        except (ComputationError, DataError) as exc:
            skipped[mixture] = str(exc)
    return models, skipped


def compare_indicators(results: Sequence[IndicatorResult], indicators: Sequence[str], how: str = "mean") -> list[dict]:
    """Side-by-side fit diagnostics for every (mixture, indicator) pair."""
    rows = []
    for indicator in indicators:
        models, skipped = fit_models(results, indicator, how)
        fitted = {normalize_mixture(m.mixture): m for m in models}
        mixtures = sorted({m.mixture for m in models} | set(skipped))
        for mixture in mixtures:
            m = fitted.get(normalize_mixture(mixture))
            row = {"mixture": mixture, "indicator": indicator}
            if m is None:
                row.update(status="refused", reason=skipped[mixture])
            else:
                d = m.to_dict()
                row.update(status="ok", n=m.n, intercept=m.intercept, slope=m.slope,
                           pearson_r=d["pearson_r"], r2=d["r2"], r2_adj=d["r2_adj"])
            rows.append(row)
    rows.sort(key=lambda r: (r["mixture"], r["indicator"]))
    return rows


def write_comparison(rows: Sequence[dict], path) -> None:
    """Comparison as JSON plus a flat CSV table alongside it."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"format": "pavetex-compare/1", "rows": list(rows)}, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    cols = ["mixture", "indicator", "status", "n", "intercept", "slope", "pearson_r", "r2", "r2_adj", "reason"]
    with open(_stem(path) + ".csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r.get(c) is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in cols])
