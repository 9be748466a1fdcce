"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 computation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace

from pavetex.config import INDICATORS, PipelineConfig, load_config
from pavetex.dataset import Failure, SampleRecord, load_manifest, preprocess, run_batch
from pavetex.errors import ComputationError, DataError, PavetexError, StageError
from pavetex.raster import GrayRaster, load_image, save_gray, to_grayscale
from pavetex.report import (
    compare_indicators,
    fit_models,
    read_report,
    write_comparison,
    write_metadata,
    write_plot_csvs,
    write_report,
    _stem,
)
from pavetex.segment import area_mm2, binarize, histogram, isodata_threshold, max_entropy_threshold, otsu_threshold
from pavetex.stats import CALIBRATION_NOTE, builtin_models, load_models, predict, save_models

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_COMPUTE = 0, 1, 2, 3


class UsageError(PavetexError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _pair(text: str, sep: str, conv):
    parts = text.lower().split(sep)
    if len(parts) == 1:
        return conv(parts[0]), conv(parts[0])
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected A{sep}B, got {text!r}")
    return conv(parts[0]), conv(parts[1])


def _dims(text):
    try:
        return _pair(text, "x", int)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def _mm(text):
    try:
        return _pair(text, "x", float)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH in mm, got {text!r}") from None


def _roi(text):
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X0,Y0,W,H, got {text!r}") from None
    if len(vals) != 4:
        raise argparse.ArgumentTypeError(f"expected X0,Y0,W,H, got {text!r}")
    return vals


def _indicator_list(text):
    items = [s.strip().lower() for s in text.split(",") if s.strip()]
    bad = [s for s in items if s not in INDICATORS]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"indicators must be drawn from {', '.join(INDICATORS)}")
    return tuple(items)


def _add_pipeline_flags(p):
    g = p.add_argument_group("pipeline")
    g.add_argument("--config", help="flat key = value config file (default: $PAVETEX_CONFIG, else built-in defaults)")
    g.add_argument("--roi", type=_roi, metavar="X0,Y0,W,H", help="source ROI rectangle in pixels (default: whole image)")
    g.add_argument("--roi-mm", type=_mm, metavar="WxH", help="physical ROI size in mm (default 100x75)")
    g.add_argument("--target", type=_dims, metavar="WxH", help="resampled ROI size in pixels (default 3400x2550)")
    g.add_argument("--clahe-tiles", type=_dims, metavar="TXxTY", help="CLAHE tile grid (default 8x8)")
    g.add_argument("--clahe-clip", type=float, metavar="F", help="CLAHE clip limit, >= 1.0 (default 2.0)")
    g.add_argument("--clahe-bins", type=int, metavar="N", help="CLAHE histogram bins in [2, 256] (default 256)")
    g.add_argument("--no-clahe", action="store_true", help="skip CLAHE")
    g.add_argument("--sigma", type=float, help="Gaussian sigma in pixels (default 1.0)")
    g.add_argument("--radius", type=int, help="Gaussian kernel radius in pixels (default 3)")
    g.add_argument("--no-gaussian", action="store_true", help="skip Gaussian smoothing")
    g.add_argument("--threshold-mode", choices=("fixed", "isodata"), help="per-mixture fixed table or IsoData per image")


def build_config(args) -> PipelineConfig:
    """Config file (or defaults) with command-line overrides applied."""
    cfg = load_config(args.config)
    try:
        roi_kw, clahe_kw, gauss_kw, top = {}, {}, {}, {}
        if args.roi is not None:
            roi_kw.update(zip(("x0", "y0", "width_px", "height_px"), args.roi))
        if args.roi_mm is not None:
            roi_kw["roi_width_mm"], roi_kw["roi_height_mm"] = args.roi_mm
        if args.target is not None:
            roi_kw["target_width_px"], roi_kw["target_height_px"] = args.target
        if args.clahe_tiles is not None:
            clahe_kw["tiles_x"], clahe_kw["tiles_y"] = args.clahe_tiles
        if args.clahe_clip is not None:
            clahe_kw["clip_limit"] = args.clahe_clip
        if args.clahe_bins is not None:
            clahe_kw["bins"] = args.clahe_bins
        if args.sigma is not None:
            gauss_kw["sigma"] = args.sigma
        if args.radius is not None:
            gauss_kw["radius"] = args.radius
        elif args.sigma is not None:
            gauss_kw["radius"] = max(cfg.gaussian.radius, math.ceil(2 * args.sigma))
        if args.no_clahe:
            top["clahe_enabled"] = False
        if args.no_gaussian:
            top["gaussian_enabled"] = False
        if args.threshold_mode:
            top["threshold_mode"] = args.threshold_mode
        if getattr(args, "only", None):
            top["indicators"] = args.only
        return replace(
            cfg,
            roi=replace(cfg.roi, **roi_kw),
            clahe=replace(cfg.clahe, **clahe_kw),
            gaussian=replace(cfg.gaussian, **gauss_kw),
            **top,
        )
    except DataError as exc:
        raise UsageError(str(exc)) from None


def _load_gray(path) -> GrayRaster:
    try:
        return to_grayscale(load_image(path))
    except DataError as exc:
        raise StageError("load", exc) from None


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_preprocess(args):
    cfg = build_config(args)
    gray = _load_gray(args.input)
    norm, enhanced = preprocess(gray, cfg)
    save_gray(enhanced, args.out)
    _write_json(os.path.splitext(args.out)[0] + ".json", {
        "input": args.input,
        "output": args.out,
        "source_dims": [gray.width, gray.height],
        "output_dims": [enhanced.width, enhanced.height],
        "mm_per_px": enhanced.mm_per_px,
        "config": cfg.to_flat(),
        "config_fingerprint": cfg.fingerprint(),
    })
    print(f"wrote {args.out} ({enhanced.width}x{enhanced.height}, {enhanced.mm_per_px:.6f} mm/px)")
    return EXIT_OK


def cmd_segment(args):
    cfg = build_config(args)
    gray = _load_gray(args.input)
    _, enhanced = preprocess(gray, cfg)
    if args.threshold is not None:
        t, source = args.threshold, "manual"
    elif args.method == "isodata":
        t, source = isodata_threshold(histogram(enhanced), cfg.isodata_epsilon).threshold, "isodata"
    elif args.method == "otsu":
        t, source = otsu_threshold(histogram(enhanced)).threshold, "otsu"
    elif args.method == "max-entropy":
        t, source = max_entropy_threshold(histogram(enhanced)).threshold, "max-entropy"
    else:
        if not args.mixture:
            raise UsageError("give one of --mixture, --threshold or --method")
        t, source = cfg.threshold_for(args.mixture), f"fixed:{args.mixture}"
    mask = binarize(enhanced, t, args.polarity)
    if args.out:
        mask.save(args.out)
    print(json.dumps({
        "threshold": t,
        "threshold_source": source,
        "polarity": args.polarity,
        "foreground_px": mask.count,
        "area_mm2": area_mm2(mask),
    }, sort_keys=True))
    return EXIT_OK


def _report_failures(failures):
    for f in failures:
        print(f"FAILED {f.record.image_path} [{f.stage}] {f.message}", file=sys.stderr)


def cmd_indicators(args):
    cfg = build_config(args)
    records = load_manifest(args.manifest)
    results, failures = run_batch(records, cfg, jobs=args.jobs)
    write_report(results, [], args.out, failures)
    write_metadata(args.out, {"manifest": args.manifest, "records": len(records), "failed": len(failures)})
    print(f"{len(results)} record(s) computed, {len(failures)} failed -> {args.out}")
    _report_failures(failures)
    return EXIT_DATA if failures else EXIT_OK


def cmd_fit(args):
    results, _, _ = read_report(args.results)
    models, skipped = fit_models(results, args.indicator, args.aggregate)
    for mixture, reason in sorted(skipped.items()):
        print(f"warning: skipped {mixture}: {reason}", file=sys.stderr)
    if models:
        save_models(models, args.out_models)
    for m in models:
        print(f"{m.mixture}: DFT = {m.intercept:.4f} + {m.slope:.6g} * {m.indicator}  "
              f"(n={m.n}, r={m.pearson_r:.4f}, R2={m.r2:.4f}, R2adj={m.r2_adj:.4f})")
    if skipped or not models:
        return EXIT_DATA
    return EXIT_OK


def _load_registry(spec):
    return builtin_models() if spec == "builtin" else load_models(spec)


def cmd_predict(args):
    cfg = build_config(args)
    cfg = replace(cfg, indicators=("area",))
    registry = _load_registry(args.models)
    if args.image:
        if not args.mixture:
            raise UsageError("--image requires --mixture")
        records = [SampleRecord(args.image, args.mixture)]
    else:
        records = load_manifest(args.manifest)
    rows, status = [], EXIT_OK
    runnable = []
    for rec in records:
        if rec.mixture not in registry:
            print(f"FAILED {rec.image_path}: no model for mixture {rec.mixture!r}", file=sys.stderr)
            status = EXIT_DATA
        else:
            runnable.append(rec)
    results, failures = run_batch(runnable, cfg, jobs=args.jobs)
    _report_failures(failures)
    if failures:
        status = EXIT_DATA
    for res in results:
        model = registry[res.record.mixture]
        pred = predict(model, res.values["area_mm2"])
        rows.append([res.record.image_path, res.record.mixture, repr(res.values["area_mm2"]),
                     f"{pred.dft:.4f}", "out_of_range" if pred.out_of_range else ""])
    header = ["image_path", "mixture", "area_mm2", "predicted_dft40", "advisory"]
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    if args.models == "builtin":
        print(f"note: {CALIBRATION_NOTE}", file=sys.stderr)
    return status


def cmd_compare(args):
    results, _, _ = read_report(args.results)
    if not results:
        raise DataError(f"{args.results} contains no results")
    available = [i for i in INDICATORS if any(
        {"area": "area_mm2"}.get(i, i) in r.values for r in results)]
    indicators = [i for i in (args.indicators or available) if i in available]
    if not indicators:
        raise DataError("no requested indicator is present in the results")
    rows = compare_indicators(results, indicators, args.aggregate)
    write_comparison(rows, args.out)
    write_plot_csvs(results, _stem(args.out))
    width = max(len(r["mixture"]) for r in rows)
    for r in rows:
        if r["status"] == "ok":
            r2 = "nan" if r["r2"] is None else f"{r['r2']:.4f}"
            r2a = "nan" if r["r2_adj"] is None else f"{r['r2_adj']:.4f}"
            print(f"{r['mixture']:<{width}}  {r['indicator']:<5} n={r['n']:<3} R2={r2}  R2adj={r2a}")
        else:
            print(f"{r['mixture']:<{width}}  {r['indicator']:<5} refused: {r['reason']}")
    return EXIT_OK if any(r["status"] == "ok" for r in rows) else EXIT_DATA


def cmd_synth(args):
    from pavetex import synth

    if args.kind == "bimodal":
        img = synth.gen_bimodal(args.dims, args.low, args.high, args.fraction, args.seed)
        save_gray(img, args.out)
        truth = {}
    elif args.kind == "disk-field":
        img, count = synth.gen_disk_field(args.dims, args.disks, args.radius_range, args.cap_gray, args.bg_gray,
                                          args.seed, body_gray=args.body_gray, noise_sigma=args.noise)
        save_gray(img, args.out)
        truth = {"cap_pixels": count}
    elif args.kind == "sierpinski":
        mask = synth.gen_sierpinski(args.depth)
        mask.save(args.out)
        truth = {"foreground_px": mask.count}
    elif args.kind == "value-noise":
        img = synth.gen_value_noise(args.dims, args.cell, args.mean, args.amplitude, args.seed)
        save_gray(img, args.out)
        truth = {}
    else:
        return _synth_sequence(args, synth)
    _write_json(os.path.splitext(args.out)[0] + ".truth.json", {"kind": args.kind, "seed": args.seed, **truth})
    print(f"wrote {args.out}")
    return EXIT_OK


def _synth_sequence(args, synth):
    """Polish sequence plus a manifest whose DFT40 follows the built-in model of --mixture."""
    spec = synth.DiskFieldSpec(tuple(args.dims), args.disks, tuple(args.radius_range), args.cap_gray,
                               args.bg_gray, body_gray=args.body_gray, noise_sigma=args.noise)
    frames = synth.gen_polish_sequence(spec, args.wear, args.seed)
    os.makedirs(args.out, exist_ok=True)
    model = builtin_models()[args.mixture]
    mm_per_px = 100.0 / args.dims[0]
    manifest = os.path.join(args.out, "manifest.csv")
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_path", "mixture", "dft40", "polish_cycles_k"])
        for i, ((img, count), wear) in enumerate(zip(frames, args.wear)):
            name = f"wear_{i:02d}.png"
            save_gray(img, os.path.join(args.out, name))
            dft = predict(model, count * mm_per_px**2).dft
            w.writerow([name, args.mixture, f"{min(max(dft, 0.01), 1.49):.4f}", f"{wear * 1000:g}"])
    print(f"wrote {len(frames)} frame(s) and {manifest}")
    return EXIT_OK


def cmd_report(args):
    results, models, failures = read_report(args.results)
    if args.models:
        models = list(_load_registry(args.models))
    fails = [Failure(SampleRecord(**{k: f.get(k) for k in ("image_path", "mixture", "dft40", "polish_cycles_k", "lighting_tag")}),
                     f.get("stage", ""), f.get("error", "")) for f in failures]
    write_report(results, models, args.out, fails)
    write_metadata(args.out, {"source": args.results})
    print(f"wrote {args.out} ({len(results)} sample(s), {len(models)} model(s))")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pavetex", description="Image-based pavement friction indicators.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="crop/resize, CLAHE and Gaussian-smooth one image")
    p.add_argument("--input", required=True, help="input PNG/JPEG/PPM")
    p.add_argument("--out", required=True, help="output image (.png or .pgm); a .json provenance sidecar is written next to it")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("segment", help="binarise one preprocessed image and report its Area")
    p.add_argument("--input", required=True, help="input PNG/JPEG/PPM")
    p.add_argument("--out", help="mask output (.png/.pbm, foreground drawn black)")
    sel = p.add_mutually_exclusive_group()
    sel.add_argument("--mixture", help="use the configured fixed threshold for this mixture")
    sel.add_argument("--threshold", type=int, help="explicit gray-level threshold")
    sel.add_argument("--method", choices=("isodata", "otsu", "max-entropy"), help="compute the threshold from the image")
    p.add_argument("--polarity", choices=("above", "below"), default="above", help="foreground side of the threshold")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("indicators", help="compute indicators for every manifest record")
    p.add_argument("--manifest", required=True, help="CSV: image_path,mixture,dft40,polish_cycles_k[,lighting_tag]")
    p.add_argument("--out", required=True, help="report JSON; plot CSVs are written beside it")
    p.add_argument("--only", type=_indicator_list, metavar="LIST", help="comma-separated subset of area,ar,smi,fd")
    p.add_argument("--jobs", type=int, default=1, help="worker threads (results are identical for any value)")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_indicators)

    p = sub.add_parser("fit", help="fit one linear DFT40 model per mixture")
    p.add_argument("--results", required=True, help="report JSON from 'indicators'")
    p.add_argument("--indicator", choices=INDICATORS, default="area", help="predictor (default area)")
    p.add_argument("--out-models", required=True, help="model JSON to write")
    p.add_argument("--aggregate", choices=("mean", "median", "per-image"), default="mean",
                   help="how lighting variants of one wear level are combined")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict DFT40 from images")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", help="single image (needs --mixture)")
    src.add_argument("--manifest", help="manifest CSV; dft40 may be blank")
    p.add_argument("--mixture", help="mixture label for --image")
    p.add_argument("--models", default="builtin", help="'builtin' or a model JSON from 'fit'")
    p.add_argument("--out", help="prediction CSV (default: stdout)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("compare", help="side-by-side fit diagnostics for several indicators")
    p.add_argument("--results", required=True, help="report JSON from 'indicators'")
    p.add_argument("--out", required=True, help="comparison JSON; a CSV table and plot CSVs are written beside it")
    p.add_argument("--indicators", type=_indicator_list, metavar="LIST", help="subset to compare (default: all present)")
    p.add_argument("--aggregate", choices=("mean", "median", "per-image"), default="mean",
                   help="how lighting variants of one wear level are combined")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="write synthetic test fixtures")
    p.add_argument("--kind", required=True, choices=("bimodal", "disk-field", "sierpinski", "polish-sequence", "value-noise"))
    p.add_argument("--out", required=True, help="output image, or directory for polish-sequence")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--dims", type=_dims, default=(680, 510), metavar="WxH", help="image size (default 680x510)")
    p.add_argument("--low", type=int, default=50, help="bimodal: low level")
    p.add_argument("--high", type=int, default=200, help="bimodal: high level")
    p.add_argument("--fraction", type=float, default=0.5, help="bimodal: probability of the high level")
    p.add_argument("--disks", type=int, default=40, help="disk-field: number of disks")
    p.add_argument("--radius-range", type=_dims, default=(10, 30), metavar="MINxMAX", help="disk radius range")
    p.add_argument("--cap-gray", type=int, default=220, help="cap gray level")
    p.add_argument("--bg-gray", type=int, default=40, help="background gray level")
    p.add_argument("--body-gray", type=int, help="optional aggregate body gray level")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma overlay")
    p.add_argument("--depth", type=int, default=4, help="sierpinski: depth in [1, 6]")
    p.add_argument("--cell", type=int, default=8, help="value-noise: lattice spacing in pixels")
    p.add_argument("--mean", type=float, default=128.0, help="value-noise: mean gray")
    p.add_argument("--amplitude", type=float, default=60.0, help="value-noise: amplitude")
    p.add_argument("--wear", type=lambda s: [float(v) for v in s.split(",")], default=[0.0, 0.1, 0.2, 0.3, 0.4],
                   help="polish-sequence: comma-separated wear fractions")
    p.add_argument("--mixture", default="DGAC", help="polish-sequence: mixture whose built-in model sets dft40")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="rewrite a report with a model block attached")
    p.add_argument("--results", required=True, help="report JSON from 'indicators'")
    p.add_argument("--models", help="'builtin' or a model JSON")
    p.add_argument("--out", required=True, help="report JSON to write")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pavetex {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"pavetex {args.command}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE if isinstance(exc.cause, ComputationError) else EXIT_DATA
    except ComputationError as exc:
        print(f"pavetex {args.command}: computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except (DataError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"pavetex {args.command}: data error: {msg}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"pavetex {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
