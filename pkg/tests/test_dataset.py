import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from pavetex.config import (
    CONFIG_ENV_VAR,
    PipelineConfig,
    dumps_flat,
    load_config,
    loads_config,
    save_config,
)
from pavetex.dataset import (
    Failure,
    IndicatorResult,
    SampleRecord,
    load_manifest,
    run_batch,
    run_pipeline,
)
from pavetex.errors import DataError
from pavetex.raster import RoiSpec
from pavetex.report import (
    compare_indicators,
    fit_models,
    observations,
    read_report,
    write_report,
)
from pavetex.stats import builtin_models
from pavetex.synth import DiskFieldSpec, gen_value_noise, render_disk_field

SMALL = RoiSpec(target_width_px=136, target_height_px=102)
SMALL_MM = 100 / 136


def small_cfg(**kw):
    return replace(PipelineConfig(roi=SMALL), **kw)


def write_manifest(path, rows, header=("image_path", "mixture", "dft40", "polish_cycles_k", "lighting_tag")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


class TestManifest:
    def test_parse_and_resolve(self, tmp_path):
        p = write_manifest(tmp_path / "m.csv", [["a.png", "DGAC", "0.54", "50", "lamp1"], ["/abs/b.png", "OGFC", "", "", ""]])
        a, b = load_manifest(p)
        assert a.image_path == str(tmp_path / "a.png") and a.dft40 == 0.54 and a.polish_cycles_k == 50
        assert a.lighting_tag == "lamp1"
        assert b.image_path == "/abs/b.png" and b.dft40 is None and b.lighting_tag is None

    def test_required_columns_only(self, tmp_path):
        p = write_manifest(tmp_path / "m.csv", [["a.png", "DGAC"]], header=("image_path", "mixture"))
        (r,) = load_manifest(p)
        assert r.dft40 is None

    def test_missing_column(self, tmp_path):
        p = write_manifest(tmp_path / "m.csv", [["a.png"]], header=("image_path",))
        with pytest.raises(DataError, match="missing required column"):
            load_manifest(p)

    def test_unknown_column(self, tmp_path):
        p = write_manifest(tmp_path / "m.csv", [["a.png", "DGAC", "x"]], header=("image_path", "mixture", "colour"))
        with pytest.raises(DataError, match="unknown column"):
            load_manifest(p)

    @pytest.mark.parametrize("dft", ["abc", "0", "1.5", "nan"])
    def test_bad_dft(self, tmp_path, dft):
        p = write_manifest(tmp_path / "m.csv", [["a.png", "DGAC", dft, "0", ""]])
        with pytest.raises(DataError, match="line 2"):
            load_manifest(p)

    def test_negative_cycles(self, tmp_path):
        p = write_manifest(tmp_path / "m.csv", [["a.png", "DGAC", "0.5", "-1", ""]])
        with pytest.raises(DataError):
            load_manifest(p)

    def test_duplicates(self, tmp_path):
        p = write_manifest(tmp_path / "m.csv", [["a.png", "DGAC", "0.5", "0", "x"], ["a.png", "DGAC", "0.5", "0", "x"]])
        with pytest.raises(DataError, match="duplicate"):
            load_manifest(p)
        p = write_manifest(tmp_path / "m2.csv", [["a.png", "DGAC", "0.5", "0", "x"], ["a.png", "DGAC", "0.5", "0", "y"]])
        assert len(load_manifest(p)) == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_manifest(tmp_path / "none.csv")


class TestConfig:
    def test_flat_round_trip(self):
        cfg = PipelineConfig(roi=SMALL, smi_levels=4, smi_weights=(1.0, 0.5), fd_box_sizes=(2, 4, 8),
                             threshold_mode="isodata", indicators=("area", "fd"), aggregate="median")
        assert loads_config(dumps_flat(cfg.to_flat())) == cfg
        assert PipelineConfig.from_flat(cfg.to_flat()) == cfg

    def test_comments_and_unknown_keys(self):
        cfg = loads_config("# header\nclahe.clip_limit = 3.0  # stronger\n\n")
        assert cfg.clahe.clip_limit == 3.0
        with pytest.raises(DataError, match="unknown config key"):
            loads_config("clahe.clip = 3")
        with pytest.raises(DataError):
            loads_config("clahe.clip_limit = 0.5")

    def test_env_var(self, tmp_path, monkeypatch):
        path = tmp_path / "c.cfg"
        save_config(small_cfg(gaussian_enabled=False), path)
        monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
        assert load_config() == small_cfg(gaussian_enabled=False)
        monkeypatch.delenv(CONFIG_ENV_VAR)
        assert load_config() == PipelineConfig()

    def test_fingerprint_changes_with_every_field(self):
        base = PipelineConfig()
        flat = base.to_flat()
        # aspect-coupled ROI fields are changed in pairs so the config stays valid
        perturbed = {
            "roi.x0": {"roi.x0": 1}, "roi.y0": {"roi.y0": 1},
            "roi.width_px": {"roi.width_px": 100}, "roi.height_px": {"roi.height_px": 75},
            "roi.width_mm": {"roi.width_mm": 200.0, "roi.height_mm": 150.0},
            "roi.height_mm": {"roi.width_mm": 50.0, "roi.height_mm": 37.5},
            "roi.target_width_px": {"roi.target_width_px": 1700, "roi.target_height_px": 1275},
            "roi.target_height_px": {"roi.target_width_px": 6800, "roi.target_height_px": 5100},
            "clahe.enabled": {"clahe.enabled": False}, "clahe.tiles_x": {"clahe.tiles_x": 4},
            "clahe.tiles_y": {"clahe.tiles_y": 4}, "clahe.clip_limit": {"clahe.clip_limit": 3.0},
            "clahe.bins": {"clahe.bins": 128}, "gaussian.enabled": {"gaussian.enabled": False},
            "gaussian.sigma": {"gaussian.sigma": 1.5}, "gaussian.radius": {"gaussian.radius": 4},
            "threshold.mode": {"threshold.mode": "isodata"}, "threshold.epsilon": {"threshold.epsilon": 0.25},
            "indicators": {"indicators": ["area"]}, "smi.band_mm": {"smi.band_mm": [1.0, 50.0]},
            "smi.levels": {"smi.levels": 5}, "smi.weights": {"smi.weights": [1.0]},
            "fd.box_sizes": {"fd.box_sizes": [2, 4, 8]}, "aggregate": {"aggregate": "median"},
            "threshold.table.DGAC": {"threshold.table.DGAC": 128},
            "threshold.table.ChipSeal": {"threshold.table.ChipSeal": 125},
            "threshold.table.OGFC": {"threshold.table.OGFC": 116},
        }
        assert set(perturbed) == set(flat)
        seen = {base.fingerprint()}
        for key, change in perturbed.items():
            fp = PipelineConfig.from_flat({**flat, **change}).fingerprint()
            assert fp not in seen, key
            seen.add(fp)

    def test_threshold_lookup(self):
        cfg = PipelineConfig()
        assert cfg.threshold_for("Chip Seal") == 124
        with pytest.raises(DataError):
            cfg.threshold_for("SMA")


@pytest.fixture
def disk_image(write_gray):
    spec = DiskFieldSpec((136, 102), 8, (5, 10), cap_gray=210, bg_gray=45)
    img, count = render_disk_field(spec, seed=7)
    return write_gray(img.values, "disks.png"), count


class TestPipeline:
    def test_exact_area_without_enhancement(self, disk_image):
        path, count = disk_image
        cfg = small_cfg(clahe_enabled=False, gaussian_enabled=False)
        res = run_pipeline(SampleRecord(str(path), "DGAC"), cfg)
        assert res.threshold == 127
        assert res.values["area_mm2"] == pytest.approx(count * SMALL_MM**2, rel=1e-12)
        assert res.values["ar"] == pytest.approx(count / (136 * 102))

    def test_all_dark_has_zero_area(self, write_gray):
        path = write_gray(np.full((102, 136), 30), "dark.png")
        res = run_pipeline(SampleRecord(str(path), "DGAC"), small_cfg(indicators=("area",)))
        assert res.values == {"area_mm2": 0.0}

    def test_provenance(self, disk_image):
        path, _ = disk_image
        cfg = small_cfg()
        res = run_pipeline(SampleRecord(str(path), "OGFC"), cfg)
        assert res.fingerprint == cfg.fingerprint()
        assert res.provenance["config"] == cfg.to_flat()
        assert res.provenance["stages"][:5] == ["load", "grayscale", "crop_resize", "clahe", "gaussian"]
        assert res.provenance["mm_per_px"] == pytest.approx(SMALL_MM)
        assert set(res.values) == {"area_mm2", "ar", "smi", "fd"}
        assert res.threshold == 115

    def test_isodata_mode(self, disk_image):
        path, _ = disk_image
        res = run_pipeline(SampleRecord(str(path), "SMA"), small_cfg(threshold_mode="isodata", clahe_enabled=False,
                                                                    gaussian_enabled=False, indicators=("area",)))
        assert 45 < res.threshold < 210
        assert res.provenance["threshold"]["source"] == "isodata"

    def test_batch_collects_failures(self, disk_image, tmp_path):
        path, _ = disk_image
        recs = [SampleRecord(str(path), "DGAC"), SampleRecord(str(tmp_path / "missing.png"), "DGAC"),
                SampleRecord(str(path), "Unknown", lighting_tag="x")]
        results, failures = run_batch(recs, small_cfg(indicators=("area",)))
        assert len(results) == 1
        stages = sorted(f.stage for f in failures)
        assert stages == ["load", "threshold"]
        assert all(isinstance(f, Failure) for f in failures)

    def test_roi_outside_image_fails_at_crop(self, disk_image):
        path, _ = disk_image
        cfg = small_cfg(roi=replace(SMALL, x0=100, width_px=100, height_px=75))
        _, failures = run_batch([SampleRecord(str(path), "DGAC")], cfg)
        assert failures[0].stage == "crop_resize"

    def test_determinism_across_jobs(self, tmp_path, write_gray):
        recs = []
        for i in range(6):
            img = gen_value_noise((150, 110), 6 + i, 120, 70, seed=i)
            recs.append(SampleRecord(str(write_gray(img.values, f"n{i}.png")), "DGAC", 0.5, float(i)))
        cfg = small_cfg()
        one, _ = run_batch(recs, cfg, jobs=1)
        again, _ = run_batch(list(reversed(recs)), cfg, jobs=4)
        assert [r.to_dict() for r in one] == [r.to_dict() for r in again]


def _result(mixture, cycles, area, dft, tag=None, path=None):
    rec = SampleRecord(path or f"/img/{mixture}_{cycles}_{tag}.png", mixture, dft, cycles, tag)
    return IndicatorResult(rec, {"area_mm2": area, "ar": 0.3}, 127, "f" * 16, {"config": {}})


class TestReport:
    def test_round_trip_and_structure(self, tmp_path):
        results = [_result("DGAC", c, 2800 - 2 * c, 0.55 - c / 2000) for c in (0, 50, 90)]
        fail = Failure(SampleRecord("/x.png", "DGAC"), "load", "file not found: /x.png")
        path = tmp_path / "r.json"
        write_report(results, list(builtin_models()), path, [fail])
        doc = json.loads(path.read_text())
        assert doc["format"] == "pavetex-report/1" and doc["config_fingerprint"] == "f" * 16
        assert len(doc["samples"]) == 3 and doc["failures"][0]["stage"] == "load"
        back, models, failures = read_report(path)
        assert [r.to_dict() for r in back] == [r.to_dict() for r in results]
        assert len(models) == 3 and len(failures) == 1
        plot = tmp_path / doc["plot_data"]["DGAC"]["area_mm2"]
        rows = list(csv.reader(open(plot)))
        assert rows[0] == ["image_path", "lighting_tag", "polish_cycles_k", "area_mm2", "dft40"] and len(rows) == 4

    def test_byte_identical(self, tmp_path):
        results = [_result("OGFC", c, 2500 + c, 0.3) for c in (0, 10, 20)]
        write_report(results, [], tmp_path / "a.json")
        write_report(list(reversed(results)), [], tmp_path / "b.json")
        a = (tmp_path / "a.json").read_text().replace("a.plot", "X")
        b = (tmp_path / "b.json").read_text().replace("b.plot", "X")
        assert a == b

    def test_aggregation_over_lighting(self):
        results = [_result("DGAC", 50, a, 0.5, tag) for a, tag in ((100.0, "a"), (110.0, "b"), (300.0, "c"))]
        results.append(_result("DGAC", 90, 50.0, 0.4, "a"))
        assert observations(results, "area", "mean")["DGAC"] == [(50.0, 0.4), (170.0, 0.5)]
        assert observations(results, "area", "median")["DGAC"] == [(50.0, 0.4), (110.0, 0.5)]
        assert len(observations(results, "area", "per-image")["DGAC"]) == 4

    def test_fit_skips_small_and_constant(self):
        results = [_result("DGAC", c, 2000.0 + 10 * c, 0.4 + c / 1000) for c in (0, 50, 90, 150)]
        results += [_result("OGFC", c, 2000.0, 0.3 + c / 1000) for c in (0, 50, 90)]
        results += [_result("SMA", 0, 1.0, 0.5)]
        models, skipped = fit_models(results)
        assert [m.mixture for m in models] == ["DGAC"]
        assert models[0].r2 == pytest.approx(1.0)
        assert "degenerate" in skipped["OGFC"] and "only 1" in skipped["SMA"]
        rows = compare_indicators(results, ["area", "ar"])
        assert {(r["mixture"], r["indicator"], r["status"]) for r in rows} >= {("DGAC", "area", "ok"), ("DGAC", "ar", "refused")}

    def test_read_errors(self, tmp_path):
        with pytest.raises(DataError):
            read_report(tmp_path / "none.json")
        (tmp_path / "x.json").write_text('{"format": "other"}')
        with pytest.raises(DataError):
            read_report(tmp_path / "x.json")
