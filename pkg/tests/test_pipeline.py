"""Configuration, ingest, orchestration, and command line behavior."""

import numpy as np
import pytest

from evsve import cli, fileio
from evsve.alignment import MatchSet
from evsve.events import EventStream, simulate_events
from evsve.fileio import FormatError
from evsve.pipeline import (
    ConfigError,
    PipelineConfig,
    StageError,
    _edge_image,
    _global_shift,
    _grid_matches,
    _int_shift,
    _match_blur,
    ingest,
    run_pipeline,
)
from evsve.scenes import synth_scene
from evsve.sve import mosaic_forward


class TestConfigParsing:
    def test_defaults_are_valid(self):
        cfg = PipelineConfig()
        cfg.validate()
        assert "size 64" in cfg.echo()

    def test_file_parsing_with_comments_and_blanks(self, tmp_path):
        p = tmp_path / "cfg.txt"
        p.write_text("# scene\nsize 32\n\nframes 2\nthreshold_c 0.25\nsupervised 0\n")
        cfg = PipelineConfig.from_file(p)
        assert cfg.size == 32
        assert cfg.frames == 2
        assert cfg.threshold_c == 0.25
        assert cfg.supervised is False

    def test_missing_file_is_a_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            PipelineConfig.from_file(tmp_path / "absent.txt")

    def test_bad_line_reports_the_line_number(self, tmp_path):
        p = tmp_path / "cfg.txt"
        p.write_text("size 32\njustakey\n")
        with pytest.raises(ConfigError, match="line 2"):
            PipelineConfig.from_file(p)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="sizee"):
            PipelineConfig().with_overrides({"sizee": "64"})

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="size"):
            PipelineConfig().with_overrides({"size": "abc"})
        with pytest.raises(ConfigError):
            PipelineConfig().with_overrides({"supervised": "maybe"})

    def test_boolean_spellings(self):
        cfg = PipelineConfig().with_overrides({"align": "off", "supervised": "TRUE"})
        assert cfg.align is False
        assert cfg.supervised is True

    def test_range_validation(self):
        with pytest.raises(ConfigError):
            PipelineConfig().with_overrides({"threshold_c": "0"})
        with pytest.raises(ConfigError):
            PipelineConfig().with_overrides({"clip_q": "0"})
        with pytest.raises(ConfigError):
            PipelineConfig().with_overrides({"iters": "0"})
        with pytest.raises(ConfigError):
            PipelineConfig().with_overrides({"motion": "warp"})

    def test_partial_ingest_trio_rejected(self):
        with pytest.raises(ConfigError, match="ingest"):
            PipelineConfig().with_overrides({"input_events": "e.txt"})


class TestPerturbHomography:
    def test_zero_perturbation_is_none(self):
        assert PipelineConfig().perturb_homography() is None

    def test_pure_translation(self):
        cfg = PipelineConfig(size=16, perturb_dx=3.0, perturb_dy=-2.0)
        h = cfg.perturb_homography().h
        np.testing.assert_allclose(
            h, [[1, 0, 3], [0, 1, -2], [0, 0, 1]], atol=1e-12
        )

    def test_rotation_fixes_the_image_center(self):
        cfg = PipelineConfig(size=16, perturb_rot_deg=30.0, perturb_dx=1.0)
        hom = cfg.perturb_homography()
        c = (16 - 1) / 2.0
        moved = hom.apply(np.array([[c, c]]))
        np.testing.assert_allclose(moved, [[c + 1.0, c]], atol=1e-12)


class TestMatchHelpers:
    def _texture(self, seed, size=64):
        rng = np.random.default_rng(seed)
        return _match_blur(np.abs(rng.normal(0, 1, (size, size))), 2.0)

    def test_integer_shift_zero_fills(self):
        img = np.zeros((6, 6))
        img[2, 2] = 1.0
        out = _int_shift(img, 2, 1)
        assert out[3, 4] == 1.0
        assert out.sum() == 1.0

    def test_global_shift_returns_the_correcting_offset(self):
        ea = self._texture(0)
        eb = _int_shift(ea, -3, 2)
        # applying the returned shift to eb re-aligns it with ea
        dx, dy = _global_shift([(ea, eb)], 6)
        assert (dx, dy) == (3, -2)
        np.testing.assert_allclose(
            _int_shift(eb, dx, dy)[8:-8, 8:-8], ea[8:-8, 8:-8], atol=1e-12
        )

    def test_grid_matches_recover_a_small_translation(self):
        ea = self._texture(1)
        eb = _int_shift(ea, 2, -1)
        ms = _grid_matches(ea, eb)
        assert len(ms.scores) > 50
        med = np.median(ms.pts_b - ms.pts_a, axis=0)
        np.testing.assert_allclose(med, [2.0, -1.0], atol=0.15)

    def test_grid_matches_empty_on_flat_or_tiny_input(self):
        assert len(_grid_matches(np.zeros((64, 64)), np.zeros((64, 64))).scores) == 0
        assert len(_grid_matches(np.zeros((12, 12)), np.zeros((12, 12))).scores) == 0

    def test_edge_image_of_constant_is_zero(self):
        assert np.all(_edge_image(np.full((8, 8), 3.0)) == 0.0)

    def test_match_blur_peak_normalizes(self):
        out = _match_blur(self._texture(2) * 7.3)
        assert out.max() == pytest.approx(1.0)


def _synth_dir(tmp_path, **overrides):
    cfg = PipelineConfig(size=16, frames=2, disk_radius=4.0, iters=2,
                         out_dir=str(tmp_path / "out")).with_overrides(
        {k: str(v) for k, v in overrides.items()}
    )
    run_pipeline(cfg, stop_after="synth")
    return cfg


class TestIngest:
    def test_round_trip_matches_in_memory_structures(self, tmp_path):
        cfg = _synth_dir(tmp_path)
        out = tmp_path / "out"
        data = ingest(
            out / "events.txt",
            [out / "mosaic_000.pfm", out / "mosaic_001.pfm"],
            out / "triggers.txt",
        )
        scene = synth_scene(cfg.scene_params(), seed=cfg.seed)
        stream = simulate_events(scene.video, c=cfg.threshold_c, log_eps=cfg.log_eps)
        np.testing.assert_array_equal(data.stream.t, stream.t)
        np.testing.assert_array_equal(data.stream.x, stream.x)
        np.testing.assert_array_equal(data.stream.y, stream.y)
        np.testing.assert_array_equal(data.stream.p, stream.p)
        np.testing.assert_array_equal(data.triggers.times, scene.triggers.times)
        for i in range(2):
            m = mosaic_forward(
                scene.full[i], cfg.pattern(), cfg.crf_obj(), seed=cfg.seed + 1000 + i
            )
            # PFM stores 32-bit floats, so compare at storage precision
            np.testing.assert_array_equal(
                data.mosaics[i].data, m.data.astype(np.float32).astype(np.float64)
            )
            assert data.mosaics[i].pattern == cfg.pattern()

    def test_trigger_count_mismatch_rejected(self, tmp_path):
        _synth_dir(tmp_path)
        out = tmp_path / "out"
        with pytest.raises(ValueError, match="does not fit"):
            ingest(out / "events.txt", [out / "mosaic_000.pfm"], out / "triggers.txt")

    def test_malformed_event_line_reports_its_number(self, tmp_path):
        _synth_dir(tmp_path)
        out = tmp_path / "out"
        lines = (out / "events.txt").read_text().splitlines()
        lines[2] = "not an event"
        (out / "events.txt").write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError, match="line 3"):
            ingest(
                out / "events.txt",
                [out / "mosaic_000.pfm", out / "mosaic_001.pfm"],
                out / "triggers.txt",
            )

    def test_geometry_mismatch_rejected(self, tmp_path):
        _synth_dir(tmp_path)
        out = tmp_path / "out"
        stream = EventStream.load(out / "events.txt")
        bad = EventStream(
            t=stream.t, x=stream.x, y=stream.y, p=stream.p,
            width=stream.width * 2, height=stream.height, c=stream.c,
        )
        bad.save(out / "events.txt")
        with pytest.raises(ValueError, match="geometry"):
            ingest(
                out / "events.txt",
                [out / "mosaic_000.pfm", out / "mosaic_001.pfm"],
                out / "triggers.txt",
            )

    def test_sidecar_disagreement_rejected(self, tmp_path):
        _synth_dir(tmp_path)
        out = tmp_path / "out"
        text = (out / "mosaic_001.txt").read_text()
        (out / "mosaic_001.txt").write_text(text.replace("0.95", "0.9"))
        with pytest.raises(ValueError, match="sidecars"):
            ingest(
                out / "events.txt",
                [out / "mosaic_000.pfm", out / "mosaic_001.pfm"],
                out / "triggers.txt",
            )


def _identity_corr_file(path, size):
    rng = np.random.default_rng(0)
    pts = rng.uniform(2, size - 3, (24, 2))
    MatchSet(pts_a=pts, pts_b=pts.copy(), scores=np.ones(len(pts))).to_file(path)
    return str(path)


class TestRunPipeline:
    def test_identity_perturbation_estimates_identity(self, tmp_path):
        corr = _identity_corr_file(tmp_path / "corr.txt", 16)
        cfg = PipelineConfig(
            size=16, frames=2, disk_radius=4.0, corr_file=corr,
            out_dir=str(tmp_path / "out"),
        )
        res = run_pipeline(cfg, stop_after="align")
        h = res.homography.h / res.homography.h[2, 2]
        assert np.linalg.norm(h - np.eye(3)) < 1e-2
        assert (tmp_path / "out" / "homography.txt").exists()

    def test_stage_failures_are_tagged_and_keep_artifacts(self, tmp_path):
        # collinear correspondences cannot constrain a homography
        pts = np.column_stack([np.linspace(2, 13, 8), np.linspace(2, 13, 8)])
        corr = tmp_path / "corr.txt"
        MatchSet(pts_a=pts, pts_b=pts.copy(), scores=np.ones(8)).to_file(corr)
        cfg = PipelineConfig(
            size=16, frames=2, disk_radius=4.0, corr_file=str(corr),
            out_dir=str(tmp_path / "out"),
        )
        with pytest.raises(StageError) as err:
            run_pipeline(cfg)
        assert err.value.stage == "align"
        assert (tmp_path / "out" / "mosaic_000.pfm").exists()
        assert (tmp_path / "out" / "events.txt").exists()

    def test_ingest_path_reconstructs(self, tmp_path):
        _synth_dir(tmp_path)
        out = tmp_path / "out"
        cfg = PipelineConfig(
            size=16, frames=2, disk_radius=4.0, iters=2, align=False,
            levels=2, width=4, hidden=8,
            input_events=str(out / "events.txt"),
            input_mosaics=f"{out / 'mosaic_000.pfm'},{out / 'mosaic_001.pfm'}",
            input_triggers=str(out / "triggers.txt"),
            out_dir=str(tmp_path / "out2"),
        )
        res = run_pipeline(cfg)
        assert len(res.hdrs) == 2
        assert (tmp_path / "out2" / "hdr_001.pfm").exists()
        # no ground truth on the capture path, so metrics carry entropy only
        assert "psnr" not in res.metrics_rows[0]
        assert "entropy" in res.metrics_rows[0]

    def test_bit_identical_reruns_into_the_same_directory(self, tmp_path):
        cfg = PipelineConfig(
            size=16, frames=2, disk_radius=4.0, iters=5, align=False,
            levels=2, width=4, hidden=8, out_dir=str(tmp_path / "out"),
        )
        run_pipeline(cfg)
        report_a = (tmp_path / "out" / "report.txt").read_bytes()
        hdr_a = (tmp_path / "out" / "hdr_000.pfm").read_bytes()
        run_pipeline(cfg)
        assert (tmp_path / "out" / "report.txt").read_bytes() == report_a
        assert (tmp_path / "out" / "hdr_000.pfm").read_bytes() == hdr_a


class TestCli:
    def test_missing_config_file_exits_two(self, capsys):
        assert cli.main(["run", "-c", "/definitely/absent.cfg"]) == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_value_exits_two(self, capsys):
        assert cli.main(["synth", "--size", "abc"]) == 2

    def test_unknown_flag_exits_two(self):
        with pytest.raises(SystemExit) as err:
            cli.main(["synth", "--nonsense", "1"])
        assert err.value.code == 2

    def test_broken_ingest_exits_three(self, capsys, tmp_path):
        rc = cli.main(
            [
                "run",
                "--input_events", str(tmp_path / "no.txt"),
                "--input_mosaics", str(tmp_path / "no.pfm"),
                "--input_triggers", str(tmp_path / "no_t.txt"),
                "--out_dir", str(tmp_path / "out"),
            ]
        )
        assert rc == 3
        assert "ingest" in capsys.readouterr().err

    def test_synth_subcommand_writes_source_artifacts(self, tmp_path, capsys):
        rc = cli.main(
            [
                "synth", "--size", "16", "--frames", "2", "--disk_radius", "4",
                "--out_dir", str(tmp_path / "out"),
            ]
        )
        assert rc == 0
        for name in ("config.txt", "mosaic_000.pfm", "mosaic_001.txt",
                     "events.txt", "triggers.txt", "gt_000.pfm"):
            assert (tmp_path / "out" / name).exists(), name

    def test_run_subcommand_completes(self, tmp_path, capsys):
        rc = cli.main(
            [
                "run", "--size", "16", "--frames", "2", "--disk_radius", "4",
                "--iters", "2", "--align", "0", "--levels", "2", "--width", "4",
                "--hidden", "8", "--out_dir", str(tmp_path / "out"),
            ]
        )
        assert rc == 0
        text = capsys.readouterr().out
        assert "psnr" in text
        assert (tmp_path / "out" / "metrics.csv").exists()
        assert (tmp_path / "out" / "timings.txt").exists()

    def test_metrics_subcommand(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        a = rng.uniform(0, 1, (8, 8))
        pa, pb = tmp_path / "a.pfm", tmp_path / "b.pfm"
        fileio.write_pfm(pa, a)
        fileio.write_pfm(pb, a + 0.05)
        assert cli.main(["metrics", "--test", str(pa), "--ref", str(pb)]) == 0
        out = capsys.readouterr().out
        assert "psnr" in out and "ssim" in out and "entropy" in out
        assert cli.main(["metrics", "--test", str(pa), "--ref", str(pa), str(pb)]) == 2


class TestSmoke:
    def test_full_run_emits_every_artifact_quickly(self, tmp_path):
        import time

        t0 = time.perf_counter()
        rc = cli.main(
            [
                "run", "--size", "64", "--frames", "4", "--iters", "100",
                "--out_dir", str(tmp_path / "out"),
            ]
        )
        elapsed = time.perf_counter() - t0
        assert rc == 0
        assert elapsed < 60.0
        out = tmp_path / "out"
        expected = ["config.txt", "events.txt", "triggers.txt", "homography.txt",
                    "report.txt", "metrics.csv", "timings.txt"]
        for i in range(4):
            expected += [
                f"mosaic_{i:03d}.pfm", f"mosaic_{i:03d}.txt", f"gt_{i:03d}.pfm",
                f"preview_gt_{i:03d}.pgm", f"hdr_{i:03d}.pfm",
                f"preview_hdr_{i:03d}.pgm", f"w_exp_{i:03d}.pfm",
                f"w_evt_{i:03d}.pfm",
            ]
        for name in expected:
            assert (out / name).exists(), name
        report = (out / "report.txt").read_text()
        for section in ("# configuration", "# homography", "# reconstruction",
                        "# metrics"):
            assert section in report
        assert "psnr" in report
