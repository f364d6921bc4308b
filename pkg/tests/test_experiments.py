"""Tests for training runs, reconstruction, fantasies, and feature export."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from cibpnet.checkpoint import Checkpoint, read_checkpoint, write_checkpoint
from cibpnet.data_io import Dataset, load_pgm, mask_bottom_half, split
from cibpnet.experiments import (
    ReconstructionReport,
    RunConfig,
    bottom_feature_image,
    deep_unit_activation_image,
    export_feature_maps,
    fantasize,
    load_dataset,
    make_bars_dataset,
    reconstruct,
    train,
)
from cibpnet.mcmc import SweepConfig
from cibpnet.nlgbn import (
    LayerParams,
    NetworkStructure,
    PriorParams,
    UnitStates,
    clamp_unit,
    sigmoid,
    unit_log_density,
)
from cibpnet.prior import EdgeMatrix, HyperParameters


class TestRunConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            RunConfig(out_dir=".", sweeps=10, burn_in=10)
        with pytest.raises(ValueError):
            RunConfig(out_dir=".", thin=0)
        with pytest.raises(ValueError):
            RunConfig(out_dir=".", sweeps=0, burn_in=5)
        RunConfig(out_dir=".", sweeps=0, burn_in=0)


class TestBars:
    def test_values_and_shape(self):
        rng = np.random.default_rng(0)
        ds = make_bars_dataset(50, rng)
        assert ds.observations.shape == (50, 64)
        assert ds.image_shape == (8, 8)
        assert np.max(np.abs(ds.observations)) < 1.0

    def test_bars_are_visible(self):
        rng = np.random.default_rng(1)
        ds = make_bars_dataset(200, rng)
        imgs = ds.observations.reshape(200, 8, 8)
        # a lit row is near +0.8 across all columns
        row_means = imgs.mean(axis=2)
        assert (row_means > 0.5).any()
        assert (row_means < -0.5).any()


class TestTrain:
    def test_zero_sweeps_single_prior_checkpoint(self, tmp_path):
        rng = np.random.default_rng(2)
        ds = make_bars_dataset(5, rng)
        config = RunConfig(out_dir=tmp_path, sweeps=0, burn_in=0)
        paths = train(config, np.random.default_rng(3), dataset=ds)
        assert len(paths) == 1
        assert paths[0].name == "checkpoint_000000.txt"
        ck = read_checkpoint(paths[0])
        assert ck.structure.visible_width == 64
        assert (tmp_path / "run_status.txt").read_text() == "complete\n"

    def test_deterministic_checkpoints(self, tmp_path):
        rng = np.random.default_rng(4)
        ds = make_bars_dataset(8, rng)
        texts = []
        for sub in ("a", "b"):
            config = RunConfig(
                out_dir=tmp_path / sub, sweeps=12, burn_in=4, thin=4,
                sweep=SweepConfig(seed=11),
            )
            paths = train(config, np.random.default_rng(11), dataset=ds)
            texts.append([p.read_text() for p in paths])
        assert texts[0] == texts[1]
        assert len(texts[0]) == 2  # sweeps 8 and 12

    def test_progress_log_and_mean_written(self, tmp_path):
        rng = np.random.default_rng(5)
        ds = make_bars_dataset(6, rng)
        config = RunConfig(out_dir=tmp_path, sweeps=5, burn_in=2, thin=1)
        train(config, np.random.default_rng(6), dataset=ds)
        lines = (tmp_path / "progress.log").read_text().splitlines()
        assert len(lines) == 5
        assert lines[0].split("\t")[0] == "1"
        mean = np.array(
            [float(v) for v in (tmp_path / "train_pixel_mean.txt").read_text().split()]
        )
        np.testing.assert_allclose(mean, ds.observations.mean(axis=0), atol=1e-15)

    def test_failure_flagged(self, tmp_path, monkeypatch):
        rng = np.random.default_rng(7)
        ds = make_bars_dataset(4, rng)
        import cibpnet.experiments as exp

        calls = []

        def boom(*a, **kw):
            calls.append(1)
            if len(calls) >= 3:
                raise OSError("disk full")
            return _orig(*a, **kw)

        _orig = exp.write_checkpoint
        monkeypatch.setattr(exp, "write_checkpoint", boom)
        config = RunConfig(out_dir=tmp_path, sweeps=8, burn_in=0, thin=1)
        with pytest.raises(OSError):
            train(config, np.random.default_rng(8), dataset=ds)
        assert (tmp_path / "run_status.txt").read_text().startswith("failed")

    def test_latest_checkpoint_refreshed(self, tmp_path):
        rng = np.random.default_rng(9)
        ds = make_bars_dataset(4, rng)
        config = RunConfig(
            out_dir=tmp_path, sweeps=6, burn_in=5, thin=1, checkpoint_every=3
        )
        train(config, np.random.default_rng(10), dataset=ds)
        ck = read_checkpoint(tmp_path / "latest.txt")
        assert ck.states is not None


def zero_depth_checkpoint(width=4, bias=0.3, nu=2.0):
    structure = NetworkStructure(width, [])
    layers = [
        LayerParams(None, np.full(width, bias), np.full(width, nu), PriorParams())
    ]
    hypers = HyperParameters.constant(1.0, 1.0, 1)
    return Checkpoint(structure, layers, hypers, None)


class TestReconstruct:
    def test_all_observed_returns_input(self, tmp_path):
        rng = np.random.default_rng(11)
        obs = clamp_unit(rng.uniform(-0.8, 0.8, (5, 4)))
        ds = Dataset(obs, masks=np.ones((5, 4), dtype=bool))
        ck_path = tmp_path / "ck.txt"
        st = zero_depth_checkpoint()
        from cibpnet.checkpoint import serialize_state
        from cibpnet.nlgbn import ModelState

        ms = ModelState(
            st.structure, st.layers, UnitStates([obs.copy()]), ds, st.hypers
        )
        write_checkpoint(ck_path, ms, include_states=False)
        report, filled = reconstruct(
            [ck_path], ds, np.random.default_rng(12), np.zeros(4), burn=2, samples=2
        )
        np.testing.assert_array_equal(filled, obs)
        np.testing.assert_array_equal(report.model_mse, np.zeros(5))

    def test_zero_depth_predicts_prior_mean(self, tmp_path):
        bias, nu = 0.4, 2.5
        rng = np.random.default_rng(13)
        obs = clamp_unit(rng.uniform(-0.8, 0.8, (3, 4)))
        masks = np.ones((3, 4), dtype=bool)
        masks[:, 0] = False
        ds = Dataset(obs, masks=masks)
        from cibpnet.nlgbn import ModelState

        ck = zero_depth_checkpoint(width=4, bias=bias, nu=nu)
        ms = ModelState(ck.structure, ck.layers, UnitStates([obs.copy()]), ds, ck.hypers)
        p = tmp_path / "ck.txt"
        write_checkpoint(p, ms, include_states=False)
        report, filled = reconstruct(
            [p], ds, np.random.default_rng(14), np.zeros(4), burn=3, samples=5
        )
        want, _ = quad(
            lambda u: u * math.exp(float(unit_log_density(u, bias, nu))), -1, 1, limit=200
        )
        np.testing.assert_allclose(filled[:, 0], want, atol=1e-6)

    def test_width_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(15)
        ds = make_bars_dataset(3, rng)
        ds = mask_bottom_half(ds)
        ck = zero_depth_checkpoint(width=4)
        from cibpnet.nlgbn import ModelState

        obs = clamp_unit(rng.uniform(-0.5, 0.5, (1, 4)))
        ms = ModelState(
            ck.structure, ck.layers, UnitStates([obs]), Dataset(obs), ck.hypers
        )
        p = tmp_path / "ck.txt"
        write_checkpoint(p, ms, include_states=False)
        with pytest.raises(ValueError, match="width"):
            reconstruct([p], ds, np.random.default_rng(16), np.zeros(64))

    def test_requires_masks(self, tmp_path):
        rng = np.random.default_rng(17)
        ds = make_bars_dataset(2, rng)
        with pytest.raises(ValueError, match="masks"):
            reconstruct([tmp_path / "x"], ds, np.random.default_rng(18), np.zeros(64))

    def test_threads_deterministic_and_consistent(self, tmp_path):
        rng = np.random.default_rng(19)
        data = make_bars_dataset(12, rng)
        tr, te = split(data, 6, seed=1)
        te = mask_bottom_half(te)
        config = RunConfig(out_dir=tmp_path, sweeps=10, burn_in=5, thin=5, alpha0=1.5)
        paths = train(config, np.random.default_rng(20), dataset=tr)
        mean = tr.observations.mean(axis=0)
        outs = [
            reconstruct(
                paths, te, np.random.default_rng(21), mean, burn=5, samples=5,
                threads=t,
            )
            for t in (2, 2)
        ]
        np.testing.assert_array_equal(outs[0][1], outs[1][1])
        assert np.all(outs[0][0].model_mse >= 0)

    def test_baseline_is_recomputable_from_train_mean(self, tmp_path):
        rng = np.random.default_rng(22)
        data = make_bars_dataset(10, rng)
        tr, te = split(data, 6, seed=2)
        te = mask_bottom_half(te)
        config = RunConfig(out_dir=tmp_path, sweeps=6, burn_in=3, thin=3)
        paths = train(config, np.random.default_rng(23), dataset=tr)
        mean = tr.observations.mean(axis=0)
        report, _ = reconstruct(
            paths, te, np.random.default_rng(24), mean, burn=3, samples=3
        )
        missing = ~te.masks
        want = np.array(
            [
                np.mean((mean[miss] - row[miss]) ** 2)
                for row, miss in zip(te.observations, missing)
            ]
        )
        np.testing.assert_allclose(report.baseline_mse, want, atol=1e-12)

    def test_report_csv(self, tmp_path):
        report = ReconstructionReport(np.array([0.5]), np.array([1.0]), 3)
        p = tmp_path / "r.csv"
        report.write_csv(p)
        lines = p.read_text().splitlines()
        assert lines[0] == "image_index,model_mse,baseline_mse"
        assert lines[1].startswith("0,0.5")

    def test_negative_mse_rejected(self):
        with pytest.raises(ValueError):
            ReconstructionReport(np.array([-0.1]), np.array([0.0]), 1)


class TestFantasize:
    def test_count_zero_empty(self, tmp_path):
        assert fantasize([], 0, np.random.default_rng(0)).shape == (0, 0)

    def test_outputs_in_open_interval(self, tmp_path):
        rng = np.random.default_rng(25)
        ds = make_bars_dataset(5, rng)
        config = RunConfig(out_dir=tmp_path, sweeps=4, burn_in=1, thin=1)
        paths = train(config, np.random.default_rng(26), dataset=ds)
        out = fantasize(paths, 17, np.random.default_rng(27))
        assert out.shape == (17, 64)
        assert np.max(np.abs(out)) < 1.0


class TestFeatureMaps:
    def test_unit_with_no_edges_is_all_sentinel(self):
        z = np.array([[1, 0], [0, 0]], dtype=np.uint8)
        ck = Checkpoint(
            NetworkStructure(2, [EdgeMatrix(z)]),
            [
                LayerParams(None, np.zeros(2), np.ones(2), PriorParams()),
                LayerParams(np.array([[0.7, 0.0], [0.0, 0.0]]), np.zeros(2), np.ones(2), PriorParams()),
            ],
            HyperParameters.constant(1, 1, 2),
            None,
        )
        img = bottom_feature_image(ck, 1)
        assert np.array_equal(img, np.zeros(2, dtype=np.int64))

    def test_single_edge_unit_one_pixel(self):
        z = np.array([[1], [0], [0]], dtype=np.uint8)
        ck = Checkpoint(
            NetworkStructure(3, [EdgeMatrix(z)]),
            [
                LayerParams(None, np.zeros(3), np.ones(3), PriorParams()),
                LayerParams(np.array([[1.3], [0.0], [0.0]]), np.zeros(1), np.ones(1), PriorParams()),
            ],
            HyperParameters.constant(1, 1, 2),
            None,
        )
        img = bottom_feature_image(ck, 0)
        assert (img > 0).sum() == 1
        assert img[0] == 255  # full positive weight maps to white

    def test_deep_activation_matches_hand_chain(self):
        # three layers of single units: u2=1 -> u1 = sigmoid(b1 + w2) ->
        # u0 = sigmoid(b0 + w1 * u1)
        w1, w2 = 1.2, -0.7
        b0, b1 = 0.1, -0.4
        one = np.array([[1]], dtype=np.uint8)
        ck = Checkpoint(
            NetworkStructure(1, [EdgeMatrix(one), EdgeMatrix(one)]),
            [
                LayerParams(None, np.array([b0]), np.ones(1), PriorParams()),
                LayerParams(np.array([[w1]]), np.array([b1]), np.ones(1), PriorParams()),
                LayerParams(np.array([[w2]]), np.array([0.0]), np.ones(1), PriorParams()),
            ],
            HyperParameters.constant(1, 1, 3),
            None,
        )
        got = deep_unit_activation_image(ck, 2, 0)
        u1 = float(sigmoid(b1 + w2))
        want = float(sigmoid(b0 + w1 * u1))
        assert got[0] == pytest.approx(want, abs=1e-12)

    def test_export_writes_pgms(self, tmp_path):
        rng = np.random.default_rng(28)
        ds = make_bars_dataset(6, rng)
        config = RunConfig(out_dir=tmp_path / "run", sweeps=6, burn_in=3, thin=3, alpha0=2.0)
        paths = train(config, np.random.default_rng(29), dataset=ds)
        outs = export_feature_maps(paths[-1], (8, 8), tmp_path / "maps")
        ck = read_checkpoint(paths[-1])
        if ck.structure.depth >= 1:
            assert len(outs) >= ck.structure.width(1)
            img = load_pgm(outs[0])
            assert img.image_shape == (8, 8)


class TestLoadDataset:
    def test_dispatch_by_suffix_and_magic(self, tmp_path):
        rng = np.random.default_rng(30)
        ds = make_bars_dataset(3, rng)
        from cibpnet.data_io import save_csv

        p = tmp_path / "d.csv"
        save_csv(p, ds)
        back = load_dataset(p)
        np.testing.assert_array_equal(back.observations, ds.observations)
        from cibpnet.data_io import write_pgm

        p2 = tmp_path / "img.data"
        write_pgm(p2, ds.observations[0].reshape(8, 8))
        assert load_dataset(p2).image_shape == (8, 8)
