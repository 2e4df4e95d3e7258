import json

import numpy as np
import pytest

from mesrnn.data import SynthSpec, synth_generate
from mesrnn.errors import ContractError, ShapeError
from mesrnn.evaluate import (
    PredictionResult,
    ade,
    average_row,
    evaluate_scenes,
    export,
    fde,
    leave_one_out,
    rollout,
    score_results,
    write_metrics_csv,
)
from mesrnn.model import ModelParams, init_params, param_spec, unroll
from mesrnn.stgraph import Scene, scene_from_positions
from mesrnn.training import NormStats, TrainConfig, train
from mesrnn.autodiff import Tape


def zero_params(variant):
    return ModelParams(variant, {n: np.zeros(s) for n, s in param_spec(variant)})


def make_scene(seed=0, n=3):
    (scene,) = synth_generate(
        SynthSpec(scenario="crossing", n_peds=n, n_scenes=1, seed=seed)
    )
    return scene


NORM = NormStats(-8.0, 8.0, -8.0, 8.0)


class TestRollout:
    def test_zero_params_freeze_last_position(self):
        scene = make_scene()
        res = rollout(zero_params("mesrnn"), scene, NORM)
        last_obs = scene.positions[:, 7]
        for k in range(12):
            assert np.abs(res.pred_world[:, k] - last_obs).max() < 1e-12

    def test_first_predicted_step_matches_teacher_forcing(self):
        scene = make_scene(1)
        params = init_params("mesrnn", 3)
        res = rollout(params, scene, NORM)
        truth_norm = NORM.apply(scene.positions)
        tape = Tape()
        bound = {n: tape.leaf(a) for n, a in params.tensors.items()}
        preds_tf = unroll(tape, bound, "mesrnn", truth_norm, 8, "teacher")
        assert np.array_equal(res.pred_norm[:, 0], preds_tf[8].data)

    def test_closed_loop_ignores_prediction_window_truth(self):
        scene = make_scene(2)
        params = init_params("mesrnn", 5)
        res1 = rollout(params, scene, NORM)
        corrupted = Scene(
            scene.frame_interval,
            scene.ped_ids,
            scene.positions.copy(),
            scene.presence,
        )
        corrupted.positions[:, 11] += 100.0  # t_obs + 3
        res2 = rollout(params, corrupted, NORM)
        assert np.array_equal(res1.pred_world, res2.pred_world)

    def test_short_scene_rejected(self):
        scene = scene_from_positions(np.zeros((1, 10, 2)))
        with pytest.raises(ContractError):
            rollout(zero_params("vlstm"), scene, NORM)

    def test_vlstm_rollout_neighbor_deletion_invariant(self):
        # no neighbor input exists; tolerance covers BLAS gemv/gemm
        # dispatch noise across batch sizes, about 1e-15
        scene = make_scene(3, n=3)
        params = init_params("vlstm", 1)
        full = rollout(params, scene, NORM)
        solo = Scene(
            scene.frame_interval, scene.ped_ids[:1],
            scene.positions[:1], scene.presence[:1],
        )
        alone = rollout(params, solo, NORM)
        assert np.abs(full.pred_world[0] - alone.pred_world[0]).max() < 1e-12

    def test_mesrnn_rollout_sensitive_to_close_neighbor(self):
        # a briefly trained model must react to deleting a nearby pedestrian
        scenes = synth_generate(
            SynthSpec(scenario="crossing", n_peds=3, n_scenes=6, seed=8)
        )
        cfg = TrainConfig(epochs=2, seed=0, dropout=0.0)
        result = train(cfg, scenes, "mesrnn")
        scene = make_scene(11, n=3)
        full = rollout(result.params, scene, result.norm)
        solo = Scene(
            scene.frame_interval, scene.ped_ids[:1],
            scene.positions[:1], scene.presence[:1],
        )
        alone = rollout(result.params, solo, result.norm)
        assert not np.array_equal(full.pred_world[0], alone.pred_world[0])


class TestMetrics:
    def test_perfect_zero(self):
        p = np.random.default_rng(0).normal(size=(3, 12, 2))
        assert ade(p, p) == 0.0 and fde(p, p) == 0.0

    def test_constant_offset_three_four_five(self):
        truth = np.zeros((2, 12, 2))
        pred = truth + np.array([0.3, 0.4])
        assert ade(pred, truth) == pytest.approx(0.5, abs=1e-15)
        assert fde(pred, truth) == pytest.approx(0.5, abs=1e-15)

    def test_final_step_only_offset(self):
        truth = np.zeros((1, 12, 2))
        pred = truth.copy()
        pred[0, -1, 1] = 1.0
        assert fde(pred, truth) == pytest.approx(1.0)
        assert ade(pred, truth) == pytest.approx(1.0 / 12.0)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            pred = rng.normal(size=(4, 12, 2))
            truth = rng.normal(size=(4, 12, 2))
            total = 0.0
            final = 0.0
            for p in range(4):
                for s in range(12):
                    d = np.sqrt(
                        (pred[p, s, 0] - truth[p, s, 0]) ** 2
                        + (pred[p, s, 1] - truth[p, s, 1]) ** 2
                    )
                    total += d
                    if s == 11:
                        final += d
            assert abs(ade(pred, truth) - total / 48) < 1e-12
            assert abs(fde(pred, truth) - final / 4) < 1e-12

    def test_rigid_translation_invariance(self):
        rng = np.random.default_rng(9)
        pred = rng.normal(size=(3, 12, 2))
        truth = rng.normal(size=(3, 12, 2))
        shift = np.array([11.5, -3.25])
        assert ade(pred + shift, truth + shift) == pytest.approx(ade(pred, truth), abs=1e-12)
        assert fde(pred + shift, truth + shift) == pytest.approx(fde(pred, truth), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ade(np.zeros((1, 12, 2)), np.zeros((1, 11, 2)))

    def test_score_never_reads_observed_steps(self):
        scene = make_scene(4)
        res = rollout(init_params("srnn", 1), scene, NORM)
        before = score_results([res], "x", "srnn", 0)
        res.scene.positions[:, :8] += 50.0  # corrupt observed period post-hoc
        after = score_results([res], "x", "srnn", 0)
        assert before == after


class TestLeaveOneOut:
    def splits(self):
        return {
            "alpha": synth_generate(SynthSpec("crossing", n_peds=2, n_scenes=4, seed=1)),
            "beta": synth_generate(SynthSpec("overtaking", n_peds=2, n_scenes=4, seed=2)),
        }

    def test_two_splits_three_rows_average(self):
        cfg = TrainConfig(epochs=1, seed=0, dropout=0.0)
        rows, trained = leave_one_out(self.splits(), cfg, "vlstm")
        assert [r.split for r in rows] == ["alpha", "beta", "average"]
        assert rows[2].ade_norm == pytest.approx((rows[0].ade_norm + rows[1].ade_norm) / 2)
        assert set(trained) == {"alpha", "beta"}

    def test_deterministic(self):
        cfg = TrainConfig(epochs=1, seed=4, dropout=0.0)
        r1, _ = leave_one_out(self.splits(), cfg, "vlstm")
        r2, _ = leave_one_out(self.splits(), cfg, "vlstm")
        assert r1 == r2

    def test_leakage_detected(self):
        shared = synth_generate(SynthSpec("crossing", n_peds=2, n_scenes=3, seed=5))
        cfg = TrainConfig(epochs=1, seed=0, dropout=0.0, val_frac=0.0)
        with pytest.raises(ContractError) as e:
            leave_one_out({"a": shared, "b": shared}, cfg, "vlstm")
        assert "leakage" in str(e.value)

    def test_needs_two_splits(self):
        with pytest.raises(ContractError):
            leave_one_out({"only": []}, TrainConfig(), "vlstm")


class TestExport:
    def result(self):
        scene = make_scene(6)
        return rollout(init_params("srnn", 2), scene, NORM)

    def rows(self):
        return [score_results([self.result()], "synth", "srnn", 0)]

    def test_csv(self, tmp_path):
        files = export([self.result()], self.rows(), "csv", tmp_path / "out")
        metrics = (tmp_path / "out" / "metrics.csv").read_text().splitlines()
        assert metrics[0] == (
            "split,variant,ade_norm,fde_norm,ade_world,fde_world,n_scenes,n_peds,seed"
        )
        assert len(metrics) == 2
        traj = (tmp_path / "out" / "trajectories.csv").read_text().splitlines()
        assert traj[0] == "scene,ped,step,role,x,y"
        roles = {line.split(",")[3] for line in traj[1:]}
        assert roles == {"obs", "truth", "pred"}
        assert len(files) == 2

    def test_json_round_trip_exact(self, tmp_path):
        res = self.result()
        export([res], self.rows(), "json", tmp_path / "out")
        payload = json.loads((tmp_path / "out" / "results.json").read_text())
        got = np.array(payload["scenes"][0]["pred_world"])
        assert np.array_equal(got, res.pred_world)
        assert payload["metrics"][0]["split"] == "synth"

    def test_empty_results_valid(self, tmp_path):
        files = export([], [], "csv", tmp_path / "out")
        assert (tmp_path / "out" / "metrics.csv").read_text().splitlines() == [
            "split,variant,ade_norm,fde_norm,ade_world,fde_world,n_scenes,n_peds,seed"
        ]
        export([], [], "json", tmp_path / "out2")
        assert json.loads((tmp_path / "out2" / "results.json").read_text()) == {
            "metrics": [],
            "scenes": [],
        }

    def test_svg_groups_per_pedestrian_per_role(self, tmp_path):
        res = self.result()
        files = export([res], self.rows(), "svg", tmp_path / "out")
        svg = (tmp_path / "out" / "scene_000.svg").read_text()
        assert svg.startswith("<svg")
        for ped in res.ped_ids:
            for role in ("obs", "truth", "pred"):
                assert f'class="ped-{ped} role-{role}"' in svg
        assert svg.count("<polyline") == 3 * len(res.ped_ids)

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ContractError):
            export([], [], "pdf", tmp_path / "x")


class TestEvaluateScenes:
    def test_worker_fanout_matches_serial(self):
        scenes = synth_generate(SynthSpec("crossing", n_peds=2, n_scenes=4, seed=3))
        params = init_params("srnn", 0)
        serial = evaluate_scenes(params, scenes, NORM, 8, 12, workers=1)
        parallel = evaluate_scenes(params, scenes, NORM, 8, 12, workers=3)
        for a, b in zip(serial, parallel):
            assert np.array_equal(a.pred_world, b.pred_world)
