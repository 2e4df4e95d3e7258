import numpy as np
import pytest

from mesrnn.data import (
    SynthSpec,
    load_table,
    parse_synth_spec,
    save_table,
    scenes_to_table,
    synth_generate,
    window_scenes,
)
from mesrnn.errors import DataFormatError


def write(tmp_path, text, name="data.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadTable:
    def test_counting(self, tmp_path):
        path = write(
            tmp_path,
            "# comment\n"
            "0 1 0.0 0.0\n0 2 1.0 1.0\n"
            "10 1 0.5 0.0\n10 2 1.0 1.5\n"
            "\n"
            "20 1 1.0 0.0\n20 2 1.0 2.0\n",
        )
        table = load_table(path)
        assert table.n_records == 6

    def test_three_field_line_named(self, tmp_path):
        path = write(tmp_path, "0 1 0.0 0.0\n10 2 1.0\n")
        with pytest.raises(DataFormatError) as e:
            load_table(path)
        assert ":2:" in str(e.value)

    def test_non_uniform_spacing(self, tmp_path):
        path = write(tmp_path, "0 1 0 0\n10 1 0 0\n20 1 0 0\n40 1 0 0\n")
        with pytest.raises(DataFormatError) as e:
            load_table(path)
        assert "spacing" in str(e.value)

    def test_duplicate_record(self, tmp_path):
        path = write(tmp_path, "0 1 0 0\n0 1 2 2\n")
        with pytest.raises(DataFormatError) as e:
            load_table(path)
        assert "duplicate" in str(e.value)

    def test_non_integer_frame(self, tmp_path):
        path = write(tmp_path, "0.5 1 0 0\n")
        with pytest.raises(DataFormatError):
            load_table(path)

    def test_round_trip_identity(self, tmp_path):
        rng = np.random.default_rng(0)
        text = "".join(
            f"{f} {p} {rng.normal()} {rng.normal()}\n"
            for f in (0, 7, 14)
            for p in (3, 9)
        )
        p1 = write(tmp_path, text, "a.txt")
        t1 = load_table(p1)
        p2 = tmp_path / "b.txt"
        save_table(t1, p2)
        t2 = load_table(p2)
        assert np.array_equal(t1.frames, t2.frames)
        assert np.array_equal(t1.peds, t2.peds)
        assert np.array_equal(t1.xy, t2.xy)


def table_text(n_frames, peds, step=10):
    lines = []
    for k in range(n_frames):
        for p in peds:
            lines.append(f"{k * step} {p} {k * 0.1 + p} {p * 2.0}")
    return "\n".join(lines) + "\n"


class TestWindowScenes:
    def test_exactly_one_window(self, tmp_path):
        table = load_table(write(tmp_path, table_text(20, [1, 2])))
        scenes = window_scenes(table)
        assert len(scenes) == 1
        assert scenes[0].length == 20 and scenes[0].n_peds == 2

    def test_forty_frames_three_windows(self, tmp_path):
        table = load_table(write(tmp_path, table_text(40, [1])))
        scenes = window_scenes(table, stride=10)
        assert [s.start_frame for s in scenes] == [0, 100, 200]

    def test_partial_presence_excluded_in_train_mode(self, tmp_path):
        lines = [f"{k * 10} 1 {k * 0.1} 0.0" for k in range(20)]
        lines += [f"{k * 10} 2 {k * 0.2} 1.0" for k in range(10)]  # first half only
        table = load_table(write(tmp_path, "\n".join(lines) + "\n"))
        (scene,) = window_scenes(table, mode="train")
        assert scene.ped_ids == [1]

    def test_infer_mode_keeps_observed_presence(self, tmp_path):
        lines = [f"{k * 10} 1 {k * 0.1} 0.0" for k in range(20)]
        lines += [f"{k * 10} 2 {k * 0.2} 1.0" for k in range(10)]
        table = load_table(write(tmp_path, "\n".join(lines) + "\n"))
        (scene,) = window_scenes(table, mode="infer")
        assert scene.ped_ids == [1, 2]
        row2 = scene.ped_ids.index(2)
        assert scene.presence[row2, :8].all()
        assert not scene.presence[row2, 12:].any()

    def test_short_table_empty(self, tmp_path):
        table = load_table(write(tmp_path, table_text(10, [1])))
        assert window_scenes(table) == []


class TestSynth:
    def test_straight_lines_without_noise_or_repulsion(self):
        spec = SynthSpec(
            scenario="crossing", n_peds=2, noise=0.0, repulsion=0.0, seed=5
        )
        (scene,) = synth_generate(spec)
        pos = scene.positions
        for i in range(2):
            steps = np.diff(pos[i], axis=0)
            assert np.abs(steps - steps[0]).max() < 1e-12
        # perpendicular courses intersect mid-scene
        d0 = np.abs(np.diff(pos[0], axis=0)[0])
        d1 = np.abs(np.diff(pos[1], axis=0)[0])
        assert d0[1] == 0.0 and d1[0] == 0.0

    def test_deterministic_in_seed(self):
        spec = SynthSpec(scenario="overtaking", n_peds=4, n_scenes=3, seed=9)
        a = synth_generate(spec)
        b = synth_generate(spec)
        for s1, s2 in zip(a, b):
            assert np.array_equal(s1.positions, s2.positions)

    def test_repulsion_increases_minimum_distance(self):
        base = dict(scenario="crossing", n_peds=2, noise=0.0, seed=2)
        (off,) = synth_generate(SynthSpec(repulsion=0.0, **base))
        (on,) = synth_generate(SynthSpec(repulsion=0.08, **base))

        def min_dist(scene):
            d = scene.positions[0] - scene.positions[1]
            return np.linalg.norm(d, axis=-1).min()

        assert min_dist(on) > min_dist(off)

    def test_full_presence_twenty_steps(self):
        for scenario in ("crossing", "overtaking", "parallel_group", "stationary_mix"):
            scenes = synth_generate(SynthSpec(scenario=scenario, n_peds=5, seed=1))
            for s in scenes:
                assert s.length == 20
                assert s.presence.all()

    def test_stationary_mix_freezes_subset(self):
        (scene,) = synth_generate(
            SynthSpec(scenario="stationary_mix", n_peds=4, noise=0.0, repulsion=0.0, seed=3)
        )
        moved = np.linalg.norm(scene.positions[:, -1] - scene.positions[:, 0], axis=-1)
        assert (moved < 1e-9).sum() == 2

    def test_invalid_spec(self):
        with pytest.raises(DataFormatError):
            SynthSpec(scenario="warp").validate()
        with pytest.raises(DataFormatError):
            SynthSpec(n_peds=0).validate()
        with pytest.raises(DataFormatError):
            SynthSpec(speed_range=(0.5, 0.1)).validate()


class TestSynthSpecGrammar:
    def test_parse_full(self):
        spec = parse_synth_spec("crossing:n=4,scenes=50,seed=7,noise=0.02,repulsion=0.1")
        assert spec.scenario == "crossing"
        assert spec.n_peds == 4 and spec.n_scenes == 50 and spec.seed == 7
        assert spec.noise == 0.02 and spec.repulsion == 0.1

    def test_parse_speed_range(self):
        spec = parse_synth_spec("overtaking:speed_min=0.2,speed_max=0.9")
        assert spec.speed_range == (0.2, 0.9)

    def test_parse_name_only(self):
        assert parse_synth_spec("parallel_group").scenario == "parallel_group"

    def test_bad_entry(self):
        with pytest.raises(DataFormatError):
            parse_synth_spec("crossing:wat=1")
        with pytest.raises(DataFormatError):
            parse_synth_spec("crossing:n=x")


class TestScenesToTable:
    def test_round_trip_through_file(self, tmp_path):
        scenes = synth_generate(SynthSpec(scenario="crossing", n_peds=3, n_scenes=2, seed=4))
        table = scenes_to_table(scenes)
        path = tmp_path / "packed.txt"
        save_table(table, path)
        loaded = load_table(path)
        back = window_scenes(loaded, stride=20, mode="train")
        assert len(back) == 2
        for orig, rt in zip(scenes, back):
            assert np.abs(orig.positions - rt.positions).max() < 1e-15
