import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abstract_goal.data import (
    SyntheticSpec, VideoSample, default_spec, generate, load_features, load_spec, sample_video,
    save_features, save_spec, split,
)
from abstract_goal.errors import FormatError, SamplingError, SpecError


def small_spec(**kw):
    return default_spec(n_goals=2, n_actions=4, d_f=3, **kw)


class TestSpec:
    def test_default_rows_stochastic(self):
        spec = default_spec()
        assert spec.transition.shape == (4, 8, 8)
        np.testing.assert_allclose(spec.transition.sum(axis=2), 1.0, atol=1e-12)
        assert (spec.d_f, spec.T, spec.steps_per_action, spec.noise_std) == (16, 6, 2, 0.3)

    def test_goals_disagree_on_successors(self):
        spec = default_spec()
        succ = spec.transition.argmax(axis=2)
        assert any(not np.array_equal(succ[0], succ[g]) for g in range(1, 4))

    def test_bad_row(self):
        spec = small_spec()
        t = spec.transition.copy()
        t[0, 0, 0] += 1e-6
        with pytest.raises(SpecError):
            SyntheticSpec(t, spec.action_centers, spec.goal_offsets)

    def test_bad_noise(self):
        spec = small_spec()
        with pytest.raises(SpecError):
            SyntheticSpec(spec.transition, spec.action_centers, spec.goal_offsets, noise_std=0.0)

    def test_round_trip(self, tmp_path):
        spec = small_spec()
        save_spec(spec, tmp_path / "s.json")
        back = load_spec(tmp_path / "s.json")
        assert np.array_equal(back.transition, spec.transition)
        assert np.array_equal(back.action_centers, spec.action_centers)

    def test_missing_field(self, tmp_path):
        (tmp_path / "s.json").write_text(json.dumps({"transition": [[[1.0]]]}))
        with pytest.raises(SpecError):
            load_spec(tmp_path / "s.json")


class TestGenerate:
    def test_deterministic(self):
        a, b = generate(small_spec(), 20, 3), generate(small_spec(), 20, 3)
        assert all(x.features.tobytes() == y.features.tobytes() and x.label == y.label for x, y in zip(a, b))

    def test_shapes_and_labels(self):
        spec = default_spec()
        for s in generate(spec, 50, 0):
            assert s.features.shape == (6, 16)
            assert 0 <= s.label < 8 and 0 <= s.goal_id < 4

    def test_noiseless_single_goal_is_deterministic(self):
        perm = np.array([2, 0, 3, 1])
        trans = np.eye(4)[perm][None]
        centers = np.eye(4) * 5.0
        spec = SyntheticSpec(trans, centers, np.zeros((1, 4)), noise_std=1e-12, steps_per_action=2, T=5, gap_steps=2)
        seen = {}
        for s in generate(spec, 200, 1):
            prefix = tuple(np.argmax(s.features, axis=1))
            assert seen.setdefault(prefix, s.label) == s.label
        # Two steps per action and a gap of two: the label is always the
        # successor of the last observed action, so this rule scores 100%.
        for s in generate(spec, 50, 2):
            assert s.label == perm[int(np.argmax(s.features[-1]))]

    def test_gap_extends_the_same_chain(self):
        spec = small_spec()
        _, steps1 = sample_video(spec, 7, 0)
        s3, steps3 = sample_video(spec.with_gap(3), 7, 0)
        assert np.array_equal(steps1, steps3[: len(steps1)])
        s1, _ = sample_video(spec, 7, 0)
        assert np.array_equal(s1.features, s3.features)
        assert s3.label == steps3[spec.T - 1 + 3]

    def test_transition_frequencies_monte_carlo(self):
        spec = default_spec()
        counts = np.zeros_like(spec.transition)
        spa = spec.steps_per_action
        for i in range(50_000):
            s, steps = sample_video(spec, i, 5)
            acts = steps[::spa]
            for a, b in zip(acts[:-1], acts[1:]):
                counts[s.goal_id, a, b] += 1
        freq = counts / counts.sum(axis=2, keepdims=True)
        assert np.max(np.abs(freq - spec.transition)) < 0.02


class TestFeatureFiles:
    def test_empty(self, tmp_path):
        (tmp_path / "e.jsonl").write_text("")
        assert load_features(tmp_path / "e.jsonl") == []

    def test_round_trip_bit_exact(self, tmp_path):
        samples = generate(small_spec(), 5, 0)
        save_features(samples, tmp_path / "d.jsonl")
        back = load_features(tmp_path / "d.jsonl")
        for a, b in zip(samples, back):
            assert a.features.tobytes() == b.features.tobytes()
            assert (a.id, a.label, a.goal_id) == (b.id, b.label, b.goal_id)

    def test_goal_id_optional(self, tmp_path):
        (tmp_path / "d.jsonl").write_text(json.dumps({"id": "a", "label": 1, "features": [[0.5, 1.0]]}) + "\n")
        (s,) = load_features(tmp_path / "d.jsonl")
        assert s.goal_id is None and s.features.shape == (1, 2)

    @pytest.mark.parametrize("bad", [
        "{not json",
        json.dumps({"id": "c", "label": 0, "features": [[1.0, 2.0], [3.0]]}),
        json.dumps({"id": "c", "label": 0, "features": [[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]}),
        json.dumps({"id": "c", "label": 0, "features": [[1.0, 2.0]]}),
        json.dumps({"id": "c", "label": -1, "features": [[1.0, 2.0], [3.0, 4.0]]}),
        json.dumps({"id": "c", "label": True, "features": [[1.0, 2.0], [3.0, 4.0]]}),
        json.dumps({"id": "c", "features": [[1.0, 2.0], [3.0, 4.0]]}),
    ])
    def test_error_names_line(self, tmp_path, bad):
        good = json.dumps({"id": "a", "label": 0, "features": [[1.0, 2.0], [3.0, 4.0]]})
        (tmp_path / "d.jsonl").write_text("\n".join([good, good, bad]) + "\n")
        with pytest.raises(FormatError, match="line 3"):
            load_features(tmp_path / "d.jsonl")


class TestSplit:
    def _samples(self, n):
        return [VideoSample(f"v{i}", np.zeros((1, 1)), 0) for i in range(n)]

    def test_all_train(self):
        parts = split(self._samples(10), (1.0, 0.0, 0.0), 0)
        assert len(parts.train) == 10 and not parts.val and not parts.test

    def test_same_seed_same_split(self):
        s = self._samples(30)
        a, b = split(s, seed=4), split(s, seed=4)
        assert [x.id for x in a.test] == [x.id for x in b.test]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(3, 200), st.integers(0, 1000))
    def test_partition_properties(self, n, seed):
        parts = split(self._samples(n), (0.7, 0.1, 0.2), seed)
        ids = [x.id for p in (parts.train, parts.val, parts.test) for x in p]
        assert sorted(ids) == sorted(f"v{i}" for i in range(n))
        assert len(set(ids)) == n
        for got, frac in ((parts.train, 0.7), (parts.val, 0.1), (parts.test, 0.2)):
            assert abs(len(got) - frac * n) <= 1

    def test_too_few(self):
        with pytest.raises(SamplingError):
            split(self._samples(2), (0.7, 0.1, 0.2))

    def test_bad_fractions(self):
        with pytest.raises(SpecError):
            split(self._samples(10), (0.5, 0.1, 0.1))
