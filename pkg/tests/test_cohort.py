import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefreward.cohort import (FULL_FEATURES, IV_THRESHOLDS, REDUCED_FEATURES, VASO_THRESHOLDS, Action, Cohort,
                               SynthConfig, discretize_dose, discretize_doses, fit_split_and_scaler,
                               generate_synthetic_cohort, load_cohort, save_cohort, split_joint, joint_index)
from prefreward.cohort.io import dumps_cohort, load_schema, summary_rows, write_summary_csv
from prefreward.exceptions import ConfigError, DataValidationError, InputError

from conftest import make_traj


class TestDiscretize:
    def test_zero_dose(self):
        a = discretize_dose(0.0, 0.0)
        assert (a.iv_bin, a.vaso_bin, a.joint_index) == (0, 0, 0)

    def test_upper_inclusive(self):
        a = discretize_dose(213.33, 40.06)
        assert (a.iv_bin, a.vaso_bin, a.joint_index) == (2, 3, 13)

    def test_above_last_threshold(self):
        a = discretize_dose(521.0, 40.07)
        assert (a.iv_bin, a.vaso_bin, a.joint_index) == (4, 4, 24)

    @pytest.mark.parametrize("iv, vaso", [(-1.0, 0.0), (0.0, -0.1), (float("nan"), 0.0), (0.0, float("inf"))])
    def test_invalid_doses(self, iv, vaso):
        with pytest.raises(InputError):
            discretize_dose(iv, vaso)

    def test_smallest_positive_dose_is_bin_one(self):
        assert discretize_dose(1e-300, 5e-324) == Action(1, 1)

    @pytest.mark.parametrize("k", range(4))
    def test_each_threshold_edge(self, k):
        eps = 1e-9
        for thresholds, pick in ((IV_THRESHOLDS, lambda a: a.iv_bin), (VASO_THRESHOLDS, lambda a: a.vaso_bin)):
            t = thresholds[k]
            assert pick(_axis(thresholds, t)) == k
            assert pick(_axis(thresholds, t + eps)) == k + 1
            if t > 0:
                assert pick(_axis(thresholds, t - eps)) == k

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(0)
        iv = np.concatenate([rng.uniform(0, 700, 500), IV_THRESHOLDS])
        vaso = np.concatenate([rng.uniform(0, 60, 500), VASO_THRESHOLDS])
        bi, bv = discretize_doses(iv, vaso)
        for x, y, i, v in zip(iv, vaso, bi, bv):
            assert discretize_dose(x, y) == Action(int(i), int(v))

    @given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0, 1e3), st.floats(0, 1e3))
    def test_monotone(self, iv1, iv2, v1, v2):
        a = discretize_dose(min(iv1, iv2), min(v1, v2))
        b = discretize_dose(max(iv1, iv2), max(v1, v2))
        assert a.iv_bin <= b.iv_bin and a.vaso_bin <= b.vaso_bin


def _axis(thresholds, dose):
    """Discretize a dose on the axis that owns ``thresholds`` (other axis at zero)."""
    if thresholds is IV_THRESHOLDS:
        return discretize_dose(dose, 0.0)
    return discretize_dose(0.0, dose)


class TestAction:
    def test_joint_roundtrip(self):
        for j in range(25):
            a = Action.from_joint(j)
            assert a.joint_index == j == 5 * a.iv_bin + a.vaso_bin

    def test_out_of_range(self):
        with pytest.raises(DataValidationError):
            Action(5, 0)

    def test_vector_helpers(self):
        iv, vaso = split_joint(np.arange(25))
        assert np.array_equal(joint_index(iv, vaso), np.arange(25))


class TestTrajectory:
    def test_alive_must_be_monotone(self):
        with pytest.raises(DataValidationError, match="alive"):
            make_traj(T=3, alive=np.array([True, False, True]))

    def test_mortality_consistent_with_alive(self):
        with pytest.raises(DataValidationError, match="mortality"):
            make_traj(T=2, alive=np.array([True, False]), died=False)

    def test_unscorable_needs_zero_confidence(self):
        with pytest.raises(DataValidationError, match="confidence"):
            make_traj(tqs=0, confidence=0.4)
        make_traj(tqs=0, confidence=0.0)

    @pytest.mark.parametrize("tqs", [-1, 6, 2.5])
    def test_tqs_range(self, tqs):
        with pytest.raises(DataValidationError, match="tqs"):
            make_traj(tqs=tqs)

    def test_confidence_range(self):
        with pytest.raises(DataValidationError, match="confidence"):
            make_traj(confidence=1.3)

    def test_arrays_are_read_only(self):
        t = make_traj()
        with pytest.raises(ValueError):
            t.states[0, 0] = 1.0


class TestSynthetic:
    def test_deterministic(self):
        a = generate_synthetic_cohort(SynthConfig(n=100), seed=7)
        b = generate_synthetic_cohort(SynthConfig(n=100), seed=7)
        assert dumps_cohort(a) == dumps_cohort(b)

    def test_seed_changes_output(self):
        a = generate_synthetic_cohort(SynthConfig(n=20), seed=1)
        b = generate_synthetic_cohort(SynthConfig(n=20), seed=2)
        assert dumps_cohort(a) != dumps_cohort(b)

    @pytest.mark.parametrize("n", [0, 1])
    def test_too_small(self, n):
        with pytest.raises(ConfigError):
            generate_synthetic_cohort(SynthConfig(n=n), seed=0)

    def test_reduced_features(self):
        c = generate_synthetic_cohort(SynthConfig(n=10, reduced_features=True), seed=0)
        assert c.feature_names == REDUCED_FEATURES and c.n_features == 44
        assert all("elixhauser" not in t.covariates for t in c)

    def test_full_feature_count(self, small_cohort):
        assert small_cohort.n_features == len(FULL_FEATURES) == 48
        assert all(1 <= len(t) <= 18 for t in small_cohort)

    def test_calibration_at_desk_scale(self):
        from scipy.stats import spearmanr

        c = generate_synthetic_cohort(SynthConfig(n=2000), seed=0)
        q = np.array([t.quality for t in c])
        tqs = np.array([t.tqs for t in c])
        assert spearmanr(q, tqs)[0] >= 0.9
        mortality = np.mean([t.mortality for t in c])
        assert 0.10 <= mortality <= 0.20
        counts = np.bincount(tqs, minlength=6)[1:]
        assert counts[3] + counts[4] > counts[:3].sum()


class TestSplitAndScaler:
    def test_split_sizes(self):
        c = Cohort(tuple(make_traj(f"t{i}") for i in range(10)), FULL_FEATURES)
        s = fit_split_and_scaler(c, 0.8, seed=0)
        assert len(s.train()) == 8 and len(s.test()) == 2

    def test_same_seed_same_split(self, small_cohort):
        again = fit_split_and_scaler(Cohort(small_cohort.trajectories, small_cohort.feature_names), 0.8, seed=3)
        assert [t.split for t in again] == [t.split for t in small_cohort]

    def test_constant_feature(self):
        rng = np.random.default_rng(0)
        trajs = []
        for i in range(6):
            s = rng.normal(size=(3, 2))
            s[:, 1] = 4.0
            trajs.append(make_traj(f"t{i}", 3, states=s, n_features=2))
        with warnings.catch_warnings(record=True):
            warnings.simplefilter("always")
            c = fit_split_and_scaler(Cohort(tuple(trajs), ("a", "b")), 0.5, seed=0)
        z = np.vstack([c.standardized(t) for t in c])
        assert np.all(z[:, 1] == 0.0) and np.all(np.isfinite(z))

    def test_train_states_standardized(self, small_cohort):
        z = np.vstack([small_cohort.standardized(t) for t in small_cohort.train()])
        assert np.allclose(z.mean(axis=0), 0, atol=1e-6)
        sd = z.std(axis=0)
        assert np.allclose(sd[sd > 0], 1, atol=1e-6)

    def test_bad_fraction(self, small_cohort):
        with pytest.raises(DataValidationError):
            fit_split_and_scaler(small_cohort, 1.0)


class TestIO:
    def test_roundtrip(self, small_cohort, tmp_path):
        p = tmp_path / "c.jsonl"
        save_cohort(small_cohort, p)
        back = load_cohort(p)
        assert back == small_cohort
        a = np.vstack([small_cohort.standardized(t) for t in small_cohort])
        b = np.vstack([back.standardized(t) for t in back])
        assert np.allclose(a, b)

    def test_three_records(self, tmp_path):
        c = Cohort(tuple(make_traj(f"t{i}") for i in range(3)), FULL_FEATURES)
        save_cohort(c, tmp_path / "c.jsonl")
        assert len(load_cohort(tmp_path / "c.jsonl")) == 3

    def _write(self, tmp_path, mutate):
        c = Cohort((make_traj("a"), make_traj("b")), FULL_FEATURES)
        lines = dumps_cohort(c).splitlines()
        rec = json.loads(lines[2])
        mutate(rec)
        lines[2] = json.dumps(rec)
        p = tmp_path / "bad.jsonl"
        p.write_text("\n".join(lines) + "\n")
        return p

    def test_confidence_violation_names_field_and_line(self, tmp_path):
        p = self._write(tmp_path, lambda r: r.__setitem__("confidence", 1.3))
        with pytest.raises(DataValidationError, match="confidence") as e:
            load_cohort(p)
        assert e.value.line == 3

    def test_tqs_out_of_range(self, tmp_path):
        p = self._write(tmp_path, lambda r: r.__setitem__("tqs", 7))
        with pytest.raises(DataValidationError, match="tqs"):
            load_cohort(p)

    def test_missing_field(self, tmp_path):
        p = self._write(tmp_path, lambda r: r.pop("iv_bins"))
        with pytest.raises(DataValidationError, match="iv_bins"):
            load_cohort(p)

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "x.jsonl"
        p.write_text("{not json\n")
        with pytest.raises(DataValidationError) as e:
            load_cohort(p)
        assert e.value.line == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataValidationError, match="not found"):
            load_cohort(tmp_path / "nope.jsonl")

    def test_schema_ships(self):
        schema = load_schema()
        assert {"id", "states", "tqs", "confidence"} <= set(schema["required"])

    def test_summary_csv(self, small_cohort, tmp_path):
        rows = summary_rows(small_cohort)
        assert [r["split"] for r in rows] == ["all", "train", "test"]
        assert rows[0]["n"] == 80
        write_summary_csv(small_cohort, tmp_path / "s.csv")
        assert (tmp_path / "s.csv").read_text().startswith("split,n,")
