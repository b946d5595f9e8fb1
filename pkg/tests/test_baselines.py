import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from prefreward.baselines import (NEWS2_MAX, RandomPolicy, SofaLacCoeffs, mortality_reward, news2_reward,
                                  news2_score, random_policy, reward_trace, sofa_lac_reward)
from prefreward.cohort import FULL_FEATURES, Cohort
from prefreward.config import ExperimentConfig
from prefreward.exceptions import ConfigError, InputError
from prefreward.pipeline import reward_function

from conftest import make_traj

IDX = {n: i for i, n in enumerate(FULL_FEATURES)}
NORMAL = dict(rr=16, spo2=97, supplemental_o2=False, sbp=120, hr=70, temp=37.0, gcs=15)


def vitals_state(**kw):
    v = dict(resp_rate=16.0, spo2=97.0, sbp=120.0, hr=70.0, temperature=37.0, gcs=15.0, sofa=0.0, lactate=1.0)
    v.update(kw)
    s = np.zeros(len(FULL_FEATURES))
    for k, x in v.items():
        s[IDX[k]] = x
    return s


def traj_from_states(rows, died=False, vent=None, sofa_components=None):
    states = np.stack(rows)
    return make_traj("b", len(rows), states=states, died=died, vent=vent, sofa_components=sofa_components)


class TestMortality:
    def test_cases(self):
        t = make_traj(T=4)
        assert [mortality_reward(t, i) for i in range(4)] == [0, 0, 0, 15.0]
        assert mortality_reward(make_traj(T=4, died=True), 3) == -15.0
        assert mortality_reward(t, 3, R=2.5) == 2.5

    def test_out_of_range(self):
        with pytest.raises(InputError):
            mortality_reward(make_traj(T=2), 2)

    @given(st.integers(1, 30), st.booleans())
    def test_sparse(self, T, died):
        r = reward_trace(make_traj(T=T, died=died), "mortality")
        assert np.count_nonzero(r[:-1]) == 0 and abs(r[-1]) == 15


class TestSofaLac:
    def test_all_zero(self):
        t = traj_from_states([vitals_state(), vitals_state()], sofa_components=np.zeros((2, 6)))
        assert sofa_lac_reward(t, 0) == 0.0

    def test_sofa_rise(self):
        t = traj_from_states([vitals_state(sofa=3), vitals_state(sofa=5)])
        c = SofaLacCoeffs(c0=0.0, c1=-0.125, c2=0.0)
        assert sofa_lac_reward(t, 0, c) == pytest.approx(-0.25, abs=1e-15)

    def test_terminal(self):
        t = traj_from_states([vitals_state(), vitals_state()], sofa_components=np.zeros((2, 6)))
        assert sofa_lac_reward(t, 1) == 15.0
        t = traj_from_states([vitals_state(), vitals_state()], died=True, sofa_components=np.zeros((2, 6)))
        assert sofa_lac_reward(t, 1) == -15.0

    def test_full_formula(self):
        comps = np.array([[1, 0, 2, 0, 0, 3], [0, 0, 0, 0, 0, 0]])
        t = traj_from_states([vitals_state(sofa=6, lactate=2.0), vitals_state(sofa=4, lactate=3.5)],
                             sofa_components=comps)
        c = SofaLacCoeffs()
        expected = c.c0 * np.tanh(3) + c.c1 * (4 - 6) + c.c2 * np.tanh(1.5)
        assert sofa_lac_reward(t, 0, c) == pytest.approx(expected, abs=1e-14)

    def test_nonfinite_coeffs(self):
        with pytest.raises(ConfigError):
            SofaLacCoeffs(c0=np.nan)

    def test_missing_feature(self):
        t = make_traj(T=2, n_features=3)
        with pytest.raises(InputError, match="sofa"):
            sofa_lac_reward(t, 0, feature_names=("a", "b", "c"))

    def test_pipeline_warns_without_subscores(self, caplog):
        c = Cohort((traj_from_states([vitals_state(), vitals_state()]),), FULL_FEATURES)
        with caplog.at_level(logging.WARNING):
            reward_function("sofa_lac", ExperimentConfig(), c)
        assert "lack per-organ SOFA subscores" in caplog.text


# every band edge and the first value of the next band, with expected points
EDGES = {
    "rr": [(8, 3), (9, 1), (11, 1), (12, 0), (20, 0), (21, 2), (24, 2), (25, 3)],
    "spo2": [(91, 3), (92, 2), (93, 2), (94, 1), (95, 1), (96, 0)],
    "sbp": [(90, 3), (91, 2), (100, 2), (101, 1), (110, 1), (111, 0), (219, 0), (220, 3)],
    "hr": [(40, 3), (41, 1), (50, 1), (51, 0), (90, 0), (91, 1), (110, 1), (111, 2), (130, 2), (131, 3)],
    "temp": [(35.0, 3), (35.1, 1), (36.0, 1), (36.1, 0), (38.0, 0), (38.1, 1), (39.0, 1), (39.1, 2)],
    "gcs": [(3, 3), (14, 3), (15, 0)],
}
POS = {"rr": 0, "spo2": 1, "sbp": 3, "hr": 4, "temp": 5, "gcs": 6}


class TestNews2Score:
    def test_normal(self):
        c = news2_score(**NORMAL)
        assert c.as_tuple() == (0,) * 7 and c.total == 0

    def test_maximal(self):
        c = news2_score(rr=8, spo2=91, supplemental_o2=True, sbp=90, hr=40, temp=35.0, gcs=14)
        assert c.as_tuple() == (3, 3, 2, 3, 3, 3, 3) and c.total == NEWS2_MAX

    @pytest.mark.parametrize("var,value,points", [(k, v, p) for k, rows in EDGES.items() for v, p in rows])
    def test_edges(self, var, value, points):
        kw = dict(NORMAL, **{var: value})
        comps = news2_score(**kw).as_tuple()
        assert comps[POS[var]] == points
        assert sum(comps) == points

    def test_oxygen(self):
        assert news2_score(**dict(NORMAL, supplemental_o2=True)).as_tuple() == (0, 0, 2, 0, 0, 0, 0)

    def test_nonfinite(self):
        with pytest.raises(InputError):
            news2_score(**dict(NORMAL, hr=np.nan))

    @given(st.floats(0, 80), st.floats(50, 100), st.booleans(), st.floats(40, 300), st.floats(20, 250),
           st.floats(30, 43), st.floats(3, 15))
    def test_total_function(self, rr, spo2, o2, sbp, hr, temp, gcs):
        c = news2_score(rr, spo2, o2, sbp, hr, temp, gcs)
        assert 0 <= c.total <= NEWS2_MAX
        assert c.s_o2 in (0, 2) and c.s_cns in (0, 3)
        assert all(x in (0, 1, 2, 3) for x in c.as_tuple())

    @pytest.mark.parametrize("var,normal,direction", [("rr", 16, -1), ("rr", 16, 1), ("spo2", 97, -1),
                                                      ("sbp", 120, -1), ("sbp", 120, 1), ("hr", 70, -1),
                                                      ("hr", 70, 1), ("temp", 37.0, -1), ("temp", 37.0, 1)])
    def test_monotone_away_from_normal(self, var, normal, direction):
        prev = 0
        for k in range(1, 400):
            v = normal + direction * 0.25 * k
            s = news2_score(**dict(NORMAL, **{var: v})).as_tuple()[POS[var]]
            assert s >= prev
            prev = s


class TestNews2Reward:
    def test_normal_next_state(self):
        t = traj_from_states([vitals_state(), vitals_state(), vitals_state()])
        assert news2_reward(t, 0) == 0.0

    def test_maximal_next_state(self):
        bad = vitals_state(resp_rate=8, spo2=91, sbp=90, hr=40, temperature=35.0, gcs=14)
        t = traj_from_states([vitals_state(), bad, vitals_state()], vent=np.array([False, True, False]))
        assert news2_reward(t, 0) == -1.0

    def test_uses_next_state(self):
        t = traj_from_states([vitals_state(hr=150), vitals_state(), vitals_state()])
        assert news2_reward(t, 0) == 0.0
        t = traj_from_states([vitals_state(), vitals_state(hr=150), vitals_state()])
        assert news2_reward(t, 0) == -3 / 20

    def test_terminal(self):
        bad = vitals_state(resp_rate=8, hr=150)
        assert news2_reward(traj_from_states([vitals_state(), bad], died=True), 1) == -1.0
        assert news2_reward(traj_from_states([vitals_state(), bad]), 1) == 0.0

    def test_range_on_synthetic(self, small_cohort):
        for traj in small_cohort:
            r = reward_trace(traj, "news2", feature_names=small_cohort.feature_names)
            assert np.all((r[:-1] >= -1) & (r[:-1] <= 0))
            assert r[-1] == (-1.0 if traj.mortality else 0.0)

    def test_unknown_formulation(self):
        with pytest.raises(ConfigError):
            reward_trace(make_traj(), "lactate")


class TestRandomPolicy:
    def test_uniform(self):
        rng = np.random.default_rng(0)
        draws = np.array([random_policy(25, rng) for _ in range(100_000)])
        counts = np.bincount(draws, minlength=25)
        assert len(counts) == 25
        assert chisquare(counts).pvalue > 0.01

    def test_single_action(self):
        assert all(random_policy(1, i) == 0 for i in range(20))

    def test_seeded(self):
        a = [random_policy(25, np.random.default_rng(5)) for _ in range(3)]
        assert len(set(a)) == 1
        assert np.array_equal(RandomPolicy(seed=3).fit().predict(np.zeros((50, 2))),
                              RandomPolicy(seed=3).fit().predict(np.zeros((50, 2))))

    def test_invalid(self):
        with pytest.raises(InputError):
            random_policy(0)

    def test_estimator_batch(self):
        out = RandomPolicy(seed=0).predict(np.zeros((1000, 4)))
        assert out.shape == (1000,) and out.min() >= 0 and out.max() <= 24
