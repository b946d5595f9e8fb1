import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from prefreward.cohort import Cohort
from prefreward.exceptions import InputError
from prefreward.offline_rl import (D3QNCQL, DuelingQNetwork, QModel, TransitionSet, build_transitions,
                                   greedy_action, huber, q_values, td_cql_loss, td_targets, train_policy)

from conftest import make_traj
from test_rewardnet import finite_difference_check


def toy_net():
    net = DuelingQNetwork(1, hidden=1, init="zeros")
    p = net.params
    p["W1"][:] = 1.0
    p["W2"][:] = 1.0
    p["Wv"][:] = 2.0
    p["bv"][:] = 0.5
    p["Wa"][:, 0] = np.arange(25) / 10.0
    return net


def random_model(D=3, H=6, seed=0, alpha=0.5, gamma=0.9):
    online = DuelingQNetwork(D, H, rng=seed)
    target = DuelingQNetwork(D, H, rng=seed + 100)
    return QModel(online, target, gamma=gamma, cql_alpha=alpha)


def random_batch(n=16, D=3, seed=1, dones=None):
    rng = np.random.default_rng(seed)
    return TransitionSet(rng.normal(size=(n, D)), rng.integers(0, 25, n), rng.normal(size=n),
                         rng.normal(size=(n, D)), rng.random(n) < 0.3 if dones is None else dones)


class TestNetwork:
    def test_zero_params(self):
        assert np.all(DuelingQNetwork(4, 8, init="zeros").predict(np.ones((3, 4))) == 0)

    def test_hand_toy(self):
        adv = np.arange(25) / 10.0
        # s = 1: both hidden units pass 1, V = 2.5
        assert np.allclose(toy_net().predict([[1.0]])[0], 2.5 + adv - adv.mean(), atol=1e-14)
        # s = -1: leaky slopes give h2 = 1e-4 * -1
        h2 = -1e-4
        expected = 2 * h2 + 0.5 + adv * h2 - (adv * h2).mean()
        assert np.allclose(toy_net().predict([[-1.0]])[0], expected, atol=1e-14)

    def test_toy_argmax(self):
        assert greedy_action(toy_net(), np.array([1.0])) == 24
        assert greedy_action(toy_net(), np.array([-1.0])) == 0

    @given(st.floats(-1e3, 1e3))
    @settings(max_examples=25)
    def test_advantage_shift_invariance(self, c):
        net = DuelingQNetwork(3, 5, rng=0)
        X = np.random.default_rng(1).normal(size=(7, 3))
        before = net.predict(X)
        net.params["ba"] += c
        assert np.max(np.abs(net.predict(X) - before)) < 1e-10
        assert np.array_equal(np.argmax(before, 1), np.argmax(net.predict(X), 1))

    def test_ties_lowest_index(self):
        net = DuelingQNetwork(2, 4, init="zeros")
        assert greedy_action(net, np.zeros(2)) == 0
        assert np.array_equal(greedy_action(net, np.zeros((3, 2))), [0, 0, 0])

    def test_checkpoint_roundtrip_and_mismatch(self):
        net = DuelingQNetwork(3, 5, rng=0)
        d = json.loads(json.dumps(net.to_dict()))
        assert np.array_equal(DuelingQNetwork.from_dict(d).predict(np.ones((2, 3))), net.predict(np.ones((2, 3))))
        d["shapes"]["Wa"] = [24, 5]
        with pytest.raises(InputError, match="shape mismatch"):
            DuelingQNetwork.from_dict(d)

    def test_wrong_input_width(self):
        with pytest.raises(Exception):
            DuelingQNetwork(3, 5, rng=0).predict(np.ones((2, 4)))


class TestLoss:
    def test_done_exact_target(self):
        net = DuelingQNetwork(1, 1, init="zeros")
        net.params["bv"][:] = 1.0
        model = QModel(net, net.copy(), cql_alpha=0.0)
        batch = TransitionSet([[0.3]], [7], [1.0], [[0.0]], [True])
        total, _, parts = td_cql_loss(model, batch)
        assert total == 0.0 and parts["td"] == 0.0

    def test_cql_equal_q(self):
        net = DuelingQNetwork(2, 3, init="zeros")
        net.params["bv"][:] = 0.7
        model = QModel(net, net.copy(), cql_alpha=0.5)
        batch = TransitionSet(np.ones((4, 2)), [0, 5, 9, 24], np.zeros(4), np.zeros((4, 2)), np.ones(4, bool))
        _, _, parts = td_cql_loss(model, batch, need_grad=False)
        assert parts["cql"] == pytest.approx(0.5 * math.log(25), abs=1e-12)
        assert parts["cql"] == pytest.approx(1.6094, abs=1e-4)

    def test_alpha_zero_pure_td(self):
        model = random_model(alpha=0.0)
        batch = random_batch()
        total, _, parts = td_cql_loss(model, batch, need_grad=False)
        q = model.online.predict(batch.states)[np.arange(16), batch.actions]
        assert parts["cql"] == 0.0
        assert total == pytest.approx(np.mean(huber(q - td_targets(model, batch))), abs=1e-14)

    def test_components_independent_oracle(self):
        model = random_model(alpha=0.5, gamma=0.9)
        batch = random_batch(n=10)
        qs = model.online.predict(batch.states)
        qn_on = model.online.predict(batch.next_states)
        qn_tg = model.target.predict(batch.next_states)
        td, cql = 0.0, 0.0
        for i in range(10):
            y = batch.rewards[i]
            if not batch.dones[i]:
                y += 0.9 * qn_tg[i, int(np.argmax(qn_on[i]))]
            e = qs[i, batch.actions[i]] - y
            td += 0.5 * e * e if abs(e) <= 1 else abs(e) - 0.5
            cql += logsumexp(qs[i]) - qs[i, batch.actions[i]]
        total, _, parts = td_cql_loss(model, batch, need_grad=False)
        assert parts["td"] == pytest.approx(td / 10, abs=1e-12)
        assert parts["cql"] == pytest.approx(0.5 * cql / 10, abs=1e-12)
        assert total == pytest.approx(parts["td"] + parts["cql"], abs=1e-14)

    def test_double_dqn_decoupling(self):
        model = random_model()
        batch = random_batch(dones=np.zeros(16, bool))
        y0 = td_targets(model, batch)
        a_sel = np.argmax(model.online.predict(batch.next_states), 1)
        swapped = QModel(model.online, DuelingQNetwork(3, 6, rng=55), gamma=model.gamma)
        y1 = td_targets(swapped, batch)
        assert not np.allclose(y0, y1)
        manual = batch.rewards + model.gamma * swapped.target.predict(batch.next_states)[np.arange(16), a_sel]
        assert np.allclose(y1, manual, atol=1e-14)
        # evaluating with online weights would give a different number
        online_eval = batch.rewards + model.gamma * model.online.predict(batch.next_states).max(1)
        assert not np.allclose(y1, online_eval)

    def test_empty_batch(self):
        with pytest.raises(InputError):
            td_cql_loss(random_model(), random_batch().take(np.array([], int)))

    @pytest.mark.parametrize("alpha", [0.0, 0.5, 2.0])
    def test_finite_differences(self, alpha):
        model = random_model(alpha=alpha)
        batch = random_batch(n=12)
        _, grads, _ = td_cql_loss(model, batch)
        f = lambda: td_cql_loss(model, batch, need_grad=False)[0]
        assert finite_difference_check(f, model.online.params, grads, np.random.default_rng(3), 120) < 1e-4

    def test_target_not_differentiated(self):
        model = random_model()
        _, grads, _ = td_cql_loss(model, random_batch())
        assert set(grads) == set(model.online.params)


class TestTransitions:
    def test_build(self, toy_feature_cohort):
        c = toy_feature_cohort
        tr = build_transitions(c, lambda t: np.arange(len(t), dtype=float))
        assert len(tr) == sum(len(t) for t in c)
        ends = np.cumsum([len(t) for t in c]) - 1
        assert np.array_equal(np.flatnonzero(tr.dones), ends)
        assert np.all(tr.next_states[tr.dones] == 0)
        first = c[0]
        s = c.standardized(first)
        assert np.allclose(tr.next_states[: len(first) - 1], s[1:])
        assert np.array_equal(tr.actions[: len(first)], first.joint_actions)

    def test_reward_shape_checked(self, toy_feature_cohort):
        with pytest.raises(InputError):
            build_transitions(toy_feature_cohort, lambda t: np.zeros(1))

    def test_invalid_columns(self):
        with pytest.raises(InputError):
            TransitionSet(np.zeros((2, 1)), [0, 25], [0, 0], np.zeros((2, 1)), [1, 1])
        with pytest.raises(InputError):
            TransitionSet(np.zeros((2, 1)), [0, 1], [0, np.nan], np.zeros((2, 1)), [1, 1])


def bandit(n=250, seed=0, actions=None):
    rng = np.random.default_rng(seed)
    a = rng.choice(np.arange(25) if actions is None else actions, size=n)
    return TransitionSet(np.zeros((n, 2)), a, (a == 3).astype(float), np.zeros((n, 2)), np.ones(n, bool))


class TestTraining:
    def test_trivial_mdp(self):
        est = D3QNCQL(hidden=16, gamma=0.0, lr=1e-2, batch_size=50, epochs=120, precision="float64").fit(bandit())
        assert est.predict(np.zeros((1, 2)))[0] == 3
        q = est.q_values(np.zeros(2))[0]
        assert q[3] - np.delete(q, 3).max() > 0.3

    def test_deterministic(self):
        a = D3QNCQL(hidden=8, epochs=3, batch_size=32, seed=4).fit(bandit())
        b = D3QNCQL(hidden=8, epochs=3, batch_size=32, seed=4).fit(bandit())
        assert a.log_.rows == b.log_.rows
        c = D3QNCQL(hidden=8, epochs=3, batch_size=32, seed=5).fit(bandit())
        assert a.log_.rows != c.log_.rows

    def test_target_sync_count(self):
        est = D3QNCQL(hidden=4, epochs=2, batch_size=50, target_sync_interval=3).fit(bandit())
        assert est.n_steps_ == 10

    def test_cql_conservatism(self):
        covered = np.array([0, 6, 12, 18, 24])
        rng = np.random.default_rng(0)
        n = 400
        s = rng.normal(size=(n, 3))
        tr = TransitionSet(s, rng.choice(covered, n), rng.normal(size=n), rng.normal(size=(n, 3)), rng.random(n) < 0.2)
        unc = np.setdiff1d(np.arange(25), covered)
        means = {}
        for alpha in (0.0, 0.5):
            est = D3QNCQL(hidden=16, epochs=15, batch_size=64, cql_alpha=alpha, target_sync_interval=50, seed=1).fit(tr)
            means[alpha] = est.q_values(s)[:, unc].mean()
        assert means[0.5] < means[0.0]

    def test_functional_form_and_log(self, tmp_path):
        model, log = train_policy(bandit(), epochs=2, seed=0, hidden=4)
        assert isinstance(model, QModel) and [r["epoch"] for r in log.rows] == [1, 2]
        log.to_csv(tmp_path / "l.csv")
        assert (tmp_path / "l.csv").read_text().splitlines()[0] == "epoch,loss,td_loss,cql_loss,mean_q_data"

    def test_estimator_checkpoint(self):
        est = D3QNCQL(hidden=4, epochs=1).fit(bandit())
        back = D3QNCQL.from_dict(json.loads(json.dumps(est.to_dict())))
        X = np.random.default_rng(0).normal(size=(5, 2))
        assert np.array_equal(back.q_values(X), est.q_values(X))
        assert back.get_params() == est.get_params()

    def test_checkpoint_feature_mismatch(self):
        d = D3QNCQL(hidden=4, epochs=1).fit(bandit()).to_dict()
        d["target"] = DuelingQNetwork(3, 4).to_dict()
        with pytest.raises(InputError):
            D3QNCQL.from_dict(d)

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            D3QNCQL().predict(np.zeros((1, 2)))

    def test_empty(self):
        with pytest.raises(InputError):
            D3QNCQL().fit(bandit().take(np.array([], int)))

    def test_q_values_helper(self):
        net = toy_net()
        assert q_values(net, np.array([1.0])).shape == (25,)
        assert q_values(QModel(net, net.copy()), np.ones((4, 1))).shape == (4, 25)
