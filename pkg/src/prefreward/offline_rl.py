"""Offline Dueling Double DQN with a conservative (CQL) penalty.

The penalty is the logsumexp form: ``alpha * mean(logsumexp_a Q(s, a) - Q(s, a_data))``.
TD targets use double-DQN decoupling: the online network picks the next
action, the target network evaluates it.
"""
import csv
import logging
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._random import as_generator, substream
from ._validation import check_matrix
from .cohort.types import N_ACTIONS
from .exceptions import InputError, NumericalError
from .rewardnet import Adam

logger = logging.getLogger(__name__)

LEAK = 0.01


def _leaky(z):
    return np.where(z > 0, z, LEAK * z)


class DuelingQNetwork:
    """Two leaky-ReLU layers feeding a scalar value head and a 25-way advantage head."""

    def __init__(self, n_features, hidden=128, n_actions=N_ACTIONS, rng=None, init="he", dtype=np.float64):
        self.n_features = int(n_features)
        self.hidden = int(hidden)
        self.n_actions = int(n_actions)
        self.dtype = np.dtype(dtype)
        shapes = self.param_shapes(self.n_features, self.hidden, self.n_actions)
        if init == "zeros":
            self.params = OrderedDict((k, np.zeros(s, dtype=self.dtype)) for k, s in shapes.items())
            return
        rng = as_generator(rng)
        params = OrderedDict()
        for k, s in shapes.items():
            if k.startswith("W"):
                bound = np.sqrt(6.0 / s[1]) if k in ("W1", "W2") else np.sqrt(1.0 / s[1])
                params[k] = rng.uniform(-bound, bound, size=s).astype(self.dtype)
            else:
                params[k] = np.zeros(s, dtype=self.dtype)
        self.params = params

    @staticmethod
    def param_shapes(n_features, hidden=128, n_actions=N_ACTIONS):
        H = hidden
        return OrderedDict(
            W1=(H, n_features), b1=(H,), W2=(H, H), b2=(H,),
            Wv=(1, H), bv=(1,), Wa=(n_actions, H), ba=(n_actions,),
        )

    def copy(self):
        other = object.__new__(DuelingQNetwork)
        other.__dict__.update(self.__dict__)
        other.params = OrderedDict((k, v.copy()) for k, v in self.params.items())
        return other

    def forward(self, states):
        X = check_matrix(states, self.n_features, "states").astype(self.dtype, copy=False)
        p = self.params
        z1 = X @ p["W1"].T + p["b1"]
        h1 = _leaky(z1)
        z2 = h1 @ p["W2"].T + p["b2"]
        h2 = _leaky(z2)
        v = h2 @ p["Wv"][0] + p["bv"][0]
        adv = h2 @ p["Wa"].T + p["ba"]
        q = v[:, None] + adv - adv.mean(axis=1, keepdims=True)
        return q, {"X": X, "z1": z1, "h1": h1, "z2": z2, "h2": h2}

    def predict(self, states):
        return self.forward(states)[0]

    def backward(self, cache, dq):
        dq = np.asarray(dq, dtype=self.dtype)
        p = self.params
        dv = dq.sum(axis=1)
        dadv = dq - dq.mean(axis=1, keepdims=True)
        g = OrderedDict()
        g["Wv"] = (dv @ cache["h2"])[None, :]
        g["bv"] = np.array([dv.sum()], dtype=self.dtype)
        g["Wa"] = dadv.T @ cache["h2"]
        g["ba"] = dadv.sum(axis=0)
        dh2 = np.outer(dv, p["Wv"][0]) + dadv @ p["Wa"]
        dz2 = dh2 * np.where(cache["z2"] > 0, 1.0, LEAK).astype(self.dtype)
        g["W2"] = dz2.T @ cache["h1"]
        g["b2"] = dz2.sum(axis=0)
        dh1 = dz2 @ p["W2"]
        dz1 = dh1 * np.where(cache["z1"] > 0, 1.0, LEAK).astype(self.dtype)
        g["W1"] = dz1.T @ cache["X"]
        g["b1"] = dz1.sum(axis=0)
        return OrderedDict((k, g[k]) for k in p)

    def to_dict(self):
        return {
            "n_features": self.n_features, "hidden": self.hidden, "n_actions": self.n_actions,
            "dtype": self.dtype.name,
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
            "params": {k: v.ravel().tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d):
        net = cls(d["n_features"], d["hidden"], d["n_actions"], init="zeros", dtype=d.get("dtype", "float64"))
        for k, shape in cls.param_shapes(net.n_features, net.hidden, net.n_actions).items():
            if tuple(d["shapes"].get(k, ())) != tuple(shape):
                raise InputError(f"checkpoint shape mismatch for {k}: {d['shapes'].get(k)} != {list(shape)}")
            values = np.asarray(d["params"][k], dtype=float)
            if values.size != int(np.prod(shape)):
                raise InputError(f"checkpoint parameter {k} has {values.size} values, expected {np.prod(shape)}")
            net.params[k] = values.reshape(shape).astype(net.dtype)
        return net


@dataclass
class QModel:
    online: DuelingQNetwork
    target: DuelingQNetwork
    gamma: float = 0.99
    cql_alpha: float = 0.5
    huber_delta: float = 1.0

    def sync_target(self):
        self.target = self.online.copy()


@dataclass
class TransitionSet:
    """Column-oriented transitions; terminal rows carry a zero ``next_states`` row."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    traj_index: np.ndarray = None

    def __post_init__(self):
        n = len(self.actions)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.dones = np.asarray(self.dones, dtype=bool)
        self.states = np.asarray(self.states, dtype=float)
        self.next_states = np.asarray(self.next_states, dtype=float)
        if self.traj_index is None:
            self.traj_index = np.zeros(n, dtype=np.int64)
        for name in ("states", "rewards", "next_states", "dones", "traj_index"):
            if len(getattr(self, name)) != n:
                raise InputError(f"transition column {name} has inconsistent length")
        if n and (self.actions.min() < 0 or self.actions.max() >= N_ACTIONS):
            raise InputError("joint actions must lie in 0..24")
        if not np.all(np.isfinite(self.rewards)):
            raise InputError("transition rewards must be finite")

    def __len__(self):
        return len(self.actions)

    def take(self, idx):
        return TransitionSet(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx],
                             self.dones[idx], self.traj_index[idx])


def build_transitions(cohort, reward_fn, trajectories=None):
    """One transition per step; the final step of each trajectory is terminal.

    ``reward_fn(traj)`` returns the per-step reward array for a trajectory.
    """
    trajs = cohort.trajectories if trajectories is None else trajectories
    S, A, R, S2, done, idx = [], [], [], [], [], []
    for k, traj in enumerate(trajs):
        s = cohort.standardized(traj)
        T = len(traj)
        r = np.asarray(reward_fn(traj), dtype=float)
        if r.shape != (T,):
            raise InputError(f"reward function returned shape {r.shape} for trajectory of length {T}")
        nxt = np.zeros_like(s)
        nxt[:-1] = s[1:]
        d = np.zeros(T, dtype=bool)
        d[-1] = True
        S.append(s)
        A.append(traj.joint_actions)
        R.append(r)
        S2.append(nxt)
        done.append(d)
        idx.append(np.full(T, k))
    return TransitionSet(np.vstack(S), np.concatenate(A), np.concatenate(R), np.vstack(S2),
                         np.concatenate(done), np.concatenate(idx))


def huber(x, delta=1.0):
    a = np.abs(x)
    return np.where(a <= delta, 0.5 * x * x, delta * (a - 0.5 * delta))


def huber_grad(x, delta=1.0):
    return np.clip(x, -delta, delta)


def td_targets(model, batch):
    """Double-DQN targets: online argmax at s', target-network evaluation."""
    q_next_online = model.online.predict(batch.next_states)
    a_next = np.argmax(q_next_online, axis=1)
    q_next_target = model.target.predict(batch.next_states)
    boot = q_next_target[np.arange(len(batch)), a_next]
    return batch.rewards + model.gamma * (~batch.dones) * boot


def td_cql_loss(model, batch, need_grad=True):
    """Huber TD loss plus the CQL penalty on one batch.

    Returns ``(total, grads, parts)`` with ``parts = {"td": ..., "cql": ...}``.
    Gradients flow only through ``Q_online(s, .)``.
    """
    n = len(batch)
    if n == 0:
        raise InputError("empty transition batch")
    y = td_targets(model, batch)
    q, cache = model.online.forward(batch.states)
    rows = np.arange(n)
    q_sa = q[rows, batch.actions]
    err = q_sa - y
    td = float(np.mean(huber(err, model.huber_delta)))
    cql = float(model.cql_alpha * np.mean(logsumexp(q, axis=1) - q_sa))
    total = td + cql
    parts = {"td": td, "cql": cql, "mean_q_data": float(np.mean(q_sa))}
    if not need_grad:
        return total, None, parts
    dq = model.cql_alpha * softmax(q, axis=1) / n
    dq[rows, batch.actions] += (huber_grad(err, model.huber_delta) - model.cql_alpha) / n
    return total, model.online.backward(cache, dq), parts


def q_values(model, s):
    """Dueling Q-values for one state (returns shape (25,)) or a batch."""
    net = model.online if isinstance(model, QModel) else model
    s = np.asarray(s, dtype=float)
    q = net.predict(s if s.ndim == 2 else s[None, :])
    return q if s.ndim == 2 else q[0]


def greedy_action(model, s):
    """Argmax action(s); ``np.argmax`` breaks ties toward the lowest index."""
    q = q_values(model, s)
    return np.argmax(q, axis=-1) if q.ndim == 2 else int(np.argmax(q))


@dataclass
class PolicyLog:
    rows: list

    COLUMNS = ("epoch", "loss", "td_loss", "cql_loss", "mean_q_data")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"]] + [repr(float(r[c])) for c in self.COLUMNS[1:]])


class D3QNCQL(BaseEstimator):
    """Offline Dueling Double DQN + CQL as an estimator.

    ``fit`` takes a :class:`TransitionSet` of standardized states; ``predict``
    returns greedy joint actions for standardized states.
    """

    def __init__(self, hidden=128, lr=1e-3, gamma=0.99, batch_size=256, cql_alpha=0.5,
                 target_sync_interval=1000, huber_delta=1.0, epochs=30, grad_clip_norm=10.0,
                 precision="float32", seed=0):
        self.hidden = hidden
        self.lr = lr
        self.gamma = gamma
        self.batch_size = batch_size
        self.cql_alpha = cql_alpha
        self.target_sync_interval = target_sync_interval
        self.huber_delta = huber_delta
        self.epochs = epochs
        self.grad_clip_norm = grad_clip_norm
        self.precision = precision
        self.seed = seed

    def fit(self, transitions, y=None):
        if len(transitions) == 0:
            raise InputError("no transitions to train on")
        if self.target_sync_interval < 1 or self.batch_size < 1 or self.epochs < 0:
            raise InputError("target_sync_interval and batch_size must be >= 1, epochs >= 0")
        D = transitions.states.shape[1]
        online = DuelingQNetwork(D, self.hidden, rng=substream(self.seed, "q_init"), dtype=self.precision)
        model = QModel(online, online.copy(), self.gamma, self.cql_alpha, self.huber_delta)
        opt = Adam(online.params, lr=self.lr, grad_clip_norm=self.grad_clip_norm)
        rng = substream(self.seed, "rl")
        n = len(transitions)
        step = 0
        rows = []
        for epoch in range(1, self.epochs + 1):
            perm = rng.permutation(n)
            tot = td_tot = cql_tot = 0.0
            for start in range(0, n, self.batch_size):
                batch = transitions.take(perm[start:start + self.batch_size])
                loss, grads, parts = td_cql_loss(model, batch)
                if not np.isfinite(loss):
                    raise NumericalError(f"non-finite TD/CQL loss at epoch {epoch}, step {step}")
                opt.step(online.params, grads)
                step += 1
                if step % self.target_sync_interval == 0:
                    model.sync_target()
                tot += loss * len(batch)
                td_tot += parts["td"] * len(batch)
                cql_tot += parts["cql"] * len(batch)
            q = online.predict(transitions.states)
            rows.append({
                "epoch": epoch, "loss": tot / n, "td_loss": td_tot / n, "cql_loss": cql_tot / n,
                "mean_q_data": float(np.mean(q[np.arange(n), transitions.actions])),
            })
        self.model_ = model
        self.log_ = PolicyLog(rows)
        self.n_features_in_ = D
        self.n_steps_ = step
        return self

    def q_values(self, states):
        check_is_fitted(self, "model_")
        return q_values(self.model_, np.atleast_2d(states))

    def predict(self, states):
        check_is_fitted(self, "model_")
        return greedy_action(self.model_, np.atleast_2d(states))

    def to_dict(self):
        check_is_fitted(self, "model_")
        return {
            "hyperparameters": self.get_params(),
            "online": self.model_.online.to_dict(),
            "target": self.model_.target.to_dict(),
            "log": self.log_.rows,
        }

    @classmethod
    def from_dict(cls, d):
        est = cls(**d["hyperparameters"])
        online = DuelingQNetwork.from_dict(d["online"])
        target = DuelingQNetwork.from_dict(d["target"])
        if online.n_features != target.n_features:
            raise InputError("online and target networks disagree on input size")
        est.model_ = QModel(online, target, est.gamma, est.cql_alpha, est.huber_delta)
        est.log_ = PolicyLog(list(d.get("log", [])))
        est.n_features_in_ = online.n_features
        return est


def train_policy(transitions, epochs=20, seed=0, **hyperparameters):
    """Functional form of :class:`D3QNCQL`; returns ``(QModel, PolicyLog)``."""
    est = D3QNCQL(epochs=epochs, seed=seed, **hyperparameters).fit(transitions)
    return est.model_, est.log_
