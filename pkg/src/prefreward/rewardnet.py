"""State + action-embedding MLP reward model with hand-written backprop.

Architecture: the state is concatenated with an 8-d embedding of the IV
fluid bin and an 8-d embedding of the vasopressor bin, then passed through
two ReLU layers (with inverted dropout) and a linear scalar head.
"""
import logging
from collections import OrderedDict

import numpy as np

from ._random import as_generator
from ._validation import check_bins, check_matrix
from .exceptions import InputError, StateError

logger = logging.getLogger(__name__)

N_BINS = 5


class RewardNetwork:
    """Parameters and forward/backward passes for ``r_theta(s, a)``.

    Parameters live in ``self.params`` (an ordered dict of arrays in ``dtype``):
    ``emb_iv`` (5, E), ``emb_vaso`` (5, E), ``W1`` (H, D + 2E), ``b1`` (H),
    ``W2`` (H, H), ``b2`` (H), ``W3`` (1, H), ``b3`` (1).
    """

    def __init__(self, n_features, hidden=128, emb_dim=8, dropout=0.2, rng=None, init="he", dtype=np.float64):
        if n_features < 1 or hidden < 1 or emb_dim < 0:
            raise InputError("n_features and hidden must be positive, emb_dim non-negative")
        if not 0 <= dropout < 1:
            raise InputError(f"dropout must lie in [0, 1), got {dropout}")
        self.n_features = int(n_features)
        self.hidden = int(hidden)
        self.emb_dim = int(emb_dim)
        self.dropout = float(dropout)
        self.dtype = np.dtype(dtype)
        H, E, D = self.hidden, self.emb_dim, self.n_features
        shapes = self.param_shapes(D, H, E)
        if init == "zeros":
            self.params = OrderedDict((k, np.zeros(s, dtype=self.dtype)) for k, s in shapes.items())
            return
        rng = as_generator(rng)
        p = OrderedDict()
        p["emb_iv"] = rng.uniform(-0.1, 0.1, size=shapes["emb_iv"])
        p["emb_vaso"] = rng.uniform(-0.1, 0.1, size=shapes["emb_vaso"])
        for w, b in (("W1", "b1"), ("W2", "b2"), ("W3", "b3")):
            fan_in = shapes[w][1]
            bound = np.sqrt(6.0 / fan_in)
            if w == "W3":
                bound = np.sqrt(3.0 / fan_in)
            p[w] = rng.uniform(-bound, bound, size=shapes[w])
            p[b] = np.zeros(shapes[b])
        self.params = OrderedDict((k, p[k].astype(self.dtype)) for k in shapes)

    @staticmethod
    def param_shapes(n_features, hidden=128, emb_dim=8):
        D, H, E = n_features, hidden, emb_dim
        return OrderedDict(
            emb_iv=(N_BINS, E), emb_vaso=(N_BINS, E),
            W1=(H, D + 2 * E), b1=(H,), W2=(H, H), b2=(H,), W3=(1, H), b3=(1,),
        )

    @staticmethod
    def n_parameters(n_features, hidden=128, emb_dim=8):
        D, H, E = n_features, hidden, emb_dim
        return 2 * N_BINS * E + H * (D + 2 * E) + H + H * H + H + H + 1

    def copy(self):
        other = object.__new__(RewardNetwork)
        other.__dict__.update(self.__dict__)
        other.params = OrderedDict((k, v.copy()) for k, v in self.params.items())
        return other

    def forward(self, states, iv_bins, vaso_bins, train=False, rng=None):
        """Per-step rewards for a batch of steps.

        Returns ``(rewards, cache)``; ``cache`` is what :meth:`backward` needs.
        Dropout is only applied when ``train`` is true, with inverted scaling
        so eval-mode output equals the train-mode expectation.
        """
        X = check_matrix(states, self.n_features, "states").astype(self.dtype, copy=False)
        n = X.shape[0]
        iv = check_bins(iv_bins, n, "iv_bins")
        vaso = check_bins(vaso_bins, n, "vaso_bins")
        p = self.params
        x = np.hstack([X, p["emb_iv"][iv], p["emb_vaso"][vaso]])
        z1 = x @ p["W1"].T + p["b1"]
        a1 = np.maximum(z1, 0.0)
        m1 = m2 = None
        if train and self.dropout > 0:
            rng = as_generator(rng)
            keep = 1.0 - self.dropout
            m1 = ((rng.random(a1.shape) < keep) / keep).astype(self.dtype)
            a1 = a1 * m1
        z2 = a1 @ p["W2"].T + p["b2"]
        a2 = np.maximum(z2, 0.0)
        if train and self.dropout > 0:
            m2 = ((rng.random(a2.shape) < keep) / keep).astype(self.dtype)
            a2 = a2 * m2
        r = a2 @ p["W3"][0] + p["b3"][0]
        cache = {"x": x, "z1": z1, "a1": a1, "m1": m1, "z2": z2, "a2": a2, "m2": m2, "iv": iv, "vaso": vaso}
        return r, cache

    def predict(self, states, iv_bins, vaso_bins):
        return self.forward(states, iv_bins, vaso_bins, train=False)[0]

    def backward(self, cache, grad_r):
        """Reverse-mode gradients of ``sum(grad_r * r)`` w.r.t. every parameter."""
        if cache is None or "x" not in cache:
            raise StateError("backward called without a recorded forward pass")
        g = np.asarray(grad_r, dtype=self.dtype).ravel()
        if g.shape[0] != cache["x"].shape[0]:
            raise InputError(f"upstream gradient has {g.shape[0]} entries, forward had {cache['x'].shape[0]}")
        p = self.params
        D, E = self.n_features, self.emb_dim
        grads = OrderedDict()
        grads["W3"] = (g @ cache["a2"])[None, :]
        grads["b3"] = np.array([g.sum()], dtype=self.dtype)
        da2 = np.outer(g, p["W3"][0])
        if cache["m2"] is not None:
            da2 = da2 * cache["m2"]
        dz2 = da2 * (cache["z2"] > 0)
        grads["W2"] = dz2.T @ cache["a1"]
        grads["b2"] = dz2.sum(axis=0)
        da1 = dz2 @ p["W2"]
        if cache["m1"] is not None:
            da1 = da1 * cache["m1"]
        dz1 = da1 * (cache["z1"] > 0)
        grads["W1"] = dz1.T @ cache["x"]
        grads["b1"] = dz1.sum(axis=0)
        dx = dz1 @ p["W1"]
        g_iv = np.zeros_like(p["emb_iv"])
        g_vaso = np.zeros_like(p["emb_vaso"])
        np.add.at(g_iv, cache["iv"], dx[:, D:D + E])
        np.add.at(g_vaso, cache["vaso"], dx[:, D + E:])
        grads["emb_iv"] = g_iv
        grads["emb_vaso"] = g_vaso
        return OrderedDict((k, grads[k]) for k in p)

    # serialization -------------------------------------------------------
    def to_dict(self):
        return {
            "n_features": self.n_features, "hidden": self.hidden, "emb_dim": self.emb_dim,
            "dropout": self.dropout, "dtype": self.dtype.name,
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
            "params": {k: v.ravel().tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d):
        net = cls(d["n_features"], d["hidden"], d["emb_dim"], d["dropout"], init="zeros",
                  dtype=d.get("dtype", "float64"))
        expected = cls.param_shapes(net.n_features, net.hidden, net.emb_dim)
        for k, shape in expected.items():
            stored = tuple(d["shapes"].get(k, ()))
            if stored != tuple(shape):
                raise InputError(f"checkpoint shape mismatch for {k}: {stored} != {tuple(shape)}")
            values = np.asarray(d["params"][k], dtype=float)
            if values.size != int(np.prod(shape)):
                raise InputError(f"checkpoint parameter {k} has {values.size} values, expected {np.prod(shape)}")
            net.params[k] = values.reshape(shape).astype(net.dtype)
        return net


def forward_step_reward(model, s, a, mode="eval", rng=None):
    """Scalar reward for a single standardized state and Action."""
    if mode not in ("train", "eval"):
        raise InputError(f"mode must be 'train' or 'eval', got {mode!r}")
    s = np.asarray(s, dtype=float)
    if s.ndim != 1 or s.shape[0] != model.n_features:
        raise InputError(f"state has shape {s.shape}, expected ({model.n_features},)")
    r, _ = model.forward(s[None, :], [a.iv_bin], [a.vaso_bin], train=mode == "train", rng=rng)
    return float(r[0])


def trajectory_return(model, traj, scaler=None):
    """Eval-mode return ``sum_t r(s_t, a_t)`` of one trajectory.

    ``traj`` may be a Trajectory (its raw states are passed through
    ``scaler`` when given) or a ``(states, iv_bins, vaso_bins)`` tuple of
    already-standardized inputs.
    """
    if isinstance(traj, tuple):
        states, iv, vaso = traj
    else:
        states, iv, vaso = traj.states, traj.iv_bins, traj.vaso_bins
        if scaler is not None:
            states = scaler.transform(states)
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[0] == 0:
        raise InputError("trajectory must contain at least one step")
    return float(np.sum(model.predict(states, iv, vaso)))


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


class Adam:
    """Adam with global-norm gradient clipping, operating in place on a params dict."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, grad_clip_norm=1.0):
        self.lr = float(lr)
        self.betas = tuple(betas)
        self.eps = float(eps)
        self.grad_clip_norm = grad_clip_norm
        self.m = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())
        self.v = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())
        self.t = 0
        self.skipped = 0

    def clip(self, grads):
        if self.grad_clip_norm is None:
            return grads
        norm = global_norm(grads)
        if norm > self.grad_clip_norm:
            scale = self.grad_clip_norm / norm
            return OrderedDict((k, g * scale) for k, g in grads.items())
        return grads

    def step(self, params, grads):
        """Apply one update. Returns False (and leaves params untouched) on non-finite gradients."""
        for k, g in grads.items():
            if g.shape != params[k].shape:
                raise InputError(f"gradient {k} has shape {g.shape}, parameter has {params[k].shape}")
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            self.skipped += 1
            logger.warning("non-finite gradient at step %d; update skipped", self.t + 1)
            return False
        grads = self.clip(grads)
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return True


def adam_step(model, grads, opt):
    """Functional wrapper: update ``model.params`` in place via ``opt``."""
    opt.step(model.params, grads)
    return model, opt
