"""Confidence-weighted margin Bradley-Terry reward learning.

For a pair where trajectory ``i`` outscored ``j`` by ``delta = y_i - y_j``:

    weight = delta * c_i * c_j
    margin = m0 + alpha_margin * delta
    loss   = weight * softplus(margin - (R_i - R_j))

with ``R`` the summed per-step reward, plus ``lam * mean(r^2)`` over the
steps of the trajectories touched by the batch.
"""
import csv
import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._random import substream
from .exceptions import ConfigError, InputError, NumericalError
from .rewardnet import Adam, RewardNetwork

logger = logging.getLogger(__name__)

SOFTPLUS_BRANCH = 30.0


@dataclass
class PrefTrainConfig:
    min_gap: int = 1
    max_pairs: int = None  # None -> 50 * number of trajectories
    partners_per_trajectory: int = 10
    m0: float = 0.0
    alpha_margin: float = 0.5
    lambda_reg: float = 1e-3
    lr: float = 1e-3
    batch_pairs: int = 128
    max_epochs: int = 12
    patience: int = 3
    val_frac: float = 0.1
    hidden: int = 128
    emb_dim: int = 8
    dropout: float = 0.2
    grad_clip_norm: float = 1.0
    precision: str = "float32"
    seed: int = 0

    def validate(self):
        if int(self.min_gap) < 1:
            raise ConfigError("min_gap must be an integer >= 1")
        if self.max_pairs is not None and int(self.max_pairs) < 1:
            raise ConfigError("max_pairs must be positive")
        for name in ("partners_per_trajectory", "batch_pairs", "max_epochs", "hidden"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        if not 0 < self.val_frac < 1:
            raise ConfigError("val_frac must lie in (0, 1)")
        if self.lr <= 0 or self.lambda_reg < 0 or self.alpha_margin < 0:
            raise ConfigError("lr must be positive; lambda_reg and alpha_margin non-negative")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be 'float32' or 'float64'")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown preference config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class PreferencePair:
    winner: int
    loser: int
    winner_id: str
    loser_id: str
    delta: float
    weight: float
    margin: float


def make_pair(cohort, i, j, cfg):
    a, b = cohort[i], cohort[j]
    delta = float(a.tqs - b.tqs)
    if delta <= 0:
        raise InputError(f"{a.id} does not outscore {b.id}")
    return PreferencePair(
        winner=i, loser=j, winner_id=a.id, loser_id=b.id, delta=delta,
        weight=delta * a.confidence * b.confidence,
        margin=cfg.m0 + cfg.alpha_margin * delta,
    )


def build_pairs(cohort, cfg, rng=None):
    """Sample preference pairs from the scored train trajectories.

    Indices in the returned pairs refer to positions in ``cohort``. Each
    trajectory is paired with up to ``partners_per_trajectory`` lower-scored
    partners (gap >= ``min_gap``) drawn uniformly; the pool is then
    subsampled to ``max_pairs``.
    """
    rng = rng if rng is not None else substream(cfg.seed, "pairs")
    eligible = [
        i for i, t in enumerate(cohort)
        if t.tqs > 0 and (t.split == "train" or not cohort.is_split)
    ]
    scores = np.array([cohort[i].tqs for i in eligible])
    pool = []
    for pos, i in enumerate(eligible):
        lower = np.flatnonzero(scores[pos] - scores >= cfg.min_gap)
        if lower.size == 0:
            continue
        k = min(cfg.partners_per_trajectory, lower.size)
        chosen = np.sort(rng.choice(lower, size=k, replace=False))
        pool.extend((i, eligible[j]) for j in chosen)
    if not pool:
        hist = {s: int(np.sum(scores == s)) for s in range(1, 6)}
        raise ConfigError(f"no valid preference pair (min_gap={cfg.min_gap}); train score histogram: {hist}")
    max_pairs = cfg.max_pairs if cfg.max_pairs is not None else 50 * len(cohort)
    if len(pool) > max_pairs:
        keep = np.sort(rng.choice(len(pool), size=int(max_pairs), replace=False))
        pool = [pool[k] for k in keep]
    return [make_pair(cohort, i, j, cfg) for i, j in pool]


def softplus(x):
    """log(1 + exp(x)) with linear / exponential branches beyond +-30."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    hi = x > SOFTPLUS_BRANCH
    lo = x < -SOFTPLUS_BRANCH
    mid = ~(hi | lo)
    out[hi] = x[hi]
    out[lo] = np.exp(x[lo])
    out[mid] = np.log1p(np.exp(x[mid]))
    return out if out.ndim else float(out)


def pair_loss_from_returns(r_winner, r_loser, weight, margin):
    return weight * softplus(margin - (r_winner - r_loser))


class _StepBank:
    """Standardized steps of a cohort stacked once, with per-trajectory row slices."""

    def __init__(self, cohort):
        states, iv, vaso, idx = cohort.stacked(standardized=True)
        self.states, self.iv, self.vaso = states, iv, vaso
        lengths = np.array([len(t) for t in cohort], dtype=int)
        self.starts = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(int)
        self.lengths = lengths

    def gather(self, traj_idx):
        rows = np.concatenate([np.arange(self.starts[k], self.starts[k] + self.lengths[k]) for k in traj_idx])
        seg = np.repeat(np.arange(len(traj_idx)), self.lengths[traj_idx])
        return rows, seg


def _pair_arrays(pairs):
    return (
        np.array([p.winner for p in pairs], dtype=int),
        np.array([p.loser for p in pairs], dtype=int),
        np.array([p.weight for p in pairs], dtype=float),
        np.array([p.margin for p in pairs], dtype=float),
    )


def objective(model, pairs, bank, lambda_reg, train=False, rng=None, need_grad=True):
    """Batch objective and (optionally) its parameter gradients.

    Returns ``(loss, grads, info)`` where ``info`` carries the pair-level
    returns used for accuracy bookkeeping.
    """
    if not pairs:
        raise InputError("empty pair batch")
    w_idx, l_idx, weight, margin = _pair_arrays(pairs)
    touched, inv = np.unique(np.concatenate([w_idx, l_idx]), return_inverse=True)
    rows, seg = bank.gather(touched)
    r, cache = model.forward(bank.states[rows], bank.iv[rows], bank.vaso[rows], train=train, rng=rng)
    returns = np.bincount(seg, weights=r, minlength=len(touched))
    P = len(pairs)
    rw, rl = returns[inv[:P]], returns[inv[P:]]
    arg = margin - (rw - rl)
    pair_losses = weight * softplus(arg)
    reg = float(np.mean(r * r))
    loss = float(np.mean(pair_losses)) + lambda_reg * reg
    info = {"r_winner": rw, "r_loser": rl, "pair_losses": pair_losses, "reg": reg}
    if not need_grad:
        return loss, None, info
    coef = weight * expit(arg) / P
    dR = np.zeros(len(touched))
    np.add.at(dR, inv[:P], -coef)
    np.add.at(dR, inv[P:], coef)
    dr = dR[seg] + lambda_reg * 2.0 * r / r.size
    return loss, model.backward(cache, dr), info


def pair_loss(model, pair, cohort, cfg=None):
    """Weighted margin loss of one pair (no regularizer), eval mode."""
    bank = _StepBank(cohort)
    loss, _, info = objective(model, [pair], bank, 0.0, need_grad=False)
    return float(info["pair_losses"][0])


def batch_loss(model, pairs, cohort, cfg):
    """Mean pair loss plus ``lambda_reg * mean(r^2)`` over touched steps, eval mode."""
    bank = _StepBank(cohort)
    loss, _, _ = objective(model, pairs, bank, cfg.lambda_reg, need_grad=False)
    return loss


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    best_epoch: int = None
    stopped_early: bool = False

    COLUMNS = ("epoch", "train_loss", "val_loss", "val_pair_accuracy")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"]] + [repr(float(r[c])) for c in self.COLUMNS[1:]])

    def __eq__(self, other):
        return isinstance(other, TrainLog) and self.rows == other.rows and self.best_epoch == other.best_epoch


def pair_accuracy(model, pairs, bank):
    _, _, info = objective(model, pairs, bank, 0.0, need_grad=False)
    return float(np.mean(info["r_winner"] > info["r_loser"]))


def train_reward(cohort, cfg):
    """Fit a RewardNetwork on pairs from the cohort's train split.

    Returns ``(model, TrainLog)`` where ``model`` is the checkpoint with the
    best validation loss.
    """
    cfg.validate()
    if cohort.scaler is None:
        raise ConfigError("cohort must be split and scaled before reward training")
    pairs = build_pairs(cohort, cfg)
    rng_pairs = substream(cfg.seed, "pair_split")
    order = rng_pairs.permutation(len(pairs))
    n_val = int(round(cfg.val_frac * len(pairs)))
    if len(pairs) < 2 or n_val == 0:
        logger.warning("only %d pairs; validating on the training pairs", len(pairs))
        train_pairs = val_pairs = pairs
    else:
        val_pairs = [pairs[k] for k in order[:n_val]]
        train_pairs = [pairs[k] for k in order[n_val:]]

    bank = _StepBank(cohort)
    model = RewardNetwork(cohort.n_features, cfg.hidden, cfg.emb_dim, cfg.dropout,
                          rng=substream(cfg.seed, "reward_init"), dtype=cfg.precision)
    opt = Adam(model.params, lr=cfg.lr, grad_clip_norm=cfg.grad_clip_norm)
    rng_shuffle = substream(cfg.seed, "pair_batches")
    rng_drop = substream(cfg.seed, "dropout")
    log = TrainLog()
    best_val, best_params, bad = np.inf, None, 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng_shuffle.permutation(len(train_pairs))
        total = 0.0
        for start in range(0, len(perm), cfg.batch_pairs):
            batch = [train_pairs[k] for k in perm[start:start + cfg.batch_pairs]]
            loss, grads, _ = objective(model, batch, bank, cfg.lambda_reg, train=True, rng=rng_drop)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite reward loss at epoch {epoch}, batch starting {start}")
            opt.step(model.params, grads)
            total += loss * len(batch)
        train_loss = total / len(train_pairs)
        val_loss, _, info = objective(model, val_pairs, bank, cfg.lambda_reg, need_grad=False)
        if not np.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        val_acc = float(np.mean(info["r_winner"] > info["r_loser"]))
        log.rows.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "val_pair_accuracy": val_acc})
        if val_loss < best_val:
            best_val, bad = val_loss, 0
            best_params = OrderedDict((k, v.copy()) for k, v in model.params.items())
            log.best_epoch = epoch
        else:
            bad += 1
            if bad > cfg.patience:
                log.stopped_early = True
                break
    model.params = best_params
    return model, log


@dataclass(frozen=True)
class NormalizationParams:
    lo: float
    hi: float
    scale_c: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise NumericalError(f"degenerate reward distribution: lo={self.lo} >= hi={self.hi}")
        if not self.scale_c > 0:
            raise NumericalError("tanh scale must be positive")

    @classmethod
    def from_rewards(cls, rewards):
        r = np.asarray(rewards, dtype=float).ravel()
        if r.size == 0 or not np.all(np.isfinite(r)):
            raise NumericalError("need finite rewards to fit normalization")
        lo, hi = np.percentile(r, [1, 99])
        return cls(float(lo), float(hi), float(max(abs(lo), abs(hi))))


def fit_normalization(model, cohort_train):
    """Percentile clip bounds and tanh scale from all per-step train rewards (eval mode)."""
    states, iv, vaso, _ = cohort_train.stacked(standardized=True)
    return NormalizationParams.from_rewards(model.predict(states, iv, vaso))


def normalize_reward(raw, p):
    """Clip to ``[lo, hi]`` then ``tanh(clipped / scale_c)``."""
    out = np.tanh(np.clip(raw, p.lo, p.hi) / p.scale_c)
    return float(out) if np.ndim(out) == 0 else out


class RewardNormalizer(TransformerMixin, BaseEstimator):
    """Percentile clip + tanh squashing as a transformer over raw reward arrays."""

    def __init__(self, lower_percentile=1.0, upper_percentile=99.0):
        self.lower_percentile = lower_percentile
        self.upper_percentile = upper_percentile

    def fit(self, X, y=None):
        r = np.asarray(X, dtype=float).ravel()
        lo, hi = np.percentile(r, [self.lower_percentile, self.upper_percentile])
        self.params_ = NormalizationParams(float(lo), float(hi), float(max(abs(lo), abs(hi))))
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return normalize_reward(np.asarray(X, dtype=float), self.params_)


class PreferenceRewardLearner(BaseEstimator):
    """Estimator wrapper: ``fit(cohort)`` trains the reward model and its normalization.

    Constructor arguments mirror :class:`PrefTrainConfig`.
    """

    def __init__(self, min_gap=1, max_pairs=None, partners_per_trajectory=10, m0=0.0, alpha_margin=0.5,
                 lambda_reg=1e-3, lr=1e-3, batch_pairs=128, max_epochs=12, patience=3, val_frac=0.1,
                 hidden=128, emb_dim=8, dropout=0.2, grad_clip_norm=1.0, precision="float32", seed=0):
        self.min_gap = min_gap
        self.max_pairs = max_pairs
        self.partners_per_trajectory = partners_per_trajectory
        self.m0 = m0
        self.alpha_margin = alpha_margin
        self.lambda_reg = lambda_reg
        self.lr = lr
        self.batch_pairs = batch_pairs
        self.max_epochs = max_epochs
        self.patience = patience
        self.val_frac = val_frac
        self.hidden = hidden
        self.emb_dim = emb_dim
        self.dropout = dropout
        self.grad_clip_norm = grad_clip_norm
        self.precision = precision
        self.seed = seed

    @property
    def config(self):
        return PrefTrainConfig(**self.get_params())

    def fit(self, cohort, y=None):
        self.network_, self.train_log_ = train_reward(cohort, self.config)
        self.scaler_ = cohort.scaler
        self.normalization_ = fit_normalization(self.network_, cohort.train() if cohort.is_split else cohort)
        self.n_features_in_ = cohort.n_features
        self.feature_names_in_ = np.asarray(cohort.feature_names, dtype=object)
        return self

    def predict(self, states, iv_bins, vaso_bins, normalized=True):
        """Per-step rewards for *raw* (unscaled) states."""
        check_is_fitted(self, "network_")
        r = self.network_.predict(self.scaler_.transform(states), iv_bins, vaso_bins)
        return normalize_reward(r, self.normalization_) if normalized else r

    def step_rewards(self, traj, normalized=True):
        return self.predict(traj.states, traj.iv_bins, traj.vaso_bins, normalized=normalized)

    def trajectory_scores(self, cohort, normalized=True, reduce="mean"):
        fn = np.mean if reduce == "mean" else np.sum
        return np.array([fn(self.step_rewards(t, normalized)) for t in cohort])

    def to_dict(self):
        check_is_fitted(self, "network_")
        n = self.normalization_
        return {
            "config": self.config.to_dict(),
            "network": self.network_.to_dict(),
            "scaler": self.scaler_.to_dict(),
            "normalization": {"lo": n.lo, "hi": n.hi, "scale_c": n.scale_c},
            "feature_names": list(self.feature_names_in_),
            "train_log": self.train_log_.rows,
        }

    @classmethod
    def from_dict(cls, d):
        from .cohort import FeatureScaler

        est = cls(**PrefTrainConfig.from_dict(d["config"]).to_dict())
        est.network_ = RewardNetwork.from_dict(d["network"])
        est.scaler_ = FeatureScaler.from_dict(d["scaler"])
        if est.scaler_.n_features_in_ != est.network_.n_features:
            raise InputError("scaler and network disagree on feature count")
        est.normalization_ = NormalizationParams(**d["normalization"])
        est.feature_names_in_ = np.asarray(d["feature_names"], dtype=object)
        est.n_features_in_ = est.network_.n_features
        est.train_log_ = TrainLog(rows=list(d.get("train_log", [])))
        return est
