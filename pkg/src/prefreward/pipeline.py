"""Stage implementations, run-directory layout and the reproduction manifest.

Each stage reads the persisted artifacts of the previous one, so any stage
can be rerun on its own. Output files contain no timestamps or absolute
paths; two runs with the same config and seed are byte-identical.
"""
import csv
import hashlib
import json
import logging
import math
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from scipy.special import expit
from threadpoolctl import threadpool_limits

from .baselines import BASELINE_REWARDS, RandomPolicy, reward_trace
from .checkpoint import load_checkpoint, save_checkpoint
from .cohort import (COVARIATES, FeatureScaler, fit_split_and_scaler, generate_synthetic_cohort, load_cohort,
                     save_cohort, write_summary_csv)
from .config import dump_config
from .evaluation import (DistanceSummary, ForestConfig, action_heatmap, cohens_d,
                         correlation_matrix, heatmap_rows, logistic_fit, ols_hc3, permutation_importance,
                         policy_actions, spearman)
from .cohort.types import split_joint
from .exceptions import InputError, NumericalError, PrefRewardError
from .offline_rl import D3QNCQL, build_transitions
from .outcomes import compute_outcomes, outcome_array, read_outcomes_csv, write_outcomes_csv
from .preference import PreferenceRewardLearner

logger = logging.getLogger(__name__)

CNPR = "cnpr"
REWARD_SOURCES = (CNPR,) + BASELINE_REWARDS
POLICIES = REWARD_SOURCES + ("random",)
LINEAR_OUTCOMES = ("osfd7", "tsr_hours", "iv_burden", "vaso_burden", "discharge_score")
OUTCOMES = LINEAR_OUTCOMES + ("mortality",)
CQL_VARIANT = "logsumexp_a Q(s,a) - Q(s,a_data)"
MANIFEST = "manifest.json"
FAILED = "FAILED"


class Layout:
    """Default artifact paths inside a run directory."""

    def __init__(self, root):
        self.root = Path(root)

    config = property(lambda s: s.root / "config.resolved.yaml")
    cohort = property(lambda s: s.root / "cohort.jsonl")
    cohort_summary = property(lambda s: s.root / "cohort_summary.csv")
    reward_model = property(lambda s: s.root / "reward" / "reward_model.json")
    reward_log = property(lambda s: s.root / "reward" / "train_log.csv")
    step_rewards = property(lambda s: s.root / "rewards" / "step_rewards.csv")
    outcomes = property(lambda s: s.root / "outcomes" / "outcomes.csv")
    evaluation = property(lambda s: s.root / "evaluation")
    report = property(lambda s: s.root / "report.md")
    manifest = property(lambda s: s.root / MANIFEST)
    failed = property(lambda s: s.root / FAILED)

    def policy(self, name):
        return self.root / "policies" / f"{name}.json"

    def policy_log(self, name):
        return self.root / "policies" / f"{name}_log.csv"


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Content hashes of every file a stage read or wrote, keyed by run-relative path."""

    def __init__(self, root):
        self.root = Path(root)
        self.path = self.root / MANIFEST
        if self.path.exists():
            self.data = json.loads(self.path.read_text())
        else:
            self.data = {"format_version": 1, "status": "incomplete", "files": {}, "stages": {}}

    def rel(self, path):
        path = Path(path).resolve()
        try:
            return path.relative_to(self.root.resolve()).as_posix()
        except ValueError:
            return path.as_posix()

    def check_inputs(self, paths):
        """Warn for inputs whose content no longer matches the recorded hash. Returns stale names."""
        stale = []
        for p in paths:
            key = self.rel(p)
            recorded = self.data["files"].get(key)
            if recorded is not None and Path(p).exists() and sha256_file(p) != recorded:
                logger.warning("stale input: %s changed since it was recorded in the manifest", key)
                stale.append(key)
        return stale

    def record(self, stage, inputs, outputs):
        entry = {"inputs": {}, "outputs": {}}
        for kind, paths in (("inputs", inputs), ("outputs", outputs)):
            for p in paths:
                key = self.rel(p)
                digest = sha256_file(p)
                entry[kind][key] = digest
                if kind == "outputs":
                    self.data["files"][key] = digest
        self.data["stages"][stage] = entry
        self.save()

    def set_status(self, status, stage=None, message=None):
        self.data["status"] = status
        self.data.pop("failure", None)
        if status == "failed":
            self.data["failure"] = {"stage": stage, "message": message}
        self.save()

    def save(self):
        self.root.mkdir(parents=True, exist_ok=True)
        doc = dict(self.data)
        doc["files"] = dict(sorted(doc["files"].items()))
        doc["stages"] = dict(sorted(doc["stages"].items()))
        self.path.write_text(json.dumps(doc, indent=2) + "\n")


class StageFailure(Exception):
    def __init__(self, stage, error):
        self.stage = stage
        self.error = error
        self.exit_code = getattr(error, "exit_code", 1)
        super().__init__(f"stage {stage} failed: {error}")


@contextmanager
def stage(name, root):
    """Run a stage; on error write the FAILED marker and re-raise as StageFailure."""
    root = Path(root)
    try:
        yield
    except StageFailure:
        raise
    except Exception as e:
        root.mkdir(parents=True, exist_ok=True)
        code = getattr(e, "exit_code", 1)
        (root / FAILED).write_text(f"stage: {name}\nexit_code: {code}\nerror: {type(e).__name__}: {e}\n")
        Manifest(root).set_status("failed", name, f"{type(e).__name__}: {e}")
        if not isinstance(e, PrefRewardError):
            logger.exception("unexpected error in stage %s", name)
        raise StageFailure(name, e) from e


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return "" if v is None else v


def write_csv(path, header, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            values = [r[h] for h in header] if isinstance(r, dict) else r
            w.writerow([_fmt(v) for v in values])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- stages
def run_generate(cfg, out=None):
    """Generate (or load) the cohort, assign the train/test split and fit the scaler."""
    lay = Layout(cfg.output_dir)
    out = Path(out) if out else lay.cohort
    out.parent.mkdir(parents=True, exist_ok=True)
    inputs = []
    if cfg.cohort_source == "synthetic":
        cohort = generate_synthetic_cohort(cfg.synthetic, seed=cfg.seed)
    else:
        cohort = load_cohort(cfg.cohort_source)
        inputs.append(cfg.cohort_source)
    if not cohort.is_split:
        cohort = fit_split_and_scaler(cohort, cfg.train_frac, seed=cfg.seed)
    save_cohort(cohort, out)
    summary = out.parent / (out.stem + "_summary.csv") if out != lay.cohort else lay.cohort_summary
    write_summary_csv(cohort, summary)
    Manifest(lay.root).record("generate", inputs, [out, summary])
    return cohort


def _load_cohort(path, manifest=None):
    if manifest is not None:
        manifest.check_inputs([path])
    return load_cohort(path)


def run_learn_reward(cfg, cohort_path=None, out=None, log_path=None):
    lay = Layout(cfg.output_dir)
    cohort_path = Path(cohort_path or lay.cohort)
    out, log_path = Path(out or lay.reward_model), Path(log_path or lay.reward_log)
    man = Manifest(lay.root)
    cohort = _load_cohort(cohort_path, man)
    learner = PreferenceRewardLearner(**cfg.reward.to_dict()).fit(cohort)
    save_checkpoint(learner.to_dict(), "reward", out)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    learner.train_log_.to_csv(log_path)
    man.record("learn_reward", [cohort_path], [out, log_path])
    return learner


def load_reward_model(path):
    return PreferenceRewardLearner.from_dict(load_checkpoint(path, "reward"))


def reward_function(name, cfg, cohort, reward_model=None):
    """Per-trajectory reward trace function for a formulation name."""
    names = cohort.feature_names
    b = cfg.baselines
    if name == CNPR:
        if reward_model is None:
            raise InputError("the cnpr reward needs a reward model checkpoint")
        return reward_model.step_rewards
    if name == "mortality":
        return lambda t: reward_trace(t, "mortality", R=b.mortality_R)
    if name == "sofa_lac":
        missing = sum(t.sofa_components is None for t in cohort)
        if missing:
            logger.warning("%d trajectories lack per-organ SOFA subscores; their organ count falls back "
                           "to 1{SOFA > 0}", missing)
        return lambda t: reward_trace(t, "sofa_lac", feature_names=names, coeffs=b.sofa_lac)
    if name == "news2":
        return lambda t: reward_trace(t, "news2", feature_names=names, r_outcome_die=b.news2_outcome_die,
                                      r_outcome_survive=b.news2_outcome_survive)
    raise InputError(f"unknown reward source {name!r}; expected one of {', '.join(REWARD_SOURCES)}")


def run_score_baselines(cfg, cohort_path=None, reward_path=None, out=None):
    """Per-step reward traces for every formulation (CN-PR only if a reward model exists)."""
    lay = Layout(cfg.output_dir)
    cohort_path = Path(cohort_path or lay.cohort)
    reward_path = Path(reward_path) if reward_path else (lay.reward_model if lay.reward_model.exists() else None)
    out = Path(out or lay.step_rewards)
    man = Manifest(lay.root)
    inputs = [cohort_path] + ([reward_path] if reward_path else [])
    man.check_inputs(inputs)
    cohort = load_cohort(cohort_path)
    model = load_reward_model(reward_path) if reward_path else None
    names = [n for n in REWARD_SOURCES if n != CNPR or model is not None]
    fns = {n: reward_function(n, cfg, cohort, model) for n in names}
    rows = []
    for traj in cohort:
        traces = {n: fns[n](traj) for n in names}
        for t in range(len(traj)):
            rows.append([traj.id, t] + [traces[n][t] for n in names])
    write_csv(out, ["id", "step"] + names, rows)
    man.record("score_baselines", inputs, [out])
    return out


def policy_checkpoint(est, scaler, feature_names, reward_source):
    return {"reward_source": reward_source, "estimator": est.to_dict(), "scaler": scaler.to_dict(),
            "feature_names": list(feature_names), "cql_variant": CQL_VARIANT}


class LoadedPolicy:
    """A trained policy restored from its checkpoint; ``predict`` takes standardized states."""

    def __init__(self, payload):
        self.reward_source = payload["reward_source"]
        self.estimator = D3QNCQL.from_dict(payload["estimator"])
        self.scaler = FeatureScaler.from_dict(payload["scaler"])
        self.feature_names = tuple(payload["feature_names"])

    def predict(self, states):
        return self.estimator.predict(states)


def load_policy(path):
    return LoadedPolicy(load_checkpoint(path, "policy"))


def run_train_policy(cfg, reward_source, cohort_path=None, reward_path=None, out=None, log_path=None, name=None):
    """Train D3QN-CQL on training-split transitions labelled by ``reward_source``.

    ``reward_source`` is a baseline name, ``cnpr`` (uses the run's reward
    model) or a path to a reward checkpoint.
    """
    lay = Layout(cfg.output_dir)
    cohort_path = Path(cohort_path or lay.cohort)
    if reward_source not in REWARD_SOURCES:
        reward_path, reward_source = Path(reward_source), CNPR
    name = name or reward_source
    out, log_path = Path(out or lay.policy(name)), Path(log_path or lay.policy_log(name))
    inputs = [cohort_path]
    model = None
    if reward_source == CNPR:
        reward_path = Path(reward_path or lay.reward_model)
        inputs.append(reward_path)
    man = Manifest(lay.root)
    man.check_inputs(inputs)
    cohort = load_cohort(cohort_path)
    if reward_source == CNPR:
        model = load_reward_model(reward_path)
    fn = reward_function(reward_source, cfg, cohort, model)
    train = cohort.train().trajectories if cohort.is_split else cohort.trajectories
    transitions = build_transitions(cohort, fn, train)
    est = D3QNCQL(**vars(cfg.rl), seed=cfg.seed).fit(transitions)
    save_checkpoint(policy_checkpoint(est, cohort.scaler, cohort.feature_names, reward_source), "policy", out)
    est.log_.to_csv(log_path)
    man.record(f"train_policy:{name}", inputs, [out, log_path])
    return est


def run_compute_outcomes(cfg, cohort_path=None, out=None):
    lay = Layout(cfg.output_dir)
    cohort_path = Path(cohort_path or lay.cohort)
    out = Path(out or lay.outcomes)
    man = Manifest(lay.root)
    cohort = _load_cohort(cohort_path, man)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_outcomes_csv(compute_outcomes(cohort.trajectories), out)
    man.record("compute_outcomes", [cohort_path], [out])
    return out


# ---------------------------------------------------------------- evaluation
def covariate_names(trajectories, reduced):
    names = [c for c in COVARIATES if not (c == "elixhauser" and reduced)]
    if "elixhauser" in names and any(t.covariates.get("elixhauser") is None for t in trajectories):
        names.remove("elixhauser")
    return names


def _eval_split(cohort, split):
    if split == "all" or not cohort.is_split:
        return cohort.trajectories
    return cohort.subset(split).trajectories


def _regress(outcome, y, X, names):
    if outcome == "mortality":
        return logistic_fit(y, X, names)
    return ols_hc3(y, X, names)


def regression_line(res, outcome, covariate_means, grid):
    """Prediction over z-scored distance with covariates held at their means."""
    base = res.coef[0] + sum(res[n] * m for n, m in covariate_means.items())
    eta = base + res["distance_z"] * grid
    return expit(eta) if res.model == "logistic" else eta


def run_evaluate(cfg, cohort_path=None, policy_paths=None, outcomes_path=None, reward_path=None, out_dir=None):
    """Distances, regressions, correlations, heatmaps, importance and plot tables."""
    lay = Layout(cfg.output_dir)
    cohort_path = Path(cohort_path or lay.cohort)
    outcomes_path = Path(outcomes_path or lay.outcomes)
    out_dir = Path(out_dir or lay.evaluation)
    if policy_paths is None:
        policy_paths = {n: lay.policy(n) for n in REWARD_SOURCES if lay.policy(n).exists()}
    if reward_path is None and lay.reward_model.exists():
        reward_path = lay.reward_model
    inputs = [cohort_path, outcomes_path] + list(policy_paths.values()) + ([Path(reward_path)] if reward_path else [])
    man = Manifest(lay.root)
    man.check_inputs(inputs)
    if not policy_paths:
        raise InputError("no policy checkpoints to evaluate")
    out_dir.mkdir(parents=True, exist_ok=True)
    ev = cfg.evaluation
    cohort = load_cohort(cohort_path)
    trajs = _eval_split(cohort, ev.split)
    if len(trajs) < 3:
        raise InputError(f"evaluation split '{ev.split}' has only {len(trajs)} trajectories")
    records = {r.id: r for r in read_outcomes_csv(outcomes_path)}
    missing = [t.id for t in trajs if t.id not in records]
    if missing:
        raise InputError(f"outcomes missing for {len(missing)} trajectories (e.g. {missing[0]})")
    recs = [records[t.id] for t in trajs]
    policies = {n: load_policy(p) for n, p in policy_paths.items()}
    policies["random"] = RandomPolicy(seed=cfg.seed)
    written = []

    # distances
    summaries = {n: DistanceSummary.compute(p, trajs, cohort.scaler) for n, p in policies.items()}
    p = out_dir / "distances.csv"
    write_csv(p, ["policy", "id", "mean_joint_distance", "distance_z"],
              [[n, i, m, z] for n, s in summaries.items() for i, m, z in zip(s.ids, s.mean_joint, s.z)])
    written.append(p)

    # regressions
    cov_names = covariate_names(trajs, cfg.reduced_features)
    C = np.array([[float(t.covariates[c]) for c in cov_names] for t in trajs])
    names = ["intercept", "distance_z"] + cov_names
    cov_means = dict(zip(cov_names, C.mean(axis=0)))
    grid = np.linspace(-2.0, 2.0, 17)
    distance_rows, line_rows = [], []
    for outcome in OUTCOMES:
        y_all = outcome_array(recs, outcome)
        ok = np.isfinite(y_all)
        rows = []
        for pol, s in summaries.items():
            X = np.column_stack([np.ones(len(trajs)), s.z, C])[ok]
            try:
                res = _regress(outcome, y_all[ok], X, names)
            except (NumericalError, InputError) as e:
                if ev.on_regression_error == "fail":
                    raise type(e)(f"{outcome} regression for policy {pol}: {e}") from e
                logger.warning("%s regression for %s failed: %s", outcome, pol, e)
                rows.append({"policy": pol, "outcome": outcome, "model": "error", "n": int(ok.sum()),
                             "term": "distance_z", "coef": math.nan, "se": math.nan, "ci_lo": math.nan,
                             "ci_hi": math.nan, "p": math.nan})
                distance_rows.append(rows[-1])
                continue
            for r in res.rows():
                rows.append({"policy": pol, "outcome": outcome, "model": res.model, "n": res.n, **r})
                if r["term"] == "distance_z":
                    distance_rows.append(rows[-1])
            for z, yhat in zip(grid, regression_line(res, outcome, cov_means, grid)):
                line_rows.append({"policy": pol, "outcome": outcome, "distance_z": z, "prediction": yhat})
        header = ["policy", "outcome", "model", "n", "term", "coef", "se", "ci_lo", "ci_hi", "p"]
        p = out_dir / f"regression_{outcome}.csv"
        write_csv(p, header, rows)
        written.append(p)
    p = out_dir / "regression_distance.csv"
    write_csv(p, ["policy", "outcome", "model", "n", "coef", "se", "ci_lo", "ci_hi", "p"], distance_rows)
    written.append(p)
    p = out_dir / "regression_lines.csv"
    write_csv(p, ["policy", "outcome", "distance_z", "prediction"], line_rows)
    written.append(p)

    # correlation matrix of outcomes and policy distances
    columns = {o: outcome_array(recs, o) for o in OUTCOMES}
    columns.update({f"distance_{n}": s.mean_joint for n, s in summaries.items()})
    cnames, mat = correlation_matrix(columns)
    p = out_dir / "correlation.csv"
    write_csv(p, ["variable"] + cnames, [[a] + list(row) for a, row in zip(cnames, mat)])
    written.append(p)

    # heatmaps (clinician plus every policy)
    hm_rows = []
    hm_rows += heatmap_rows("clinician", action_heatmap(None, cohort, ev.severity_threshold, trajs))
    for n, pol in policies.items():
        hm_rows += heatmap_rows(n, action_heatmap(pol, cohort, ev.severity_threshold, trajs))
    p = out_dir / "heatmap.csv"
    write_csv(p, ["policy", "stratum", "iv_bin", "vaso_bin", "frequency", "annotate"], hm_rows)
    written.append(p)

    # permutation importance for the configured policies ("clinician" uses the logged actions)
    states = np.vstack([cohort.standardized(t) for t in trajs])
    fc = ForestConfig(ev.forest.n_estimators, ev.forest.max_depth, ev.forest.n_repeats, ev.forest.test_frac,
                      ev.forest.max_rows, n_jobs=cfg.threads)
    imp_rows = []
    for n in ev.importance_policies:
        if n == "clinician":
            actions = np.concatenate([t.joint_actions for t in trajs])
        elif n in policies:
            actions = policy_actions(policies[n], states)
        else:
            logger.warning("importance skipped for %s: no such policy in this run", n)
            continue
        iv, vaso = split_joint(actions)
        for target, labels in (("iv_bin", iv), ("vaso_bin", vaso)):
            try:
                ranked = permutation_importance(labels, states, cohort.feature_names, fc, seed=cfg.seed)
            except InputError as e:
                logger.warning("importance skipped for %s/%s: %s", n, target, e)
                continue
            imp_rows += [{"policy": n, "target": target, "rank": f.rank, "feature": f.feature,
                          "importance": f.importance, "std": f.std} for f in ranked]
    p = out_dir / "importance.csv"
    write_csv(p, ["policy", "target", "rank", "feature", "importance", "std"], imp_rows)
    written.append(p)

    # score distribution and reward alignment
    tqs_rows = []
    for split in ("all", "train", "test"):
        members = cohort.trajectories if split == "all" else [t for t in cohort if t.split == split]
        counts = np.bincount([t.tqs for t in members], minlength=6) if members else np.zeros(6, int)
        tqs_rows += [{"split": split, "tqs": k, "count": int(counts[k])} for k in range(6)]
    p = out_dir / "tqs_distribution.csv"
    write_csv(p, ["split", "tqs", "count"], tqs_rows)
    written.append(p)
    if reward_path:
        model = load_reward_model(reward_path)
        scored = [t for t in trajs if t.tqs > 0]
        scores = np.array([float(np.mean(model.step_rewards(t))) for t in scored])
        tqs = np.array([t.tqs for t in scored])
        p = out_dir / "reward_vs_tqs.csv"
        write_csv(p, ["id", "tqs", "mean_normalized_reward"], [[t.id, t.tqs, s] for t, s in zip(scored, scores)])
        written.append(p)
        rho = spearman(scores, tqs) if len(scored) > 1 and np.ptp(tqs) > 0 else math.nan
        try:
            d, lo, hi = cohens_d(scores[tqs == 5], scores[tqs == 1], ev.n_boot, cfg.seed)
        except (InputError, NumericalError) as e:
            logger.warning("Cohen's d unavailable: %s", e)
            d = lo = hi = math.nan
        p = out_dir / "reward_alignment.csv"
        write_csv(p, ["n", "spearman_rho", "cohens_d_tqs5_vs_tqs1", "d_ci_lo", "d_ci_hi"],
                  [[len(scored), rho, d, lo, hi]])
        written.append(p)
    man.record("evaluate", inputs, written)
    return out_dir


# ---------------------------------------------------------------- report
def _md_table(header, rows):
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(lines)


def _num(s, digits=3):
    if s in ("", None):
        return "n/a"
    return f"{float(s):.{digits}f}"


def run_report(cfg, run_dir=None):
    """Aggregate the run's tables into one Markdown summary."""
    lay = Layout(run_dir or cfg.output_dir)
    ev = lay.evaluation
    man = Manifest(lay.root)
    inputs = sorted(p for p in ev.glob("*.csv")) + [lay.cohort_summary]
    inputs = [p for p in inputs if p.exists()]
    if not (ev / "regression_distance.csv").exists():
        raise InputError(f"no evaluation tables under {ev}; run the evaluate stage first")
    man.check_inputs(inputs)
    out = []
    out.append("# Run report\n")
    out.append("## Settings\n")
    out.append(_md_table(["setting", "value"], [
        ["seed", cfg.seed], ["cohort source", cfg.cohort_source], ["reduced features", cfg.reduced_features],
        ["margin m0", cfg.reward.m0], ["margin slope alpha", cfg.reward.alpha_margin],
        ["reward L2 lambda", cfg.reward.lambda_reg], ["CQL alpha", cfg.rl.cql_alpha],
        ["CQL penalty", CQL_VARIANT], ["target sync interval", cfg.rl.target_sync_interval],
        ["SOFA-lactate coefficients", f"c0={cfg.baselines.sofa_lac.c0}, c1={cfg.baselines.sofa_lac.c1}, "
                                      f"c2={cfg.baselines.sofa_lac.c2}, outcome=+/-{cfg.baselines.sofa_lac.r_outcome_survive}"],
        ["evaluation split", cfg.evaluation.split],
        ["post-discharge rule", "survivors alive and support-free, decedents dead"],
    ]))
    if lay.cohort_summary.exists():
        rows = read_csv(lay.cohort_summary)
        out.append("\n## Cohort\n")
        out.append(_md_table(["split", "n", "mortality", "mean steps", "TQS 1..5"],
                             [[r["split"], r["n"], _num(r["mortality_rate"]), _num(r["mean_steps"], 1),
                               " / ".join(r[f"tqs_{k}"] for k in range(1, 6))] for r in rows]))
    if (ev / "reward_alignment.csv").exists():
        r = read_csv(ev / "reward_alignment.csv")[0]
        out.append("\n## Learned reward versus quality score\n")
        out.append(_md_table(["n", "Spearman rho", "Cohen's d (TQS 5 vs 1)", "95% CI"],
                             [[r["n"], _num(r["spearman_rho"]), _num(r["cohens_d_tqs5_vs_tqs1"], 2),
                               f"{_num(r['d_ci_lo'], 2)} to {_num(r['d_ci_hi'], 2)}"]]))
    rows = read_csv(ev / "regression_distance.csv")
    out.append("\n## Distance coefficients (z-scored joint distance, adjusted)\n")
    out.append(_md_table(["policy", "outcome", "model", "n", "coef", "95% CI", "p"],
                         [[r["policy"], r["outcome"], r["model"], r["n"], _num(r["coef"]),
                           f"{_num(r['ci_lo'])} to {_num(r['ci_hi'])}", _num(r["p"], 4)] for r in rows]))
    if (ev / "heatmap.csv").exists():
        out.append("\n## Most frequent actions per stratum\n")
        hm = read_csv(ev / "heatmap.csv")
        groups = {}
        for r in hm:
            groups.setdefault((r["policy"], r["stratum"]), []).append(r)
        tbl = []
        for (pol, stratum), cells in groups.items():
            top = sorted(cells, key=lambda c: -float(c["frequency"]))[:3]
            tbl.append([pol, stratum, ", ".join(f"({c['iv_bin']},{c['vaso_bin']}) {float(c['frequency']):.2f}"
                                                for c in top)])
        out.append(_md_table(["policy", "stratum", "top (iv, vaso) cells"], tbl))
    if (ev / "importance.csv").exists():
        imp = read_csv(ev / "importance.csv")
        top = [r for r in imp if int(r["rank"]) <= 5]
        if top:
            out.append("\n## Top permutation importances\n")
            out.append(_md_table(["policy", "target", "rank", "feature", "importance"],
                                 [[r["policy"], r["target"], r["rank"], r["feature"], _num(r["importance"], 4)]
                                  for r in top]))
    if (ev / "correlation.csv").exists():
        corr = read_csv(ev / "correlation.csv")
        names = [k for k in corr[0] if k != "variable"]
        out.append("\n## Spearman correlations\n")
        out.append(_md_table([""] + names, [[r["variable"]] + [_num(r[n], 2) for n in names] for r in corr]))
    lay.report.write_text("\n".join(out) + "\n")
    man.record("report", inputs, [lay.report])
    return lay.report


# ---------------------------------------------------------------- full run
def run_pipeline(cfg):
    """All stages in order. Returns the run directory; raises StageFailure on error."""
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    lay = Layout(root)
    if lay.failed.exists():
        lay.failed.unlink()
    if lay.manifest.exists():
        lay.manifest.unlink()
    with threadpool_limits(limits=cfg.threads):
        with stage("write_config", root):
            dump_config(cfg, lay.config)
            Manifest(root).record("write_config", [], [lay.config])
        load_name = "generate" if cfg.cohort_source == "synthetic" else "load_cohort"
        with stage(load_name, root):
            run_generate(cfg)
        with stage("learn_reward", root):
            run_learn_reward(cfg)
        with stage("score_baselines", root):
            run_score_baselines(cfg)
        for name in REWARD_SOURCES:
            with stage(f"train_policy:{name}", root):
                run_train_policy(cfg, name)
        with stage("compute_outcomes", root):
            run_compute_outcomes(cfg)
        with stage("evaluate", root):
            run_evaluate(cfg)
        with stage("report", root):
            run_report(cfg)
    Manifest(root).set_status("complete")
    return root
