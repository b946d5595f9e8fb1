"""Synthetic ICU sepsis cohorts with a known quality signal.

Each patient carries a latent severity ``x_t`` that evolves under a
patient-specific recovery rate. Two latent needs (fluid and vasopressor)
define a state-dependent ideal dose; the simulated clinician doses around it
with patient-specific sloppiness, and every bin of deviation pushes severity
up at the next step. Observed features, SOFA subscores, organ support,
mortality and discharge destination are all read off the latent path, and
the latent quality ``q*`` summarises it. Quality scores are quantile bins of
``q*`` seen through a small noise channel; confidence is an independent
noisy relevance channel.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from .._random import substream
from ..exceptions import ConfigError
from .features import FULL_FEATURES, feature_names
from .types import Cohort, Trajectory


@dataclass
class SynthConfig:
    n: int = 2000
    reduced_features: bool = False
    max_steps: int = 18
    # severity mixture: (weight, mean, sd) per component
    severity_weights: tuple = (0.55, 0.30, 0.15)
    severity_means: tuple = (0.9, 1.7, 2.6)
    severity_sd: float = 0.35
    recovery_mean: float = 0.16
    recovery_sd: float = 0.07
    deviation_harm: float = 0.16
    clinician_noise: tuple = (0.25, 1.6)
    process_noise: float = 0.12
    feature_noise: float = 1.0
    hazard_intercept: float = -7.5
    hazard_slope: float = 1.35
    quality_noise: float = 0.05
    tqs_cumulative_shares: tuple = (0.03, 0.09, 0.16, 0.50, 1.0)
    unscorable_frac: float = 0.0
    confidence_alpha: float = 6.0
    confidence_beta: float = 2.0

    def validate(self):
        if int(self.n) <= 1:
            raise ConfigError(f"synthetic cohort needs n >= 2 (preference pairs impossible), got {self.n}")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        shares = np.asarray(self.tqs_cumulative_shares, dtype=float)
        if shares.shape != (5,) or np.any(np.diff(shares) < 0) or not np.isclose(shares[-1], 1.0):
            raise ConfigError("tqs_cumulative_shares must be 5 non-decreasing values ending at 1.0")
        if len(self.severity_weights) != len(self.severity_means):
            raise ConfigError("severity_weights and severity_means must have equal length")
        if not 0 <= self.unscorable_frac < 1:
            raise ConfigError("unscorable_frac must lie in [0, 1)")
        lo, hi = self.clinician_noise
        if not 0 <= lo <= hi:
            raise ConfigError("clinician_noise must be (low, high) with 0 <= low <= high")

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown synthetic config keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _observe(rng, x, h, p, vaso_bin, vent, rrt, t, static, noise):
    """Raw feature vector for one step, in FULL_FEATURES order."""
    age, gender, weight, readmit, elix = static
    n = lambda s: noise * s * rng.standard_normal()  # noqa: E731
    hr = 82 + 9 * x + 22 * h + n(7)
    sbp = 128 - 6 * x - 22 * p - 10 * h + 4 * vaso_bin + n(8)
    dbp = 68 - 3 * x - 12 * p + 2 * vaso_bin + n(5)
    mbp = (sbp + 2 * dbp) / 3 + n(2)
    rr = 16 + 3.0 * x + n(2.5)
    temp = 37.2 + 0.35 * x + n(0.5)
    pao2 = max(45.0, 110 - 14 * x + n(15))
    fio2 = min(1.0, max(0.21, 0.21 + 0.12 * x * (1 + vent) + n(0.04)))
    spo2 = min(100.0, 98.5 - 1.6 * x + n(1.2))
    lactate = max(0.4, 1.0 + 0.45 * x + 2.4 * h + 1.2 * p + n(0.35))
    creat = max(0.3, 0.9 + 0.5 * x + 0.4 * h + n(0.3))
    urine = max(0.0, 320 - 55 * x - 190 * h + n(45))
    gcs = float(np.clip(np.round(15 - max(0.0, 1.6 * (x - 1.6)) + n(0.6)), 3, 15))
    vals = {
        "age": age, "gender": gender, "weight": weight, "icu_readmission": readmit,
        "gcs": gcs, "elixhauser": elix, "sofa": 0.0, "sirs": float(np.clip(np.round(1 + 0.8 * x + n(0.6)), 0, 4)),
        "hr": hr, "sbp": sbp, "mbp": mbp, "dbp": dbp, "resp_rate": rr, "temperature": temp,
        "paco2": 40 + 2 * x + n(5), "pao2": pao2, "pf_ratio": pao2 / fio2, "spo2": spo2,
        "shock_index": hr / max(sbp, 40.0),
        "albumin": 3.4 - 0.2 * x + n(0.4), "ph": 7.40 - 0.03 * x - 0.04 * h + n(0.03),
        "calcium": 8.6 - 0.2 * x + n(0.4), "glucose": 130 + 12 * x + n(25),
        "hemoglobin": 11 - 0.5 * x + n(1.2), "magnesium": 2.0 + n(0.2), "wbc": 11 + 2.5 * x + n(3),
        "creatinine": creat, "bicarbonate": 24 - 1.5 * x - 2 * h + n(2), "sodium": 139 + n(3),
        "lactate": lactate, "chloride": 104 + n(3), "platelets": max(10.0, 230 - 35 * x + n(40)),
        "potassium": 4.1 + 0.1 * x + n(0.4), "ptt": 32 + 3 * x + n(5), "pt": 13 + 1.2 * x + n(1.5),
        "ast": max(5.0, 40 + 25 * x + n(20)), "alt": max(5.0, 35 + 18 * x + n(15)),
        "bun": 20 + 7 * x + n(6), "inr": 1.1 + 0.15 * x + n(0.1), "ionised_calcium": 1.15 - 0.03 * x + n(0.05),
        "total_bilirubin": max(0.1, 0.8 + 0.5 * x + n(0.4)), "base_excess": -1.5 * x - 2.5 * h + n(2),
        "phosphate": 3.5 + 0.3 * x + n(0.5),
        "mech_vent": float(vent), "fio2": fio2,
        "urine_output": urine, "total_output": urine + max(0.0, 80 + n(30)),
        "time_since_sepsis": 4.0 * t - 24.0,
    }
    return vals


def _sofa_components(rng, x, p, vaso_bin, vals):
    resp = np.clip(np.round(0.9 * x + rng.normal(0, 0.4)), 0, 4)
    coag = np.clip(np.round(0.6 * x - 0.6 + rng.normal(0, 0.4)), 0, 4)
    liver = np.clip(np.round(0.5 * x - 0.5 + rng.normal(0, 0.4)), 0, 4)
    cardio = 1.0 if vals["mbp"] < 70 else 0.0
    if vaso_bin > 0:
        cardio = min(4.0, 2.0 + np.ceil(vaso_bin / 2))
    cns = 0.0 if vals["gcs"] >= 15 else 1.0 if vals["gcs"] >= 13 else 2.0 if vals["gcs"] >= 10 else 3.0 if vals["gcs"] >= 6 else 4.0
    renal = np.clip(np.round(0.7 * x - 0.4 + rng.normal(0, 0.4)), 0, 4)
    return np.array([resp, coag, liver, cardio, cns, renal], dtype=float)


_DISCHARGE_ORDER = (
    "home", "home_health", "rehab", "assisted_living", "skilled_nursing",
    "long_term_acute_care", "acute_hospital",
)


def _simulate_patient(rng, cfg, pid):
    k = rng.choice(len(cfg.severity_weights), p=np.asarray(cfg.severity_weights) / np.sum(cfg.severity_weights))
    age = float(np.clip(rng.normal(66, 15), 18, 95))
    gender = float(rng.random() < 0.43)
    weight = float(np.clip(rng.normal(80, 18), 35, 200))
    readmit = float(rng.random() < 0.08)
    elix = float(np.clip(np.round(rng.gamma(2.0, 2.5) + 0.05 * (age - 66)), 0, 30))
    x = max(0.0, rng.normal(cfg.severity_means[k], cfg.severity_sd) + 0.006 * (age - 66) + 0.02 * (elix - 5))
    recovery = rng.normal(cfg.recovery_mean, cfg.recovery_sd) - 0.002 * (age - 66)
    sloppiness = rng.uniform(*cfg.clinician_noise)
    h_off, p_off = rng.normal(0, 0.7), rng.normal(0, 0.7)
    resp_frailty = rng.normal(0, 0.6)
    static = (age, gender, weight, readmit, elix)

    rows, ivs, vasos, vents, rrts, maps, alive, sofas, xs = [], [], [], [], [], [], [], [], []
    nu_h = nu_p = 0.0
    died = False
    low_run = 0
    for t in range(cfg.max_steps):
        nu_h = 0.6 * nu_h + 0.3 * rng.standard_normal()
        nu_p = 0.6 * nu_p + 0.3 * rng.standard_normal()
        h = _sigmoid(1.3 * (x - 1.5) + h_off + nu_h)
        p = _sigmoid(1.6 * (x - 2.1) + p_off + nu_p)
        ideal_iv = int(np.clip(np.round(4 * h), 0, 4))
        ideal_vaso = int(np.clip(np.round(4 * p), 0, 4))
        iv = int(np.clip(np.round(ideal_iv + sloppiness * rng.standard_normal()), 0, 4))
        vaso = int(np.clip(np.round(ideal_vaso + sloppiness * rng.standard_normal()), 0, 4))
        dev = np.hypot(iv - ideal_iv, vaso - ideal_vaso)
        vent = bool(x + resp_frailty > 2.3)
        rrt = bool(x > 3.3 and h > 0.5)
        vals = _observe(rng, x, h, p, vaso, vent, rrt, t, static, cfg.feature_noise)
        sofa_c = _sofa_components(rng, x, p, vaso, vals)
        vals["sofa"] = float(sofa_c.sum())
        rows.append([vals[f] for f in FULL_FEATURES])
        ivs.append(iv)
        vasos.append(vaso)
        vents.append(vent)
        rrts.append(rrt)
        maps.append(vals["mbp"])
        sofas.append(sofa_c)
        xs.append(x)

        hazard = _sigmoid(cfg.hazard_intercept + cfg.hazard_slope * x)
        if t > 0 and rng.random() < hazard:
            died = True
            alive.append(False)
            break
        alive.append(True)
        x = max(0.0, x - recovery + cfg.deviation_harm * dev + cfg.process_noise * rng.standard_normal())
        low_run = low_run + 1 if x < 0.5 else 0
        if low_run >= 2 and t >= 2:
            break

    xs = np.asarray(xs)
    states = np.asarray(rows)
    vaso_arr = np.asarray(vasos)
    vent_arr = np.asarray(vents)
    rrt_arr = np.asarray(rrts)
    support = (vaso_arr > 0) | vent_arr | rrt_arr
    # latent quality: lower burden of illness, survival, and fast recovery
    q_raw = -0.55 * xs.mean() - 0.35 * x - 2.5 * died - 0.4 * support.mean()

    if died:
        category = "death"
    else:
        g = x + 0.025 * (age - 66) + 0.08 * (elix - 5) + rng.normal(0, 0.3)
        cuts = np.array([0.45, 0.8, 1.1, 1.35, 1.7, 2.1])
        category = _DISCHARGE_ORDER[int(np.searchsorted(cuts, g))]
        if rng.random() < 0.05:
            category = ("other", "against_medical_advice", "psychiatric")[int(rng.integers(3))]

    sofa0 = int(round(sofas[0].sum()))
    first = dict(zip(FULL_FEATURES, rows[0]))
    covariates = {
        "age": round(age, 1),
        "sofa_baseline": sofa0,
        "elixhauser": int(elix),
        "lactate": float(first["lactate"]),
        "shock_index": float(first["shock_index"]),
        "mech_vent_baseline": bool(vents[0]),
    }
    return dict(
        id=pid, states=states, iv=np.asarray(ivs), vaso=vaso_arr, vent=vent_arr, rrt=rrt_arr,
        map=np.asarray(maps), alive=np.asarray(alive), died=died, sofa=np.asarray(sofas),
        category=category, covariates=covariates, q_raw=q_raw,
    )


def generate_synthetic_cohort(config=None, seed=0):
    """Deterministic synthetic cohort for ``(config, seed)``."""
    cfg = config or SynthConfig()
    cfg.validate()
    rng = substream(seed, "cohort")
    patients = [_simulate_patient(rng, cfg, f"p{i:05d}") for i in range(int(cfg.n))]

    q_raw = np.array([p["q_raw"] for p in patients])
    z = (q_raw - q_raw.mean()) / (q_raw.std() or 1.0)
    quality = _sigmoid(1.7 * z)
    channel = z + cfg.quality_noise * rng.standard_normal(len(z))
    cuts = np.quantile(channel, np.asarray(cfg.tqs_cumulative_shares[:-1]))
    tqs = 1 + np.searchsorted(cuts, channel, side="left")
    confidence = rng.beta(cfg.confidence_alpha, cfg.confidence_beta, size=len(z))
    unscorable = rng.random(len(z)) < cfg.unscorable_frac

    names = feature_names(cfg.reduced_features)
    keep = [FULL_FEATURES.index(f) for f in names]
    trajectories = []
    for i, p in enumerate(patients):
        cov = dict(p["covariates"])
        if cfg.reduced_features:
            cov.pop("elixhauser")
        trajectories.append(
            Trajectory(
                id=p["id"],
                states=np.round(p["states"][:, keep], 6),
                iv_bins=p["iv"],
                vaso_bins=p["vaso"],
                mortality=p["died"],
                tqs=0 if unscorable[i] else int(tqs[i]),
                confidence=0.0 if unscorable[i] else round(float(confidence[i]), 6),
                vasopressor_on=p["vaso"] > 0,
                mech_vent=p["vent"],
                rrt=p["rrt"],
                alive=p["alive"],
                map=np.round(p["map"], 6),
                covariates={k: (round(v, 6) if isinstance(v, float) else v) for k, v in cov.items()},
                discharge_category=p["category"],
                sofa_components=p["sofa"],
                quality=round(float(quality[i]), 6),
            )
        )
    return Cohort(tuple(trajectories), names)
