"""JSON-lines cohort files.

An optional first line ``{"header": true, "feature_names": [...]}`` names the
state columns; without it the names are inferred from the column count.
"""
import csv
import hashlib
import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from ..exceptions import DataValidationError
from .features import COVARIATES
from .types import Cohort, Trajectory, with_scaler

FORMAT_VERSION = 1


def load_schema():
    text = resources.files("prefreward").joinpath("schemas/trajectory.schema.json").read_text()
    return json.loads(text)


_VALIDATOR = None


def _validator():
    global _VALIDATOR
    if _VALIDATOR is None:
        _VALIDATOR = jsonschema.Draft202012Validator(load_schema())
    return _VALIDATOR


def _num(x):
    # ints stay ints so files round-trip byte-for-byte
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    return float(x)


def trajectory_to_record(traj):
    rec = {
        "id": traj.id,
        "states": traj.states.tolist(),
        "iv_bins": traj.iv_bins.tolist(),
        "vaso_bins": traj.vaso_bins.tolist(),
        "mortality": traj.mortality,
        "tqs": traj.tqs,
        "confidence": traj.confidence,
        "flags": {
            "vasopressor_on": traj.vasopressor_on.tolist(),
            "mech_vent": traj.mech_vent.tolist(),
            "rrt": traj.rrt.tolist(),
            "alive": traj.alive.tolist(),
        },
        "map": traj.map.tolist(),
        "discharge_category": traj.discharge_category,
        "covariates": {k: _num(traj.covariates[k]) if traj.covariates.get(k) is not None else None
                       for k in COVARIATES if k in traj.covariates},
        "sofa_components": None if traj.sofa_components is None else traj.sofa_components.tolist(),
        "quality": traj.quality,
        "split": traj.split,
    }
    return rec


def trajectory_from_record(rec):
    flags = rec["flags"]
    return Trajectory(
        id=rec["id"],
        states=np.asarray(rec["states"], dtype=float),
        iv_bins=np.asarray(rec["iv_bins"]),
        vaso_bins=np.asarray(rec["vaso_bins"]),
        mortality=rec["mortality"],
        tqs=rec["tqs"],
        confidence=rec["confidence"],
        vasopressor_on=np.asarray(flags["vasopressor_on"], dtype=bool),
        mech_vent=np.asarray(flags["mech_vent"], dtype=bool),
        rrt=np.asarray(flags["rrt"], dtype=bool),
        alive=np.asarray(flags["alive"], dtype=bool),
        map=np.asarray(rec["map"], dtype=float),
        covariates=dict(rec["covariates"]),
        discharge_category=rec.get("discharge_category"),
        sofa_components=None if rec.get("sofa_components") is None else np.asarray(rec["sofa_components"]),
        quality=rec.get("quality"),
        split=rec.get("split"),
    )


def dumps_cohort(cohort):
    lines = [json.dumps({"header": True, "format_version": FORMAT_VERSION,
                         "feature_names": list(cohort.feature_names)})]
    lines.extend(json.dumps(trajectory_to_record(t)) for t in cohort)
    return "\n".join(lines) + "\n"


def save_cohort(cohort, path):
    Path(path).write_text(dumps_cohort(cohort))


def _schema_error(err):
    path = "/".join(str(p) for p in err.absolute_path)
    if err.validator == "required":
        missing = err.message.split("'")[1] if "'" in err.message else None
        field = f"{path}/{missing}" if path and missing else (missing or path)
    elif err.validator == "additionalProperties":
        field = path or "record"
    else:
        field = path or "record"
    return field, err.message


# parsed cohorts keyed by file content digest; validation dominates load time
_CACHE = {}
_CACHE_SIZE = 4


def load_cohort(path, format="jsonl"):
    """Parse and validate a JSON-lines cohort file.

    Every record is checked against the shipped JSON schema and then the
    trajectory invariants; the first violation raises
    :class:`DataValidationError` carrying the line number and field.
    If all records carry a split tag, the scaler is refitted on the train part.
    Repeated loads of byte-identical content return the cached cohort.
    """
    if format != "jsonl":
        raise DataValidationError(f"unsupported format {format!r}", field="format")
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"cohort file not found: {path}", field="path")
    data = path.read_bytes()
    key = hashlib.sha256(data).hexdigest()
    if key not in _CACHE:
        if len(_CACHE) >= _CACHE_SIZE:
            _CACHE.pop(next(iter(_CACHE)))
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise DataValidationError(f"file is not UTF-8 text: {e.reason}", field="path") from None
        _CACHE[key] = _parse_cohort(text.splitlines())
    return _CACHE[key]


def _parse_cohort(lines):
    feature_names = None
    trajectories = []
    validator = _validator()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataValidationError(f"invalid JSON: {e.msg}", line=lineno) from None
        if isinstance(rec, dict) and rec.get("header"):
            if trajectories:
                raise DataValidationError("header must precede records", line=lineno, field="header")
            feature_names = tuple(rec.get("feature_names") or ()) or None
            continue
        errors = sorted(validator.iter_errors(rec), key=lambda e: list(e.absolute_path))
        if errors:
            field, msg = _schema_error(errors[0])
            raise DataValidationError(msg, field=field, line=lineno)
        try:
            trajectories.append(trajectory_from_record(rec))
        except DataValidationError as e:
            raise DataValidationError(str(e).split(": ", 1)[-1], field=e.field, line=lineno) from None
    try:
        cohort = Cohort(tuple(trajectories), feature_names)
    except DataValidationError as e:
        raise DataValidationError(str(e).split(": ", 1)[-1], field=e.field) from None
    if cohort.trajectories and cohort.is_split and any(t.split == "train" for t in cohort):
        cohort = with_scaler(cohort)
    return cohort


def summary_rows(cohort):
    """Per-split summary statistics, one row per (split, statistic group)."""
    rows = []
    groups = [("all", list(cohort))]
    for split in ("train", "test"):
        members = [t for t in cohort if t.split == split]
        if members:
            groups.append((split, members))
    for name, members in groups:
        n = len(members)
        lengths = np.array([len(t) for t in members])
        tqs = np.array([t.tqs for t in members])
        row = {
            "split": name,
            "n": n,
            "mortality_rate": float(np.mean([t.mortality for t in members])),
            "mean_steps": float(lengths.mean()),
            "median_steps": float(np.median(lengths)),
            "mean_age": float(np.mean([t.covariates["age"] for t in members])),
            "mean_sofa_baseline": float(np.mean([t.covariates["sofa_baseline"] for t in members])),
            "mean_confidence": float(np.mean([t.confidence for t in members])),
        }
        for s in range(6):
            row[f"tqs_{s}"] = int(np.sum(tqs == s))
        rows.append(row)
    return rows


def write_summary_csv(cohort, path):
    rows = summary_rows(cohort)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
