"""Versioned JSON container shared by reward and policy checkpoints."""
import json
from pathlib import Path

from .exceptions import DataValidationError

CHECKPOINT_FORMAT = "prefreward-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(payload, kind, path):
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": kind, "payload": payload}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc) + "\n")


def load_checkpoint(path, kind):
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"checkpoint not found: {path}", field="path")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataValidationError(f"checkpoint is not valid JSON: {e.msg}", field="path") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise DataValidationError(f"{path} is not a checkpoint file", field="format")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataValidationError(f"unsupported checkpoint version {doc.get('version')!r}", field="version")
    if doc.get("kind") != kind:
        raise DataValidationError(f"expected a {kind} checkpoint, found {doc.get('kind')!r}", field="kind")
    return doc["payload"]
