"""JSON instance files and result serialization."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .instances import Instance, validate_profile


class InputError(ValueError):
    """Malformed instance or profile input; the message carries a file:line prefix."""


def _line_of(text: str, key: str) -> int:
    needle = f'"{key}"'
    pos = text.find(needle)
    return text.count("\n", 0, pos) + 1 if pos >= 0 else 1


def parse_instance(text: str, source: str = "<string>"):
    """Parse an instance document; returns ``(instance, profile_or_None)`` in sorted order."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"{source}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from None
    if not isinstance(doc, dict):
        raise InputError(f"{source}:1: top level must be an object with keys 'lambda' and 'mu'")
    for key in ("lambda", "mu"):
        if key not in doc:
            raise InputError(f"{source}:1: missing key '{key}'")
        if not isinstance(doc[key], list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in doc[key]):
            raise InputError(f"{source}:{_line_of(text, key)}: '{key}' must be an array of numbers")
    try:
        inst = Instance.from_rates(doc["lambda"], doc["mu"])
    except ValueError as e:
        bad = "lambda" if "arrival" in str(e) or "queue" in str(e) else "mu"
        raise InputError(f"{source}:{_line_of(text, bad)}: {e}") from None
    profile = None
    if doc.get("profile") is not None:
        try:
            raw = validate_profile(doc["profile"])
            if raw.shape != (inst.n, inst.m):
                raise ValueError(f"profile shape {raw.shape} does not match ({inst.n}, {inst.m})")
        except (ValueError, TypeError) as e:
            raise InputError(f"{source}:{_line_of(text, 'profile')}: {e}") from None
        profile = inst.sort_profile(raw)
    return inst, profile


def load_instance(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise InputError(f"{path}: cannot read: {e.strerror}") from None
    return parse_instance(text, str(path))


def load_profile(path, inst: Instance) -> np.ndarray:
    """A profile file is either a bare array of rows or an object with a ``profile`` key."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
        doc = json.loads(text)
    except OSError as e:
        raise InputError(f"{path}: cannot read: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from None
    rows = doc.get("profile") if isinstance(doc, dict) else doc
    try:
        raw = validate_profile(rows)
        if raw.shape != (inst.n, inst.m):
            raise ValueError(f"profile shape {raw.shape} does not match instance ({inst.n}, {inst.m})")
    except (ValueError, TypeError) as e:
        raise InputError(f"{path}:{_line_of(text, 'profile')}: {e}") from None
    return inst.sort_profile(raw)


def instance_document(inst: Instance, profile=None) -> dict:
    """The instance (and optional sorted-order profile) in input labels."""
    doc = {
        "lambda": [float(x) for x in inst.unsort_queues(inst.lambdas)],
        "mu": [float(x) for x in unsort_servers(inst, inst.mus)],
    }
    if profile is not None:
        doc["profile"] = inst.unsort_profile(profile).tolist()
    return doc


def unsort_servers(inst: Instance, values):
    out = np.empty_like(np.asarray(values, dtype=float))
    out[list(inst.server_order)] = values
    return out


def dumps(obj) -> str:
    """Canonical JSON: two-space indent, trailing newline."""
    return json.dumps(obj, indent=2) + "\n"


def dump_instance(inst: Instance, profile=None) -> str:
    return dumps(instance_document(inst, profile))
