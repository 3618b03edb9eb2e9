"""Line-delimited JSON helpers and strict dataclass/config conversion."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .core import InputError


def dump_json(doc, path) -> None:
    """Write a JSON document with stable formatting (floats via repr)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_json(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path} is not valid JSON: {exc}") from exc


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record))
            fh.write("\n")


def read_jsonl(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: malformed JSON line: {exc}") from exc
    return records


def dataclass_from_dict(cls, data: dict, section: str = ""):
    """Build a config dataclass from a dict, rejecting unknown keys."""
    where = section or cls.__name__
    if not isinstance(data, dict):
        raise InputError(f"{where} must be a JSON object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise InputError(f"unknown {where} key(s): {', '.join(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if isinstance(value, list) and not f.name.endswith("_states"):
            value = tuple(value)
        kwargs[f.name] = value
    return cls(**kwargs)


def dataclass_to_dict(obj) -> dict:
    return dataclasses.asdict(obj)
