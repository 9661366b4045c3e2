"""Content-addressed object store. Every object is a JSON document whose ref
is the SHA-256 of its canonical serialization, so identical payloads dedupe
and a rerun that produces the same numbers produces the same ref.

Objects are immutable once written. A small mutable index maps
(model ref, stage) to the most recently truncated model so stage queries can
find their backing model.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Optional

from .attribution import AttributionMap, AttributionResult


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def content_ref(obj) -> str:
    return hashlib.sha256(canonical_json(obj)).hexdigest()


def result_to_dict(result: AttributionResult, meta: Optional[dict] = None) -> dict:
    body: dict = {"shape": list(result.maps[0].shape), "kind": result.kind}
    if result.kind == "single":
        body["values"] = result.single.values.tolist()
    elif result.kind == "pair":
        body["left"] = result.left.values.tolist()
        body["right"] = result.right.values.tolist()
    else:
        body["maps"] = [m.values.tolist() for m in result.maps]
    if meta is not None:
        body["meta"] = meta
    return body


def result_from_dict(d: dict) -> AttributionResult:
    shape = tuple(d["shape"])
    if d["kind"] == "single":
        return AttributionResult.of(AttributionMap(shape, d["values"]))
    if d["kind"] == "pair":
        return AttributionResult.pair(
            AttributionMap(shape, d["left"]), AttributionMap(shape, d["right"])
        )
    maps = tuple(AttributionMap(shape, v) for v in d["maps"])
    return AttributionResult(maps, tuple(f"input{j}" for j in range(len(maps))))


class Store:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "objects").mkdir(parents=True, exist_ok=True)
        (self.root / "truncations").mkdir(parents=True, exist_ok=True)

    def _object_path(self, ref: str) -> Path:
        return self.root / "objects" / f"{ref}.json"

    def put(self, kind: str, payload: dict) -> str:
        """Write {kind, body} if absent; returns the content ref either way."""
        obj = {"kind": kind, "body": payload}
        data = canonical_json(obj)
        ref = hashlib.sha256(data).hexdigest()
        path = self._object_path(ref)
        if not path.exists():
            # write-then-rename keeps concurrent writers of the same ref safe
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        return ref

    def get(self, ref: str, kind: Optional[str] = None) -> dict:
        path = self._object_path(ref)
        if not path.exists():
            raise KeyError(ref)
        obj = json.loads(path.read_text())
        if kind is not None and obj.get("kind") != kind:
            raise KeyError(f"{ref} is a {obj.get('kind')}, not a {kind}")
        return obj["body"]

    def has(self, ref: str) -> bool:
        return self._object_path(ref).exists()

    # -- truncation index ---------------------------------------------------

    def _trunc_path(self, model_ref: str, stage: int) -> Path:
        return self.root / "truncations" / f"{model_ref}.{stage}.json"

    def record_truncation(self, model_ref: str, stage: int, truncated_ref: str,
                          dataset_ref: str, hyper: dict) -> None:
        entry = {
            "model": model_ref,
            "stage": stage,
            "ref": truncated_ref,
            "dataset": dataset_ref,
            "hyper": hyper,
        }
        path = self._trunc_path(model_ref, stage)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "wb") as f:
            f.write(canonical_json(entry))
        os.replace(tmp, path)

    def lookup_truncation(self, model_ref: str, stage: int) -> Optional[str]:
        path = self._trunc_path(model_ref, stage)
        if not path.exists():
            return None
        return json.loads(path.read_text())["ref"]
