"""File formats: hierarchies, datasets, model files and raw-text tokenization.

Formats
-------
hierarchy   JSON ``{"nodes": [...], "edges": [[child, parent], ...]}``
gaussian    CSV, first column the class label, remaining columns features
documents   one document per line: ``label<TAB>id:count id:count ...``
model       versioned JSON; every float is stored as a hex string
            (``float.hex``) so save -> load -> save is byte-identical
"""

from __future__ import annotations

import csv
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .hierarchy import Hierarchy, HierarchyError, build_hierarchy
from .objective import DotCoefficients

MODEL_FORMAT = "transferhb-model"
MODEL_VERSION = 1


class FormatError(ValueError):
    """A file could not be parsed; the message names the offending position."""


# -- hierarchy -----------------------------------------------------------------------


def hierarchy_from_dict(obj) -> Hierarchy:
    if not isinstance(obj, dict) or "nodes" not in obj:
        raise FormatError("hierarchy must be an object with 'nodes' and 'edges'")
    try:
        return build_hierarchy([tuple(e) for e in obj.get("edges", [])], obj["nodes"])
    except (HierarchyError, TypeError) as exc:
        raise FormatError(f"invalid hierarchy: {exc}") from None


def load_hierarchy(path) -> Hierarchy:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return hierarchy_from_dict(obj)


def save_hierarchy(path, h: Hierarchy) -> None:
    Path(path).write_text(json.dumps(h.to_dict(), indent=1) + "\n")


# -- datasets ------------------------------------------------------------------------


def read_gaussian_csv(path) -> dict[str, np.ndarray]:
    """Label -> (rows x dim) array, labels in order of first appearance."""
    rows: dict[str, list[list[float]]] = {}
    dim = None
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            label = rec[0].strip()
            if not label:
                raise FormatError(f"{path}:{lineno}: empty class label")
            try:
                vals = [float(v) for v in rec[1:]]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if not vals:
                raise FormatError(f"{path}:{lineno}: no feature columns")
            if dim is None:
                dim = len(vals)
            elif len(vals) != dim:
                raise FormatError(f"{path}:{lineno}: expected {dim} features, got {len(vals)}")
            if not all(np.isfinite(vals)):
                raise FormatError(f"{path}:{lineno}: non-finite feature value")
            rows.setdefault(label, []).append(vals)
    return {k: np.array(v, dtype=float) for k, v in rows.items()}


def write_gaussian_csv(path, data: Mapping[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for label, arr in data.items():
            for row in np.atleast_2d(arr):
                w.writerow([label] + [repr(float(v)) for v in row])


def read_docs(path, vocab: int | None = None) -> tuple[dict[str, np.ndarray], int]:
    """Parse a sparse document file into dense (docs x vocab) count matrices.

    The vocabulary size is ``vocab`` if given, else one more than the
    largest word id seen. Returns ``(label -> counts, vocab)``.
    """
    docs: dict[str, list[dict[int, int]]] = {}
    top = -1
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            label, sep, body = line.partition("\t")
            label = label.strip()
            if not sep or not label:
                raise FormatError(f"{path}:{lineno}: expected 'label<TAB>id:count ...'")
            counts: dict[int, int] = {}
            for col, tok in enumerate(body.split(), start=1):
                wid, colon, cnt = tok.partition(":")
                try:
                    if not colon:
                        raise ValueError("missing ':'")
                    wid_i, cnt_i = int(wid), int(cnt)
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: bad pair #{col} {tok!r}") from None
                if wid_i < 0 or cnt_i < 0:
                    raise FormatError(f"{path}:{lineno}: negative id or count in {tok!r}")
                if vocab is not None and wid_i >= vocab:
                    raise FormatError(f"{path}:{lineno}: word id {wid_i} outside vocabulary "
                                      f"of size {vocab}")
                counts[wid_i] = counts.get(wid_i, 0) + cnt_i
                top = max(top, wid_i)
            docs.setdefault(label, []).append(counts)
    size = vocab if vocab is not None else top + 1
    if size < 1:
        raise FormatError(f"{path}: no words found")
    out = {}
    for label, items in docs.items():
        mat = np.zeros((len(items), size))
        for i, c in enumerate(items):
            for wid, n in c.items():
                mat[i, wid] = n
        out[label] = mat
    return out, size


def write_docs(path, data: Mapping[str, np.ndarray]) -> None:
    with open(path, "w") as fh:
        for label, mat in data.items():
            for row in np.atleast_2d(mat):
                nz = np.flatnonzero(row)
                pairs = " ".join(f"{i}:{int(row[i])}" for i in nz)
                fh.write(f"{label}\t{pairs}\n")


def read_dataset(path, family_tag: str, vocab: int | None = None):
    """Returns ``(label -> instances, size)`` where size is dim or vocab."""
    if family_tag == "gaussian":
        data = read_gaussian_csv(path)
        if not data:
            raise FormatError(f"{path}: no instances")
        return data, next(iter(data.values())).shape[1]
    if family_tag == "multinomial":
        return read_docs(path, vocab)
    raise ValueError(f"unknown family {family_tag!r}")


def write_dataset(path, family_tag: str, data) -> None:
    if family_tag == "gaussian":
        write_gaussian_csv(path, data)
    else:
        write_docs(path, data)


def check_labels(h: Hierarchy, data: Mapping[str, object], leaves_only: bool = True):
    allowed = {h.names[n] for n in range(h.size) if h.is_leaf(n) or not leaves_only}
    bad = sorted(set(data) - allowed)
    if bad:
        raise FormatError(f"labels not matching hierarchy leaves: {bad}")


# -- tokenization --------------------------------------------------------------------

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN.findall(text.lower())


def tokenize_corpus(records: Iterable[tuple[str, str]], min_count: int = 2):
    """Turn ``(label, raw text)`` records into word-id documents.

    Tokens seen fewer than ``min_count`` times in the whole corpus are
    dropped. Word ids follow sorted token order. Returns ``(vocabulary,
    [(label, Counter of ids)])``.
    """
    toks = [(label, tokenize(text)) for label, text in records]
    freq = Counter(t for _, ts in toks for t in ts)
    vocab = sorted(t for t, c in freq.items() if c >= min_count)
    ids = {t: i for i, t in enumerate(vocab)}
    docs = [(label, Counter(ids[t] for t in ts if t in ids)) for label, ts in toks]
    return vocab, docs


# -- model files ---------------------------------------------------------------------


def _hex(arr) -> list[str]:
    return [float(v).hex() for v in np.asarray(arr, dtype=float).ravel()]


def _unhex(items) -> np.ndarray:
    try:
        return np.array([float.fromhex(v) for v in items], dtype=float)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"corrupt numeric field: {exc}") from None


def _encode(obj):
    """JSON-able copy of a config value with floats hex-encoded."""
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return {"f": obj.hex()}
    if isinstance(obj, np.generic):
        return _encode(obj.item())
    if isinstance(obj, np.ndarray):
        return {"a": _hex(obj)}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _decode(obj):
    if isinstance(obj, dict):
        if set(obj) == {"f"}:
            return float.fromhex(obj["f"])
        if set(obj) == {"a"}:
            return _unhex(obj["a"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


@dataclass
class ModelFile:
    """A fitted model: parameters per node plus everything needed to reuse it."""

    hierarchy: Hierarchy
    family: str
    size: int
    params: dict[str, np.ndarray]
    method: str = "hb"
    dot: DotCoefficients | None = None
    config: dict = field(default_factory=dict)
    class_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "family": self.family,
            "size": self.size,
            "method": self.method,
            "hierarchy": self.hierarchy.to_dict(),
            "params": {k: _hex(v) for k, v in self.params.items()},
            "dot": None if self.dot is None else {
                "granularity": self.dot.granularity,
                "values": {k: _hex(v) for k, v in self.dot.values.items()},
            },
            "config": _encode(self.config),
            "class_counts": {k: int(v) for k, v in self.class_counts.items()},
        }

    @classmethod
    def from_dict(cls, obj) -> "ModelFile":
        if not isinstance(obj, dict) or obj.get("format") != MODEL_FORMAT:
            raise FormatError("not a transferhb model file")
        if obj.get("version") != MODEL_VERSION:
            raise FormatError(f"unsupported model file version {obj.get('version')!r} "
                              f"(this build reads version {MODEL_VERSION})")
        try:
            dot = None
            if obj["dot"] is not None:
                dot = DotCoefficients(
                    {k: _unhex(v) for k, v in obj["dot"]["values"].items()},
                    obj["dot"]["granularity"])
            return cls(
                hierarchy=hierarchy_from_dict(obj["hierarchy"]),
                family=obj["family"],
                size=int(obj["size"]),
                params={k: _unhex(v) for k, v in obj["params"].items()},
                method=obj["method"],
                dot=dot,
                config=_decode(obj["config"]),
                class_counts={k: int(v) for k, v in obj.get("class_counts", {}).items()},
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"corrupt model file: missing or malformed {exc}") from None


def dumps_model(model: ModelFile) -> str:
    return json.dumps(model.to_dict(), indent=1, sort_keys=True) + "\n"


def save_model(path, model: ModelFile) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path) -> ModelFile:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt model file ({exc.msg} at line {exc.lineno})") from None
    return ModelFile.from_dict(obj)
