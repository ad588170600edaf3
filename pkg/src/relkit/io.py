"""File formats: IDX arrays, cost-matrix triplets, model files, CSV tables."""

from __future__ import annotations

import csv
import gzip
import io
import json
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from relkit.core import ConstraintClass, CostMatrix, Evidence, FeatureStore, Relation
from relkit.errors import ParseError
from relkit.lifting import LiftSpec
from relkit.models import BernoulliModel, LogisticModel, OneVsRestModel

__all__ = [
    "read_idx",
    "write_idx",
    "read_cost_triplets",
    "parse_cost_triplets",
    "write_cost_triplets",
    "save_model",
    "load_model",
    "save_features",
    "load_features",
    "write_csv",
    "save_relation",
    "load_relation",
    "read_evidence",
    "MODEL_FORMAT_VERSION",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_IDX_UBYTE = 0x08
MODEL_FORMAT_VERSION = 1


def _open_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise ParseError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def read_idx(path, expect_magic: int | None = None) -> np.ndarray:
    """Read an unsigned-byte IDX file (plain or gzipped) into a uint8 array."""
    raw = _open_bytes(path)
    if len(raw) < 4:
        raise ParseError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if raw[0] != 0 or raw[1] != 0 or raw[2] != _IDX_UBYTE or raw[3] == 0:
        raise ParseError(f"{path}: bad IDX magic 0x{magic:08x}")
    if expect_magic is not None and magic != expect_magic:
        raise ParseError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ParseError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    body = raw[header:]
    if len(body) < count:
        raise ParseError(f"{path}: truncated IDX body, {len(body)} of {count} bytes")
    if len(body) > count:
        raise ParseError(f"{path}: {len(body) - count} trailing bytes after IDX body")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims).copy()


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX; a ``.gz`` suffix gzips the output."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    if arr.ndim < 1 or arr.ndim > 255:
        raise ValueError("IDX arrays need 1..255 dimensions")
    blob = struct.pack(">BBBB", 0, 0, _IDX_UBYTE, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()
    if str(path).endswith(".gz"):
        # fixed mtime keeps the file byte-identical across runs
        blob = gzip.compress(blob, mtime=0)
    Path(path).write_bytes(blob)


def read_cost_triplets(path) -> CostMatrix:
    return parse_cost_triplets(Path(path).read_text(encoding="utf-8"), name=str(path))


def parse_cost_triplets(text: str, name: str = "<triplets>") -> CostMatrix:
    """Parse the triplet format.

    The first non-comment line is ``shape n m``; every further line is
    ``a b cost``.  Entries not listed are 0, ``#`` starts a comment and a
    repeated ``(a, b)`` is an error.
    """
    costs = None
    seen: set[tuple[int, int]] = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        where = f"{name}:{lineno}"
        if costs is None:
            if len(parts) != 3 or parts[0] != "shape":
                raise ParseError(f"{where}: expected header 'shape n m'")
            try:
                n, m = int(parts[1]), int(parts[2])
            except ValueError as exc:
                raise ParseError(f"{where}: shape must be two integers") from exc
            if n < 1 or m < 1:
                raise ParseError(f"{where}: shape must be positive")
            costs = np.zeros((n, m))
            continue
        if len(parts) != 3:
            raise ParseError(f"{where}: expected 'a b cost', got {len(parts)} fields")
        try:
            a, b, value = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ParseError(f"{where}: {exc}") from exc
        if not (0 <= a < costs.shape[0] and 0 <= b < costs.shape[1]):
            raise ParseError(f"{where}: index ({a}, {b}) outside shape {costs.shape}")
        if not np.isfinite(value):
            raise ParseError(f"{where}: cost must be finite")
        if (a, b) in seen:
            raise ParseError(f"{where}: duplicate entry ({a}, {b})")
        seen.add((a, b))
        costs[a, b] = value
    if costs is None:
        raise ParseError(f"{name}: missing 'shape n m' header")
    return CostMatrix(costs)


def write_cost_triplets(path, costs: CostMatrix, skip_zeros: bool = True) -> None:
    c = costs.costs
    lines = [f"shape {c.shape[0]} {c.shape[1]}"]
    for a, b in zip(*np.nonzero(c) if skip_zeros else np.indices(c.shape).reshape(2, -1)):
        lines.append(f"{a} {b} {float(c[a, b])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_MODEL_TYPES = {cls.kind: cls for cls in (LogisticModel, BernoulliModel, OneVsRestModel)}


def model_to_dict(model) -> dict:
    theta = np.asarray(model.theta)
    return {
        "format": "relkit-model",
        "version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "shape": list(theta.shape),
        "sigma": float(model.sigma).hex(),
        # hex floats round-trip every bit, including signed zeros
        "theta": [float(v).hex() for v in theta.ravel()],
        "lift": model.lift.to_dict() if model.lift is not None else None,
    }


def model_from_dict(data: dict):
    if data.get("format") != "relkit-model":
        raise ParseError("not a relkit model file")
    if data.get("version") != MODEL_FORMAT_VERSION:
        raise ParseError(f"unsupported model format version {data.get('version')!r}")
    try:
        cls = _MODEL_TYPES[data["kind"]]
        theta = np.array([float.fromhex(v) for v in data["theta"]], dtype=np.float64).reshape(data["shape"])
        sigma = float.fromhex(data["sigma"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"malformed model file: {exc}") from exc
    lift = LiftSpec.from_dict(data["lift"]) if data.get("lift") else None
    return cls(theta=theta, sigma=sigma, lift=lift)


def save_model(path, model) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def load_model(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return model_from_dict(data)


def save_features(path, store: FeatureStore, **arrays) -> None:
    """Store a FeatureStore (and optional extra arrays such as labels) as ``.npz``."""
    payload = {
        "shape": np.array(store.shape, dtype=np.int64),
        "pairs": store.pairs,
        "num_features": np.array(store.num_features, dtype=np.int64),
    }
    if sp.issparse(store.matrix):
        m = store.matrix.tocsr()
        payload.update(data=m.data, indices=m.indices, indptr=m.indptr, sparse=np.array(True))
    else:
        payload.update(dense=np.asarray(store.matrix), sparse=np.array(False))
    for key, value in arrays.items():
        payload["extra_" + key] = np.asarray(value)
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **payload)


def load_features(path) -> tuple[FeatureStore, dict]:
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    with z:
        n_pairs, k = len(z["pairs"]), int(z["num_features"])
        if bool(z["sparse"]):
            matrix = sp.csr_matrix((z["data"], z["indices"], z["indptr"]), shape=(n_pairs, k))
        else:
            matrix = z["dense"]
        store = FeatureStore(tuple(int(v) for v in z["shape"]), z["pairs"], matrix, k)
        extras = {key[6:]: z[key] for key in z.files if key.startswith("extra_")}
    return store, extras


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def relation_to_dict(relation: Relation) -> dict:
    return {
        "format": "relkit-relation",
        "constraint_class": relation.constraint_class.value,
        "shape": list(relation.shape),
        "rows": ["".join(str(int(v)) for v in row) for row in relation.bits],
    }


def relation_from_dict(data: dict) -> Relation:
    if data.get("format") != "relkit-relation":
        raise ParseError("not a relkit relation file")
    try:
        rows = data["rows"]
        if any(set(r) - {"0", "1"} for r in rows):
            raise ValueError("rows must be strings of 0 and 1")
        bits = np.array([[int(ch) for ch in r] for r in rows], dtype=np.uint8).reshape(data["shape"])
        return Relation(tuple(data["shape"]), bits, ConstraintClass.parse(data["constraint_class"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"malformed relation file: {exc}") from exc


def save_relation(path, relation: Relation) -> None:
    Path(path).write_text(json.dumps(relation_to_dict(relation)) + "\n", encoding="utf-8")


def load_relation(path) -> Relation:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return relation_from_dict(data)


def read_evidence(path) -> Evidence:
    """Pinned pairs, one ``a b value`` line each (``value`` 0 or 1, ``#`` comments)."""
    pinned: dict[tuple[int, int], int] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            a, b, v = (int(x) for x in parts)
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: expected 'a b value'") from exc
        if v not in (0, 1):
            raise ParseError(f"{path}:{lineno}: pinned value must be 0 or 1")
        if (a, b) in pinned:
            raise ParseError(f"{path}:{lineno}: pair ({a}, {b}) pinned twice")
        pinned[(a, b)] = v
    return Evidence(pinned)
