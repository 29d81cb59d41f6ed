"""Artifact file formats: features, checkpoints, attributes, vocabularies.

Two binary formats, both little-endian with a four-byte magic and a
version word so damaged or foreign files fail fast:

* feature files (magic ``DAEF``): u32 version, u32 dim, u64 count,
  then ``count`` records of (u64 image_id, ``dim`` float32 values);
* checkpoint files (magic ``DAEC``): u32 version, u64 header length,
  a UTF-8 JSON header listing tensor names/shapes plus a config echo,
  then the tensors as float64 in header order. Checkpoints round-trip
  bit for bit.

Text artifacts are JSON or JSON Lines. Every file written by the CLI
embeds the producing command line and seed, either as a ``meta`` object
(JSON) or as a first-line ``_meta`` record (JSON Lines). Floats are
serialized with Python's shortest round-trip ``repr``, which preserves
the exact binary value (at least 9 significant digits survive).
"""

from __future__ import annotations

import json

import numpy as np

from .semantics import Vocabulary

__all__ = [
    "FormatError",
    "load_attributes",
    "load_checkpoint",
    "load_vocabulary",
    "read_features",
    "read_jsonl",
    "save_checkpoint",
    "save_vocabulary",
    "write_attributes",
    "write_features",
    "write_json",
    "write_jsonl",
]

FEATURE_MAGIC = b"DAEF"
CHECKPOINT_MAGIC = b"DAEC"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Raised when an artifact file is malformed or truncated."""


def _read_exact(handle, count, path, what):
    data = handle.read(count)
    if len(data) != count:
        raise FormatError(f"{path}: truncated while reading {what}")
    return data


# --------------------------------------------------------------------------
# Feature files
# --------------------------------------------------------------------------


def write_features(path, image_ids, features):
    """Write per-image feature vectors as a DAEF file.

    ``features`` is an (N, dim) array; values are stored as float32.
    """
    features = np.asarray(features)
    if features.ndim != 2 or len(image_ids) != features.shape[0]:
        raise FormatError(
            f"need one image_id per feature row, got {len(image_ids)} ids "
            f"for array of shape {features.shape}"
        )
    count, dim = features.shape
    with open(path, "wb") as handle:
        handle.write(FEATURE_MAGIC)
        handle.write(np.uint32(FORMAT_VERSION).tobytes())
        handle.write(np.uint32(dim).tobytes())
        handle.write(np.uint64(count).tobytes())
        row_values = features.astype("<f4")
        for image_id, row in zip(image_ids, row_values):
            handle.write(np.uint64(int(image_id)).tobytes())
            handle.write(row.tobytes())


def read_features(path):
    """Read a DAEF file; returns ``(image_ids, features)``.

    Features come back as float64 (they are stored as float32, so the
    widening is exact).
    """
    try:
        handle = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot read feature file {path}: {exc}") from exc
    with handle:
        magic = _read_exact(handle, 4, path, "magic")
        if magic != FEATURE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        version = int(np.frombuffer(_read_exact(handle, 4, path, "version"), "<u4")[0])
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported feature version {version}")
        dim = int(np.frombuffer(_read_exact(handle, 4, path, "dim"), "<u4")[0])
        count = int(np.frombuffer(_read_exact(handle, 8, path, "count"), "<u8")[0])
        record = 8 + 4 * dim
        payload = handle.read()
        if len(payload) != record * count:
            raise FormatError(
                f"{path}: expected {record * count} record bytes, got {len(payload)}"
            )
    image_ids = []
    features = np.empty((count, dim), dtype=np.float64)
    for i in range(count):
        start = i * record
        image_ids.append(int(np.frombuffer(payload, "<u8", count=1, offset=start)[0]))
        features[i] = np.frombuffer(payload, "<f4", count=dim, offset=start + 8)
    return image_ids, features


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(path, tensors, config):
    """Write named float64 tensors plus a JSON-serializable config echo."""
    names = list(tensors)
    header = {
        "config": config,
        "tensors": [
            {"name": name, "shape": list(np.asarray(tensors[name]).shape)}
            for name in names
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(np.uint32(FORMAT_VERSION).tobytes())
        handle.write(np.uint64(len(header_bytes)).tobytes())
        handle.write(header_bytes)
        for name in names:
            handle.write(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a DAEC checkpoint; returns ``(tensors, config)``."""
    try:
        handle = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    with handle:
        magic = _read_exact(handle, 4, path, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(
                f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}"
            )
        version = int(np.frombuffer(_read_exact(handle, 4, path, "version"), "<u4")[0])
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        header_len = int(
            np.frombuffer(_read_exact(handle, 8, path, "header length"), "<u8")[0]
        )
        header_bytes = _read_exact(handle, header_len, path, "header")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: invalid checkpoint header: {exc}") from exc
        if not isinstance(header, dict) or "tensors" not in header:
            raise FormatError(f"{path}: checkpoint header lacks tensor table")
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(int(v) for v in entry["shape"])
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = _read_exact(handle, 8 * size, path, f"tensor {entry['name']}")
            tensors[entry["name"]] = (
                np.frombuffer(raw, "<f8").astype(np.float64).reshape(shape)
            )
        trailing = handle.read(1)
        if trailing:
            raise FormatError(f"{path}: trailing bytes after last tensor")
    return tensors, header.get("config", {})


# --------------------------------------------------------------------------
# JSON / JSON Lines artifacts
# --------------------------------------------------------------------------


def write_json(path, payload):
    """Write a JSON document with sorted keys and a trailing newline."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, sort_keys=True, indent=2)
        handle.write("\n")


def write_jsonl(path, records, meta=None):
    """Write JSON Lines; an optional ``_meta`` record goes first."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        if meta is not None:
            handle.write(json.dumps({"_meta": meta}, sort_keys=True))
            handle.write("\n")
        for record in records:
            handle.write(json.dumps(record, sort_keys=True))
            handle.write("\n")


def read_jsonl(path):
    """Read JSON Lines; returns ``(records, meta)`` with meta possibly {}."""
    records = []
    meta = {}
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    with handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            if line_no == 1 and isinstance(record, dict) and "_meta" in record:
                meta = record["_meta"]
                continue
            records.append(record)
    return records, meta


def write_attributes(path, image_ids, matrix, meta=None):
    """Write per-image attribute vectors as sparse JSON Lines.

    Each record is ``{"image_id": id, "attrs": [[index, value], ...]}``
    listing the nonzero entries in index order. The meta record carries
    ``n_words`` so readers can restore the dense width even when every
    vector is sparse.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or len(image_ids) != matrix.shape[0]:
        raise FormatError(
            f"need one image_id per attribute row, got {len(image_ids)} ids "
            f"for array of shape {matrix.shape}"
        )
    meta = dict(meta or {})
    meta["n_words"] = int(matrix.shape[1])

    def records():
        for image_id, row in zip(image_ids, matrix):
            nonzero = np.nonzero(row)[0]
            yield {
                "image_id": int(image_id),
                "attrs": [[int(i), float(row[i])] for i in nonzero],
            }

    write_jsonl(path, records(), meta=meta)


def load_attributes(path):
    """Read an attribute JSONL file; returns ``(image_ids, matrix, meta)``."""
    records, meta = read_jsonl(path)
    n_words = meta.get("n_words")
    if n_words is None:
        n_words = 0
        for record in records:
            for index, _ in record.get("attrs", ()):
                n_words = max(n_words, int(index) + 1)
    n_words = int(n_words)
    image_ids = []
    matrix = np.zeros((len(records), n_words), dtype=np.float64)
    for row, record in enumerate(records):
        if not isinstance(record, dict) or "image_id" not in record:
            raise FormatError(f"{path}: attribute record {row} lacks image_id")
        image_ids.append(int(record["image_id"]))
        for index, value in record.get("attrs", ()):
            index = int(index)
            if not 0 <= index < n_words:
                raise FormatError(
                    f"{path}: attribute index {index} out of range "
                    f"for width {n_words}"
                )
            matrix[row, index] = float(value)
    return image_ids, matrix, meta


def save_vocabulary(path, vocabulary, meta=None):
    """Write a vocabulary as JSON with aligned words and IDF values."""
    payload = {
        "stemmed": bool(vocabulary.stemmed),
        "threshold": float(vocabulary.threshold),
        "words": list(vocabulary.words),
        "idf": [float(v) for v in vocabulary.idf],
    }
    if meta is not None:
        payload["meta"] = meta
    write_json(path, payload)


def load_vocabulary(path):
    """Read a vocabulary JSON file back into a :class:`Vocabulary`."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except OSError as exc:
        raise FormatError(f"cannot read vocabulary {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid vocabulary JSON: {exc}") from exc
    for key in ("stemmed", "threshold", "words", "idf"):
        if key not in payload:
            raise FormatError(f"{path}: vocabulary JSON lacks field {key!r}")
    words = payload["words"]
    idf = payload["idf"]
    if len(words) != len(idf):
        raise FormatError(f"{path}: words and idf arrays differ in length")
    return Vocabulary(
        threshold=float(payload["threshold"]),
        stemmed=bool(payload["stemmed"]),
        words=list(words),
        idf=[float(v) for v in idf],
    )
