"""Encoded datasets: seeded splitting, the BARS1 on-disk format, and the
deterministic batch iterator.

The split permutation comes from numpy's PCG64 generator; the generator
name is written into every manifest so a recorded seed stays meaningful.
Split sizes follow train = round(0.8 N), validation = round(0.1 N),
test = remainder, with round-half-up done in integer arithmetic.
"""

from __future__ import annotations

import hashlib
import json
import queue
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from ctrbench.errors import ConfigError, DataError
from ctrbench.preprocess import FeatureMap, PAD_INDEX

PRNG_NAME = "numpy-pcg64"
BARS_MAGIC = b"BARS1\x00"
BARS_VERSION = 1
_KIND_CODES = {"categorical": 0, "numeric": 1, "sequence": 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass
class EncodedDataset:
    """Integer-encoded samples: one u32 column per plain field, one
    (N, max_len) u32 block per sequence field, u8 labels."""

    feature_map_digest: str
    columns: dict[str, np.ndarray]
    labels: np.ndarray
    md5: str = ""

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class Batch:
    columns: dict[str, np.ndarray]
    labels: np.ndarray

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass
class SplitTriple:
    train: EncodedDataset
    validation: EncodedDataset
    test: EncodedDataset
    seed: int

    def digests(self) -> dict[str, str]:
        return {"train": self.train.md5, "validation": self.validation.md5,
                "test": self.test.md5}


def split_sizes(n: int) -> tuple[int, int, int]:
    """8:1:1 sizes with round-half-up; test absorbs the remainder."""
    train = (8 * n + 5) // 10
    val = (n + 5) // 10
    return train, val, n - train - val


def split_dataset(n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded permutation of range(n) partitioned by prefix into 8:1:1."""
    if n < 10:
        raise DataError(f"need at least 10 samples to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train, n_val, _ = split_sizes(n)
    return (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])


def partition_digest(indices: np.ndarray) -> str:
    return hashlib.md5(np.ascontiguousarray(indices, dtype=np.uint64)
                       .tobytes()).hexdigest()


def encode_rows(rows: list[dict], map_: FeatureMap) -> dict[str, np.ndarray]:
    """Encode token rows through the map; unknown tokens become OOV,
    sequences are truncated/padded to max_len with the padding index."""
    columns: dict[str, np.ndarray] = {}
    n = len(rows)
    for spec in map_.fields:
        vocab = map_.vocabs[spec.name]
        try:
            if spec.kind == "sequence":
                block = np.full((n, spec.max_len), PAD_INDEX, dtype=np.uint32)
                for i, row in enumerate(rows):
                    tokens = row[spec.name][: spec.max_len]
                    for j, tok in enumerate(tokens):
                        block[i, j] = vocab.encode(tok)
                columns[spec.name] = block
            else:
                col = np.empty(n, dtype=np.uint32)
                for i, row in enumerate(rows):
                    col[i] = vocab.encode(row[spec.name])
                columns[spec.name] = col
        except KeyError:
            raise DataError("row is missing a field required by the map",
                            row=i, field=spec.name)
    return columns


# ---------------------------------------------------------------------------
# BARS1 binary layout (little-endian)
# ---------------------------------------------------------------------------


def serialize_bars(ds: EncodedDataset, map_: FeatureMap) -> bytes:
    out = bytearray()
    out += BARS_MAGIC
    out += struct.pack("<HH", BARS_VERSION, len(map_.fields))
    for spec in map_.fields:
        name = spec.name.encode("utf-8")
        max_len = spec.max_len if spec.kind == "sequence" else 0
        out += struct.pack("<H", len(name))
        out += name
        out += struct.pack("<BIH", _KIND_CODES[spec.kind],
                           map_.vocab_size(spec.name), max_len)
    n = len(ds)
    out += struct.pack("<Q", n)
    for i in range(n):
        for spec in map_.fields:
            col = ds.columns[spec.name]
            if spec.kind == "sequence":
                out += col[i].astype("<u4").tobytes()
            else:
                out += struct.pack("<I", int(col[i]))
    out += ds.labels.astype("<u1").tobytes()
    return bytes(out)


def deserialize_bars(blob: bytes) -> tuple[EncodedDataset, list[dict]]:
    """Returns the dataset plus the per-field header records."""
    if blob[:6] != BARS_MAGIC:
        raise DataError("not a BARS1 file (bad magic)")
    version, n_fields = struct.unpack_from("<HH", blob, 6)
    if version != BARS_VERSION:
        raise DataError(f"unsupported BARS version {version}")
    pos = 10
    fields = []
    for _ in range(n_fields):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        kind, vocab_size, max_len = struct.unpack_from("<BIH", blob, pos)
        pos += 7
        fields.append({"name": name, "kind": _KIND_NAMES[kind],
                       "vocab_size": vocab_size, "max_len": max_len})
    (n,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    widths = [f["max_len"] if f["kind"] == "sequence" else 1 for f in fields]
    row_words = sum(widths)
    features = np.frombuffer(blob, dtype="<u4", count=n * row_words, offset=pos)
    features = features.reshape(n, row_words)
    pos += n * row_words * 4
    labels = np.frombuffer(blob, dtype="<u1", count=n, offset=pos).copy()
    columns = {}
    start = 0
    for f, width in zip(fields, widths):
        chunk = features[:, start:start + width]
        columns[f["name"]] = chunk.copy() if f["kind"] == "sequence" \
            else chunk[:, 0].copy()
        start += width
    ds = EncodedDataset(feature_map_digest="", columns=columns, labels=labels)
    ds.md5 = hashlib.md5(blob).hexdigest()
    return ds, fields


def write_bars(ds: EncodedDataset, map_: FeatureMap, path: Path) -> str:
    blob = serialize_bars(ds, map_)
    md5 = hashlib.md5(blob).hexdigest()
    Path(path).write_bytes(blob)
    return md5


def read_bars(path: Path, map_: FeatureMap | None = None) -> EncodedDataset:
    ds, fields = deserialize_bars(Path(path).read_bytes())
    if map_ is not None:
        ds.feature_map_digest = map_.digest()
        declared = [(s.name, s.kind) for s in map_.fields]
        stored = [(f["name"], f["kind"]) for f in fields]
        if declared != stored:
            raise DataError(f"BARS file fields {stored} do not match map {declared}")
    return ds


def encode_and_store(rows: list[dict], labels: list[int], map_: FeatureMap,
                     path: Path) -> EncodedDataset:
    """Encode token rows and persist them in the BARS1 layout."""
    ds = EncodedDataset(
        feature_map_digest=map_.digest(),
        columns=encode_rows(rows, map_),
        labels=np.asarray(labels, dtype=np.uint8),
    )
    ds.md5 = write_bars(ds, map_, path)
    return ds


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def write_manifest(directory: Path, map_: FeatureMap, seed: int,
                   file_md5: dict[str, str], dataset_id: str,
                   extra: dict | None = None) -> Path:
    manifest = {
        "dataset_id": dataset_id,
        "prng": PRNG_NAME,
        "split_seed": seed,
        "split_ratios": [8, 1, 1],
        "md5": file_md5,
        "feature_map_digest": map_.digest(),
        "feature_map": map_.to_dict(),
    }
    if extra:
        manifest.update(extra)
    path = Path(directory) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_manifest(directory: Path) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise DataError(f"no manifest.json under {directory}")
    return json.loads(path.read_text())


def load_split(directory: Path) -> tuple[SplitTriple, FeatureMap, dict]:
    directory = Path(directory)
    manifest = load_manifest(directory)
    map_ = FeatureMap.from_dict(manifest["feature_map"])
    parts = {}
    for part in ("train", "validation", "test"):
        ds = read_bars(directory / f"{part}.bars", map_)
        expected = manifest["md5"][part]
        if ds.md5 != expected:
            raise DataError(f"{part}.bars md5 {ds.md5} != manifest {expected}")
        parts[part] = ds
    triple = SplitTriple(parts["train"], parts["validation"], parts["test"],
                         seed=manifest["split_seed"])
    return triple, map_, manifest


# ---------------------------------------------------------------------------
# Batch iteration
# ---------------------------------------------------------------------------


def _slice_batch(ds: EncodedDataset, idx: np.ndarray) -> Batch:
    return Batch(columns={k: v[idx] for k, v in ds.columns.items()},
                 labels=ds.labels[idx].astype(np.float64))


def iterate_batches(ds: EncodedDataset, batch_size: int,
                    shuffle_seed: int | None = None, epoch: int = 0,
                    prefetch: bool = False) -> Iterator[Batch]:
    """Yield batches in storage order, or in a seeded per-epoch shuffle
    when shuffle_seed is given. The final partial batch is always emitted."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n = len(ds)
    if shuffle_seed is None:
        order = np.arange(n)
    else:
        order = np.random.default_rng([shuffle_seed, epoch]).permutation(n)
    starts = range(0, n, batch_size)

    def generate() -> Iterator[Batch]:
        for s in starts:
            yield _slice_batch(ds, order[s:s + batch_size])

    if not prefetch:
        yield from generate()
        return
    # One background producer, bounded queue; delivery order is unchanged.
    q: queue.Queue = queue.Queue(maxsize=2)
    _END = object()

    def produce():
        for batch in generate():
            q.put(batch)
        q.put(_END)

    worker = threading.Thread(target=produce, daemon=True)
    worker.start()
    while True:
        item = q.get()
        if item is _END:
            break
        yield item
    worker.join()
