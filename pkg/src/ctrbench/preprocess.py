"""Raw-token preprocessing: per-field transforms and vocabulary building.

The pipeline turns CSV rows into token streams first (numeric
discretization, timestamp expansion, field dropping), then builds one
vocabulary per field from the training split only. Index 0 is reserved
for sequence padding and index 1 for the OOV token in every field.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field as dc_field
from datetime import datetime
from typing import Iterable, Iterator

from ctrbench.errors import ConfigError, DataError

MISSING_TOKEN = "<MISSING>"
PAD_INDEX = 0
OOV_INDEX = 1
SEQUENCE_SEPARATOR = "|"

_KINDS = ("categorical", "numeric", "sequence")
_NUMERIC_TRANSFORMS = ("none", "log_squared_floor")
_TIMESTAMP_LAYOUTS = {"YYMMDDHH": "%y%m%d%H", "YYYYMMDDHH": "%Y%m%d%H"}


@dataclass
class FieldSpec:
    name: str
    kind: str = "categorical"
    min_count: int = 0
    numeric_transform: str = "log_squared_floor"
    max_len: int | None = None
    pooling: str | None = None
    drop: bool = False
    derived_from: str | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"field {self.name!r}: unknown kind {self.kind!r}")
        if self.min_count < 0:
            raise ConfigError(f"field {self.name!r}: min_count must be >= 0")
        if self.kind == "sequence":
            if not self.max_len or self.max_len < 1:
                raise ConfigError(f"sequence field {self.name!r} needs max_len >= 1")
            if self.pooling not in ("mean", "sum"):
                raise ConfigError(f"sequence field {self.name!r} needs pooling mean|sum")
        else:
            if self.max_len is not None or self.pooling is not None:
                raise ConfigError(
                    f"field {self.name!r}: max_len/pooling only apply to sequences")
        if self.kind == "numeric" and self.numeric_transform not in _NUMERIC_TRANSFORMS:
            raise ConfigError(
                f"field {self.name!r}: unknown numeric_transform "
                f"{self.numeric_transform!r}")


def discretize_numeric(x: float | str | None, row: int | None = None,
                       name: str | None = None) -> str:
    """Bucketize one numeric value into a token.

    Missing or negative values get the dedicated missing token so
    missingness stays a learnable signal; 0 <= x <= 2 keeps the integer
    value; larger values map to floor((ln x)^2).
    """
    if x is None or x == "":
        return MISSING_TOKEN
    if isinstance(x, str):
        try:
            x = float(x)
        except ValueError:
            raise DataError(f"non-numeric value {x!r} in numeric column",
                            row=row, field=name)
    if math.isnan(x):
        return MISSING_TOKEN
    if x < 0:
        return MISSING_TOKEN
    if x <= 2:
        return str(int(x))
    return str(int(math.floor(math.log(x) ** 2)))


def expand_timestamp(raw: str, layout: str = "YYMMDDHH", row: int | None = None,
                     name: str | None = None) -> tuple[str, str, str]:
    """(hour, weekday, is_weekend) tokens; Monday is weekday 0."""
    fmt = _TIMESTAMP_LAYOUTS.get(layout)
    if fmt is None:
        raise ConfigError(f"unknown timestamp layout {layout!r}")
    try:
        ts = datetime.strptime(raw, fmt)
    except ValueError:
        raise DataError(f"unparseable timestamp {raw!r}", row=row, field=name)
    weekday = ts.weekday()
    return (f"{ts.hour:02d}", str(weekday), "1" if weekday >= 5 else "0")


@dataclass
class FieldVocab:
    spec: FieldSpec
    index: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.index) + 2  # padding and OOV rows

    def encode(self, token: str) -> int:
        return self.index.get(token, OOV_INDEX)


@dataclass
class FeatureMap:
    """Per-field vocabularies plus the global feature-space bookkeeping."""

    fields: list[FieldSpec]
    vocabs: dict[str, FieldVocab]
    offsets: dict[str, int] = dc_field(default_factory=dict)
    total_features: int = 0

    def __post_init__(self):
        if not self.offsets:
            offset = 0
            for spec in self.fields:
                self.offsets[spec.name] = offset
                offset += self.vocabs[spec.name].size
            self.total_features = offset

    def vocab_size(self, name: str) -> int:
        return self.vocabs[name].size

    def to_dict(self) -> dict:
        return {
            "fields": [
                {
                    "name": s.name, "kind": s.kind, "min_count": s.min_count,
                    "numeric_transform": s.numeric_transform,
                    "max_len": s.max_len, "pooling": s.pooling,
                    "drop": s.drop, "derived_from": s.derived_from,
                }
                for s in self.fields
            ],
            "vocabs": {
                name: sorted(v.index.items(), key=lambda kv: kv[1])
                for name, v in self.vocabs.items()
            },
            "offsets": self.offsets,
            "total_features": self.total_features,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FeatureMap":
        fields = [FieldSpec(**f) for f in payload["fields"]]
        vocabs = {
            name: FieldVocab(spec=next(s for s in fields if s.name == name),
                             index=dict(pairs))
            for name, pairs in payload["vocabs"].items()
        }
        return cls(fields=fields, vocabs=vocabs)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.md5(blob).hexdigest()


def build_feature_map(rows: Iterable[dict[str, str]],
                      specs: list[FieldSpec]) -> FeatureMap:
    """Count tokens per field over already-transformed rows; tokens seen at
    least min_count times get indices from 2 upward, ordered by descending
    count then token string. Rarer tokens encode to the OOV index."""
    active = [s for s in specs if not s.drop]
    if not active:
        raise ConfigError("no fields left after dropping")
    names = [s.name for s in active]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate field names in {names}")
    counters: dict[str, Counter] = {s.name: Counter() for s in active}
    n_rows = 0
    for row in rows:
        n_rows += 1
        for spec in active:
            value = row[spec.name]
            if spec.kind == "sequence":
                for token in value:
                    counters[spec.name][token] += 1
            else:
                counters[spec.name][value] += 1
    if n_rows == 0:
        raise ConfigError("cannot build a feature map from zero rows")
    vocabs = {}
    for spec in active:
        kept = sorted(
            (t for t, c in counters[spec.name].items() if c >= spec.min_count),
            key=lambda t: (-counters[spec.name][t], t),
        )
        vocabs[spec.name] = FieldVocab(
            spec=spec, index={t: i + 2 for i, t in enumerate(kept)})
    return FeatureMap(fields=active, vocabs=vocabs)


# ---------------------------------------------------------------------------
# CSV ingestion and the token table
# ---------------------------------------------------------------------------


@dataclass
class DatasetRecipe:
    """Declarative description of how to read one raw CSV.

    The split protocol is fixed at 8:1:1; a recipe may state it
    explicitly but cannot change it.
    """

    label: str
    fields: list[FieldSpec]
    timestamp_layout: str = "YYMMDDHH"
    split_seed: int = 2018
    ratios: tuple[int, int, int] = (8, 1, 1)

    _ALLOWED = {"label", "fields", "timestamp_layout", "split_seed", "ratios"}
    _FIELD_KEYS = {"name", "kind", "min_count", "numeric_transform", "max_len",
                   "pooling", "drop", "derived_from"}

    @classmethod
    def from_dict(cls, payload: dict) -> "DatasetRecipe":
        unknown = set(payload) - cls._ALLOWED
        if unknown:
            raise ConfigError(f"unknown recipe keys: {sorted(unknown)}")
        if "label" not in payload or "fields" not in payload:
            raise ConfigError("recipe needs 'label' and 'fields'")
        specs = []
        for f in payload["fields"]:
            bad = set(f) - cls._FIELD_KEYS
            if bad:
                raise ConfigError(f"unknown field keys: {sorted(bad)}")
            specs.append(FieldSpec(**f))
        known = {s.name for s in specs}
        for s in specs:
            if s.derived_from is not None:
                if s.derived_from not in known:
                    raise ConfigError(
                        f"derived field {s.name!r} references unknown source "
                        f"{s.derived_from!r}")
                _derived_component(s.name)  # validates the name convention
        ratios = tuple(payload.get("ratios", (8, 1, 1)))
        if ratios != (8, 1, 1):
            raise ConfigError(
                f"split ratios are fixed at 8:1:1 by the protocol, got {ratios}")
        return cls(label=payload["label"], fields=specs,
                   timestamp_layout=payload.get("timestamp_layout", "YYMMDDHH"),
                   split_seed=int(payload.get("split_seed", 2018)),
                   ratios=ratios)

    def output_specs(self) -> list[FieldSpec]:
        """Field specs present in the token table, in declaration order."""
        return [s for s in self.fields if not s.drop]


# A derived field picks one expansion component by its name: "hour",
# "weekday", "is_weekend", or any name with that suffix ("ts_hour", ...).
_DERIVED_COMPONENTS = ("is_weekend", "weekday", "hour")


def _derived_component(name: str) -> str:
    for comp in _DERIVED_COMPONENTS:
        if name == comp or name.endswith("_" + comp):
            return comp
    raise ConfigError(
        f"derived field {name!r} must be named after a timestamp component "
        f"{_DERIVED_COMPONENTS}")


def _expand_row(raw: dict[str, str], recipe: DatasetRecipe, row_no: int) -> dict:
    """Apply drops, numeric discretization, timestamp expansion, and
    sequence splitting to one CSV row. Sequences become token lists."""
    out: dict[str, object] = {}
    expanded_sources: dict[str, dict[str, str]] = {}
    for spec in recipe.fields:
        if spec.drop:
            continue
        if spec.derived_from is not None:
            source = spec.derived_from
            if source not in expanded_sources:
                if source not in raw:
                    raise DataError("derived source column missing from CSV",
                                    row=row_no, field=source)
                hour, weekday, weekend = expand_timestamp(
                    raw[source], recipe.timestamp_layout, row=row_no, name=source)
                expanded_sources[source] = {
                    "hour": hour, "weekday": weekday, "is_weekend": weekend}
            out[spec.name] = expanded_sources[source][_derived_component(spec.name)]
            continue
        if spec.name not in raw:
            raise DataError("column missing from CSV", row=row_no, field=spec.name)
        value = raw[spec.name]
        if spec.kind == "numeric":
            out[spec.name] = discretize_numeric(value, row=row_no, name=spec.name)
        elif spec.kind == "sequence":
            tokens = [t for t in value.split(SEQUENCE_SEPARATOR) if t != ""]
            out[spec.name] = tokens[: spec.max_len]
        else:
            out[spec.name] = value if value != "" else MISSING_TOKEN
    return out


def read_csv_rows(path, recipe: DatasetRecipe) -> Iterator[tuple[dict, int]]:
    """Yield (token_row, label) pairs from a raw CSV file."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError("CSV has no header row")
        for row_no, raw in enumerate(reader):
            if recipe.label not in raw:
                raise DataError("label column missing", row=row_no,
                                field=recipe.label)
            label_text = raw[recipe.label]
            if label_text not in ("0", "1"):
                raise DataError(f"label must be 0/1, got {label_text!r}",
                                row=row_no, field=recipe.label)
            yield _expand_row(raw, recipe, row_no), int(label_text)
