"""Column metadata, ordinal coding, z-scoring and CSV/JSON interchange."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class SchemaError(ValueError):
    pass


class UnknownCategoryError(KeyError):
    pass


class DegenerateColumnError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # "categorical" | "continuous"
    cardinality: int = 0
    mean: float = 0.0
    std: float = 1.0
    categories: tuple[str, ...] = ()


@dataclass
class TabularSchema:
    """Ordered column records; categorical columns come first."""

    columns: list[ColumnSpec] = field(default_factory=list)

    def __post_init__(self):
        seen_cont = False
        for c in self.columns:
            if c.kind == "categorical":
                if seen_cont:
                    raise SchemaError("categorical columns must precede continuous ones")
                if c.cardinality < 2:
                    raise SchemaError(f"column {c.name!r}: cardinality must be >= 2")
            elif c.kind == "continuous":
                seen_cont = True
                if not c.std > 0:
                    raise SchemaError(f"column {c.name!r}: std must be > 0")
            else:
                raise SchemaError(f"column {c.name!r}: unknown kind {c.kind!r}")

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    @property
    def n_categorical(self) -> int:
        return sum(c.kind == "categorical" for c in self.columns)

    @property
    def n_continuous(self) -> int:
        return self.n_columns - self.n_categorical

    @property
    def cardinalities(self) -> list[int]:
        return [c.cardinality for c in self.columns if c.kind == "categorical"]

    @property
    def total_categories(self) -> int:
        return int(sum(self.cardinalities))

    @property
    def offsets(self) -> np.ndarray:
        """Start row of each categorical column's block in the embedding table."""
        return np.concatenate([[0], np.cumsum(self.cardinalities)[:-1]]).astype(np.int64)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def to_json(self) -> str:
        return json.dumps({"columns": [asdict(c) for c in self.columns]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TabularSchema":
        doc = json.loads(text)
        cols = []
        for c in doc["columns"]:
            c = dict(c)
            c["categories"] = tuple(c.get("categories", ()))
            cols.append(ColumnSpec(**c))
        return cls(cols)

    def validate_values(self, values: np.ndarray) -> None:
        if values.ndim != 2 or values.shape[1] != self.n_columns:
            raise SchemaError(f"expected [B, {self.n_columns}] values, got {values.shape}")
        na = self.n_categorical
        cat = values[:, :na]
        if np.any(cat != np.round(cat)) or np.any(cat < 0) or np.any(cat >= np.asarray(self.cardinalities)):
            raise SchemaError("categorical entry outside [0, cardinality)")


class OrdinalEncoder:
    """Lexicographic code assignment for one categorical column."""

    def __init__(self, categories: Sequence[str]):
        self.categories = tuple(categories)
        self._index = {v: i for i, v in enumerate(self.categories)}

    @classmethod
    def fit(cls, column: Sequence) -> "OrdinalEncoder":
        values = [str(v) for v in column]
        if not values:
            raise SchemaError("cannot encode an empty column")
        cats = sorted(set(values))
        if len(cats) < 2:
            raise SchemaError("categorical column needs at least 2 distinct values")
        return cls(cats)

    @property
    def cardinality(self) -> int:
        return len(self.categories)

    def transform(self, column: Sequence) -> np.ndarray:
        try:
            return np.array([self._index[str(v)] for v in column], dtype=np.int64)
        except KeyError as e:
            raise UnknownCategoryError(f"unseen category {e.args[0]!r}") from None

    def inverse(self, codes) -> list[str]:
        return [self.categories[int(c)] for c in codes]


def ordinal_encode(column: Sequence) -> tuple[np.ndarray, int, OrdinalEncoder]:
    """Codes in lexicographic order of distinct values, plus cardinality and encoder."""
    enc = OrdinalEncoder.fit(column)
    return enc.transform(column), enc.cardinality, enc


def zscore_fit_transform(train, eval_=None):
    """Standardize with population statistics of ``train``.

    Returns ``(train_z, eval_z, mean, std)``; ``eval_z`` is None when no eval
    column is given.
    """
    train = np.asarray(train, dtype=np.float64)
    mean = float(train.mean())
    std = float(train.std())
    if not std > 0:
        raise DegenerateColumnError("training column has zero variance")
    tz = ((train - mean) / std).astype(np.float32)
    ez = None if eval_ is None else ((np.asarray(eval_, dtype=np.float64) - mean) / std).astype(np.float32)
    return tz, ez, mean, std


def build_schema(raw_columns: dict[str, Sequence], kinds: dict[str, str],
                 train_rows: np.ndarray | None = None) -> tuple[TabularSchema, np.ndarray]:
    """Encode raw columns into the model layout.

    Categorical columns are placed first (in the given order), then continuous
    ones. Encoders and z-score statistics are fit on ``train_rows`` (all rows
    when None). Returns the schema and the encoded ``[n, N]`` float32 matrix.
    """
    names = list(raw_columns)
    cat_names = [n for n in names if kinds[n] == "categorical"]
    con_names = [n for n in names if kinds[n] == "continuous"]
    n = len(next(iter(raw_columns.values())))
    rows = np.arange(n) if train_rows is None else np.asarray(train_rows)
    specs, out = [], []
    for name in cat_names:
        col = list(raw_columns[name])
        enc = OrdinalEncoder.fit([col[i] for i in rows])
        out.append(enc.transform(col).astype(np.float32))
        specs.append(ColumnSpec(name, "categorical", enc.cardinality, categories=enc.categories))
    for name in con_names:
        col = np.asarray(raw_columns[name], dtype=np.float64)
        _, z, mu, sd = zscore_fit_transform(col[rows], col)
        out.append(z)
        specs.append(ColumnSpec(name, "continuous", mean=mu, std=sd))
    return TabularSchema(specs), np.stack(out, axis=1).astype(np.float32)


def write_csv(path, schema: TabularSchema, values: np.ndarray, labels=None) -> None:
    """Write encoded values with a header row; categorical codes are written as integers."""
    path = Path(path)
    na = schema.n_categorical
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        header = schema.names + (["label"] if labels is not None else [])
        w.writerow(header)
        for i, row in enumerate(values):
            cells = [str(int(v)) for v in row[:na]] + [repr(float(v)) for v in row[na:]]
            if labels is not None:
                cells.append(str(int(labels[i])))
            w.writerow(cells)


def read_csv(path, schema: TabularSchema) -> tuple[np.ndarray, np.ndarray | None]:
    path = Path(path)
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    has_label = header[-1] == "label"
    cols = header[:-1] if has_label else header
    if cols != schema.names:
        raise SchemaError(f"CSV header {cols} does not match schema {schema.names}")
    arr = np.array([[float(x) for x in row[: len(cols)]] for row in rows], dtype=np.float32)
    labels = np.array([int(row[-1]) for row in rows], dtype=np.int64) if has_label else None
    schema.validate_values(arr)
    return arr, labels
