"""Survey datasets: schema binding, CSV ingestion, missingness masks, rates."""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
import yaml

from .errors import (
    DuplicateId,
    EmptyEligibleSet,
    MissingColumn,
    SchemaError,
    TypeViolation,
)

KINDS = ("binary", "continuous", "categorical", "id")
IMPUTE_KINDS = ("logistic", "pmm")


@dataclass(frozen=True)
class Schema:
    """Column kinds, analysis roles and covariate groups of a survey file.

    ``groups`` maps a group label (e.g. ``"iws"``, ``"capi"``) to the regressor
    columns it holds; together the groups must partition the regressors
    (focus + controls). ``interviewer_columns`` lists the regressors that are
    constant within interviewer and are imputed at the interviewer level.
    ``roster`` optionally names the ``gender`` and ``age`` columns used for
    donor matching.
    """

    columns: dict[str, str]
    outcomes: tuple[str, ...]
    focus: str
    controls: tuple[str, ...]
    interviewer: str
    country: str
    groups: dict[str, tuple[str, ...]]
    interviewer_columns: tuple[str, ...] = ()
    roster: dict[str, str] = field(default_factory=dict)
    respondent_id: str | None = None
    expectation: str | None = None
    impute: dict[str, str] = field(default_factory=dict)
    na_token: str = "NA"

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "controls", tuple(self.controls))
        object.__setattr__(self, "interviewer_columns", tuple(self.interviewer_columns))
        object.__setattr__(self, "groups", {k: tuple(v) for k, v in self.groups.items()})
        self.validate()

    @property
    def regressors(self) -> tuple[str, ...]:
        return (self.focus,) + self.controls

    @property
    def respondent_columns(self) -> tuple[str, ...]:
        return tuple(c for c in self.regressors if c not in self.interviewer_columns)

    def kind(self, column: str) -> str:
        return self.columns[column]

    def impute_kind(self, column: str) -> str:
        if column in self.impute:
            return self.impute[column]
        kind = self.columns[column]
        if kind == "binary":
            return "logistic"
        if kind == "continuous":
            return "pmm"
        return kind

    def validate(self) -> None:
        for name, kind in self.columns.items():
            if kind not in KINDS:
                raise SchemaError(f"column {name!r}: unknown kind {kind!r}")
        named = list(self.outcomes) + list(self.regressors) + [self.interviewer, self.country]
        named += list(self.interviewer_columns) + list(self.roster.values())
        named += [c for c in (self.respondent_id, self.expectation) if c is not None]
        for col in named:
            if col not in self.columns:
                raise SchemaError(f"role refers to undeclared column {col!r}")
        for col in self.outcomes:
            if self.columns[col] != "binary":
                raise SchemaError(f"outcome {col!r} must be binary")
        if self.columns[self.focus] != "binary":
            raise SchemaError(f"focus {self.focus!r} must be binary")
        grouped = [c for cols in self.groups.values() for c in cols]
        if len(grouped) != len(set(grouped)):
            raise SchemaError("covariate groups overlap")
        if set(grouped) != set(self.regressors):
            raise SchemaError("covariate groups must partition the regressors (focus + controls)")
        for col in self.interviewer_columns:
            if col not in self.regressors:
                raise SchemaError(f"interviewer column {col!r} is not a regressor")
        for key in self.roster:
            if key not in ("gender", "age"):
                raise SchemaError(f"unknown roster attribute {key!r}")
        for col, kind in self.impute.items():
            if kind not in IMPUTE_KINDS:
                raise SchemaError(f"column {col!r}: unknown imputation model {kind!r}")

    def to_dict(self) -> dict:
        out = {
            "na_token": self.na_token,
            "columns": dict(self.columns),
            "roles": {
                "outcomes": list(self.outcomes),
                "focus": self.focus,
                "controls": list(self.controls),
                "interviewer": self.interviewer,
                "country": self.country,
            },
            "groups": {k: list(v) for k, v in self.groups.items()},
            "interviewer_columns": list(self.interviewer_columns),
        }
        if self.respondent_id:
            out["roles"]["respondent_id"] = self.respondent_id
        if self.expectation:
            out["roles"]["expectation"] = self.expectation
        if self.roster:
            out["roster"] = dict(self.roster)
        if self.impute:
            out["impute"] = dict(self.impute)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        try:
            roles = d["roles"]
            return cls(
                columns=dict(d["columns"]),
                outcomes=tuple(roles["outcomes"]),
                focus=roles["focus"],
                controls=tuple(roles.get("controls", ())),
                interviewer=roles["interviewer"],
                country=roles["country"],
                groups={k: tuple(v) for k, v in d["groups"].items()},
                interviewer_columns=tuple(d.get("interviewer_columns", ())),
                roster=dict(d.get("roster", {})),
                respondent_id=roles.get("respondent_id"),
                expectation=roles.get("expectation"),
                impute=dict(d.get("impute", {})),
                na_token=str(d.get("na_token", "NA")),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise SchemaError(f"malformed schema: {exc!r}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "Schema":
        """Read a YAML (or JSON) schema file."""
        path = Path(path)
        if not path.is_file():
            raise SchemaError(f"schema file not found: {path}")
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


@dataclass(frozen=True)
class Dataset:
    """Rectangular survey table bound to a :class:`Schema`.

    Missing cells are ``NaN`` (numeric kinds) or ``None`` (id, categorical);
    the mask is derived from the cells, so the two cannot disagree. The index
    holds row ids assigned in file order and is carried through every subset.
    Treat instances as immutable: every transform returns a new one.
    """

    frame: pd.DataFrame
    schema: Schema

    @property
    def n(self) -> int:
        return len(self.frame)

    @property
    def row_ids(self) -> np.ndarray:
        return self.frame.index.to_numpy()

    @property
    def mask(self) -> pd.DataFrame:
        """Boolean frame, True where a cell is missing."""
        return self.frame.isna()

    def column(self, name: str) -> np.ndarray:
        return self.frame[name].to_numpy()

    def subset(self, rows) -> "Dataset":
        """Rows selected by a boolean vector or by row ids."""
        return Dataset(self.frame.loc[np.asarray(rows)].copy(), self.schema)

    def with_frame(self, frame: pd.DataFrame) -> "Dataset":
        return Dataset(frame, self.schema)

    def with_schema(self, **changes) -> "Dataset":
        return Dataset(self.frame, replace(self.schema, **changes))

    def equals(self, other: "Dataset") -> bool:
        return self.schema == other.schema and self.frame.equals(other.frame)


def _convert(raw: pd.Series, name: str, kind: str, na_token: str) -> pd.Series:
    missing = raw.isin([na_token, ""])
    if kind in ("id", "categorical"):
        out = raw.astype(object).where(~missing, None)
        return out
    values = np.full(len(raw), np.nan)
    for i, (cell, miss) in enumerate(zip(raw.to_numpy(), missing.to_numpy())):
        if miss:
            continue
        try:
            v = float(cell)
        except ValueError:
            raise TypeViolation(f"column {name!r}, row {i}: {cell!r} is not numeric") from None
        if not np.isfinite(v):
            raise TypeViolation(f"column {name!r}, row {i}: non-finite value {cell!r}")
        if kind == "binary" and v not in (0.0, 1.0):
            raise TypeViolation(f"column {name!r}, row {i}: {cell!r} is not 0/1")
        values[i] = v
    return pd.Series(values, index=raw.index, name=name)


def from_frame(frame: pd.DataFrame, schema: Schema) -> Dataset:
    """Bind an in-memory frame to a schema, validating kinds and ids."""
    for col in schema.columns:
        if col not in frame.columns:
            raise MissingColumn(f"column {col!r} declared in schema but absent from data")
    frame = frame[list(schema.columns)].reset_index(drop=True)
    frame.index.name = "row_id"
    out = {}
    for col, kind in schema.columns.items():
        series = frame[col]
        if kind in ("id", "categorical"):
            out[col] = series.astype(object).where(series.notna(), None)
            out[col] = out[col].map(lambda v: v if v is None else str(v))
        else:
            try:
                vals = pd.to_numeric(series, errors="raise").astype(float)
            except (ValueError, TypeError) as exc:
                raise TypeViolation(f"column {col!r}: {exc}") from None
            if kind == "binary" and not vals.dropna().isin([0.0, 1.0]).all():
                raise TypeViolation(f"column {col!r} is not 0/1")
            out[col] = vals
    ds = Dataset(pd.DataFrame(out, index=frame.index), schema)
    _check_ids(ds)
    return ds


def _check_ids(ds: Dataset) -> None:
    s = ds.schema
    for col in (s.interviewer, s.country):
        if ds.frame[col].isna().any():
            row = int(np.flatnonzero(ds.frame[col].isna().to_numpy())[0])
            raise TypeViolation(f"row {row} has no {col!r}")
    if s.respondent_id is not None:
        dup = ds.frame[s.respondent_id].duplicated()
        if dup.any():
            first = ds.frame[s.respondent_id][dup].iloc[0]
            raise DuplicateId(f"respondent id {first!r} occurs more than once")


def read_csv_text(text: str, schema: Schema) -> Dataset:
    raw = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    for col in schema.columns:
        if col not in raw.columns:
            raise MissingColumn(f"column {col!r} declared in schema but absent from header")
    raw.index.name = "row_id"
    cols = {
        col: _convert(raw[col], col, kind, schema.na_token)
        for col, kind in schema.columns.items()
    }
    ds = Dataset(pd.DataFrame(cols, index=raw.index), schema)
    _check_ids(ds)
    return ds


def load_csv(path: str | Path, schema: Schema) -> Dataset:
    """Load a survey CSV; cells equal to the NA token or empty become missing."""
    path = Path(path)
    if not path.is_file():
        raise MissingColumn(f"data file not found: {path}")
    return read_csv_text(path.read_text(), schema)


def _fmt_cell(value, kind: str, na: str) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return na
    if kind == "binary":
        return str(int(value))
    if kind == "continuous":
        return repr(float(value))
    return str(value)


def to_csv_text(ds: Dataset) -> str:
    """Serialise with shortest round-trip float formatting."""
    s = ds.schema
    cols = list(s.columns)
    lines = [",".join(cols)]
    columns = [
        [_fmt_cell(v, s.columns[c], s.na_token) for v in ds.frame[c].tolist()] for c in cols
    ]
    for row in zip(*columns):
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_csv(ds: Dataset, path: str | Path) -> None:
    Path(path).write_text(to_csv_text(ds))


def response_rate(ds: Dataset, item: str, rows: np.ndarray | None = None) -> float:
    """Share of ones among eligible (non-missing) rows of a binary indicator."""
    if ds.schema.columns.get(item) != "binary":
        raise TypeViolation(f"{item!r} is not a binary indicator column")
    values = ds.frame[item].to_numpy(dtype=float)
    if rows is not None:
        values = values[np.asarray(rows)]
    values = values[~np.isnan(values)]
    if values.size == 0:
        raise EmptyEligibleSet(f"no eligible rows for {item!r}")
    return float(values.sum() / values.size)


def format_rate(rate: float) -> str:
    return f"{rate:.3f}"


def country_split(ds: Dataset) -> list[tuple[str, Dataset]]:
    """Partition rows by country id, in order of first appearance."""
    country = ds.frame[ds.schema.country]
    out = []
    for code in pd.unique(country):
        rows = (country == code).to_numpy()
        if rows.any():
            out.append((str(code), ds.subset(rows)))
    return out


def categorical_levels(ds: Dataset, columns: Iterable[str]) -> dict[str, list[str]]:
    return {
        c: sorted(ds.frame[c].dropna().unique().tolist())
        for c in columns
        if ds.schema.columns[c] == "categorical"
    }


def design_matrix(
    ds: Dataset,
    columns: Sequence[str] | None = None,
    intercept: bool = True,
    levels: dict[str, list[str]] | None = None,
) -> tuple[np.ndarray, list[str]]:
    """Numeric regressor matrix; categoricals one-hot with the first level dropped.

    Defaults to intercept + focus + controls, so the focus column sits at
    index 1. Missing cells come through as NaN.
    """
    columns = list(ds.schema.regressors if columns is None else columns)
    if levels is None:
        levels = categorical_levels(ds, columns)
    blocks, names = [], []
    if intercept:
        blocks.append(np.ones((ds.n, 1)))
        names.append("_const")
    for col in columns:
        kind = ds.schema.columns[col]
        if kind == "categorical":
            vals = ds.frame[col].to_numpy()
            lv = levels.get(col, [])
            for level in lv[1:]:
                dummy = np.where(pd.isna(vals), np.nan, (vals == level).astype(float))
                blocks.append(dummy.reshape(-1, 1))
                names.append(f"{col}[{level}]")
        elif kind == "id":
            raise TypeViolation(f"id column {col!r} cannot enter a design matrix")
        else:
            blocks.append(ds.frame[col].to_numpy(dtype=float).reshape(-1, 1))
            names.append(col)
    X = np.hstack(blocks) if blocks else np.empty((ds.n, 0))
    return X, names
