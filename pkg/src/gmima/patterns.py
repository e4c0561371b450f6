"""Missing-data patterns, the focus indicator, and CCA / grand-model designs."""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import EmptyCompleteCases, EmptyCountry, PatternMismatch, ValidationError
from .tabular import Dataset, design_matrix


@dataclass(frozen=True)
class PatternSet:
    """Group-level missingness patterns.

    ``patterns[0]`` is the complete pattern (every group observed, coded 1);
    ``patterns[1:]`` are the incomplete ones in order of first occurrence.
    ``assignment`` maps each row (aligned with ``row_ids``) to its pattern id.
    """

    groups: tuple[str, ...]
    patterns: tuple[tuple[int, ...], ...]
    assignment: np.ndarray
    row_ids: np.ndarray
    merged: dict = field(default_factory=dict)

    @property
    def H(self) -> int:
        return len(self.patterns) - 1

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=len(self.patterns))

    @property
    def complete(self) -> np.ndarray:
        return self.assignment == 0

    def to_csv_text(self) -> str:
        rows = [
            {
                "pattern": h,
                **{g: pat[i] for i, g in enumerate(self.groups)},
                "count": int(c),
            }
            for h, (pat, c) in enumerate(zip(self.patterns, self.counts))
        ]
        buf = io.StringIO()
        pd.DataFrame(rows).to_csv(buf, index=False, lineterminator="\n")
        return buf.getvalue()

    def restrict(self, row_ids) -> "PatternSet":
        """Same patterns, assignment restricted to the given rows."""
        pos = pd.Index(self.row_ids).get_indexer(np.asarray(row_ids))
        if (pos < 0).any():
            raise PatternMismatch("rows not covered by the pattern set")
        return PatternSet(self.groups, self.patterns, self.assignment[pos],
                          np.asarray(row_ids), dict(self.merged))


def group_observed(ds: Dataset, groups: dict[str, Sequence[str]] | None = None) -> pd.DataFrame:
    """Per-row group flags: 1 when every column of the group is observed."""
    groups = ds.schema.groups if groups is None else groups
    mask = ds.mask
    return pd.DataFrame(
        {g: (~mask[list(cols)].any(axis=1)).astype(int) for g, cols in groups.items()},
        index=ds.frame.index,
    )


def patterns_from_flags(flags: np.ndarray, groups: Sequence[str], row_ids=None) -> PatternSet:
    flags = np.asarray(flags, dtype=int)
    complete = tuple([1] * flags.shape[1])
    ids = {complete: 0}
    order = [complete]
    assignment = np.empty(flags.shape[0], dtype=int)
    for i, row in enumerate(map(tuple, flags)):
        if row not in ids:
            ids[row] = len(order)
            order.append(row)
        assignment[i] = ids[row]
    if row_ids is None:
        row_ids = np.arange(flags.shape[0])
    return PatternSet(tuple(groups), tuple(order), assignment, np.asarray(row_ids))


def detect_patterns(ds: Dataset, groups: dict[str, Sequence[str]] | None = None) -> PatternSet:
    """Enumerate distinct group-missingness patterns.

    A group is missing for a row when any of its columns is masked there.
    """
    flags = group_observed(ds, groups)
    return patterns_from_flags(flags.to_numpy(), list(flags.columns), ds.row_ids)


def merge_small_patterns(ps: PatternSet, min_rows: int) -> PatternSet:
    """Fold incomplete patterns with fewer than ``min_rows`` rows into the
    nearest (Hamming distance) incomplete pattern that is large enough.

    Ties go to the larger pattern, then to the earlier one. The complete
    pattern is never a merge target. Patterns with no eligible target are
    left alone, with a warning. Patterns with no rows are dropped.
    """
    counts = ps.counts
    big = [h for h in range(1, len(ps.patterns)) if counts[h] >= min_rows]
    small = [h for h in range(1, len(ps.patterns)) if 0 < counts[h] < min_rows]
    if not small and (counts[1:] > 0).all():
        return ps
    target = {}
    for h in small:
        if not big:
            warnings.warn(f"pattern {ps.patterns[h]} has {counts[h]} rows (< {min_rows}) "
                          "and no larger incomplete pattern to merge into", stacklevel=2)
            continue
        dist = [(sum(a != b for a, b in zip(ps.patterns[h], ps.patterns[g])), -counts[g], g)
                for g in big]
        target[h] = min(dist)[2]
        warnings.warn(f"pattern {ps.patterns[h]} ({counts[h]} rows) merged into "
                      f"{ps.patterns[target[h]]}", stacklevel=2)
    keep = [0] + [h for h in range(1, len(ps.patterns)) if h not in target and counts[h] > 0]
    relabel = {old: new for new, old in enumerate(keep)}
    for h, g in target.items():
        relabel[h] = relabel[g]
    assignment = np.array([relabel[a] for a in ps.assignment], dtype=int)
    merged = dict(ps.merged)
    merged.update({ps.patterns[h]: ps.patterns[g] for h, g in target.items()})
    return PatternSet(ps.groups, tuple(ps.patterns[h] for h in keep), assignment,
                      ps.row_ids, merged)


def build_focus_indicator(values, country) -> np.ndarray:
    """1 where a value strictly exceeds its country's median, else 0.

    ``values`` holds one entry per interviewer (0-100 expected response
    rate); NaN stays NaN and does not enter the median.
    """
    values = np.asarray(values, dtype=float)
    country = np.asarray(country)
    out = np.full(values.shape, np.nan)
    for code in pd.unique(country):
        rows = country == code
        observed = values[rows & ~np.isnan(values)]
        if observed.size == 0:
            raise EmptyCountry(f"country {code!r} has no reported expectations")
        med = np.median(observed)
        v = values[rows]
        out[rows] = np.where(np.isnan(v), np.nan, (v > med).astype(float))
    return out


def interviewer_table(ds: Dataset, columns: Iterable[str] | None = None) -> pd.DataFrame:
    """One row per interviewer: country plus interviewer-level columns.

    Takes the first observed value within each interviewer; raises if
    observed values disagree.
    """
    s = ds.schema
    columns = list(s.interviewer_columns if columns is None else columns)
    extra = [c for c in s.roster.values() if c not in columns]
    if s.expectation is not None and s.expectation not in columns:
        extra.append(s.expectation)
    cols = columns + extra
    frame = ds.frame[[s.interviewer, s.country] + cols]
    grouped = frame.groupby(s.interviewer, sort=False)
    if grouped[s.country].nunique().max() > 1:
        raise ValidationError("an interviewer works in more than one country")
    if cols and (grouped[cols].nunique() > 1).any().any():
        bad = grouped[cols].nunique().gt(1).any(axis=1)
        raise ValidationError(
            f"interviewer {bad[bad].index[0]!r} has inconsistent interviewer-level values"
        )
    return grouped.first()


def focus_from_expectation(ds: Dataset, expectation: str | None = None) -> np.ndarray:
    """Row-level focus indicator from an interviewer expectation column.

    The median is taken over interviewers (one value each), not respondents.
    """
    s = ds.schema
    expectation = expectation or s.expectation
    if expectation is None:
        raise ValidationError("schema has no expectation column")
    table = interviewer_table(ds, [expectation])
    flag = build_focus_indicator(table[expectation].to_numpy(dtype=float),
                                 table[s.country].to_numpy())
    lookup = pd.Series(flag, index=table.index)
    return lookup.loc[ds.frame[s.interviewer]].to_numpy()


def complete_case_subset(ds: Dataset, ps: PatternSet) -> Dataset:
    """Rows in the complete pattern."""
    _check_alignment(ds, ps)
    rows = ps.complete
    if not rows.any():
        raise EmptyCompleteCases("no complete cases")
    return ds.subset(rows)


def _check_alignment(ds: Dataset, ps: PatternSet) -> None:
    if len(ps.assignment) != ds.n or not np.array_equal(ps.row_ids, ds.row_ids):
        raise PatternMismatch(
            f"pattern assignment covers {len(ps.assignment)} rows, dataset has {ds.n}"
        )


@dataclass
class GrandDesign:
    """Fill-in regressors W and the pattern-interaction blocks Z_1..Z_H.

    Block h equals W on rows of pattern h and zero elsewhere, intercept
    included, so each block carries its own pattern intercept.
    """

    W: np.ndarray
    Zblocks: list[np.ndarray]
    y: np.ndarray
    names: list[str]
    assignment: np.ndarray
    focus: int = 1

    @property
    def K(self) -> int:
        return self.W.shape[1]

    @property
    def H(self) -> int:
        return len(self.Zblocks)

    @property
    def complete(self) -> np.ndarray:
        return self.assignment == 0

    def matrix(self, blocks: Iterable[int] = ()) -> np.ndarray:
        """[W | Z_h for h in blocks], blocks numbered from 1."""
        blocks = list(blocks)
        return np.hstack([self.W] + [self.Zblocks[h - 1] for h in blocks]) if blocks else self.W

    def column_names(self, blocks: Iterable[int] = ()) -> list[str]:
        out = list(self.names)
        for h in blocks:
            out += [f"p{h}:{n}" for n in self.names]
        return out

    def full(self) -> np.ndarray:
        return self.matrix(range(1, self.H + 1))


def assemble_grand_design(
    filled: Dataset,
    ps: PatternSet,
    outcome: str | None = None,
    levels: dict | None = None,
) -> GrandDesign:
    """Grand-model design from a filled-in dataset and the original patterns."""
    _check_alignment(filled, ps)
    outcome = outcome or filled.schema.outcomes[0]
    W, names = design_matrix(filled, levels=levels)
    if np.isnan(W).any():
        raise ValidationError("filled dataset still has missing regressor cells")
    y = filled.frame[outcome].to_numpy(dtype=float)
    if np.isnan(y).any():
        raise ValidationError(f"outcome {outcome!r} has missing values; subset to eligible rows")
    Z = [W * (ps.assignment == h)[:, None] for h in range(1, len(ps.patterns))]
    focus = names.index(filled.schema.focus)
    return GrandDesign(W=W, Zblocks=Z, y=y, names=names, assignment=ps.assignment.copy(),
                       focus=focus)
