"""Country-by-item AME tables, expectation histograms and response-rate tables."""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import InvalidBinWidth, ValidationError
from .logit import STAR_THRESHOLDS, AmeResult
from .patterns import interviewer_table
from .simulate import COUNTRIES, ITEMS
from .tabular import Dataset, format_rate


def country_order(codes) -> list[str]:
    """Table order for the standard countries, extra codes appended alphabetically."""
    codes = set(codes)
    return [c for c in COUNTRIES if c in codes] + sorted(codes - set(COUNTRIES))


def item_order(items) -> list[str]:
    items = set(items)
    return [i for i in ITEMS if i in items] + sorted(items - set(ITEMS))


def _fixed(x: float) -> str:
    s = f"{x:.3f}"
    return "0.000" if s == "-0.000" else s


def format_cell(result: AmeResult) -> tuple[str, str]:
    """Estimate line with stars, and the standard error in parentheses."""
    return f"{_fixed(result.ame)}{result.stars}", f"({_fixed(result.se)})"


def star_note() -> str:
    return ", ".join(f"{mark} p<{threshold:g}" for mark, threshold in STAR_THRESHOLDS)


@dataclass
class AmeTable:
    """AME results keyed by (country, item) plus a caption."""

    cells: dict[tuple[str, str], AmeResult]
    caption: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def countries(self) -> list[str]:
        return country_order({c for c, _ in self.cells})

    @property
    def items(self) -> list[str]:
        return item_order({i for _, i in self.cells})

    def text(self) -> str:
        """Estimates over parenthesised SEs, stars hanging right of the number."""
        items, countries = self.items, self.countries
        bodies = {k: (_fixed(r.ame), f"({_fixed(r.se)})") for k, r in self.cells.items()}
        B = max([len(x) for pair in bodies.values() for x in pair] + [len(i) for i in items])
        S = max(len(mark) for mark, _ in STAR_THRESHOLDS)
        L = max(len("Country"), *(len(c) for c in countries))
        lines = [self.caption] if self.caption else []
        lines.append("  ".join(["Country".ljust(L)] + [i.rjust(B) + " " * S for i in items]).rstrip())
        for c in countries:
            top, bottom = [c.ljust(L)], [" " * L]
            for i in items:
                if (c, i) in self.cells:
                    est, se = bodies[(c, i)]
                    top.append(est.rjust(B) + self.cells[(c, i)].stars.ljust(S))
                    bottom.append(se.rjust(B) + " " * S)
                else:
                    top.append(" " * (B + S))
                    bottom.append(" " * (B + S))
            lines += ["  ".join(top).rstrip(), "  ".join(bottom).rstrip()]
        lines.append(f"Note: {star_note()} (two-sided); standard errors in parentheses.")
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        rows = []
        for c in self.countries:
            for i in self.items:
                if (c, i) in self.cells:
                    r = self.cells[(c, i)]
                    rows.append([c, i, repr(r.ame), repr(r.se), repr(r.z), repr(r.p), r.stars])
        out = ["country,item,ame,se,z,p,stars"] + [",".join(r) for r in rows]
        return "\n".join(out) + "\n"


def format_ame_table(results: Mapping, caption: str = "") -> tuple[str, str]:
    """Render per-country AME results as (text table, CSV).

    ``results`` maps ``(country, item)`` to :class:`AmeResult`, or country to
    a mapping of item to :class:`AmeResult`.
    """
    cells = {}
    for key, value in results.items():
        if isinstance(value, AmeResult):
            cells[key] = value
        else:
            for item, r in value.items():
                cells[(key, item)] = r
    if not cells:
        raise ValidationError("need at least one country")
    table = AmeTable(cells, caption)
    return table.text(), table.csv()


def parse_ame_csv(text: str) -> dict[tuple[str, str], AmeResult]:
    """Inverse of the CSV emitted by :func:`format_ame_table`."""
    frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    return {
        (r.country, r.item): AmeResult(float(r.ame), float(r.se), float(r.z), float(r.p), r.stars)
        for r in frame.itertuples()
    }


# --------------------------------------------------------------------------
# histograms


def emit_histogram(values, country, width: float) -> str:
    """Per-country counts in left-closed bins [k*w, (k+1)*w), as CSV.

    Bins run from the lowest to the highest occupied bin of each country.
    Missing values are skipped; countries without values are omitted with
    a warning.
    """
    if not (isinstance(width, (int, float)) and math.isfinite(width) and width > 0):
        raise InvalidBinWidth(f"bin width must be a positive number, got {width!r}")
    values = np.asarray(values, dtype=float)
    country = np.asarray(country)
    if values.shape != country.shape:
        raise ValidationError("values and country labels differ in length")
    ok = ~np.isnan(values)
    if ((values[ok] < 0) | (values[ok] > 100)).any():
        raise ValidationError("expectations must lie in [0, 100]")
    lines = ["country,bin_lower,bin_upper,count"]
    for code in country_order(pd.unique(country).tolist()):
        v = values[(country == code) & ok]
        if v.size == 0:
            warnings.warn(f"country {code!r} has no values; omitted", stacklevel=2)
            continue
        k = np.floor(v / width + 1e-12).astype(int)
        counts = np.bincount(k - k.min())
        for j, n in enumerate(counts):
            lo = (k.min() + j) * width
            lines.append(f"{code},{lo:g},{lo + width:g},{n}")
    return "\n".join(lines) + "\n"


def expectation_histogram(ds: Dataset, width: float = 5.0) -> str:
    """Histogram of interviewer expectations, one value per interviewer."""
    s = ds.schema
    if s.expectation is None:
        raise ValidationError("schema has no expectation column")
    table = interviewer_table(ds, [s.expectation])
    return emit_histogram(table[s.expectation].to_numpy(dtype=float),
                          table[s.country].to_numpy(), width)


# --------------------------------------------------------------------------
# response and participation rates


def rate_table(counts: Mapping[str, tuple[int, int]], total_label: str = "Total",
               order: Sequence[str] | None = None) -> str:
    """CSV of label, total, observed and rate, with a pooled total row."""
    order = list(order) if order is not None else list(counts)
    lines = ["label,total,observed,rate"]
    T = O = 0
    for label in order:
        total, observed = counts[label]
        if total <= 0:
            raise ValidationError(f"{label!r}: total must be positive")
        T += total
        O += observed
        lines.append(f"{label},{total},{observed},{format_rate(observed / total)}")
    lines.append(f"{total_label},{T},{O},{format_rate(O / T)}")
    return "\n".join(lines) + "\n"


def iws_participation(ds: Dataset, group: str | None = None) -> str:
    """Interviewers per country and the share observed on the interviewer-level group.

    The group defaults to the one holding the focus regressor.
    """
    s = ds.schema
    if group is None:
        group = next(g for g, cols in s.groups.items() if s.focus in cols)
    cols = list(s.groups[group])
    table = interviewer_table(ds, cols)
    observed = ~table[cols].isna().any(axis=1)
    counts = {}
    for code in country_order(table[s.country].unique()):
        rows = (table[s.country] == code).to_numpy()
        counts[code] = (int(rows.sum()), int(observed[rows].sum()))
    return rate_table(counts)


def item_response_rates(ds: Dataset, items: Sequence[str] | None = None) -> str:
    """Eligible respondents and response rate per outcome item."""
    items = list(items or ds.schema.outcomes)
    lines = ["item,eligible,responded,rate"]
    for item in items:
        v = ds.frame[item].to_numpy(dtype=float)
        v = v[~np.isnan(v)]
        if v.size == 0:
            continue
        lines.append(f"{item},{v.size},{int(v.sum())},{format_rate(v.mean())}")
    return "\n".join(lines) + "\n"
