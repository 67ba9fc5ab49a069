"""CSV codec for survey datasets and matched output.

Input schema: ``id,period,treated,outcome,x1,...,xk`` with period 0/1 and
treated 0/1. Matched files add ``pair_id,group,round``.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from typing import Optional, TextIO, Union

from .core import MatchedQuad, Observation, Period, Quad, partition
from .errors import InputError
from .protocol import SlicedMatch

BASE_COLUMNS = ("id", "period", "treated", "outcome")
ANNOTATION_COLUMNS = ("pair_id", "group", "round")
_COVARIATE = re.compile(r"^x([1-9][0-9]*)$")


class SchemaError(InputError):
    pass


@dataclass(frozen=True)
class Dataset:
    header: tuple[str, ...]
    rows: tuple[dict[str, str], ...]
    observations: tuple[Observation, ...]
    k: int

    def quad(self) -> Quad:
        return partition(list(self.observations), self.k)


def _check_header(header: Optional[list[str]]) -> int:
    if not header:
        raise SchemaError("line 1: missing header")
    if tuple(header[:4]) != BASE_COLUMNS:
        raise SchemaError(f"line 1: header must start with {','.join(BASE_COLUMNS)}")
    k = 0
    for name in header[4:]:
        m = _COVARIATE.match(name)
        if m:
            if int(m.group(1)) != k + 1:
                raise SchemaError(f"line 1: covariate column {name} out of order (expected x{k + 1})")
            k += 1
        elif name not in ANNOTATION_COLUMNS:
            raise SchemaError(f"line 1: unknown column {name!r}")
    if k == 0:
        raise SchemaError("line 1: no covariate columns x1..xk")
    return k


def _number(value: str, line: int, column: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise SchemaError(f"line {line}, column {column}: not a number: {value!r}") from None
    if not math.isfinite(x):
        raise SchemaError(f"line {line}, column {column}: value must be finite")
    return x


def _flag(value: str, line: int, column: str) -> int:
    if value not in ("0", "1"):
        raise SchemaError(f"line {line}, column {column}: expected 0 or 1, got {value!r}")
    return int(value)


def read_dataset(handle: TextIO) -> Dataset:
    reader = csv.DictReader(handle)
    k = _check_header(reader.fieldnames)
    header = tuple(reader.fieldnames)
    rows, observations, seen = [], [], set()
    for line, row in enumerate(reader, start=2):
        if None in row or any(v is None for v in row.values()):
            raise SchemaError(f"line {line}: wrong number of fields")
        try:
            ident = int(row["id"])
        except ValueError:
            raise SchemaError(f"line {line}, column id: not an integer: {row['id']!r}") from None
        if ident in seen:
            raise SchemaError(f"line {line}, column id: duplicate id {ident}")
        seen.add(ident)
        period = _flag(row["period"], line, "period")
        treated = _flag(row["treated"], line, "treated")
        outcome = _number(row["outcome"], line, "outcome")
        x = tuple(_number(row[f"x{j}"], line, f"x{j}") for j in range(1, k + 1))
        rows.append(row)
        observations.append(Observation(ident, x, bool(treated), Period(period), outcome))
    return Dataset(header, tuple(rows), tuple(observations), k)


def _annotations(matched: Union[MatchedQuad, SlicedMatch, Quad]) -> dict[int, tuple[str, str, str]]:
    """id -> (pair_id, group, round) for every unit in the matched sample.

    Pair ids number the final cross-sectional pairs: BT/BC pairs first, then AT/AC.
    """
    quad = matched.groups if hasattr(matched, "groups") else matched
    survivors = {int(i): g.label for g in quad for i in g.ids.tolist()}
    out: dict[int, tuple[str, str, str]] = {i: ("", label.value, "") for i, label in survivors.items()}
    pairs = getattr(matched, "pairs", ())
    last = getattr(matched, "rounds_used", 1)
    cross = [p for p in pairs if p.round == last and p.tag in ("BT:BC", "AT:AC")]
    cross.sort(key=lambda p: (p.tag != "BT:BC", p.id_a))
    pair_id = 0
    for p in cross:
        if p.id_a in survivors and p.id_b in survivors:
            for i in (p.id_a, p.id_b):
                out[i] = (str(pair_id), survivors[i].value, str(p.round))
            pair_id += 1
    return out


def write_matched(dataset: Dataset, matched, handle: TextIO) -> int:
    """Write surviving input rows in input order, annotated; returns rows written."""
    notes = _annotations(matched)
    header = [c for c in dataset.header if c not in ANNOTATION_COLUMNS] + list(ANNOTATION_COLUMNS)
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(header)
    written = 0
    for row, obs in zip(dataset.rows, dataset.observations):
        if obs.id not in notes:
            continue
        pair_id, group, round_ = notes[obs.id]
        values = dict(row, pair_id=pair_id, group=group, round=round_)
        writer.writerow([values[c] for c in header])
        written += 1
    return written


def write_quad(quad: Quad, handle: TextIO) -> None:
    """Serialise a quad in the input schema (rows grouped BT, BC, AT, AC)."""
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(list(BASE_COLUMNS) + [f"x{j}" for j in range(1, quad.k + 1)])
    for group in quad:
        period = int(group.label.period)
        treated = int(group.label.treated)
        for i, x, y in zip(group.ids.tolist(), group.covariates.tolist(), group.outcomes.tolist()):
            writer.writerow([i, period, treated, repr(y)] + [repr(v) for v in x])


def empty_groups(quad: Quad) -> list[str]:
    return [g.label.value for g in quad if len(g) == 0]

