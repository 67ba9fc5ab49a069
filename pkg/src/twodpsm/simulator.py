"""Monte Carlo study: data generation, scenario grid, replications and metrics.

Scenarios are a prevalence letter (A: 100, B: 300, C: 500 treated out of 1000
per period) crossed with a level 0-4 that sets the after-period treated mean
shift (0.1, 0.3, 0.5, 1, 2 on every covariate).

Randomness is organised for common random numbers: the standard-normal draws
behind each group's pool are shared by all scenarios, and a replication's row
sample depends only on (master seed, letter, replication). Scenarios at
different levels therefore differ only in the after-treated mean shift, and
all schemes see the same datasets. Matching randomness is seeded per
(letter, scheme, replication), so the level changes nothing but the data.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO

import multiprocessing as mp
import numpy as np

from .balance import balance_report
from .core import DEFAULT_SCHEMES, Group, GroupLabel, Quad, Scheme, SchemeTag
from .errors import (
    GroupEmptied,
    MaxRoundsExceeded,
    PoolExhausted,
    SingularCovariance,
    TwoDPSMError,
)
from .estimators import Estimate, diff_in_means_did, naive_did, regression_did
from .protocol import ProtocolConfig, apply_scheme

log = logging.getLogger(__name__)

LETTERS = ("A", "B", "C")
LEVELS = (0, 1, 2, 3, 4)
SCHEME_ORDER = tuple(SchemeTag)


def _paired_covariance(k: int = 4, strong: float = 0.9, weak: float = 0.2) -> np.ndarray:
    cov = np.full((k, k), weak)
    for i in range(0, k - 1, 2):
        cov[i, i + 1] = cov[i + 1, i] = strong
    np.fill_diagonal(cov, 1.0)
    return cov


@dataclass(frozen=True, eq=False)
class DgpParams:
    k: int = 4
    covariance: np.ndarray = field(default_factory=_paired_covariance)
    mean_bt: tuple[float, ...] = (0.1, 0.1, 0.1, 0.1)
    mean_bc: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    mean_ac: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    at_shifts: tuple[float, ...] = (0.1, 0.3, 0.5, 1.0, 2.0)
    treatment_effect: float = 0.6
    outcome_beta: tuple[float, ...] = (
        math.log(1.25), math.log(1.5), math.log(1.75), math.log(2.0),
    )
    error_variance: float = 0.5
    pool_size: int = 100_000
    n_per_period: int = 1000
    treated_per_period: tuple[int, int, int] = (100, 300, 500)
    replications: int = 1000

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        object.__setattr__(self, "covariance", cov)
        if cov.shape != (self.k, self.k) or not np.allclose(cov, cov.T):
            raise ValueError("covariance must be a symmetric k x k matrix")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance must be positive definite") from None
        for name in ("mean_bt", "mean_bc", "mean_ac", "outcome_beta"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != self.k:
                raise ValueError(f"{name} must have length {self.k}")
            object.__setattr__(self, name, value)
        if len(self.at_shifts) != len(LEVELS):
            raise ValueError(f"at_shifts needs {len(LEVELS)} entries")
        if self.error_variance < 0:
            raise ValueError("error_variance must be non-negative")
        if any(not 0 < t < self.n_per_period for t in self.treated_per_period):
            raise ValueError("treated_per_period entries must lie in (0, n_per_period)")
        if self.replications < 1 or self.pool_size < 1:
            raise ValueError("replications and pool_size must be positive")

    def mean_at(self, level: int) -> tuple[float, ...]:
        return (float(self.at_shifts[level]),) * self.k

    def group_mean(self, label: GroupLabel, level: int) -> np.ndarray:
        if label == GroupLabel.AT:
            return np.array(self.mean_at(level))
        return np.array({GroupLabel.BT: self.mean_bt, GroupLabel.BC: self.mean_bc,
                         GroupLabel.AC: self.mean_ac}[label])

    def treated_count(self, letter: str) -> int:
        return self.treated_per_period[LETTERS.index(letter)]


@dataclass(frozen=True, order=True)
class ScenarioId:
    letter: str
    level: int

    def __post_init__(self):
        if self.letter not in LETTERS or self.level not in LEVELS:
            raise ValueError(f"unknown scenario {self.letter}{self.level}")

    def __str__(self) -> str:
        return f"{self.letter}{self.level}"

    @classmethod
    def parse(cls, text: str) -> "ScenarioId":
        text = text.strip().upper()
        if len(text) != 2 or not text[1].isdigit():
            raise ValueError(f"unknown scenario {text!r}")
        return cls(text[0], int(text[1]))

    @property
    def index(self) -> int:
        return LETTERS.index(self.letter) * len(LEVELS) + self.level


ALL_SCENARIOS = tuple(ScenarioId(l, v) for l in LETTERS for v in LEVELS)


def sample_mvn(mean, covariance, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws from N(mean, covariance) via a Cholesky transform of standard normals."""
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.asarray(covariance, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise SingularCovariance("covariance is not positive definite") from None
    if n == 0:
        return np.empty((0, len(mean)))
    return mean + rng.standard_normal((n, len(mean))) @ chol.T


def generate_outcome(x, treated: bool, period, params: DgpParams, rng=None, noise=None):
    """Y = effect * [treated and after] + x . beta + e, e ~ N(0, error_variance).

    Works row-wise on a covariate matrix too. Pass ``noise`` to fix e (e.g. 0).
    """
    x = np.asarray(x, dtype=float)
    exposed = bool(treated) and int(period) == 1
    mean = params.treatment_effect * exposed + x @ np.asarray(params.outcome_beta)
    if noise is None:
        noise = rng.normal(0.0, math.sqrt(params.error_variance), size=np.shape(mean))
    return mean + noise


@dataclass(frozen=True, eq=False)
class Pools:
    """Per-group populations for one level; datasets are sampled from these."""

    level: int
    covariates: dict[GroupLabel, np.ndarray]
    outcomes: dict[GroupLabel, np.ndarray]

    @property
    def size(self) -> int:
        return len(next(iter(self.outcomes.values())))


class PoolFactory:
    """Builds pools from shared standard-normal draws, caching per level."""

    def __init__(self, params: DgpParams, master_seed: int):
        self.params = params
        chol = np.linalg.cholesky(params.covariance)
        self._base: dict[GroupLabel, tuple[np.ndarray, np.ndarray]] = {}
        for g_index, label in enumerate(GroupLabel):
            rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(0, g_index)))
            z = rng.standard_normal((params.pool_size, params.k)) @ chol.T
            eps = rng.normal(0.0, math.sqrt(params.error_variance), params.pool_size)
            self._base[label] = (z, eps)
        self._cache: dict[int, Pools] = {}

    def __call__(self, level: int) -> Pools:
        if level not in self._cache:
            xs, ys = {}, {}
            for label, (z, eps) in self._base.items():
                x = z + self.params.group_mean(label, level)
                xs[label] = x
                ys[label] = generate_outcome(x, label.treated, label.period, self.params, noise=eps)
            self._cache[level] = Pools(level, xs, ys)
        return self._cache[level]


def draw_dataset(
    scenario: ScenarioId,
    params: DgpParams,
    pools: Pools,
    rng: np.random.Generator,
    id_offset: Optional[int] = None,
) -> Quad:
    """Sample one dataset: per period, the scenario's treated count plus controls.

    Rows are drawn without replacement within a dataset. Ids run consecutively
    from ``id_offset`` in BT, BC, AT, AC order; by default the offset is a
    random block of 2 * n_per_period ids, so independent draws do not collide.
    """
    n_treated = params.treated_count(scenario.letter)
    counts = {
        GroupLabel.BT: n_treated,
        GroupLabel.BC: params.n_per_period - n_treated,
        GroupLabel.AT: n_treated,
        GroupLabel.AC: params.n_per_period - n_treated,
    }
    if id_offset is None:
        id_offset = int(rng.integers(0, 2**40)) * 2 * params.n_per_period
    groups = {}
    next_id = id_offset
    for label in GroupLabel:
        n = counts[label]
        if n > pools.size:
            raise PoolExhausted(f"pool of {pools.size} cannot supply {n} rows for {label.value}")
        rows = np.sort(rng.choice(pools.size, size=n, replace=False))
        groups[label.value.lower()] = Group(
            label,
            np.arange(next_id, next_id + n),
            pools.covariates[label][rows],
            pools.outcomes[label][rows],
        )
        next_id += n
    return Quad(**groups)


def _groups(matched) -> Quad:
    return matched.groups if hasattr(matched, "groups") else matched


def _estimate(tag: SchemeTag, matched) -> Estimate:
    if tag == SchemeTag.NAIVE:
        return naive_did(matched)
    if tag == SchemeTag.ONE_D:
        return regression_did(matched)
    return diff_in_means_did(matched)


@dataclass(frozen=True, eq=False)
class ReplicationOutcome:
    replication: int
    estimate: Optional[Estimate]
    matched_size: int
    failure: Optional[str] = None
    balance_pre: Optional[np.ndarray] = None
    balance_post: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.estimate is not None


@dataclass(frozen=True)
class StudyConfig:
    """Knobs for a study run beyond the data-generating parameters."""

    schemes: dict = field(default_factory=lambda: dict(DEFAULT_SCHEMES))
    max_rounds: int = 20
    caliper_scale: str = "probability"
    with_replacement: bool = False
    refit_each_round: bool = False
    keep_pairs: bool = True
    na_threshold: float = 0.5
    record_balance: bool = False
    workers: int = 1


def replication_seeds(master_seed: int, scenario: ScenarioId, tag: SchemeTag, rep: int):
    """(dataset seed, matching seed) for one replication."""
    data = np.random.SeedSequence(master_seed, spawn_key=(1, LETTERS.index(scenario.letter), rep))
    match = np.random.SeedSequence(
        master_seed, spawn_key=(2, LETTERS.index(scenario.letter), SCHEME_ORDER.index(tag), rep)
    )
    return data, match


def run_replication(
    scenario: ScenarioId,
    scheme: Scheme,
    params: DgpParams,
    pools: Pools,
    master_seed: int,
    rep: int,
    study: StudyConfig = StudyConfig(),
) -> ReplicationOutcome:
    data_seed, match_seed = replication_seeds(master_seed, scenario, scheme.tag, rep)
    quad = draw_dataset(
        scenario, params, pools, np.random.default_rng(data_seed),
        id_offset=rep * 2 * params.n_per_period,
    )
    config = ProtocolConfig(
        scheme=scheme,
        max_rounds=study.max_rounds,
        seed=0,
        caliper_scale=study.caliper_scale,
        with_replacement=study.with_replacement,
        refit_each_round=study.refit_each_round,
        keep_pairs=study.keep_pairs,
    )
    try:
        matched = apply_scheme(quad, config, np.random.default_rng(match_seed))
        estimate = _estimate(scheme.tag, matched)
        pre = post = None
        if study.record_balance:
            pre = balance_report(quad).as_matrix()
            # Balance needs two units per group; smaller samples stay unreported.
            if min(len(g) for g in _groups(matched)) >= 2:
                post = balance_report(matched).as_matrix()
    except GroupEmptied:
        return ReplicationOutcome(rep, None, 0, "group_emptied")
    except MaxRoundsExceeded:
        return ReplicationOutcome(rep, None, 0, "max_rounds")
    except TwoDPSMError as exc:
        log.debug("replication %d of %s/%s failed: %s", rep, scenario, scheme.tag.value, exc)
        return ReplicationOutcome(rep, None, 0, type(exc).__name__)
    return ReplicationOutcome(rep, estimate, matched.total, None, pre, post)


@dataclass(frozen=True)
class PerformanceRecord:
    scheme: str
    scenario: str
    matched_size: float
    mean_estimate: float
    sd: float
    bias_ratio: float
    rmse: float
    coverage: float
    completed: bool
    n_replications: int = 0
    n_failed: int = 0

    CSV_COLUMNS = (
        "scheme", "scenario", "matched_size", "mean_estimate",
        "sd", "bias_ratio", "rmse", "coverage", "completed",
    )

    def csv_row(self) -> list[str]:
        return [
            self.scheme, self.scenario, repr(float(self.matched_size)),
            repr(float(self.mean_estimate)), repr(float(self.sd)), repr(float(self.bias_ratio)),
            repr(float(self.rmse)), repr(float(self.coverage)), str(self.completed).lower(),
        ]


def performance_metrics(estimates: Sequence[float], covered: Sequence[bool], truth: float):
    """(mean, sd, bias, bias_ratio, rmse, coverage) over successful replications.

    ``sd`` uses the m - 1 denominator and is 0 for a single replication, so
    rmse^2 = bias^2 + sd^2 (m - 1) / m holds exactly in exact arithmetic.
    """
    est = np.asarray(estimates, dtype=float)
    m = len(est)
    if m == 0:
        nan = float("nan")
        return nan, nan, nan, nan, nan, nan
    mean = float(est.mean())
    sd = float(est.std(ddof=1)) if m > 1 else 0.0
    bias = mean - truth
    rmse = float(np.sqrt(np.mean((est - truth) ** 2)))
    coverage = float(np.mean(np.asarray(covered, dtype=float)))
    return mean, sd, bias, bias / truth, rmse, coverage


def summarize(
    scenario: ScenarioId,
    tag: SchemeTag,
    outcomes: Sequence[ReplicationOutcome],
    truth: float,
    na_threshold: float = 0.5,
) -> PerformanceRecord:
    good = [o for o in outcomes if o.ok]
    failed = len(outcomes) - len(good)
    mean, sd, _, bias_ratio, rmse, coverage = performance_metrics(
        [o.estimate.satt for o in good], [o.estimate.covers(truth) for o in good], truth
    )
    size = float(np.mean([o.matched_size for o in good])) if good else float("nan")
    return PerformanceRecord(
        scheme=tag.value,
        scenario=str(scenario),
        matched_size=size,
        mean_estimate=mean,
        sd=sd,
        bias_ratio=bias_ratio,
        rmse=rmse,
        coverage=coverage,
        completed=bool(good) and failed <= na_threshold * len(outcomes),
        n_replications=len(outcomes),
        n_failed=failed,
    )


@dataclass(frozen=True)
class CellResult:
    scenario: ScenarioId
    scheme: SchemeTag
    record: PerformanceRecord
    outcomes: tuple[ReplicationOutcome, ...]

    def matched_sizes(self) -> np.ndarray:
        return np.array([o.matched_size for o in self.outcomes if o.ok])


# Set before forking workers so children inherit the pools without pickling.
_WORKER_STATE: dict = {}


def _run_chunk(task):
    scenario, tag, reps = task
    params, factory, master_seed, study = (
        _WORKER_STATE[k] for k in ("params", "factory", "master_seed", "study")
    )
    pools = factory(scenario.level)
    scheme = study.schemes[tag]
    return [run_replication(scenario, scheme, params, pools, master_seed, r, study) for r in reps]


def run_cells(
    scenarios: Iterable[ScenarioId],
    schemes: Iterable[SchemeTag],
    params: DgpParams = DgpParams(),
    master_seed: int = 0,
    study: StudyConfig = StudyConfig(),
    factory: Optional[PoolFactory] = None,
) -> list[CellResult]:
    """Run every (scenario, scheme) cell; results are ordered scheme-major."""
    scenarios = sorted(set(scenarios))
    tags = [t for t in SCHEME_ORDER if t in set(map(SchemeTag, schemes))]
    factory = factory or PoolFactory(params, master_seed)
    cells = [(s, t) for t in tags for s in scenarios]
    reps = list(range(params.replications))

    _WORKER_STATE.update(params=params, factory=factory, master_seed=master_seed, study=study)
    workers = max(1, study.workers)
    if workers == 1:
        results = {cell: _run_chunk((cell[0], cell[1], reps)) for cell in cells}
    else:
        chunk = max(1, math.ceil(len(reps) / workers))
        tasks = [(s, t, reps[i:i + chunk]) for s, t in cells for i in range(0, len(reps), chunk)]
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            parts = list(pool.map(_run_chunk, tasks))
        results = {cell: [] for cell in cells}
        for (s, t, _), part in zip(tasks, parts):
            results[(s, t)].extend(part)

    out = []
    for scenario, tag in cells:
        outcomes = tuple(results[(scenario, tag)])
        record = summarize(scenario, tag, outcomes, params.treatment_effect, study.na_threshold)
        out.append(CellResult(scenario, tag, record, outcomes))
    return out


def run_study(
    scenarios: Iterable[ScenarioId],
    schemes: Iterable[SchemeTag],
    params: DgpParams = DgpParams(),
    master_seed: int = 0,
    study: StudyConfig = StudyConfig(),
) -> list[PerformanceRecord]:
    return [c.record for c in run_cells(scenarios, schemes, params, master_seed, study)]


def write_results(records: Iterable[PerformanceRecord], handle: TextIO) -> None:
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(PerformanceRecord.CSV_COLUMNS)
    for rec in records:
        writer.writerow(rec.csv_row())


def read_results(handle: TextIO) -> list[PerformanceRecord]:
    """Parse a results CSV written by ``write_results``; raises ValueError when malformed."""
    reader = csv.DictReader(handle)
    if reader.fieldnames is None or tuple(reader.fieldnames) != PerformanceRecord.CSV_COLUMNS:
        raise ValueError(f"expected columns {','.join(PerformanceRecord.CSV_COLUMNS)}")
    records = []
    for line, row in enumerate(reader, start=2):
        try:
            SchemeTag(row["scheme"])
            ScenarioId.parse(row["scenario"])
            if row["completed"] not in ("true", "false"):
                raise ValueError(f"completed must be true/false, got {row['completed']!r}")
            records.append(PerformanceRecord(
                scheme=row["scheme"],
                scenario=row["scenario"],
                completed=row["completed"] == "true",
                **{k: float(row[k]) for k in PerformanceRecord.CSV_COLUMNS[2:8]},
            ))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"line {line}: {exc}") from None
    if not records:
        raise ValueError("results file has no rows")
    return records
