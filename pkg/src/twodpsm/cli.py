"""Command-line entry point: ``twodpsm {simulate,match,estimate,report}``.

Exit codes: 0 success, 2 input or configuration error, 3 matching or
estimation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import simulator as sim
from .balance import DEFAULT_THRESHOLD, balance_report
from .core import DEFAULT_SCHEMES, SchemeTag, validate_quad
from .errors import ConfigError, GroupEmptied, InputError, TwoDPSMError
from .estimators import diff_in_means_did, regression_did
from .io import empty_groups, read_dataset, write_matched
from .protocol import ProtocolConfig, apply_scheme

log = logging.getLogger("twodpsm")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3

_DGP_KEYS = {f.name for f in fields(sim.DgpParams)}
_SCHEME_KEYS = {"cross_sectional_caliper", "longitudinal_metric", "longitudinal_caliper"}
_PROTOCOL_KEYS = {"max_rounds", "caliper_scale", "with_replacement", "refit_each_round", "keep_pairs"}
_TOP_KEYS = {"dgp", "schemes", "protocol", "balance_threshold", "na_threshold", "workers"}

REPORT_HEADER = (
    "Matching Scheme", "Scenario", "Matched Sample Size", "Estimated Treatment Effect",
    "SD of Estimated TE", "Bias Ratio", "RMSE", "Coverage Rates of 95% CI",
)


class RunConfig:
    """Settings merged from defaults, an optional JSON file and command-line flags."""

    def __init__(self, params=None, study=None, balance_threshold=DEFAULT_THRESHOLD):
        self.params = params or sim.DgpParams()
        self.study = study or sim.StudyConfig()
        self.balance_threshold = balance_threshold

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(raw, _TOP_KEYS, "config")
        try:
            dgp = dict(raw.get("dgp", {}))
            _reject_unknown(dgp, _DGP_KEYS, "dgp")
            for key, value in dgp.items():
                if isinstance(value, list) and key != "covariance":
                    dgp[key] = tuple(value)
            params = sim.DgpParams(**dgp)

            schemes = dict(DEFAULT_SCHEMES)
            for name, spec in raw.get("schemes", {}).items():
                tag = SchemeTag(name)
                _reject_unknown(spec, _SCHEME_KEYS, f"schemes.{name}")
                base = schemes[tag]
                schemes[tag] = replace(base, **spec)

            protocol = dict(raw.get("protocol", {}))
            _reject_unknown(protocol, _PROTOCOL_KEYS, "protocol")
            study = sim.StudyConfig(
                schemes=schemes,
                na_threshold=float(raw.get("na_threshold", 0.5)),
                workers=int(raw.get("workers", 1)),
                **protocol,
            )
            # Borrow the protocol's own validation for rounds and caliper scale.
            ProtocolConfig(max_rounds=study.max_rounds, caliper_scale=study.caliper_scale)
            threshold = float(raw.get("balance_threshold", DEFAULT_THRESHOLD))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if not 0 <= study.na_threshold <= 1:
            raise ConfigError("na_threshold must lie in [0, 1]")
        if not threshold > 0:
            raise ConfigError("balance_threshold must be positive")
        if study.workers < 1:
            raise ConfigError("workers must be >= 1")
        return cls(params, study, threshold)

    def protocol(self, tag: SchemeTag, seed: int) -> ProtocolConfig:
        s = self.study
        return ProtocolConfig(
            scheme=s.schemes[tag], max_rounds=s.max_rounds, seed=seed,
            caliper_scale=s.caliper_scale, with_replacement=s.with_replacement,
            refit_each_round=s.refit_each_round, keep_pairs=s.keep_pairs,
        )


def _reject_unknown(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return RunConfig.from_json(text)


def _parse_scenarios(text: str) -> list[sim.ScenarioId]:
    if text.strip().lower() == "all":
        return list(sim.ALL_SCENARIOS)
    try:
        return [sim.ScenarioId.parse(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _parse_schemes(text: str) -> list[SchemeTag]:
    if text.strip().lower() == "all":
        return list(sim.SCHEME_ORDER)
    try:
        return [SchemeTag(part.strip().lower()) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"unknown scheme in {text!r} (choose from naive, 1d, 2d-1, 2d-2, 2d-3, all)") from None


def _open_out(path: Optional[str]):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


def _write_text(path: Optional[str], text: str) -> None:
    handle, close = _open_out(path)
    try:
        handle.write(text)
    finally:
        if close:
            handle.close()


def _read_input(path: str):
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            return read_dataset(handle)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    scenarios = _parse_scenarios(args.scenario)
    tags = _parse_schemes(args.scheme)
    params, study = config.params, config.study
    try:
        overrides = {}
        if args.replications is not None:
            overrides["replications"] = args.replications
        if args.pool_size is not None:
            overrides["pool_size"] = args.pool_size
        if overrides:
            params = replace(params, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("workers must be >= 1")
        study = replace(study, workers=args.workers)

    records = sim.run_study(scenarios, tags, params, args.seed, study)
    buffer = io.StringIO()
    sim.write_results(records, buffer)
    _write_text(args.out, buffer.getvalue())
    return EXIT_OK


def cmd_match(args) -> int:
    config = _load_config(args.config)
    tag = _parse_schemes(args.scheme)
    if len(tag) != 1:
        raise ConfigError("match takes exactly one scheme")
    dataset = _read_input(args.input)
    quad = dataset.quad()
    empty = empty_groups(quad)
    if empty:
        raise InputError(f"empty group {'/'.join(empty)}")
    issues = validate_quad(quad)
    if issues:
        raise InputError("; ".join(issues))

    matched = apply_scheme(quad, config.protocol(tag[0], args.seed), np.random.default_rng(args.seed))
    groups = matched.groups if hasattr(matched, "groups") else matched
    out = io.StringIO()
    write_matched(dataset, matched, out)
    bal = None
    if args.balance:
        bal = io.StringIO()
        balance_report(groups, config.balance_threshold).write_csv(bal)
    _write_text(args.out, out.getvalue())
    if bal is not None:
        _write_text(args.balance, bal.getvalue())
    log.info("matched %d of %d rows", groups.total, quad.total)
    return EXIT_OK


def cmd_estimate(args) -> int:
    dataset = _read_input(args.input)
    quad = dataset.quad()
    empty = empty_groups(quad)
    if empty:
        raise InputError(f"empty group {'/'.join(empty)}")
    if args.estimator == "regression":
        estimate = regression_did(quad, include_covariates=True)
    else:
        estimate = diff_in_means_did(quad)
    _write_text(args.out, estimate.to_json() + "\n")
    return EXIT_OK


def _fmt(value: float, digits: int) -> str:
    return "NA" if value is None or math.isnan(value) else f"{value:.{digits}f}"


def _report_rows(records):
    order = {t.value: i for i, t in enumerate(sim.SCHEME_ORDER)}
    records = sorted(records, key=lambda r: (order[r.scheme], sim.ScenarioId.parse(r.scenario)))
    rows, last = [], None
    for r in records:
        scheme = SchemeTag(r.scheme).display
        if r.completed:
            values = [f"{r.matched_size:.0f}", _fmt(r.mean_estimate, 2), _fmt(r.sd, 2),
                      _fmt(r.bias_ratio, 2), _fmt(r.rmse, 2), _fmt(r.coverage, 2)]
        else:
            values = ["NA"] * 6
        rows.append((scheme, scheme if scheme != last else "", r.scenario, values))
        last = scheme
    return rows


def cmd_report(args) -> int:
    try:
        with open(args.input, newline="", encoding="utf-8") as handle:
            records = sim.read_results(handle)
    except OSError as exc:
        raise InputError(f"cannot read {args.input}: {exc.strerror}") from None
    except ValueError as exc:
        raise InputError(f"{args.input}: {exc}") from None

    rows = _report_rows(records)
    if args.format == "markdown":
        lines = ["| " + " | ".join(REPORT_HEADER) + " |",
                 "|" + "|".join("---" for _ in REPORT_HEADER) + "|"]
        for _, shown, scenario, values in rows:
            lines.append("| " + " | ".join([shown, scenario] + values) + " |")
        text = "\n".join(lines) + "\n"
    else:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for scheme, _, scenario, values in rows:
            writer.writerow([scheme, scenario] + values)
        text = buffer.getvalue()
    _write_text(args.out, text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twodpsm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the Monte Carlo study")
    p.add_argument("--scenario", default="all", help="scenario id(s), e.g. C0 or A0,B1, or 'all'")
    p.add_argument("--scheme", default="all", help="naive, 1d, 2d-1, 2d-2, 2d-3, a comma list, or 'all'")
    p.add_argument("--replications", type=int)
    p.add_argument("--pool-size", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--config", help="JSON file overriding DGP, schemes and thresholds")
    p.add_argument("--out", help="results CSV (default stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("match", help="match a survey CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--scheme", default="2d-2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--out", help="matched CSV (default stdout)")
    p.add_argument("--balance", help="balance report CSV")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("estimate", help="difference-in-differences estimate from a CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--estimator", choices=("diff", "regression"), default="diff")
    p.add_argument("--out", help="estimate JSON (default stdout)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("report", help="render a results CSV as a table")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GroupEmptied as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TwoDPSMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
