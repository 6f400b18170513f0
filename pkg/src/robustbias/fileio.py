"""Reading inputs and persisting results.

Formats
-------
Study CSV
    Header ``study,n_control,r_control,n_treatment,r_treatment``, one row
    per study, UTF-8, plain integers.
Risk-of-bias JSON
    ``{"format_version": 1, "studies": [{"name": ..., "ratings": {"1": "low", ...}}]}``
    with ratings ``low``, ``unclear`` or ``high``.
Run configuration JSON
    The fields of :class:`RunConfig`; anything missing takes its default.
Results JSON
    Quantities, bounds, the unadjusted summary and the full per-vector
    trace. Written with a fixed key order; floats use Python's shortest
    round-trip representation and NaN is written as ``null``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any

from .model import Hyperparameters, StudyData, StudyRecord
from .quality_sets import CutoffPolicy, EnumerationConfig, RoBTable
from .robust import Bound, QuantitySpec, RobustBounds, TraceRecord
from .sampler import McmcSettings, PosteriorSummary

FORMAT_VERSION = 1
CSV_HEADER = ["study", "n_control", "r_control", "n_treatment", "r_treatment"]


class InputError(ValueError):
    pass


def bundled(name: str) -> Path:
    """Path of a file shipped in ``robustbias/data``."""
    return Path(str(resources.files("robustbias") / "data" / name))


# --- study data ---------------------------------------------------------------


def read_study_csv(path) -> StudyData:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file, expected header {','.join(CSV_HEADER)}") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise InputError(f"{path}: line 1: header must be {','.join(CSV_HEADER)}, got {','.join(header)}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise InputError(f"{path}: line {lineno}: expected {len(CSV_HEADER)} columns, got {len(row)}")
            counts = []
            for col, cell in zip(CSV_HEADER[1:], row[1:]):
                try:
                    counts.append(int(cell.strip()))
                except ValueError:
                    raise InputError(f"{path}: line {lineno}, column {col}: not an integer: {cell!r}") from None
            try:
                records.append(StudyRecord(row[0].strip(), *counts))
            except ValueError as exc:
                raise InputError(f"{path}: line {lineno}: {exc}") from None
    if not records:
        raise InputError(f"{path}: K >= 1 required, no study rows found")
    try:
        return StudyData(records)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def write_study_csv(data: StudyData, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for s in data.studies:
            writer.writerow([s.name, s.n_control, s.r_control, s.n_treatment, s.r_treatment])


# --- risk of bias -------------------------------------------------------------


def read_rob_json(path, data: StudyData | None = None) -> RoBTable:
    """Load a risk-of-bias table, ordered like ``data`` when given."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        entries = doc["studies"]
        table = {e["name"]: {str(k): v for k, v in e["ratings"].items()} for e in entries}
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: malformed risk-of-bias document: {exc}") from None
    names = list(table) if data is None else data.names
    if data is not None:
        missing = [n for n in data.names if n not in table]
        if missing:
            raise InputError(f"{path}: no risk-of-bias ratings for studies {missing}")
        extra = [n for n in table if n not in data.names]
        if extra:
            raise InputError(f"{path}: ratings for studies not in the data: {extra}")
    try:
        return RoBTable(names, [table[n] for n in names])
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


# --- configuration ----------------------------------------------------------------


@dataclass
class RunConfig:
    data_path: str | None = None
    rob_path: str | None = None
    domains: Any = ("1",)
    cutoff_policy: dict = field(default_factory=lambda: {"low_risk": [0.5, 0.95], "high_risk": [0.1, 0.5]})
    extra_constraints: list | None = None
    hyperparameters: dict = field(default_factory=lambda: asdict(Hyperparameters()))
    mcmc: dict = field(default_factory=lambda: asdict(McmcSettings()))
    enumeration: dict = field(
        default_factory=lambda: {"box_points_per_axis": 10, "weight_spacing": "1/10", "singleton_points": 10}
    )
    thresholds: list = field(default_factory=lambda: [1.0])
    levels: list = field(default_factory=lambda: [0.05, 0.025, 0.975])
    decision_probability: float = 0.95
    reference_value: float = 0.0
    out_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        self.domains = _normalise_domains(self.domains)
        defaults = RunConfig.__dataclass_fields__
        for name in ("hyperparameters", "mcmc", "enumeration", "cutoff_policy"):
            merged = dict(defaults[name].default_factory())
            merged.update(getattr(self, name) or {})
            setattr(self, name, merged)

    @property
    def seed(self) -> int:
        return int(self.mcmc["seed"])

    def resolved_data_path(self) -> Path:
        return Path(self.data_path) if self.data_path else bundled("rituximab.csv")

    def resolved_rob_path(self) -> Path:
        return Path(self.rob_path) if self.rob_path else bundled("rituximab_rob.json")

    def hyper(self) -> Hyperparameters:
        return Hyperparameters(**self.hyperparameters)

    def settings(self) -> McmcSettings:
        return McmcSettings(**self.mcmc)

    def enumeration_config(self) -> EnumerationConfig:
        e = self.enumeration
        return EnumerationConfig(
            int(e["box_points_per_axis"]), Fraction(str(e["weight_spacing"])), int(e["singleton_points"])
        )

    def policy(self) -> CutoffPolicy:
        return CutoffPolicy(tuple(self.cutoff_policy["low_risk"]), tuple(self.cutoff_policy["high_risk"]))

    def quantities(self) -> list[QuantitySpec]:
        return (
            [QuantitySpec("expectation")]
            + [QuantitySpec("exceedance", float(t)) for t in self.thresholds]
            + [QuantitySpec("percentile", float(p)) for p in self.levels]
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _normalise_domains(domains) -> list[str]:
    if domains == "all":
        return ["1", "2", "3", "4", "5", "6"]
    if isinstance(domains, (str, int)):
        domains = str(domains).split(",")
    return [str(d).strip() for d in domains]


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: {exc}") from None
    doc.pop("format_version", None)
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise InputError(f"{path}: unknown configuration keys {unknown}")
    config = RunConfig(**doc)
    base = path.parent
    for attr in ("data_path", "rob_path"):
        value = getattr(config, attr)
        if value and not Path(value).is_absolute():
            setattr(config, attr, str(base / value))
    return config


# --- JSON persistence ----------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dump_json(doc, path) -> None:
    text = json.dumps(_clean(doc), indent=2, allow_nan=False, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _keyed(m: dict) -> dict:
    return {repr(float(k)): v for k, v in m.items()}


def _unkeyed(m: dict) -> dict:
    return {float(k): v for k, v in m.items()}


def _num(x):
    return math.nan if x is None else x


def summary_to_dict(s: PosteriorSummary) -> dict:
    return {
        "mean_mu": s.mean_mu,
        "exceedance": _keyed(s.exceedance),
        "percentiles_mu": _keyed(s.percentiles_mu),
        "mean_delta": list(s.mean_delta),
        "exceedance_delta": [_keyed(m) for m in s.exceedance_delta],
        "percentiles_delta": [_keyed(m) for m in s.percentiles_delta],
        "ess_mu": s.ess_mu,
        "rhat_mu": s.rhat_mu,
    }


def summary_from_dict(d: dict) -> PosteriorSummary:
    return PosteriorSummary(
        mean_mu=d["mean_mu"],
        exceedance=_unkeyed(d["exceedance"]),
        percentiles_mu=_unkeyed(d["percentiles_mu"]),
        mean_delta=list(d["mean_delta"]),
        exceedance_delta=[_unkeyed(m) for m in d["exceedance_delta"]],
        percentiles_delta=[_unkeyed(m) for m in d["percentiles_delta"]],
        ess_mu=_num(d["ess_mu"]),
        rhat_mu=_num(d["rhat_mu"]),
    )


def quantity_to_dict(q: QuantitySpec, names=None) -> dict:
    return {"kind": q.kind, "value": q.value, "target": q.target, "label": q.label(names)}


def quantity_from_dict(d: dict) -> QuantitySpec:
    return QuantitySpec(d["kind"], d["value"], d["target"])


def results_to_dict(
    bounds: RobustBounds,
    unadjusted: PosteriorSummary | None,
    names: list[str],
    domains: list[str],
    extra: dict | None = None,
) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "studies": list(names),
        "domains": list(domains),
        "n_vectors": len(bounds.trace),
        "quantities": [quantity_to_dict(b.quantity, names) for b in bounds.bounds],
        "bounds": [
            {
                "label": b.quantity.label(names),
                "lower": b.lower,
                "q_lower": list(b.q_lower),
                "upper": b.upper,
                "q_upper": list(b.q_upper),
            }
            for b in bounds.bounds
        ],
        "unadjusted": None if unadjusted is None else summary_to_dict(unadjusted),
        "trace": [{"index": r.index, "q": list(r.q), "summary": summary_to_dict(r.summary)} for r in bounds.trace],
    }
    if extra:
        doc.update(extra)
    return doc


def results_from_dict(doc: dict) -> tuple[RobustBounds, PosteriorSummary | None]:
    if doc.get("format_version") != FORMAT_VERSION:
        raise InputError(f"unsupported results format_version {doc.get('format_version')!r}")
    quantities = [quantity_from_dict(q) for q in doc["quantities"]]
    trace = [TraceRecord(r["index"], tuple(r["q"]), summary_from_dict(r["summary"])) for r in doc["trace"]]
    bounds = [
        Bound(q, b["lower"], tuple(b["q_lower"]), b["upper"], tuple(b["q_upper"]))
        for q, b in zip(quantities, doc["bounds"])
    ]
    unadjusted = None if doc["unadjusted"] is None else summary_from_dict(doc["unadjusted"])
    return RobustBounds(bounds, trace), unadjusted


def read_results(path) -> tuple[RobustBounds, PosteriorSummary | None, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    bounds, unadjusted = results_from_dict(doc)
    return bounds, unadjusted, doc
