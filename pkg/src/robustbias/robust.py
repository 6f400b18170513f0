"""Bounds on posterior summaries over a finite set of quality vectors."""
from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import Hyperparameters, StudyData, check_quality
from .sampler import McmcSettings, PosteriorSummary, run_chain, summarize

log = logging.getLogger(__name__)

KINDS = ("expectation", "exceedance", "percentile")
FOREST_LEVELS = (0.025, 0.975)


class QuantityMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class QuantitySpec:
    """A posterior summary of ``mu`` (``target=None``) or of ``delta_target``.

    ``value`` is the threshold ``t`` of ``P(x > t)`` or the level of a
    percentile; it is ignored for expectations.
    """

    kind: str
    value: float | None = None
    target: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown quantity kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "percentile" and not (self.value is not None and 0 < self.value < 1):
            raise ValueError(f"percentile level must be in (0, 1), got {self.value}")
        if self.kind == "exceedance" and not (self.value is not None and math.isfinite(self.value)):
            raise ValueError(f"exceedance threshold must be finite, got {self.value}")

    def label(self, names: Sequence[str] | None = None) -> str:
        x = "mu" if self.target is None else f"delta[{names[self.target] if names else self.target}]"
        if self.kind == "expectation":
            return f"E({x})"
        if self.kind == "exceedance":
            return f"P({x} > {self.value:g})"
        return f"P{100 * self.value:g}%({x})"

    def evaluate(self, s: PosteriorSummary) -> float:
        try:
            if self.target is None:
                if self.kind == "expectation":
                    return s.mean_mu
                if self.kind == "exceedance":
                    return s.exceedance[self.value]
                return s.percentiles_mu[self.value]
            if self.kind == "expectation":
                return s.mean_delta[self.target]
            if self.kind == "exceedance":
                return s.exceedance_delta[self.target][self.value]
            return s.percentiles_delta[self.target][self.value]
        except (KeyError, IndexError):
            raise QuantityMismatchError(f"summary does not provide {self.label()}") from None


def default_quantities(threshold: float = 1.0, levels: Sequence[float] = (0.05, 0.025, 0.975)) -> list[QuantitySpec]:
    return [QuantitySpec("expectation"), QuantitySpec("exceedance", threshold)] + [
        QuantitySpec("percentile", p) for p in levels
    ]


@dataclass
class Bound:
    quantity: QuantitySpec
    lower: float
    q_lower: tuple
    upper: float
    q_upper: tuple


@dataclass
class TraceRecord:
    index: int
    q: tuple
    summary: PosteriorSummary


@dataclass
class RobustBounds:
    bounds: list[Bound]
    trace: list[TraceRecord]

    def __getitem__(self, quantity: QuantitySpec) -> Bound:
        for b in self.bounds:
            if b.quantity == quantity:
                return b
        raise KeyError(quantity)

    @property
    def quantities(self) -> list[QuantitySpec]:
        return [b.quantity for b in self.bounds]


def stream_key(q: Sequence[float]) -> tuple[int, ...]:
    """Spawn key for the random streams of one quality vector.

    Derived from the bytes of ``q`` itself, so a vector gets the same
    estimates in every set that contains it.
    """
    digest = hashlib.blake2b(np.asarray(q, dtype="<f8").tobytes(), digest_size=16).digest()
    return (1,) + tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))


UNADJUSTED_KEY = (0,)


def required_levels(quantities: Sequence[QuantitySpec]) -> tuple[list[float], list[float]]:
    thresholds = sorted({q.value for q in quantities if q.kind == "exceedance"})
    levels = sorted({q.value for q in quantities if q.kind == "percentile"} | set(FOREST_LEVELS))
    return thresholds, levels


def analyze_one(data, hyper, q, settings, thresholds, levels, key=None) -> PosteriorSummary:
    samples = run_chain(data, hyper, q, settings, key=stream_key(q) if key is None else key)
    return summarize(samples, thresholds, levels)


def reduce_bounds(trace: Sequence[TraceRecord], quantities: Sequence[QuantitySpec]) -> list[Bound]:
    """Minimum and maximum of each quantity over the trace; the first achiever wins ties."""
    bounds = []
    for quantity in quantities:
        values = [quantity.evaluate(rec.summary) for rec in trace]
        lo = int(np.argmin(values))
        hi = int(np.argmax(values))
        bounds.append(Bound(quantity, values[lo], trace[lo].q, values[hi], trace[hi].q))
    return bounds


def analyze_over_set(
    data: StudyData,
    hyper: Hyperparameters,
    vectors: Sequence[Sequence[float]],
    settings: McmcSettings,
    quantities: Sequence[QuantitySpec],
    workers: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> RobustBounds:
    """Run the sampler at every quality vector and bound each quantity.

    The reduction runs in enumeration order after all runs have finished,
    so results do not depend on ``workers``.
    """
    if not vectors:
        raise ValueError("no quality vectors to analyse")
    if not quantities:
        raise ValueError("no quantities requested")
    vectors = [tuple(float(v) for v in check_quality(q, len(data))) for q in vectors]
    thresholds, levels = required_levels(quantities)

    def job(q):
        return analyze_one(data, hyper, q, settings, thresholds, levels)

    summaries: list[PosteriorSummary] = []
    if workers <= 1:
        for n, q in enumerate(vectors):
            summaries.append(job(q))
            if progress:
                progress(n + 1, len(vectors))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for n, s in enumerate(pool.map(job, vectors)):
                summaries.append(s)
                if progress:
                    progress(n + 1, len(vectors))
    trace = [TraceRecord(i, q, s) for i, (q, s) in enumerate(zip(vectors, summaries))]
    return RobustBounds(reduce_bounds(trace, quantities), trace)


def analyze_unadjusted(data, hyper, settings, quantities) -> PosteriorSummary:
    """The model with every study quality equal to one."""
    thresholds, levels = required_levels(quantities)
    return analyze_one(data, hyper, (1.0,) * len(data), settings, thresholds, levels, key=UNADJUSTED_KEY)


@dataclass
class ComparisonRow:
    quantity: QuantitySpec
    unadjusted: float
    lower: float
    upper: float
    flag: str


NO_IMPACT = "no bias impact"
SENSITIVE = "conclusion sensitive to bias"


def compare_to_unadjusted(
    bounds: RobustBounds,
    unadjusted: PosteriorSummary,
    decision_probability: float = 0.95,
    reference: float = 0.0,
) -> list[ComparisonRow]:
    """Set the robust bounds beside the unadjusted estimates.

    A row is flagged as sensitive when the bound interval reaches the other
    side of the decision line that the unadjusted estimate sits on: the
    probability ``decision_probability`` for exceedance quantities, the value
    ``reference`` on the effect scale for means and percentiles.
    """
    rows = []
    for b in bounds.bounds:
        u = b.quantity.evaluate(unadjusted)
        line = decision_probability if b.quantity.kind == "exceedance" else reference
        side = u >= line if b.quantity.kind == "exceedance" else u > line
        if b.quantity.kind == "exceedance":
            crosses = (b.lower >= line) != side or (b.upper >= line) != side
        else:
            crosses = (b.lower > line) != side or (b.upper > line) != side
        if b.lower == b.upper == u:
            flag = NO_IMPACT
        elif crosses:
            flag = SENSITIVE
        else:
            flag = ""
        rows.append(ComparisonRow(b.quantity, u, b.lower, b.upper, flag))
    return rows
