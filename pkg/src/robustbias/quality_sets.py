"""Sets of study-quality vectors derived from risk-of-bias judgements.

A :class:`QualitySetSpec` partitions the studies into equality blocks. Each
block has a constant lower bound and an upper bound that is either a
constant or the value of a parent block, so the constraints form a forest.
Bounds are kept as :class:`fractions.Fraction` so that enumeration and
deduplication are exact.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

RATINGS = ("low", "unclear", "high")
DOMAINS = ("1", "2", "3", "4", "5", "6")


class QualitySetError(ValueError):
    pass


def _frac(x) -> Fraction:
    if isinstance(x, float):
        # 0.1 means one tenth, not its binary neighbour
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class RoBTable:
    """Risk-of-bias ratings: ``ratings[i][domain]`` for study ``names[i]``."""

    names: tuple[str, ...]
    ratings: tuple[Mapping[str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "ratings", tuple(dict(r) for r in self.ratings))
        if len(self.names) != len(self.ratings):
            raise QualitySetError("one rating map per study required")
        domains = set(self.ratings[0]) if self.ratings else set()
        for name, r in zip(self.names, self.ratings):
            if set(r) != domains:
                raise QualitySetError(f"study {name!r} rates domains {sorted(r)}, expected {sorted(domains)}")
            for d, v in r.items():
                if v not in RATINGS:
                    raise QualitySetError(f"study {name!r}, domain {d}: unknown rating {v!r}; allowed: {', '.join(RATINGS)}")

    @property
    def domains(self) -> list[str]:
        return sorted(self.ratings[0]) if self.ratings else []

    def column(self, domain) -> list[str]:
        domain = str(domain)
        if domain not in self.ratings[0]:
            raise QualitySetError(f"unknown domain {domain!r}; table has {self.domains}")
        return [r[domain] for r in self.ratings]


@dataclass(frozen=True)
class CutoffPolicy:
    """Quality ranges for studies at low and high risk of bias.

    Unclear studies range over ``[high_risk[0], low_risk[1]]``.
    """

    low_risk: tuple[Fraction, Fraction] = (Fraction(1, 2), Fraction(19, 20))
    high_risk: tuple[Fraction, Fraction] = (Fraction(1, 10), Fraction(1, 2))

    def __post_init__(self):
        low = tuple(_frac(v) for v in self.low_risk)
        high = tuple(_frac(v) for v in self.high_risk)
        object.__setattr__(self, "low_risk", low)
        object.__setattr__(self, "high_risk", high)
        for name, (a, b) in (("low_risk", low), ("high_risk", high)):
            if not 0 < a <= b <= 1:
                raise QualitySetError(f"{name} bounds must satisfy 0 < lower <= upper <= 1, got [{a}, {b}]")
        if not (high[0] <= low[0] and high[1] <= low[1]):
            raise QualitySetError("high-risk bounds must not exceed low-risk bounds")

    @property
    def unclear(self) -> tuple[Fraction, Fraction]:
        return self.high_risk[0], self.low_risk[1]


@dataclass(frozen=True)
class Block:
    """Studies sharing one quality value ``x`` with ``lower <= x <= upper``.

    ``upper`` is a constant, or ``None`` when ``parent`` is set, in which
    case the block's value is bounded above by the parent block's value.
    """

    studies: tuple[int, ...]
    lower: Fraction
    upper: Fraction | None = None
    parent: int | None = None


@dataclass(frozen=True)
class QualitySetSpec:
    n_studies: int
    blocks: tuple[Block, ...]

    def __post_init__(self):
        blocks = tuple(
            Block(tuple(b.studies), _frac(b.lower), None if b.upper is None else _frac(b.upper), b.parent)
            for b in self.blocks
        )
        object.__setattr__(self, "blocks", blocks)
        seen = sorted(i for b in blocks for i in b.studies)
        if seen != list(range(self.n_studies)):
            raise QualitySetError(f"blocks must partition studies 0..{self.n_studies - 1}, got {seen}")
        for j, b in enumerate(blocks):
            if not b.studies:
                raise QualitySetError(f"block {j} is empty")
            if (b.upper is None) == (b.parent is None):
                raise QualitySetError(f"block {j} needs exactly one of a constant upper bound or a parent block")
            if b.parent is not None:
                if not 0 <= b.parent < len(blocks) or b.parent == j:
                    raise QualitySetError(f"block {j} references missing parent {b.parent}")
                if not 0 < b.lower:
                    raise QualitySetError(f"block {j} lower bound must be positive")
            elif not 0 < b.lower <= b.upper <= 1:
                raise QualitySetError(f"block {j} bounds must satisfy 0 < lower <= upper <= 1")
        self.order()  # raises on cycles
        for j, b in enumerate(blocks):
            if b.parent is not None and b.lower > self.value_range(b.parent)[0]:
                raise QualitySetError(
                    f"block {j} lower bound {b.lower} exceeds the smallest value of its parent block {b.parent}"
                )

    def order(self) -> list[int]:
        """Block indices with every parent before its children."""
        done: list[int] = []
        state = [0] * len(self.blocks)

        def visit(j, path):
            if state[j] == 2:
                return
            if state[j] == 1:
                raise QualitySetError(f"cyclic block constraints through blocks {path + [j]}")
            state[j] = 1
            p = self.blocks[j].parent
            if p is not None:
                visit(p, path + [j])
            state[j] = 2
            done.append(j)

        for j in range(len(self.blocks)):
            visit(j, [])
        return done

    def value_range(self, j: int) -> tuple[Fraction, Fraction]:
        b = self.blocks[j]
        if b.parent is None:
            return b.lower, b.upper
        return b.lower, self.value_range(b.parent)[1]

    @property
    def is_box(self) -> bool:
        return all(b.parent is None for b in self.blocks)

    def vector(self, block_values: Sequence[Fraction]) -> tuple[Fraction, ...]:
        q = [Fraction(0)] * self.n_studies
        for b, v in zip(self.blocks, block_values):
            for i in b.studies:
                q[i] = v
        return tuple(q)

    def contains(self, q: Sequence) -> bool:
        """Exact membership test for a vector of Fractions (or exact floats)."""
        q = [_frac(v) if not isinstance(v, Fraction) else v for v in q]
        if len(q) != self.n_studies:
            return False
        values = []
        for b in self.blocks:
            v = q[b.studies[0]]
            if any(q[i] != v for i in b.studies):
                return False
            values.append(v)
        for b, v in zip(self.blocks, values):
            upper = b.upper if b.parent is None else values[b.parent]
            if not b.lower <= v <= upper:
                return False
        return True


@dataclass(frozen=True)
class EnumerationConfig:
    box_points_per_axis: int = 10
    weight_spacing: Fraction = Fraction(1, 10)
    singleton_points: int = 10

    def __post_init__(self):
        spacing = _frac(self.weight_spacing)
        object.__setattr__(self, "weight_spacing", spacing)
        if spacing <= 0 or spacing.numerator != 1:
            raise QualitySetError(f"weight spacing must be 1/m for an integer m >= 1, got {spacing}")
        if self.box_points_per_axis < 2 or self.singleton_points < 2:
            raise QualitySetError("grids need at least 2 points per axis")


# --- building specs from risk-of-bias tables -------------------------------------


def build_set_spec(
    rob: RoBTable,
    domain_selection: Sequence,
    policy: CutoffPolicy = CutoffPolicy(),
    extra_constraints: Sequence[Mapping] | None = None,
) -> QualitySetSpec:
    """Turn ratings for one domain, or analyst constraints, into a quality set.

    For a single domain, low-risk studies share one quality in
    ``policy.low_risk`` and high-risk studies share one in
    ``policy.high_risk``. Each unclear study gets its own quality, bounded
    below by ``policy.high_risk[0]`` and above by the low-risk block when
    there is one, otherwise by ``policy.unclear[1]``.

    Several domains need ``extra_constraints``: a list of blocks, each
    ``{"studies": [...], "lower": x, "upper": y}`` or
    ``{"studies": [...], "lower": x, "upper_block": j}``, where studies are
    names or 0-based indices and ``j`` indexes this list.
    """
    selection = [str(d) for d in domain_selection]
    if not selection:
        raise QualitySetError("empty domain selection")
    if len(selection) > 1 or extra_constraints:
        if not extra_constraints:
            raise QualitySetError(
                f"domains {selection} give no single risk category per study; supply explicit extra_constraints"
            )
        for d in selection:
            rob.column(d)
        return spec_from_constraints(rob.names, extra_constraints)

    column = rob.column(selection[0])
    blocks: list[Block] = []
    low = tuple(i for i, r in enumerate(column) if r == "low")
    high = tuple(i for i, r in enumerate(column) if r == "high")
    low_index = None
    if low:
        low_index = len(blocks)
        blocks.append(Block(low, *policy.low_risk))
    if high:
        blocks.append(Block(high, *policy.high_risk))
    for i, r in enumerate(column):
        if r != "unclear":
            continue
        if low_index is None:
            blocks.append(Block((i,), *policy.unclear))
        else:
            blocks.append(Block((i,), policy.high_risk[0], parent=low_index))
    return QualitySetSpec(len(column), tuple(blocks))


def spec_from_constraints(names: Sequence[str], constraints: Sequence[Mapping]) -> QualitySetSpec:
    index = {n: i for i, n in enumerate(names)}
    blocks = []
    for j, c in enumerate(constraints):
        try:
            studies = tuple(s if isinstance(s, int) else index[s] for s in c["studies"])
        except KeyError as exc:
            raise QualitySetError(f"constraint block {j}: unknown study or missing key {exc}") from None
        if "upper_block" in c:
            blocks.append(Block(studies, _frac(c["lower"]), parent=int(c["upper_block"])))
        else:
            blocks.append(Block(studies, _frac(c["lower"]), _frac(c["upper"])))
    return QualitySetSpec(len(names), tuple(blocks))


# --- enumeration --------------------------------------------------------------


def extreme_points(spec: QualitySetSpec) -> list[tuple[Fraction, ...]]:
    """Vertices of the quality set, sorted lexicographically.

    Every block sits at its lower bound or at its upper bound (for a child
    block, the value just chosen for its parent). Coincident vertices are
    merged.
    """
    order = spec.order()
    vertices = set()
    for choice in itertools.product((False, True), repeat=len(order)):
        values: dict[int, Fraction] = {}
        for j, at_upper in zip(order, choice):
            b = spec.blocks[j]
            upper = b.upper if b.parent is None else values[b.parent]
            values[j] = upper if at_upper else b.lower
        vertices.add(spec.vector([values[j] for j in range(len(spec.blocks))]))
    return sorted(vertices)


def simplex_weights(n_vertices: int, spacing: Fraction = Fraction(1, 10)) -> list[tuple[Fraction, ...]]:
    """All weight vectors on the simplex with entries in ``{0, 1/m, ..., 1}``.

    Ordered lexicographically with the first weight running slowest.
    """
    spacing = _frac(spacing)
    if n_vertices < 1:
        raise QualitySetError("need at least one vertex")
    if spacing <= 0 or spacing.numerator != 1:
        raise QualitySetError(f"spacing must be 1/m, got {spacing}")
    return [tuple(k * spacing for k in c) for c in compositions(spacing.denominator, n_vertices)]


def compositions(total: int, parts: int) -> Iterable[tuple[int, ...]]:
    """Non-negative integer vectors of length ``parts`` summing to ``total``."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def _grid(lo: Fraction, hi: Fraction, n: int) -> list[Fraction]:
    if lo == hi:
        return [lo]
    return [lo + (hi - lo) * j / (n - 1) for j in range(n)]


def enumerate_quality_vectors(
    spec: QualitySetSpec, config: EnumerationConfig = EnumerationConfig(), exact: bool = False
) -> list[tuple]:
    """Finite, duplicate-free discretisation of the quality set.

    * one block covering every study: ``singleton_points`` equally spaced
      values on its interval, endpoints included;
    * only constant bounds (a box): the Cartesian product of per-block grids
      with ``box_points_per_axis`` points;
    * otherwise: all convex combinations of :func:`extreme_points` with
      weights from :func:`simplex_weights`, deduplicated exactly.

    Vectors are sorted lexicographically and returned as float tuples, or as
    Fraction tuples when ``exact`` is true.
    """
    if len(spec.blocks) == 1:
        b = spec.blocks[0]
        vectors = {spec.vector([v]) for v in _grid(b.lower, b.upper, config.singleton_points)}
    elif spec.is_box:
        axes = [_grid(b.lower, b.upper, config.box_points_per_axis) for b in spec.blocks]
        vectors = {spec.vector(values) for values in itertools.product(*axes)}
    else:
        vectors = _convex_combinations(extreme_points(spec), config.weight_spacing)
    ordered = sorted(vectors)
    if exact:
        return ordered
    return [tuple(float(v) for v in q) for q in ordered]


def _convex_combinations(vertices, spacing: Fraction) -> set[tuple[Fraction, ...]]:
    # scale vertices to a common integer lattice; weights are k/m
    denom = math.lcm(*(v.denominator for vertex in vertices for v in vertex))
    scaled = np.array([[int(v * denom) for v in vertex] for vertex in vertices], dtype=np.int64)
    m = spacing.denominator
    weights = np.array(list(compositions(m, len(vertices))), dtype=np.int64)
    points = np.unique(weights @ scaled, axis=0)
    scale = denom * m
    return {tuple(Fraction(int(x), scale) for x in row) for row in points}


def quality_labels(q: Sequence[float], digits: int = 2) -> str:
    return "(" + ", ".join(f"{v:.{digits}f}" for v in q) + ")"
