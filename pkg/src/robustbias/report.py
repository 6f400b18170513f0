"""Plain-text bound tables and forestplots."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .fileio import FORMAT_VERSION, dump_json
from .quality_sets import quality_labels
from .robust import ComparisonRow, QuantitySpec, RobustBounds, reduce_bounds
from .sampler import PosteriorSummary


def bounds_table(rows: Sequence[ComparisonRow], bounds: RobustBounds, domain_label: str, names=None) -> str:
    """Bounds with their achieving quality vectors, plus the unadjusted estimates."""
    header = f"{'Bias domain':<12} {'Quantity':<16} {'Lower':>7}  {'q_*':<26} {'Upper':>7}  {'q^*':<26} Flag"
    lines = [header, "-" * len(header)]
    for row, b in zip(rows, bounds.bounds):
        lines.append(
            f"{domain_label:<12} {row.quantity.label(names):<16} {b.lower:>7.3f}  {quality_labels(b.q_lower):<26} "
            f"{b.upper:>7.3f}  {quality_labels(b.q_upper):<26} {row.flag}".rstrip()
        )
    for row in rows:
        lines.append(
            f"{'unadjusted':<12} {row.quantity.label(names):<16} {row.unadjusted:>7.3f}  {'--':<26} "
            f"{row.unadjusted:>7.3f}  --"
        )
    return "\n".join(lines) + "\n"


@dataclass
class ForestRow:
    label: str
    mean: float
    lower: float
    upper: float
    adj_mean_lower: float
    adj_mean_upper: float
    adj_lower: float
    adj_upper: float

    def __post_init__(self):
        if not (self.lower <= self.upper and self.adj_mean_lower <= self.adj_mean_upper):
            raise ValueError(f"forest row {self.label!r}: interval endpoints out of order")
        if not (self.adj_lower <= self.adj_mean_lower and self.adj_mean_upper <= self.adj_upper):
            raise ValueError(f"forest row {self.label!r}: bounds on the mean fall outside the percentile envelope")


@dataclass
class ForestplotModel:
    rows: list[ForestRow]  # studies first, overall effect last


def forestplot_model(
    bounds: RobustBounds, unadjusted: PosteriorSummary, names: Sequence[str], levels=(0.025, 0.975)
) -> ForestplotModel:
    """Unadjusted means and intervals beside the bounds over the quality set.

    For each study effect and for the overall effect: the unadjusted
    posterior mean with its ``levels`` interval, bounds on the posterior
    mean, the smallest lower percentile and the largest upper percentile.
    """
    lo_level, hi_level = levels
    rows = []
    targets = list(range(len(names))) + [None]
    for target in targets:
        qs = [
            QuantitySpec("expectation", target=target),
            QuantitySpec("percentile", lo_level, target),
            QuantitySpec("percentile", hi_level, target),
        ]
        mean_b, lo_b, hi_b = reduce_bounds(bounds.trace, qs)
        rows.append(
            ForestRow(
                label="Overall (mu)" if target is None else names[target],
                mean=qs[0].evaluate(unadjusted),
                lower=qs[1].evaluate(unadjusted),
                upper=qs[2].evaluate(unadjusted),
                adj_mean_lower=mean_b.lower,
                adj_mean_upper=mean_b.upper,
                adj_lower=lo_b.lower,
                adj_upper=hi_b.upper,
            )
        )
    return ForestplotModel(rows)


def render_forestplot(model: ForestplotModel, path, title: str = "", odds_ratio_axis: bool = False) -> str:
    """Write a standalone SVG and a sidecar JSON (same stem) with every plotted value.

    Values sit on the log odds-ratio scale; ``odds_ratio_axis`` only
    relabels the ticks. Returns the SVG text.
    """
    path = Path(path)
    width, left, right = 900, 200, 170
    row_h, top = 46, 60
    values = [v for r in model.rows for v in (r.lower, r.upper, r.adj_lower, r.adj_upper)] + [0.0]
    xmin, xmax = math.floor(min(values)), math.ceil(max(values))
    if xmin == xmax:
        xmax += 1
    plot_w = width - left - right
    height = top + row_h * len(model.rows) + 50

    def x(v):
        return left + (v - xmin) / (xmax - xmin) * plot_w

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{width - right + 10}" y="{top - 20}">unadjusted / adjusted bounds</text>',
    ]
    for n, r in enumerate(model.rows):
        y = top + n * row_h
        ya = y + 14
        attrs = " ".join(f'data-{k.replace("_", "-")}="{v!r}"' for k, v in asdict(r).items() if k != "label")
        out.append(f'<g class="row" data-label="{escape(r.label)}" {attrs}>')
        out.append(f'<text x="10" y="{y + 4}">{escape(r.label)}</text>')
        out.append(f'<line x1="{x(r.lower):.2f}" y1="{y}" x2="{x(r.upper):.2f}" y2="{y}" stroke="black"/>')
        out.append(f'<circle cx="{x(r.mean):.2f}" cy="{y}" r="4" fill="black"/>')
        out.append(f'<line x1="{x(r.adj_lower):.2f}" y1="{ya}" x2="{x(r.adj_upper):.2f}" y2="{ya}" stroke="#1f5fbf"/>')
        out.append(
            f'<rect x="{x(r.adj_mean_lower):.2f}" y="{ya - 4}" width="{max(x(r.adj_mean_upper) - x(r.adj_mean_lower), 1.0):.2f}" '
            f'height="8" fill="#1f5fbf"/>'
        )
        out.append(f'<text x="{width - right + 10}" y="{y + 4}">{r.mean:.2f} [{r.lower:.2f}, {r.upper:.2f}]</text>')
        out.append(
            f'<text x="{width - right + 10}" y="{ya + 4}" fill="#1f5fbf">'
            f"{r.adj_mean_lower:.2f}-{r.adj_mean_upper:.2f} [{r.adj_lower:.2f}, {r.adj_upper:.2f}]</text>"
        )
        out.append("</g>")
    axis_y = top + row_h * len(model.rows) - 10
    out.append(f'<line class="reference" x1="{x(0.0):.2f}" y1="{top - 12}" x2="{x(0.0):.2f}" y2="{axis_y}" '
               'stroke="grey" stroke-dasharray="4,3"/>')
    out.append(f'<g class="axis"><path d="M{x(xmin):.2f},{axis_y} H{x(xmax):.2f}" stroke="black"/>')
    for tick in range(xmin, xmax + 1):
        label = f"{math.exp(tick):.3g}" if odds_ratio_axis else f"{tick}"
        out.append(f'<path d="M{x(tick):.2f},{axis_y} v5" stroke="black"/>')
        out.append(f'<text x="{x(tick):.2f}" y="{axis_y + 18}" text-anchor="middle">{label}</text>')
    axis_title = "odds ratio" if odds_ratio_axis else "log odds ratio"
    out.append(f'<text x="{x((xmin + xmax) / 2):.2f}" y="{axis_y + 36}" text-anchor="middle">{axis_title}</text></g>')
    out.append("</svg>")
    svg = "\n".join(out) + "\n"
    path.write_text(svg, encoding="utf-8")
    dump_json({"format_version": FORMAT_VERSION, "scale": "log_odds_ratio", "rows": [asdict(r) for r in model.rows]},
              path.with_suffix(".json"))
    return svg
