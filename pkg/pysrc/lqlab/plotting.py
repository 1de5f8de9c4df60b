import math
from collections.abc import Sequence
from pathlib import Path
from xml.sax.saxutils import escape

import attr

WIDTH = 800
HEIGHT = 500
PADDING = 60

#: Line colours of the learned and the exact series.
LEARNED_COLOUR = "#1f77b4"
ANALYTIC_COLOUR = "#ff7f0e"


@attr.define(frozen=True, slots=True)
class _Frame:
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def sx(self, x: float) -> float:
        if self.x_hi == self.x_lo:
            return PADDING

        return PADDING + (x - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - 2 * PADDING)

    def sy(self, y: float) -> float:
        if self.y_hi == self.y_lo:
            return HEIGHT - PADDING

        return HEIGHT - PADDING - (y - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - 2 * PADDING)


def _segments(xs: Sequence[float], ys: Sequence[float]) -> list[list[tuple[float, float]]]:
    # non-finite values split the line instead of being drawn
    runs: list[list[tuple[float, float]]] = [[]]
    for x, y in zip(xs, ys, strict=True):
        if math.isfinite(y):
            runs[-1].append((x, y))
        elif runs[-1]:
            runs.append([])

    return [run for run in runs if run]


def render_overlay(
    xs: Sequence[float],
    learned: Sequence[float],
    analytic: Sequence[float],
    *,
    title: str,
    y_label: str,
) -> str:
    """
    Renders two series over the same ``xs`` as an SVG line plot with a legend.

    The output depends only on the data, so identical runs produce identical files.

    :param learned: The computed series. Non-finite points are left out.
    :param analytic: The exact series.
    :return: The SVG document.
    """

    finite = [y for y in (*learned, *analytic) if math.isfinite(y)] or [0.0]
    frame = _Frame(min(xs), max(xs), min(finite), max(finite))
    bottom = HEIGHT - PADDING

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        'style="background-color: white;">',
        f'<text x="{WIDTH / 2}" y="30" text-anchor="middle" font-family="sans-serif" '
        f'font-size="16">{escape(title)}</text>',
        f'<line x1="{PADDING}" y1="{bottom}" x2="{WIDTH - PADDING}" y2="{bottom}" '
        'stroke="black" />',
        f'<line x1="{PADDING}" y1="{bottom}" x2="{PADDING}" y2="{PADDING}" stroke="black" />',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" text-anchor="middle" '
        'font-family="sans-serif">x</text>',
        f'<text x="15" y="{HEIGHT / 2}" text-anchor="middle" font-family="sans-serif" '
        f'transform="rotate(-90 15,{HEIGHT / 2})">{escape(y_label)}</text>',
    ]

    # min/max ticks
    for x in (frame.x_lo, frame.x_hi):
        out.append(
            f'<text x="{frame.sx(x):.2f}" y="{bottom + 20}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{x:.4g}</text>'
        )

    for y in (frame.y_lo, frame.y_hi):
        out.append(
            f'<text x="{PADDING - 8}" y="{frame.sy(y):.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="12">{y:.4g}</text>'
        )

    legend_y = 60
    for label, colour, ys in (
        ("learned", LEARNED_COLOUR, learned),
        ("analytic", ANALYTIC_COLOUR, analytic),
    ):
        for run in _segments(xs, ys):
            points = " ".join(f"{frame.sx(x):.2f},{frame.sy(y):.2f}" for x, y in run)
            out.append(
                f'<polyline points="{points}" fill="none" stroke="{colour}" stroke-width="2" />'
            )

        out.append(
            f'<rect x="{WIDTH - 200}" y="{legend_y}" width="10" height="10" fill="{colour}" />'
        )
        out.append(
            f'<text x="{WIDTH - 180}" y="{legend_y + 10}" font-family="sans-serif" '
            f'font-size="12">{label}</text>'
        )
        legend_y += 20

    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_overlay(
    path: Path,
    xs: Sequence[float],
    learned: Sequence[float],
    analytic: Sequence[float],
    *,
    title: str,
    y_label: str,
) -> None:
    path.write_text(
        render_overlay(xs, learned, analytic, title=title, y_label=y_label), encoding="utf-8"
    )
