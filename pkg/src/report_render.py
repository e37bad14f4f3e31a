from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Mapping, Sequence

from jinja2 import Environment
from reportlab.graphics.charts.legends import Legend
from reportlab.graphics.charts.lineplots import LinePlot
from reportlab.graphics.shapes import Drawing
from reportlab.graphics.widgets.markers import makeMarker
from reportlab.lib import colors
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import getSampleStyleSheet
from reportlab.lib.units import cm
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer

from app.schemas.experiment import OperatingPoint

SUMMARY_TEMPLATE = """# QuEE run summary

- Config hash: `{{ s.config_hash | default("n/a") }}`
- Topology hash: `{{ s.topology_hash | default("n/a") }}`
- Paths: {{ s.num_paths | default("n/a") }}{% if s.k is defined %}, K = {{ s.k }}{% endif %}
{% if s.tie_rule is defined %}- Tie-breaking: {{ s.tie_rule }}
{% endif %}
{% for policy, points in curves %}
## {{ policy }}

| param | accuracy | cost | loss01c |
|---|---|---|---|
{% for p in points -%}
| {{ p.param }} | {{ "%.4f"|format(p.accuracy) }} ± {{ "%.4f"|format(p.accuracy_ci) }} | {{ "%.4f"|format(p.cost) }} ± {{ "%.4f"|format(p.cost_ci) }} | {{ "%.4f"|format(p.loss01c) if p.loss01c is not none else "-" }} |
{% endfor %}
{% endfor %}
{% if s.rmse %}
## Predictor RMSE

Overall: {{ "%.4f"|format(s.rmse.overall) }} over {{ s.rmse.rows }} rows
{% for gate, value in s.rmse.per_gate.items() %}
- gate {{ gate }}: {{ "%.4f"|format(value) }}
{% endfor %}
{% endif %}
{% if s.ece %}
## Calibration vs K

| K | ECE | CI |
|---|---|---|
{% for row in s.ece -%}
| {{ row.k | int }} | {{ "%.4f"|format(row.ece) }} | {{ "%.4f"|format(row.ece_ci) }} |
{% endfor %}
{% endif %}
{% if s.degradation %}
## Target noise

| noise | RMSE | param | accuracy | cost |
|---|---|---|---|---|
{% for row in s.degradation -%}
| {{ row.noise }} | {{ "%.4f"|format(row.rmse | float) }} | {{ row.param }} | {{ "%.4f"|format(row.accuracy | float) }} | {{ "%.4f"|format(row.cost | float) }} |
{% endfor %}
{% endif %}
{% if s.trend_checks %}
## Trend checks

{% for name, value in s.trend_checks.items() -%}
- {{ name }}: {{ "n/a" if value is none else ("yes" if value else "no") }}
{% endfor %}
{% endif %}
"""

_env = Environment(trim_blocks=True, lstrip_blocks=True, autoescape=False)

PALETTE = [colors.HexColor(c) for c in ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")]


def _group(points: Sequence[Mapping[str, object]]) -> List[tuple]:
    grouped: Dict[str, List[Mapping[str, object]]] = {}
    for point in points:
        grouped.setdefault(str(point["policy"]), []).append(point)
    return [(policy, sorted(rows, key=lambda r: float(r["cost"]))) for policy, rows in grouped.items()]  # type: ignore[arg-type]


def render_summary_markdown(summary: Mapping[str, object]) -> str:
    curves = _group(summary.get("curves") or [])  # type: ignore[arg-type]
    return _env.from_string(SUMMARY_TEMPLATE).render(s=summary, curves=curves)


def curves_drawing(points: Sequence[OperatingPoint], width: float = 16 * cm, height: float = 11 * cm) -> Drawing:
    """Accuracy against normalized cost, one line per policy; fixed paths are drawn as markers only."""
    series: Dict[str, List[tuple]] = {}
    for point in sorted(points, key=lambda p: (p.policy, p.cost)):
        series.setdefault(point.policy, []).append((point.cost, point.accuracy))
    names = sorted(series)

    drawing = Drawing(width, height)
    plot = LinePlot()
    plot.x, plot.y = 1.5 * cm, 1.5 * cm
    plot.width, plot.height = width - 6 * cm, height - 2.5 * cm
    plot.data = [series[name] for name in names]
    plot.xValueAxis.valueMin = 0.0
    plot.xValueAxis.valueMax = 1.0
    plot.yValueAxis.valueMin = 0.0
    plot.yValueAxis.valueMax = 1.0
    for i, name in enumerate(names):
        plot.lines[i].strokeColor = PALETTE[i % len(PALETTE)]
        plot.lines[i].symbol = makeMarker("Circle", size=3)
        if name == "fixed-path":
            plot.lines[i].strokeWidth = 0
    drawing.add(plot)

    legend = Legend()
    legend.x, legend.y = width - 4 * cm, height - 1.5 * cm
    legend.colorNamePairs = [(PALETTE[i % len(PALETTE)], name) for i, name in enumerate(names)]
    drawing.add(legend)
    return drawing


def render_curves_pdf(points: Sequence[OperatingPoint], output_path: Path) -> Path:
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    styles = getSampleStyleSheet()
    doc = SimpleDocTemplate(str(output_path), pagesize=A4, title="Accuracy vs cost")
    story = [
        Paragraph("Accuracy vs normalized BitOPS", styles["Heading1"]),
        Spacer(1, 0.5 * cm),
        curves_drawing(points),
    ]
    doc.build(story)
    return output_path
