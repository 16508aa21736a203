"""
Report artifacts: JSON reports and manifests, CSV tables and dumps, text summary.

Every file is written to a temporary sibling first and renamed into place.
"""

import csv
import io
from pathlib import Path

import numpy as np
import structlog
from jinja2 import Template
from pydantic import BaseModel

from shapeline.models import CellResult, Report

log = structlog.get_logger()


# =============================================================================
# Summary Template
# =============================================================================

SUMMARY_TEMPLATE = """\
# =============================================================================
# shapeline study summary
# =============================================================================
# Functions: {{ plan.functions | join(", ") }}
# Inflection points: {{ plan.inflection_points | join(", ") }}
# Levels: {{ plan.n_values | join(", ") }} (m1={{ plan.m1 }}, m2={{ plan.m2 }})
# Status: {{ status | upper }}
# =============================================================================

{% for cell in cells %}
{{ "%-16s" | format(cell.function) }} n={{ "%-5d" | format(cell.n) }} {{ cell.status | upper }}{% if not cell.conforming %} (non-conforming){% endif %}{% if cell.fallback %} (fallback){% endif %}

    omega4 = {{ "%.3e" | format(cell.omega4) }}
{%- if cell.spline_error is not none %}
    |f - S| = {{ "%.3e" | format(cell.spline_error) }}{% if cell.spline_ratio is not none %}  ratio {{ "%.3f" | format(cell.spline_ratio) }}{% endif %}
{%- endif %}
{%- if cell.poly_error is not none %}
    |f - P| = {{ "%.3e" | format(cell.poly_error) }}{% if cell.poly_ratio is not none %}  ratio {{ "%.3f" | format(cell.poly_ratio) }}{% endif %}
{%- endif %}
{%- for report in cell.sign_reports if report.asserted %}
    {{ report.check }}: {{ report.violations }} violations of {{ report.samples }} (tol {{ report.tolerance }})
{%- endfor %}
{%- for line in cell.diagnostics %}
    note: {{ line }}
{%- endfor %}

{% endfor %}
{% for row in convergence %}
{{ row.function }} [{{ row.artifact }}] slope={% if row.slope is not none %}{{ "%.3f" | format(row.slope) }}{% else %}n/a{% endif %}{% if row.slope_in_range is not none %} in_range={{ row.slope_in_range }}{% endif %} stable={{ row.stable }}
{% endfor %}
{% for row in constant_spreads if row.spread is not none %}
{{ row.function }} constant {{ row.name }} spread={{ "%.3f" | format(row.spread) }} stable={{ row.stable }}
{% endfor %}
"""

TABLE_COLUMNS = (
    "function",
    "n",
    "conforming",
    "fallback",
    "omega4",
    "omega5",
    "spline_error",
    "technical_error",
    "poly_error",
    "spline_poly_distance",
    "spline_ratio",
    "poly_ratio",
    "periodicity_residual",
    "polynomial_drift",
    "status",
)


# =============================================================================
# Writers
# =============================================================================


def write_text_atomic(path: str | Path, content: str) -> Path:
    """Write content to path through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_suffix(path.suffix + ".tmp")
    temp_path.write_text(content)
    temp_path.replace(path)
    log.debug("artifact_written", path=str(path), size=len(content))
    return path


def write_json(path: str | Path, model: BaseModel) -> Path:
    return write_text_atomic(path, model.model_dump_json(indent=2) + "\n")


def columns_to_csv(columns: dict[str, np.ndarray]) -> str:
    """Render equal-length columns as CSV text with a header row."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[name], dtype=float) for name in names])
    buffer = io.StringIO()
    buffer.write(",".join(names) + "\n")
    np.savetxt(buffer, data, delimiter=",", fmt="%.17g")
    return buffer.getvalue()


def write_columns(path: str | Path, columns: dict[str, np.ndarray]) -> Path:
    return write_text_atomic(path, columns_to_csv(columns))


def cells_to_csv(cells: list[CellResult]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for cell in cells:
        row = cell.model_dump(include=set(TABLE_COLUMNS))
        writer.writerow(["" if row[name] is None else row[name] for name in TABLE_COLUMNS])
    return buffer.getvalue()


def render_summary(report: Report) -> str:
    return Template(SUMMARY_TEMPLATE).render(
        plan=report.plan,
        cells=report.cells,
        convergence=report.convergence,
        constant_spreads=report.constant_spreads,
        status=report.status.value,
    )


class ReportWriter:
    """
    Writes the artifacts of a study.

    Responsibilities:
    - report.json with every cell, check and fitted constant
    - tables.csv with one row per (function, n) cell
    - summary.txt rendered from a template
    """

    def __init__(self, output_dir: str | Path):
        self.output_dir = Path(output_dir)

    def write(self, report: Report) -> list[Path]:
        paths = [
            write_json(self.output_dir / "report.json", report),
            write_text_atomic(self.output_dir / "tables.csv", cells_to_csv(report.cells)),
            write_text_atomic(self.output_dir / "summary.txt", render_summary(report)),
        ]
        log.info("report_written", output_dir=str(self.output_dir), cells=len(report.cells))
        return paths
