"""Figure rendering for alignment report directories."""

from .render import (
    ReportData,
    SchemaError,
    figure_accuracy,
    figure_dim_delta,
    figure_energy_trace,
    figure_scatter,
    load_report,
    main,
    render_report,
)

__all__ = [
    "ReportData",
    "SchemaError",
    "figure_accuracy",
    "figure_dim_delta",
    "figure_energy_trace",
    "figure_scatter",
    "load_report",
    "main",
    "render_report",
]
