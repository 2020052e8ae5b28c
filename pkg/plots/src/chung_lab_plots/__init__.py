"""Offline figure generation from chung-lab result CSVs.

This package consumes only the versioned results CSV written by the
simulation CLI; it never imports the simulation library.  Every figure is
accompanied by a sidecar text file carrying the fitted quantities, because
figures illustrate and numbers are the record.
"""

from .reader import SCHEMA_VERSION, SchemaError, read_results
from .figures import FIGURE_KINDS, PlotSpec, render

__all__ = ["FIGURE_KINDS", "PlotSpec", "SCHEMA_VERSION", "SchemaError", "read_results", "render"]
