"""Presentation layer for roqj CSV output: comparison and realization figures.

This package is intentionally independent of the simulation library; it
consumes only the documented CSV schema (header `# key = value` lines, then
`t`, `re_rho_i_j`/`im_rho_i_j` upper-triangle columns, then paired
`obs_<name>`/`stderr_<name>` columns).
"""

from .compare import plot_compare
from .realization import plot_realization
from .schema import SchemaError, read_series_csv

__all__ = ["plot_compare", "plot_realization", "read_series_csv", "SchemaError"]

__version__ = "0.1.0"
