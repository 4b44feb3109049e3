"""Reader for the simulation CSV schema (the interface to the main package)."""

from __future__ import annotations

import numpy as np

__all__ = ["SchemaError", "SeriesData", "read_series_csv"]


class SchemaError(ValueError):
    """File does not follow the expected column layout."""


class SeriesData:
    """Parsed time series: times, labelled columns and observable pairs."""

    def __init__(self, meta, times, columns, observables):
        self.meta = meta
        self.times = times
        self.columns = columns  # name -> array, every non-time column
        self.observables = observables  # name -> (mean, stderr)


def read_series_csv(path) -> SeriesData:
    meta = {}
    header = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, value = body.split("=", 1)
                    meta[key.strip()] = value.strip()
                continue
            if header is None:
                header = line.split(",")
            else:
                rows.append(line.split(","))
    if header is None or not rows:
        raise SchemaError(f"{path}: no data found")
    if header[0] != "t":
        raise SchemaError(f"{path}: first column must be 't', got {header[0]!r}")
    for name in header[1:]:
        if not name.startswith(("re_rho_", "im_rho_", "obs_", "stderr_")):
            raise SchemaError(f"{path}: unexpected column {name!r}")
    try:
        data = np.array([[float(v) for v in row] for row in rows])
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric data ({exc})") from exc
    if data.shape[1] != len(header):
        raise SchemaError(f"{path}: row width {data.shape[1]} does not match header")
    columns = {name: data[:, k] for k, name in enumerate(header[1:], start=1)}
    observables = {}
    for name in header:
        if name.startswith("obs_"):
            obs = name[len("obs_"):]
            partner = f"stderr_{obs}"
            if partner not in columns:
                raise SchemaError(f"{path}: column {name!r} is missing its {partner!r} partner")
            observables[obs] = (columns[name], columns[partner])
    return SeriesData(meta, data[:, 0], columns, observables)
