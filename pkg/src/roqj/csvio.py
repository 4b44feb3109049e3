"""The CSV schema shared by simulation, oracle and comparison commands.

Header: `# key = value` lines echoing the resolved configuration, then a
column row.  Columns: t, re_rho_i_j and im_rho_i_j over the upper triangle
in row-major order, then obs_<name> and stderr_<name>.  Floats carry 17
significant digits so files round-trip bit-exactly.
"""

from __future__ import annotations

import numpy as np

__all__ = ["SchemaError", "write_series_csv", "read_series_csv", "rho_columns"]


class SchemaError(ValueError):
    """CSV file does not follow the expected column schema."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def rho_columns(n: int) -> list[str]:
    cols = []
    for i in range(n):
        for j in range(i, n):
            cols.append(f"re_rho_{i}_{j}")
            cols.append(f"im_rho_{i}_{j}")
    return cols


def write_series_csv(path, meta, times, rhos, obs_names=(), obs_means=None, obs_stderr=None):
    """Write one time series of density matrices plus observable columns."""
    times = np.asarray(times)
    rhos = np.asarray(rhos)
    n = rhos.shape[1]
    header = ["t"] + rho_columns(n)
    for name in obs_names:
        header += [f"obs_{name}", f"stderr_{name}"]
    lines = [f"# {key} = {value}" for key, value in sorted(meta.items())]
    lines.append(",".join(header))
    for k in range(len(times)):
        row = [_fmt(times[k])]
        for i in range(n):
            for j in range(i, n):
                row.append(_fmt(rhos[k, i, j].real))
                row.append(_fmt(rhos[k, i, j].imag))
        for o in range(len(obs_names)):
            row.append(_fmt(obs_means[k, o]))
            row.append(_fmt(obs_stderr[k, o]) if obs_stderr is not None else _fmt(0.0))
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_series_csv(path):
    """Parse a schema CSV.

    Returns (meta, times, rhos, observables) with observables a dict
    name -> (means, stderrs).
    """
    meta: dict[str, str] = {}
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
                continue
            rows.append([float(v) for v in line.split(",")])
    if header is None:
        raise SchemaError(f"{path}: no header row found")
    if header[0] != "t":
        raise SchemaError(f"{path}: first column must be 't', got {header[0]!r}")
    # infer dimension from the rho columns
    n = 0
    for col in header:
        if col.startswith("re_rho_"):
            try:
                i, j = (int(v) for v in col[len("re_rho_"):].split("_"))
            except ValueError as exc:
                raise SchemaError(f"{path}: malformed column {col!r}") from exc
            n = max(n, i + 1, j + 1)
    expected = ["t"] + rho_columns(n)
    if header[: len(expected)] != expected:
        bad = next(
            (h for h, e in zip(header, expected) if h != e),
            header[min(len(header), len(expected)) - 1],
        )
        raise SchemaError(f"{path}: unexpected column {bad!r} in the state block")
    obs_names = []
    pos = len(expected)
    while pos < len(header):
        col = header[pos]
        if not col.startswith("obs_"):
            raise SchemaError(f"{path}: unexpected column {col!r}, expected obs_<name>")
        name = col[len("obs_"):]
        if pos + 1 >= len(header) or header[pos + 1] != f"stderr_{name}":
            raise SchemaError(f"{path}: column {col!r} is missing its stderr_{name} partner")
        obs_names.append(name)
        pos += 2
    data = np.array(rows)
    if data.shape[1] != len(header):
        raise SchemaError(f"{path}: row width {data.shape[1]} does not match header")
    times = data[:, 0]
    rhos = np.zeros((len(times), n, n), dtype=complex)
    pos = 1
    for i in range(n):
        for j in range(i, n):
            val = data[:, pos] + 1j * data[:, pos + 1]
            rhos[:, i, j] = val
            if i != j:
                rhos[:, j, i] = val.conj()
            pos += 2
    observables = {}
    for o, name in enumerate(obs_names):
        observables[name] = (data[:, pos + 2 * o], data[:, pos + 2 * o + 1])
    return meta, times, rhos, observables
