"""Flat key = value configuration files and their mapping onto models and runs.

Syntax: one `section.key = value` per line, UTF-8, `#` comments, blank lines
ignored.  The resolved configuration (everything that affects results) is
echoed into CSV headers in the same syntax, so a header round-trips into an
identical rerun.
"""

from __future__ import annotations

import math

import numpy as np

from .analysis import Observable
from .engines import RunConfig
from .model import (
    MasterEquationModel,
    build_amplitude_damping,
    build_dephasing,
    build_network_model,
    build_pauli_model,
    network_rate_default,
    sample_network_omega,
)

__all__ = [
    "ConfigError",
    "parse_config_text",
    "load_config",
    "build_model",
    "build_initial_state",
    "build_observables",
    "build_run_config",
]


class ConfigError(ValueError):
    """Invalid or missing configuration entry; `field` names the culprit."""

    def __init__(self, fieldname: str, message: str):
        self.field = fieldname
        super().__init__(f"config field '{fieldname}': {message}")


def parse_config_text(text: str) -> dict[str, str]:
    cfg: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def load_config(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _get(cfg, key, conv, default=None, required=False):
    if key not in cfg:
        if required:
            raise ConfigError(key, "is required")
        return default
    try:
        return conv(cfg[key])
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(key, f"cannot parse {cfg[key]!r} ({exc})") from exc


def _floats(value: str) -> list[float]:
    return [float(v) for v in value.replace(",", " ").split()]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _parse_omega(cfg, n):
    if "model.omega.seed" in cfg:
        seed = _get(cfg, "model.omega.seed", int)
        return sample_network_omega(n, seed), {"model.omega.seed": str(seed)}
    if "model.omega.path" in cfg:
        path = cfg["model.omega.path"]
        try:
            omega = np.loadtxt(path, ndmin=2)
        except Exception as exc:
            raise ConfigError("model.omega.path", f"cannot read {path!r} ({exc})") from exc
    elif "model.omega" in cfg:
        rows = [r for r in cfg["model.omega"].split(";") if r.strip()]
        omega = np.array([_floats(r) for r in rows])
    else:
        raise ConfigError("model.omega", "give model.omega.seed, model.omega.path or inline model.omega")
    if omega.shape != (n, n):
        raise ConfigError("model.omega", f"shape {omega.shape} does not match model.n = {n}")
    echo = {"model.omega": "; ".join(" ".join(_fmt(v) for v in row) for row in omega)}
    return omega, echo


def build_model(cfg) -> tuple[MasterEquationModel, dict[str, str]]:
    """Construct the model named by the config; returns (model, echo entries)."""
    name = _get(cfg, "model.name", str, required=True)
    if name == "pauli":
        x = _get(cfg, "model.x", _floats, required=True)
        try:
            model = build_pauli_model(x)
        except ValueError as exc:
            raise ConfigError("model.x", str(exc)) from exc
        return model, {"model.name": "pauli", "model.x": " ".join(_fmt(v) for v in x)}
    if name == "network":
        n = _get(cfg, "model.n", int, default=7)
        omega, omega_echo = _parse_omega(cfg, n)
        rate_key = _get(cfg, "model.rate", str, default="default")
        if rate_key == "default":
            rate = network_rate_default
        else:
            try:
                rate = float(rate_key)
            except ValueError as exc:
                raise ConfigError("model.rate", "expected 'default' or a number") from exc
        try:
            model = build_network_model(n, omega, rate)
        except ValueError as exc:
            raise ConfigError("model.omega", str(exc)) from exc
        echo = {"model.name": "network", "model.n": str(n), "model.rate": rate_key}
        echo.update(omega_echo)
        return model, echo
    if name == "amplitude_damping":
        gamma = _get(cfg, "model.gamma", float, required=True)
        try:
            model = build_amplitude_damping(gamma)
        except ValueError as exc:
            raise ConfigError("model.gamma", str(exc)) from exc
        return model, {"model.name": "amplitude_damping", "model.gamma": _fmt(gamma)}
    if name == "dephasing":
        gamma = _get(cfg, "model.gamma", float, required=True)
        return build_dephasing(gamma), {"model.name": "dephasing", "model.gamma": _fmt(gamma)}
    raise ConfigError("model.name", f"unknown model {name!r}")


def build_initial_state(cfg, n: int) -> tuple[np.ndarray, dict[str, str]]:
    spec = _get(cfg, "initial.state", str, default=f"basis:0")
    if spec.startswith("basis:"):
        try:
            i = int(spec.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError("initial.state", f"bad basis index in {spec!r}") from exc
        if not 0 <= i < n:
            raise ConfigError("initial.state", f"basis index {i} outside 0..{n - 1}")
        psi = np.zeros(n, dtype=complex)
        psi[i] = 1.0
    elif spec == "plus":
        if n != 2:
            raise ConfigError("initial.state", "'plus' needs a two-level model")
        psi = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0)
    elif spec == "minus":
        if n != 2:
            raise ConfigError("initial.state", "'minus' needs a two-level model")
        psi = np.array([1.0, -1.0], dtype=complex) / math.sqrt(2.0)
    elif spec == "amplitudes":
        vals = _get(cfg, "initial.amplitudes", _floats, required=True)
        if len(vals) != 2 * n:
            raise ConfigError("initial.amplitudes", f"expected {2 * n} numbers (re im pairs)")
        psi = np.array(vals[0::2]) + 1j * np.array(vals[1::2])
        nrm = np.linalg.norm(psi)
        if nrm == 0:
            raise ConfigError("initial.amplitudes", "must not be the zero vector")
        psi = psi / nrm
    else:
        raise ConfigError("initial.state", f"unknown initial state {spec!r}")
    echo = {"initial.state": spec}
    if spec == "amplitudes":
        echo["initial.amplitudes"] = " ".join(
            f"{_fmt(v.real)} {_fmt(v.imag)}" for v in psi
        )
    return psi, echo


def _basis_matrix(n, i, j):
    m = np.zeros((n, n), dtype=complex)
    m[i, j] = 1.0
    return m


def build_observables(cfg, n: int) -> tuple[list[Observable], dict[str, str]]:
    spec = _get(cfg, "observables", str, default="")
    obs = []
    for token in spec.split():
        parts = token.split(":")
        try:
            if parts[0] == "pop" and len(parts) == 2:
                i = int(parts[1])
                if not 0 <= i < n:
                    raise ValueError(f"index {i} outside 0..{n - 1}")
                obs.append(Observable(f"pop_{i}", _basis_matrix(n, i, i), "re"))
            elif parts[0] in ("re_rho", "im_rho") and len(parts) == 3:
                i, j = int(parts[1]), int(parts[2])
                if not (0 <= i < n and 0 <= j < n):
                    raise ValueError(f"indices {i},{j} outside 0..{n - 1}")
                # tr(E_ji rho) = rho_ij
                part = "re" if parts[0] == "re_rho" else "im"
                obs.append(Observable(f"{parts[0]}_{i}_{j}", _basis_matrix(n, j, i), part))
            else:
                raise ValueError("unknown form")
        except ValueError as exc:
            raise ConfigError("observables", f"bad token {token!r} ({exc})") from exc
    return obs, {"observables": spec} if spec else {}


def build_run_config(cfg, overrides=None) -> tuple[RunConfig, dict[str, str]]:
    """RunConfig from config plus CLI overrides; returns (config, echo entries)."""
    overrides = overrides or {}

    def pick(key, conv, default=None, required=False):
        short = key.split(".", 1)[1]
        if overrides.get(short) is not None:
            return conv(str(overrides[short]))
        return _get(cfg, key, conv, default=default, required=required)

    rc = RunConfig(
        dt=pick("run.dt", float, required=True),
        t_max=_get(cfg, "run.t_max", float, required=True),
        n_traj=pick("run.n_traj", int, required=True),
        seed=pick("run.seed", int, default=0),
        engine=pick("run.engine", str, required=True),
        sample_stride=_get(cfg, "run.sample_stride", int, default=1),
        n_batches=_get(cfg, "run.batches", int, default=10),
        match_tol=_get(cfg, "run.match_tol", float, default=1e-8),
        degeneracy_tol=_get(cfg, "run.degeneracy_tol", float, default=1e-8),
        leak_budget=_get(cfg, "run.leak_budget", float, default=0.01),
        chunk_size=_get(cfg, "run.chunk_size", int, default=1024),
        threads=int(overrides.get("threads") or _get(cfg, "run.threads", int, default=1)),
        record_realizations=_get(cfg, "output.realizations", int, default=0),
    )
    try:
        rc.validate()
    except ValueError as exc:
        raise ConfigError("run", str(exc)) from exc
    echo = {
        "run.engine": rc.engine,
        "run.dt": _fmt(rc.dt),
        "run.t_max": _fmt(rc.t_max),
        "run.n_traj": str(rc.n_traj),
        "run.seed": str(rc.seed),
        "run.sample_stride": str(rc.sample_stride),
        "run.batches": str(rc.n_batches),
        "run.match_tol": _fmt(rc.match_tol),
        "run.degeneracy_tol": _fmt(rc.degeneracy_tol),
        "run.leak_budget": _fmt(rc.leak_budget),
        "run.chunk_size": str(rc.chunk_size),
    }
    if rc.record_realizations:
        echo["output.realizations"] = str(rc.record_realizations)
    return rc, echo
