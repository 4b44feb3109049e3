"""Exact references: fixed-step integration of the master equation, the
closed-form solution of the qubit family, and a sampled P-divisibility probe.

These are the cross-checks the stochastic engines are validated against, so
they deliberately share nothing with the trajectory code beyond the generator
itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import MasterEquationModel, SIGMA, _check_x, evaluate_generator
from .rate_operator import build_rate_operator, default_zero_threshold

__all__ = [
    "InstabilityError",
    "integrate_master_equation",
    "pauli_exact",
    "ProbeReport",
    "p_divisibility_probe",
    "haar_state",
]


class InstabilityError(RuntimeError):
    """Integration lost trace preservation beyond tolerance."""


def integrate_master_equation(
    model: MasterEquationModel,
    rho0: np.ndarray,
    t_max: float,
    dt_exact: float,
    sample_times: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Classical fixed-step RK4 integration of d rho/dt = generator(rho).

    Returns (times, states) with states[k] re-Hermitised and trace-renormalised.
    `sample_times` must lie on the integration grid (default: every step).
    Raises InstabilityError if the raw trace drifts by more than 1e-6.
    """
    if dt_exact <= 0:
        raise ValueError("dt_exact must be positive")
    rho = np.asarray(rho0, dtype=complex).copy()
    n_steps = int(round(t_max / dt_exact))
    if sample_times is None:
        sample_idx = set(range(n_steps + 1))
    else:
        sample_idx = set()
        for ts in np.atleast_1d(sample_times):
            k = int(round(float(ts) / dt_exact))
            if abs(k * dt_exact - float(ts)) > 1e-9 * max(1.0, abs(float(ts))):
                raise ValueError(f"sample time {ts!r} is not on the dt_exact grid")
            sample_idx.add(k)
    times = []
    states = []

    def emit(k: int, r: np.ndarray):
        h = 0.5 * (r + r.conj().T)
        times.append(k * dt_exact)
        states.append(h / np.trace(h).real)

    if 0 in sample_idx:
        emit(0, rho)
    for k in range(n_steps):
        t = k * dt_exact
        h = dt_exact
        k1 = evaluate_generator(model, t, rho)
        k2 = evaluate_generator(model, t + 0.5 * h, rho + 0.5 * h * k1)
        k3 = evaluate_generator(model, t + 0.5 * h, rho + 0.5 * h * k2)
        k4 = evaluate_generator(model, t + h, rho + h * k3)
        rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        drift = abs(np.trace(rho).real - 1.0)
        if drift > 1e-6:
            raise InstabilityError(
                f"trace drift {drift:.3e} at t = {(k + 1) * dt_exact:g}; shrink dt_exact"
            )
        if (k + 1) in sample_idx:
            emit(k + 1, rho)
    return np.array(times), np.array(states)


def pauli_exact(x, rho0: np.ndarray, t: float) -> np.ndarray:
    """Closed-form state of the qubit family at time t.

    Each Bloch component contracts independently:
        v_i(t) = (x_i + (1 - x_i) e^{-2t}) v_i(0),
    which integrates the pairwise rate sums of the model in closed form.
    """
    x = _check_x(x)
    rho0 = np.asarray(rho0, dtype=complex)
    v0 = [np.trace(rho0 @ SIGMA[i]).real for i in (1, 2, 3)]
    decay = math.exp(-2.0 * t)
    out = 0.5 * np.eye(2, dtype=complex)
    for i in (1, 2, 3):
        vi = (x[i - 1] + (1.0 - x[i - 1]) * decay) * v0[i - 1]
        out += 0.5 * vi * SIGMA[i]
    return out


def haar_state(rng: np.random.Generator, n: int) -> np.ndarray:
    """Haar-random pure state via a normalised complex Gaussian vector."""
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return v / np.linalg.norm(v)


@dataclass
class ProbeReport:
    """Per-time minimum rate-operator eigenvalue over sampled states."""

    times: np.ndarray
    min_eigenvalues: np.ndarray
    consistent: np.ndarray  # True where min eigenvalue >= -zero_threshold

    def all_consistent(self) -> bool:
        return bool(np.all(self.consistent))


def p_divisibility_probe(
    model: MasterEquationModel,
    t_grid,
    n_states: int = 100,
    seed: int = 0,
) -> ProbeReport:
    """Spot-check positivity of the rate operator over Haar-sampled states.

    A negative verdict certifies broken P-divisibility at that time; a
    positive one is only evidence, since the criterion quantifies over all
    states.  Growing n_states extends the same sample stream, so a time
    classified inconsistent can never flip back.
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    min_eigs = np.empty(len(t_grid))
    consistent = np.empty(len(t_grid), dtype=bool)
    for k, t in enumerate(t_grid):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(k,))
        )
        worst = np.inf
        thr = 0.0
        for _ in range(n_states):
            psi = haar_state(rng, model.n)
            w = build_rate_operator(model, float(t), psi)
            vals = np.linalg.eigvalsh(w)
            thr = max(thr, default_zero_threshold(vals))
            worst = min(worst, float(vals[0]))
        min_eigs[k] = worst
        consistent[k] = worst >= -thr
    return ProbeReport(times=t_grid, min_eigenvalues=min_eigs, consistent=consistent)
