"""Ensemble statistics, observables, error bars, and state distances."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DimensionError

__all__ = [
    "Observable",
    "SimulationResult",
    "ensemble_average",
    "observable_mean_stderr",
    "trace_distance",
]


@dataclass
class Observable:
    """Real-valued linear functional of the state: Re or Im of tr(M rho)."""

    name: str
    matrix: np.ndarray
    part: str = "re"  # "re" | "im"

    def of_rho(self, rho: np.ndarray) -> float:
        val = np.trace(self.matrix @ rho)
        return float(val.real if self.part == "re" else val.imag)

    def of_states(self, states: np.ndarray) -> np.ndarray:
        """Batched expectation on pure states, shape (m, n) -> (m,)."""
        val = np.einsum("mi,ij,mj->m", states.conj(), self.matrix, states)
        return val.real if self.part == "re" else val.imag


@dataclass
class SimulationResult:
    """Time series produced by a trajectory run.

    averaged_states[k] is the ensemble-averaged density matrix at times[k];
    observable arrays have shape (len(times), n_observables).
    """

    times: np.ndarray
    averaged_states: np.ndarray
    observable_names: list[str]
    observable_means: np.ndarray
    observable_stderr: np.ndarray
    jump_histogram: dict[str, np.ndarray]
    leaked_weight: float
    total_jump_weight: float
    seed: int
    config_echo: dict[str, str] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    realizations: list[np.ndarray] = field(default_factory=list)


def ensemble_average(ensemble) -> np.ndarray:
    """Count-weighted average of the class projectors: sum_k (N_k/N) |psi_k><psi_k|."""
    if not ensemble.classes:
        raise ValueError("cannot average an empty ensemble")
    n = len(ensemble.classes[0].state)
    out = np.zeros((n, n), dtype=complex)
    for cls in ensemble.classes:
        out += (cls.count / ensemble.total) * np.outer(cls.state, cls.state.conj())
    return out


def observable_mean_stderr(samples) -> tuple[float, float]:
    """Sample mean and standard error (population stddev / sqrt(N))."""
    samples = np.asarray(samples, dtype=float)
    if samples.size < 2:
        raise ValueError("need at least two samples for a standard error")
    return float(samples.mean()), float(samples.std() / np.sqrt(samples.size))


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Half the sum of absolute eigenvalues of a - b (both Hermitian)."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    diff = 0.5 * (diff + diff.conj().T)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))
