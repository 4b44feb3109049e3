"""Master-equation models for finite-dimensional open quantum systems.

A model is a Hamiltonian plus a list of dissipative terms, each carrying a
(generally time-dependent) operator and a real, possibly negative, rate.
The generator acts on a density matrix as

    d rho / dt = -i [H(t), rho]
                 + sum_a c_a(t) ( L_a rho L_a^dag - 1/2 {L_a^dag L_a, rho} )

with hbar = 1.  Builtin systems: the exactly-solvable qubit with rates
derived from a three-parameter family (one rate stays negative for all
t > 0), a dissipative all-to-all coupled site network with a shared
oscillating rate, constant-rate amplitude damping, and pure dephasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "LindbladTerm",
    "MasterEquationModel",
    "SIGMA",
    "evaluate_generator",
    "pauli_mu",
    "pauli_rates",
    "build_pauli_model",
    "build_network_model",
    "build_amplitude_damping",
    "build_dephasing",
    "network_rate_default",
    "sample_network_omega",
]


class DimensionError(ValueError):
    """Operator or state dimension does not match the model."""


# Pauli matrices, basis order (|0>, |1>) with |0> the +1 eigenvector of SIGMA[3].
SIGMA = {
    1: np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    2: np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    3: np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}

_CACHE_CAP = 16  # per-model memo of operator stacks, keyed by t


def _as_matrix_fn(op, n: int) -> Callable[[float], np.ndarray]:
    if callable(op):
        return op
    mat = np.asarray(op, dtype=complex)
    if mat.shape != (n, n):
        raise DimensionError(f"operator has shape {mat.shape}, expected ({n}, {n})")
    return lambda t, _m=mat: _m


def _as_scalar_fn(rate) -> Callable[[float], float]:
    if callable(rate):
        return rate
    val = float(rate)
    return lambda t, _v=val: _v


@dataclass
class LindbladTerm:
    """One dissipative channel: operator L(t) and a real rate c(t) (1/time)."""

    operator: Callable[[float], np.ndarray] | np.ndarray
    rate: Callable[[float], float] | float

    def operator_at(self, t: float, n: int) -> np.ndarray:
        return np.asarray(_as_matrix_fn(self.operator, n)(t), dtype=complex)

    def rate_at(self, t: float) -> float:
        return float(_as_scalar_fn(self.rate)(t))


@dataclass
class MasterEquationModel:
    """Finite-dimensional time-local master equation.

    Parameters
    ----------
    n : Hilbert-space dimension.
    hamiltonian : Hermitian n x n matrix or callable t -> matrix (energy, hbar=1).
    terms : dissipative terms; the count is not restricted (redundant sets,
        e.g. n**2 operators, are accepted as given).
    """

    n: int
    hamiltonian: Callable[[float], np.ndarray] | np.ndarray
    terms: list[LindbladTerm] = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension n must be a positive integer")

    def _at(self, t: float):
        """Hamiltonian, stacked operators, stacked L^dag L and rates at time t.

        Evaluators are pure functions of t, so memoisation is invisible.
        """
        t = float(t)
        hit = self._cache.get(t)
        if hit is not None:
            return hit
        h = np.asarray(_as_matrix_fn(self.hamiltonian, self.n)(t), dtype=complex)
        if h.shape != (self.n, self.n):
            raise DimensionError(
                f"hamiltonian evaluates to shape {h.shape}, expected ({self.n}, {self.n})"
            )
        if np.max(np.abs(h - h.conj().T)) > 1e-10 * (1.0 + np.max(np.abs(h))):
            raise ValueError(f"hamiltonian is not Hermitian at t = {t:g}")
        if self.terms:
            ops = np.stack([term.operator_at(t, self.n) for term in self.terms])
            if ops.shape[1:] != (self.n, self.n):
                raise DimensionError("term operator dimension does not match model")
            ldl = np.einsum("aji,ajk->aik", ops.conj(), ops)
            rates = np.array([term.rate_at(t) for term in self.terms], dtype=float)
        else:
            ops = np.zeros((0, self.n, self.n), dtype=complex)
            ldl = ops
            rates = np.zeros(0)
        entry = (h, ops, ldl, rates)
        if len(self._cache) >= _CACHE_CAP:
            self._cache.pop(next(iter(self._cache)))
        self._cache[t] = entry
        return entry

    def hamiltonian_at(self, t: float) -> np.ndarray:
        return self._at(t)[0]

    def operators_at(self, t: float) -> np.ndarray:
        """Stacked term operators, shape (n_terms, n, n)."""
        return self._at(t)[1]

    def rates_at(self, t: float) -> np.ndarray:
        """Term rates at time t, shape (n_terms,); entries may be negative."""
        return self._at(t)[3]


def evaluate_generator(model: MasterEquationModel, t: float, rho: np.ndarray) -> np.ndarray:
    """Apply the master-equation generator to a density-matrix-like input.

    Returns a traceless Hermitian matrix (within roundoff) of the same shape.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (model.n, model.n):
        raise DimensionError(f"rho has shape {rho.shape}, expected ({model.n}, {model.n})")
    h, ops, ldl, rates = model._at(t)
    out = -1j * (h @ rho - rho @ h)
    if len(rates):
        lr = ops @ rho
        sandwich = np.einsum("a,aij,akj->ik", rates, lr, ops.conj())
        m = np.einsum("a,aij->ij", rates, ldl)
        out += sandwich - 0.5 * (m @ rho + rho @ m)
    return out


def _check_x(x: Sequence[float]) -> tuple[float, float, float]:
    x = tuple(float(v) for v in x)
    if len(x) != 3:
        raise ValueError("x must have exactly three entries")
    if any(v < 0 for v in x):
        raise ValueError(f"x entries must be non-negative, got {x}")
    if abs(sum(x) - 1.0) > 1e-12:
        raise ValueError(f"x entries must sum to 1 within 1e-12, got sum {sum(x)!r}")
    return x


def pauli_mu(x: Sequence[float], i: int, t: float) -> float:
    """Auxiliary decay function mu_i(t) = -(x_j + x_k) / (x_j + x_k + e^{2t} x_i)."""
    x = _check_x(x)
    if i not in (1, 2, 3):
        raise ValueError(f"index i must be 1, 2 or 3, got {i}")
    xi = x[i - 1]
    rest = 1.0 - xi
    if xi == 0.0:
        return -1.0
    return -rest / (rest + math.exp(2.0 * t) * xi)


def pauli_rates(x: Sequence[float], t: float) -> tuple[float, float, float]:
    """Rates gamma_i(t) = mu_i(t) - mu_j(t) - mu_k(t) of the qubit family."""
    mu = [pauli_mu(x, i, t) for i in (1, 2, 3)]
    return (
        mu[0] - mu[1] - mu[2],
        mu[1] - mu[0] - mu[2],
        mu[2] - mu[0] - mu[1],
    )


def _pauli_term_rate(x: tuple[float, float, float], k: int, t: float) -> float:
    # the 1/2 prefactor of the sigma_k rho sigma_k - rho form is folded in here
    return 0.5 * pauli_rates(x, t)[k - 1]


def build_pauli_model(x: Sequence[float]) -> MasterEquationModel:
    """Qubit model d rho/dt = 1/2 sum_k gamma_k(t) (sigma_k rho sigma_k - rho).

    With x = (1/2, 1/2, 0) the rates are (1, 1, -tanh t): the third stays
    negative for every t > 0 while the evolution remains P-divisible.
    """
    x = _check_x(x)
    terms = [LindbladTerm(SIGMA[k], partial(_pauli_term_rate, x, k)) for k in (1, 2, 3)]
    return MasterEquationModel(n=2, hamiltonian=np.zeros((2, 2), dtype=complex), terms=terms)


def network_rate_default(t: float) -> float:
    """Shared site-network rate 0.5 [ (1 - e^{-0.5 t}) 0.3 + e^{-0.3 t} sin(4.5 t) ].

    Oscillates through negative windows while its running integral stays
    positive; starts at zero.
    """
    return 0.5 * ((1.0 - math.exp(-0.5 * t)) * 0.3 + math.exp(-0.3 * t) * math.sin(4.5 * t))


def sample_network_omega(n: int, seed: int, low: float = 0.0, high: float = 0.6) -> np.ndarray:
    """Symmetric zero-diagonal coupling matrix with i<j entries uniform on [low, high]."""
    rng = np.random.default_rng(seed)
    omega = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    omega[iu] = rng.uniform(low, high, size=len(iu[0]))
    return omega + omega.T


def build_network_model(
    n: int,
    omega: np.ndarray,
    rate: Callable[[float], float] | float = network_rate_default,
) -> MasterEquationModel:
    """Coupled-site network: H = sum_{i != j} Omega_ij |i><j| plus n**2 jump
    operators |i><j| (every ordered pair) sharing one rate c(t)."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (n, n):
        raise DimensionError(f"omega has shape {omega.shape}, expected ({n}, {n})")
    if not np.allclose(omega, omega.T, atol=1e-12):
        raise ValueError("omega must be symmetric")
    if not np.allclose(np.diag(omega), 0.0, atol=1e-12):
        raise ValueError("omega must have zero diagonal")
    terms = []
    for i in range(n):
        for j in range(n):
            op = np.zeros((n, n), dtype=complex)
            op[i, j] = 1.0
            terms.append(LindbladTerm(op, rate))
    return MasterEquationModel(n=n, hamiltonian=omega.astype(complex), terms=terms)


def build_amplitude_damping(gamma: float) -> MasterEquationModel:
    """Qubit decay |1> -> |0> at constant rate gamma (gamma = 0 gives identity dynamics)."""
    gamma = float(gamma)
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    lower = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
    return MasterEquationModel(
        n=2,
        hamiltonian=np.zeros((2, 2), dtype=complex),
        terms=[LindbladTerm(lower, gamma)],
    )


def build_dephasing(rate: Callable[[float], float] | float) -> MasterEquationModel:
    """Pure qubit dephasing: single term sigma_3 with the given rate (may be negative)."""
    return MasterEquationModel(
        n=2,
        hamiltonian=np.zeros((2, 2), dtype=complex),
        terms=[LindbladTerm(SIGMA[3], rate)],
    )
