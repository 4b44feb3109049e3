"""State-dependent rate operator, its spectrum, and the no-jump evolution.

For a pure state psi the rate operator

    W_psi = sum_a c_a(t) (L_a - <L_a>) |psi><psi| (L_a - <L_a>)^dag

is Hermitian, annihilates psi, and is positive semi-definite exactly when
the dynamics is P-divisible at that point.  Its positive eigenpairs define
jump channels (rate = eigenvalue, target = eigenvector); negative eigenpairs
signal broken P-divisibility and feed the ensemble-coupled reverse jumps of
the general engine.  Between jumps the state follows a renormalised
first-order Euler step under a non-Hermitian, state-dependent Hamiltonian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DimensionError, MasterEquationModel

__all__ = [
    "NonHermitianError",
    "StepSizeError",
    "RateOperatorSpectrum",
    "JumpChannel",
    "lindblad_expectation",
    "build_rate_operator",
    "effective_hamiltonian",
    "deterministic_step",
    "spectral_split",
    "default_zero_threshold",
    "fix_phase",
]

_NORM_TOL = 1e-8  # acceptable deviation of ||psi|| from 1 on input states


class NonHermitianError(ValueError):
    """Input matrix expected to be Hermitian is not."""


class StepSizeError(RuntimeError):
    """Time step too large for the first-order scheme to stay sane."""


@dataclass
class JumpChannel:
    """Forward jump channel: transition to `target` at rate `rate` (> 0)."""

    rate: float
    target: np.ndarray


@dataclass
class RateOperatorSpectrum:
    """Nonzero eigenpairs of a rate operator, split by sign.

    Both lists hold (eigenvalue, eigenvector) tuples sorted by decreasing
    eigenvalue; entries with |eigenvalue| at or below the zero threshold
    (in particular the guaranteed zero mode at psi) are dropped.
    """

    positive: list[tuple[float, np.ndarray]]
    negative: list[tuple[float, np.ndarray]]

    def reconstruct(self, n: int) -> np.ndarray:
        out = np.zeros((n, n), dtype=complex)
        for lam, vec in self.positive + self.negative:
            out += lam * np.outer(vec, vec.conj())
        return out


def _check_state(psi: np.ndarray, n: int) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (n,):
        raise DimensionError(f"state has shape {psi.shape}, expected ({n},)")
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > _NORM_TOL:
        raise ValueError(f"state is not normalised: ||psi|| = {nrm!r}")
    return psi


def fix_phase(vec: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude component real and positive."""
    k = int(np.argmax(np.abs(vec)))
    a = vec[k]
    if a == 0:
        return vec
    return vec * (a.conjugate() / abs(a))


def lindblad_expectation(L: np.ndarray, psi: np.ndarray) -> complex:
    """<psi| L |psi>."""
    L = np.asarray(L, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    if L.ndim != 2 or L.shape[0] != L.shape[1] or L.shape[1] != psi.shape[0]:
        raise DimensionError(f"shape mismatch: L {L.shape}, psi {psi.shape}")
    return complex(np.vdot(psi, L @ psi))


def build_rate_operator(model: MasterEquationModel, t: float, psi: np.ndarray) -> np.ndarray:
    """Rate operator at (t, psi): Hermitian, with psi as an exact zero mode."""
    psi = _check_state(psi, model.n)
    ops = model.operators_at(t)
    rates = model.rates_at(t)
    w = np.zeros((model.n, model.n), dtype=complex)
    if len(rates):
        lpsi = np.einsum("aij,j->ai", ops, psi)
        ell = lpsi @ psi.conj()
        shifted = lpsi - ell[:, None] * psi[None, :]
        w = np.einsum("a,ai,aj->ij", rates, shifted, shifted.conj())
    return 0.5 * (w + w.conj().T)


def effective_hamiltonian(model: MasterEquationModel, t: float, psi: np.ndarray) -> np.ndarray:
    """Non-Hermitian, state-dependent Hamiltonian driving the no-jump evolution.

    H_psi = H - (i/2) sum_a c_a (L_a^dag L_a - 2 <L_a>^* L_a + |<L_a>|^2).
    """
    psi = _check_state(psi, model.n)
    h, ops, ldl, rates = model._at(t)
    out = h.astype(complex).copy()
    if len(rates):
        lpsi = np.einsum("aij,j->ai", ops, psi)
        ell = lpsi @ psi.conj()
        g = np.einsum("a,aij->ij", rates, ldl)
        g -= 2.0 * np.einsum("a,a,aij->ij", rates, ell.conj(), ops)
        g += np.sum(rates * np.abs(ell) ** 2) * np.eye(model.n)
        out -= 0.5j * g
    return out


def deterministic_step(psi: np.ndarray, H_psi: np.ndarray, dt: float) -> np.ndarray:
    """Renormalised Euler update psi -> (1 - i H_psi dt) psi / ||.||."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    phi = psi - 1j * dt * (H_psi @ psi)
    nrm = np.linalg.norm(phi)
    if not (0.5 < nrm < 1.5):
        raise StepSizeError(
            f"pre-normalisation norm {nrm!r} left (0.5, 1.5); reduce dt"
        )
    return phi / nrm


def default_zero_threshold(eigenvalues: np.ndarray) -> float:
    """Magnitude below which an eigenvalue counts as the zero mode."""
    scale = float(np.max(np.abs(eigenvalues))) if len(eigenvalues) else 0.0
    return 1e-12 * (1.0 + scale)


def spectral_split(w: np.ndarray, zero_threshold: float | None = None) -> RateOperatorSpectrum:
    """Eigendecompose a Hermitian rate operator and partition by sign.

    Eigenvalues with magnitude at or below `zero_threshold` (default
    1e-12 * (1 + max |eigenvalue|)) are discarded.  Eigenvector phases are
    fixed so the largest-magnitude component is real positive.
    """
    w = np.asarray(w, dtype=complex)
    scale = float(np.max(np.abs(w))) if w.size else 0.0
    if np.max(np.abs(w - w.conj().T)) > 1e-9 * (1.0 + scale):
        raise NonHermitianError("input rate operator is not Hermitian within 1e-9")
    vals, vecs = np.linalg.eigh(w)
    thr = default_zero_threshold(vals) if zero_threshold is None else float(zero_threshold)
    positive = []
    negative = []
    for idx in np.argsort(vals)[::-1]:
        lam = float(vals[idx])
        if abs(lam) <= thr:
            continue
        pair = (lam, fix_phase(vecs[:, idx]))
        if lam > 0:
            positive.append(pair)
        else:
            negative.append(pair)
    return RateOperatorSpectrum(positive=positive, negative=negative)
