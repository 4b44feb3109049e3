"""Trajectory engines: MCWF baseline, rate-operator jumps for P-divisible
dynamics, and the general ensemble-coupled engine with reverse jumps.

The independent engines evolve trajectories one by one (public step
operations) or chunk-vectorised (run loop); both paths share the same
probability rules: a single uniform draw per member and step is partitioned
across that member's jump channels, with the remainder mapping to the
deterministic no-jump evolution.

For P-divisible dynamics the recorded event sequences carry a
continuous-measurement reading: one counter per rate-operator eigenstate, a
click projecting the state onto that eigenstate with probability
eigenvalue * dt, a null count applying the deterministic step.  Both the
channels and their probabilities depend on the state, hence on the whole
past record.  These state-conditioned operations are realised implicitly by
the step functions and the MeasurementRecord; they are not separate objects.
No such reading survives for the reverse jumps of the general engine, whose
events on a trajectory depend on the other trajectories.

The general engine keeps the ensemble as trajectory classes (state, member
count).  Positive eigenvalues of each class's rate operator drive forward
jumps; negative ones drive reverse jumps whose source class must currently
sit on the corresponding eigenvector, with probability
(N_target / N_source) |eigenvalue| dt.  Degenerate eigenvalue blocks leave
the eigenbasis free, so the engine rotates each block to align with existing
class states before matching; without that, fully degenerate spectra (e.g.
the all-to-all network, whose rate operator is c(t) times the projector
complement) would never find their reverse-jump sources.

Reproducibility: all randomness derives from counter-based streams spawned
from the master seed, keyed by trajectory chunk (independent engines) or by
batch (general engine), so results do not depend on the worker count.
"""

from __future__ import annotations

import multiprocessing
import warnings
from dataclasses import dataclass, field

import numpy as np

from .analysis import Observable, SimulationResult, ensemble_average
from .model import MasterEquationModel
from .rate_operator import (
    JumpChannel,
    StepSizeError,
    build_rate_operator,
    deterministic_step,
    effective_hamiltonian,
    fix_phase,
    spectral_split,
)

__all__ = [
    "ENGINES",
    "PDivisibilityError",
    "NegativeRateError",
    "UnmatchedChannelError",
    "TrajectoryClass",
    "Ensemble",
    "JumpEvent",
    "MeasurementRecord",
    "RunConfig",
    "GeneralDiagnostics",
    "roqj_step_p",
    "mcwf_step",
    "match_class",
    "roqj_step_general",
    "expected_one_step",
    "expected_ensemble_update",
    "run",
]

ENGINES = ("mcwf", "roqj_p", "roqj_general")


class PDivisibilityError(RuntimeError):
    """Rate operator has a negative eigenvalue; use the roqj_general engine."""


class NegativeRateError(RuntimeError):
    """MCWF met a negative rate, which would give a negative jump probability."""


class UnmatchedChannelError(RuntimeError):
    """A negative channel found no source class; the ensemble identity fails."""


@dataclass
class TrajectoryClass:
    """Group of ensemble members sharing one pure state."""

    state: np.ndarray
    count: int


@dataclass
class Ensemble:
    """Trajectory classes plus the fixed total member count."""

    classes: list[TrajectoryClass]
    total: int

    def validate(self, match_tol: float = 1e-8):
        if sum(c.count for c in self.classes) != self.total:
            raise ValueError("class counts do not sum to the ensemble total")
        for c in self.classes:
            if c.count < 0:
                raise ValueError("class counts must be non-negative")
            if abs(np.linalg.norm(c.state) - 1.0) > 1e-9:
                raise ValueError("class states must be unit norm")
        states = [c.state for c in self.classes]
        for i in range(len(states)):
            for j in range(i + 1, len(states)):
                if abs(np.vdot(states[i], states[j])) >= 1.0 - match_tol:
                    raise ValueError(f"classes {i} and {j} match under the state predicate")


@dataclass
class JumpEvent:
    time: float
    channel: int
    kind: str  # "forward" | "reverse"
    source_class: int | None = None
    target_class: int | None = None
    count: int = 1


@dataclass
class MeasurementRecord:
    """Ordered jump events along one trajectory (detector-click sequence)."""

    events: list[JumpEvent] = field(default_factory=list)


@dataclass
class GeneralDiagnostics:
    """Accumulated health counters for the ensemble-coupled engine."""

    leaked_weight: float = 0.0
    total_jump_weight: float = 0.0
    unmatched_channels: int = 0
    clamped_classes: int = 0
    tie_events: int = 0
    max_forward_channels: int = 0
    max_classes: int = 0


@dataclass
class RunConfig:
    """Knobs of a trajectory run; `seed` fixes every random draw."""

    dt: float
    t_max: float
    n_traj: int
    seed: int
    engine: str
    sample_stride: int = 1
    sample_times: np.ndarray | None = None
    n_batches: int = 10
    match_tol: float = 1e-8
    degeneracy_tol: float = 1e-8
    leak_budget: float = 0.01
    chunk_size: int = 1024
    threads: int = 1
    observables: list[Observable] = field(default_factory=list)
    record_realizations: int = 0

    def validate(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_max < self.dt:
            raise ValueError("t_max must be at least dt")
        if self.n_traj < 1:
            raise ValueError("n_traj must be at least 1")
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be at least 1")
        if self.n_batches < 1:
            raise ValueError("n_batches must be at least 1")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be at least 1")

    def n_steps(self) -> int:
        n = int(round(self.t_max / self.dt))
        return max(n, 1)

    def sample_indices(self) -> list[int]:
        n = self.n_steps()
        if self.sample_times is not None:
            idx = set()
            for ts in np.atleast_1d(self.sample_times):
                k = int(round(float(ts) / self.dt))
                if abs(k * self.dt - float(ts)) > 1e-9 * max(1.0, abs(float(ts))) or not (0 <= k <= n):
                    raise ValueError(f"sample time {ts!r} is not on the step grid")
                idx.add(k)
            return sorted(idx)
        idx = set(range(0, n + 1, self.sample_stride))
        idx.add(n)
        return sorted(idx)


def _stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based substream of the master seed, keyed by integers."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


# ---------------------------------------------------------------------------
# single-trajectory step operations
# ---------------------------------------------------------------------------


def _forward_channels(model, t, psi) -> list[JumpChannel]:
    """Jump channels of the rate operator at (t, psi).

    Raises PDivisibilityError if the rate operator has a negative eigenvalue
    beyond the zero threshold.
    """
    w = build_rate_operator(model, t, psi)
    spec = spectral_split(w)
    if spec.negative:
        raise PDivisibilityError(
            f"rate operator has negative eigenvalue {spec.negative[0][0]:.3e} at t = {t:g}; "
            "this point is not P-divisible, use the roqj_general engine"
        )
    return [JumpChannel(rate=lam, target=vec) for lam, vec in spec.positive]


def roqj_step_p(psi, model, t, dt, u):
    """One rate-operator jump step for P-divisible dynamics.

    `u` is a uniform [0,1) draw; it is partitioned across the jump channels
    (probability = eigenvalue * dt each), the remainder meaning no jump.
    Returns (new_state, JumpEvent | None).
    """
    channels = _forward_channels(model, t, psi)
    total = sum(ch.rate for ch in channels) * dt
    if total > 0.5:
        raise StepSizeError(f"total jump probability {total:.3g} > 0.5 at t = {t:g}; reduce dt")
    cum = 0.0
    for rank, ch in enumerate(channels):
        cum += ch.rate * dt
        if u < cum:
            return ch.target.copy(), JumpEvent(time=t, channel=rank, kind="forward")
    h_psi = effective_hamiltonian(model, t, psi)
    return deterministic_step(psi, h_psi, dt), None


def mcwf_step(psi, model, t, dt, u):
    """One Monte Carlo wave-function step (requires non-negative rates).

    Jump channel a fires with probability c_a ||L_a psi||^2 dt and lands on
    the normalised L_a psi; otherwise the state takes the deterministic step
    under H - (i/2) sum_a c_a L_a^dag L_a.
    """
    rates = model.rates_at(t)
    if np.any(rates < 0):
        bad = int(np.argmin(rates))
        raise NegativeRateError(
            f"rate c_{bad}(t) = {rates[bad]:.3e} < 0 at t = {t:g}; MCWF does not apply"
        )
    ops = model.operators_at(t)
    lpsi = np.einsum("aij,j->ai", ops, psi)
    probs = rates * np.einsum("ai,ai->a", lpsi, lpsi.conj()).real * dt
    total = float(probs.sum())
    if total > 0.5:
        raise StepSizeError(f"total jump probability {total:.3g} > 0.5 at t = {t:g}; reduce dt")
    cum = 0.0
    for alpha in range(len(probs)):
        cum += probs[alpha]
        if u < cum:
            target = lpsi[alpha]
            return target / np.linalg.norm(target), JumpEvent(time=t, channel=alpha, kind="forward")
    h_eff = model.hamiltonian_at(t) - 0.5j * np.einsum("a,aij->ij", rates, model._at(t)[2])
    return deterministic_step(psi, h_eff, dt), None


def match_class(ensemble: Ensemble, target: np.ndarray, tol: float):
    """Index of the class with the largest |<psi_k|target>|, if >= 1 - tol.

    Ties break towards the lowest index; returns None when nothing matches.
    """
    if not ensemble.classes:
        return None
    overlaps = np.array([abs(np.vdot(c.state, target)) for c in ensemble.classes])
    best = int(np.argmax(overlaps))
    if overlaps[best] >= 1.0 - tol:
        return best
    return None


# ---------------------------------------------------------------------------
# batched kernels shared by the run loop and the general engine
# ---------------------------------------------------------------------------


def _step_core(model, t, dt, states):
    """Rate operators and unnormalised no-jump updates for a state batch.

    states: (m, n).  Returns (w, unnorm) with w of shape (m, n, n).
    """
    h, ops, ldl, rates = model._at(t)
    unnorm = states - 1j * dt * (states @ h.T)
    if len(rates):
        lpsi = np.einsum("aij,mj->ami", ops, states)
        ell = np.einsum("mi,ami->am", states.conj(), lpsi)
        shifted = lpsi - ell[:, :, None] * states[None, :, :]
        w = np.einsum("a,ami,amj->mij", rates, shifted, shifted.conj(), optimize=True)
        w = 0.5 * (w + w.conj().transpose(0, 2, 1))
        gpsi = np.einsum("a,aij,mj->mi", rates, ldl, states, optimize=True)
        gpsi -= 2.0 * np.einsum("am,ami->mi", rates[:, None] * ell.conj(), lpsi)
        gpsi += np.einsum("a,am->m", rates, np.abs(ell) ** 2)[:, None] * states
        unnorm -= 0.5 * dt * gpsi
    else:
        w = np.zeros((states.shape[0], model.n, model.n), dtype=complex)
    return w, unnorm


def _normalise_rows(states, t):
    norms = np.linalg.norm(states, axis=1)
    if np.any(norms <= 0.5) or np.any(norms >= 1.5):
        raise StepSizeError(f"pre-normalisation norm left (0.5, 1.5) at t = {t:g}; reduce dt")
    return states / norms[:, None]


def _fix_phase_rows(vecs):
    idx = np.argmax(np.abs(vecs), axis=1)
    lead = vecs[np.arange(len(vecs)), idx]
    phase = np.where(np.abs(lead) > 0, np.conj(lead) / np.maximum(np.abs(lead), 1e-300), 1.0)
    return vecs * phase[:, None]


def _kernel_roqj_p(model, t, dt, states, u):
    """Vectorised roqj_p step on a batch. Returns (new_states, jump_rank, n_fwd).

    jump_rank[m] is the descending-eigenvalue channel index, or -1 (no jump).
    """
    m, n = states.shape
    w, unnorm = _step_core(model, t, dt, states)
    vals, vecs = np.linalg.eigh(w)
    thr = 1e-12 * (1.0 + np.max(np.abs(vals), axis=1))
    if np.any(vals[:, 0] < -thr):
        worst = float(np.min(vals[:, 0]))
        raise PDivisibilityError(
            f"rate operator has negative eigenvalue {worst:.3e} at t = {t:g}; "
            "this point is not P-divisible, use the roqj_general engine"
        )
    lam = vals[:, ::-1]  # descending
    lam = np.where(lam > thr[:, None], lam, 0.0)
    probs = lam * dt
    total = probs.sum(axis=1)
    if np.any(total > 0.5):
        raise StepSizeError(
            f"total jump probability {float(total.max()):.3g} > 0.5 at t = {t:g}; reduce dt"
        )
    cum = np.cumsum(probs, axis=1)
    jumped = u < total
    rank = np.full(m, -1, dtype=int)
    new_states = np.empty_like(states)
    if np.any(jumped):
        rows = np.nonzero(jumped)[0]
        r = np.array([int(np.searchsorted(cum[i], u[i], side="right")) for i in rows])
        rank[rows] = r
        targets = vecs[rows, :, n - 1 - r]  # descending rank -> ascending column
        new_states[rows] = _fix_phase_rows(targets)
    stay = ~jumped
    if np.any(stay):
        new_states[stay] = _normalise_rows(unnorm[stay], t)
    n_fwd = int((lam > 0).sum(axis=1).max()) if m else 0
    return new_states, rank, n_fwd


def _kernel_mcwf(model, t, dt, states, u):
    """Vectorised MCWF step on a batch. Returns (new_states, jump_term_index)."""
    m, n = states.shape
    h, ops, ldl, rates = model._at(t)
    if np.any(rates < 0):
        bad = int(np.argmin(rates))
        raise NegativeRateError(
            f"rate c_{bad}(t) = {rates[bad]:.3e} < 0 at t = {t:g}; MCWF does not apply"
        )
    h_eff = h - 0.5j * np.einsum("a,aij->ij", rates, ldl)
    unnorm = states - 1j * dt * (states @ h_eff.T)
    if len(rates):
        lpsi = np.einsum("aij,mj->ami", ops, states)
        probs = (rates[:, None] * np.einsum("ami,ami->am", lpsi, lpsi.conj()).real * dt).T
    else:
        probs = np.zeros((m, 0))
    total = probs.sum(axis=1)
    if np.any(total > 0.5):
        raise StepSizeError(
            f"total jump probability {float(total.max()):.3g} > 0.5 at t = {t:g}; reduce dt"
        )
    cum = np.cumsum(probs, axis=1)
    jumped = u < total
    chan = np.full(m, -1, dtype=int)
    new_states = np.empty_like(states)
    if np.any(jumped):
        rows = np.nonzero(jumped)[0]
        a = np.array([int(np.searchsorted(cum[i], u[i], side="right")) for i in rows])
        chan[rows] = a
        targets = lpsi[a, rows, :]
        new_states[rows] = targets / np.linalg.norm(targets, axis=1)[:, None]
    stay = ~jumped
    if np.any(stay):
        new_states[stay] = _normalise_rows(unnorm[stay], t)
    return new_states, chan


# ---------------------------------------------------------------------------
# general engine: ensemble-coupled step with reverse jumps
# ---------------------------------------------------------------------------


@dataclass
class _Action:
    """One entry of a class's per-member jump menu."""

    prob: float
    kind: str  # "fwd_join" | "fwd_new" | "rev"
    target_class: int | None = None
    new_state: np.ndarray | None = None
    channel: int = 0
    requested_flow: float = 0.0  # ensemble-fraction flow this action asks for


@dataclass
class _StepPlan:
    det_states: np.ndarray  # (K, n) post-step class states
    menus: list[list[_Action]]
    leaked_flow: float
    total_flow: float
    unmatched: int
    clamped: int
    ties: int
    max_forward_channels: int


def _eigen_blocks(vals, thr, deg_tol_abs):
    """Group eigenvalues (ascending) into nonzero near-degenerate blocks."""
    blocks = []
    current = []
    for i, lam in enumerate(vals):
        if current and abs(lam - vals[current[-1]]) <= deg_tol_abs:
            current.append(i)
        else:
            if current:
                blocks.append(current)
            current = [i]
    if current:
        blocks.append(current)
    out = []
    for idx in blocks:
        lam = float(np.mean(vals[idx]))
        if abs(lam) > thr:
            out.append((lam, idx))
    return out


def _plan_general_step(ensemble, model, t, dt, match_tol, deg_tol, strict):
    """Channel menus, destinations and diagnostics for one synchronous step.

    All probabilities use the frozen counts at step start.  Within each
    near-degenerate eigenvalue block the eigenbasis is rotated towards
    existing class states (best overlap first) before matching; leftover
    negative directions are unmatched (an error under `strict`).
    """
    classes = ensemble.classes
    k_total = len(classes)
    states = np.stack([c.state for c in classes])
    counts = np.array([c.count for c in classes], dtype=float)
    n_tot = float(ensemble.total)
    w, unnorm = _step_core(model, t, dt, states)
    det_states = _normalise_rows(unnorm, t)
    vals, vecs = np.linalg.eigh(w)

    menus: list[list[_Action]] = [[] for _ in range(k_total)]
    leaked = 0.0
    total_flow = 0.0
    unmatched = 0
    ties = 0
    max_fwd = 0
    ortho_tol = np.sqrt(2.0 * match_tol)

    for kp in range(k_total):
        v = vals[kp]
        thr = 1e-12 * (1.0 + float(np.max(np.abs(v))))
        deg_abs = deg_tol * (1.0 + float(np.max(np.abs(v))))
        fwd_count = 0
        for lam, idx in _eigen_blocks(v, thr, deg_abs):
            phi = vecs[kp][:, idx]  # (n, m_b)
            m_b = len(idx)
            if lam > 0:
                fwd_count += m_b
            # in-block coordinates of every other class state
            coeff = states.conj() @ phi  # (K, m_b); row m = <phi_b|psi_m> components
            coeff = coeff.conj()
            in_norm = np.linalg.norm(coeff, axis=1)
            cand = [m for m in range(k_total) if m != kp and in_norm[m] >= 1.0 - match_tol]
            cand.sort(key=lambda m: (-in_norm[m], m))
            selected: list[int] = []
            sel_dirs: list[np.ndarray] = []
            for m in cand:
                if len(selected) == m_b:
                    ties += 1
                    continue
                direction = coeff[m] / in_norm[m]
                if any(abs(np.vdot(s, direction)) > ortho_tol for s in sel_dirs):
                    ties += 1
                    continue
                selected.append(m)
                sel_dirs.append(direction)
            flow_unit = (counts[kp] / n_tot) * abs(lam) * dt
            if lam > 0:
                for rank, m in enumerate(selected):
                    menus[kp].append(
                        _Action(
                            prob=lam * dt,
                            kind="fwd_join",
                            target_class=m,
                            channel=idx[-1 - rank],
                            requested_flow=flow_unit,
                        )
                    )
                    total_flow += flow_unit
                n_rest = m_b - len(selected)
                if n_rest:
                    rest = _block_completion(phi, sel_dirs, n_rest)
                    for rank, vec in enumerate(rest):
                        menus[kp].append(
                            _Action(
                                prob=lam * dt,
                                kind="fwd_new",
                                new_state=fix_phase(vec),
                                channel=idx[0] + rank,
                                requested_flow=flow_unit,
                            )
                        )
                        total_flow += flow_unit
            else:
                for m in selected:
                    if counts[m] == 0:
                        continue  # no members to move; class will be pruned anyway
                    prob = (counts[kp] / counts[m]) * abs(lam) * dt
                    menus[m].append(
                        _Action(
                            prob=prob,
                            kind="rev",
                            target_class=kp,
                            channel=idx[0],
                            requested_flow=flow_unit,
                        )
                    )
                    total_flow += flow_unit
                n_rest = m_b - len(selected)
                if n_rest:
                    if strict:
                        raise UnmatchedChannelError(
                            f"negative channel of class {kp} (eigenvalue {lam:.6g}, "
                            f"multiplicity {m_b}, {n_rest} unmatched) has no source class at t = {t:g}"
                        )
                    unmatched += n_rest
                    leaked += n_rest * flow_unit
                    total_flow += n_rest * flow_unit
        max_fwd = max(max_fwd, fwd_count)

    clamped = 0
    for k, menu in enumerate(menus):
        tot = sum(a.prob for a in menu)
        if tot > 1.0:
            scale = 1.0 / tot
            for a in menu:
                a.prob *= scale
            leaked += (counts[k] / n_tot) * (tot - 1.0)
            clamped += 1
    return _StepPlan(
        det_states=det_states,
        menus=menus,
        leaked_flow=leaked,
        total_flow=total_flow,
        unmatched=unmatched,
        clamped=clamped,
        ties=ties,
        max_forward_channels=max_fwd,
    )


def _block_completion(phi, sel_dirs, n_rest):
    """Orthonormal directions of the block not covered by the selected ones."""
    m_b = phi.shape[1]
    r = np.eye(m_b, dtype=complex)
    for s in sel_dirs:
        r -= np.outer(s, s.conj())
    evals, evecs = np.linalg.eigh(r)
    order = np.argsort(evals)[::-1][:n_rest]
    return [phi @ evecs[:, i] for i in order]


def _merge_and_prune(states, counts, match_tol):
    """Merge classes matching under the overlap predicate; drop empty ones."""
    items = [[s, int(c)] for s, c in zip(states, counts) if c > 0]
    merged = True
    while merged:
        merged = False
        for i in range(len(items)):
            for j in range(i + 1, len(items)):
                if abs(np.vdot(items[i][0], items[j][0])) >= 1.0 - match_tol:
                    keep, drop = (i, j) if items[i][1] >= items[j][1] else (j, i)
                    items[keep][1] += items[drop][1]
                    items.pop(drop)
                    merged = True
                    break
            if merged:
                break
    return [TrajectoryClass(state=s, count=c) for s, c in items]


def roqj_step_general(
    ensemble: Ensemble,
    model: MasterEquationModel,
    t: float,
    dt: float,
    rng: np.random.Generator,
    *,
    match_tol: float = 1e-8,
    degeneracy_tol: float = 1e-8,
    diagnostics: GeneralDiagnostics | None = None,
    tracked: list[int] | None = None,
    track_events: list | None = None,
):
    """One synchronous ensemble step of the general engine.

    Counts are frozen at step start; each member draws a single uniform that
    is partitioned across its class's jump menu.  Members that jump into an
    existing class land on that class's post-step state; fresh forward
    channels open new classes at the (pre-step) eigenvector.  Matching
    post-step classes are merged and empty classes pruned.

    `tracked` optionally holds class indices of individually followed
    members; it is updated in place and their jump events are appended to
    `track_events`.

    Returns (new_ensemble, events).
    """
    plan = _plan_general_step(ensemble, model, t, dt, match_tol, degeneracy_tol, strict=False)
    k_total = len(ensemble.classes)
    counts = [c.count for c in ensemble.classes]

    # destination tally: one slot per surviving class + one per fresh state
    stay_counts = [0] * k_total
    arrivals = [0] * k_total
    new_states: list[np.ndarray] = []
    new_counts: list[int] = []
    events: list[JumpEvent] = []
    new_index_of_action: dict[tuple[int, int], int] = {}

    tracked_positions = [0] * k_total
    tracked_here = {}
    if tracked is not None:
        for ti, cls_idx in enumerate(tracked):
            pos = tracked_positions[cls_idx]
            tracked_positions[cls_idx] += 1
            tracked_here.setdefault(cls_idx, []).append((ti, pos))

    for k in range(k_total):
        m_k = counts[k]
        if m_k == 0:
            continue
        menu = plan.menus[k]
        u = rng.random(m_k)
        if menu:
            cum = np.cumsum([a.prob for a in menu])
            action_idx = np.searchsorted(cum, u, side="right")
        else:
            action_idx = np.full(m_k, 0, dtype=int)
            cum = np.zeros(0)
        n_actions = len(menu)
        tally = np.bincount(action_idx, minlength=n_actions + 1)
        stay_counts[k] += int(tally[n_actions])
        for a_i, action in enumerate(menu):
            moved = int(tally[a_i])
            if moved == 0:
                continue
            if action.kind == "fwd_join":
                arrivals[action.target_class] += moved
                events.append(JumpEvent(t, action.channel, "forward", k, action.target_class, moved))
            elif action.kind == "rev":
                arrivals[action.target_class] += moved
                events.append(JumpEvent(t, action.channel, "reverse", k, action.target_class, moved))
            else:
                key = (k, a_i)
                if key not in new_index_of_action:
                    new_index_of_action[key] = len(new_states)
                    new_states.append(action.new_state)
                    new_counts.append(0)
                new_counts[new_index_of_action[key]] += moved
                events.append(JumpEvent(t, action.channel, "forward", k, None, moved))
        # follow tracked members: their fate is the action of their own draw
        for ti, pos in tracked_here.get(k, []):
            a_i = int(action_idx[pos]) if n_actions else n_actions
            if a_i >= n_actions:
                continue  # stays in class k
            action = menu[a_i]
            if action.kind == "fwd_new":
                dest = k_total + new_index_of_action[(k, a_i)]
            else:
                dest = action.target_class
            tracked[ti] = dest
            if track_events is not None:
                track_events[ti].events.append(
                    JumpEvent(t, action.channel, "reverse" if action.kind == "rev" else "forward", k, dest, 1)
                )

    all_states = [plan.det_states[k] for k in range(k_total)] + new_states
    all_counts = [stay_counts[k] + arrivals[k] for k in range(k_total)] + new_counts

    if tracked is not None:
        # remap tracked members through merge/prune by following their state
        tracked_states = [all_states[ci] for ci in tracked]
    new_classes = _merge_and_prune(all_states, all_counts, match_tol)
    out = Ensemble(classes=new_classes, total=ensemble.total)
    if sum(c.count for c in new_classes) != ensemble.total:
        raise RuntimeError("ensemble member count was not conserved")
    if tracked is not None:
        for ti, st in enumerate(tracked_states):
            overlaps = [abs(np.vdot(c.state, st)) for c in new_classes]
            tracked[ti] = int(np.argmax(overlaps))
    if diagnostics is not None:
        diagnostics.leaked_weight += plan.leaked_flow
        diagnostics.total_jump_weight += plan.total_flow
        diagnostics.unmatched_channels += plan.unmatched
        diagnostics.clamped_classes += plan.clamped
        diagnostics.tie_events += plan.ties
        diagnostics.max_forward_channels = max(
            diagnostics.max_forward_channels, plan.max_forward_channels
        )
        diagnostics.max_classes = max(diagnostics.max_classes, len(new_classes))
    return out, events


def expected_one_step(psi, model, t, dt):
    """Exact expectation of one roqj_p step (no sampling).

    (1 - sum_j p_j) |psi'><psi'| + sum_j lambda_j dt |phi_j><phi_j|.
    """
    channels = _forward_channels(model, t, psi)
    total = sum(ch.rate for ch in channels) * dt
    if total > 0.5:
        raise StepSizeError(f"total jump probability {total:.3g} > 0.5 at t = {t:g}; reduce dt")
    psi_det = deterministic_step(psi, effective_hamiltonian(model, t, psi), dt)
    out = (1.0 - total) * np.outer(psi_det, psi_det.conj())
    for ch in channels:
        out += ch.rate * dt * np.outer(ch.target, ch.target.conj())
    return out


def expected_ensemble_update(
    ensemble: Ensemble,
    model: MasterEquationModel,
    t: float,
    dt: float,
    *,
    match_tol: float = 1e-8,
    degeneracy_tol: float = 1e-8,
):
    """Exact expectation of one general-engine step over the whole ensemble.

    Every negative channel must find its source class (UnmatchedChannelError
    otherwise, since the master-equation identity provably fails then).
    """
    plan = _plan_general_step(ensemble, model, t, dt, match_tol, degeneracy_tol, strict=True)
    n = model.n
    out = np.zeros((n, n), dtype=complex)
    weights = [c.count / ensemble.total for c in ensemble.classes]
    for k, cls in enumerate(ensemble.classes):
        if cls.count == 0:
            continue
        menu = plan.menus[k]
        total_p = sum(a.prob for a in menu)
        det = plan.det_states[k]
        acc = (1.0 - total_p) * np.outer(det, det.conj())
        for a in menu:
            if a.kind == "fwd_new":
                dest = a.new_state
            else:
                dest = plan.det_states[a.target_class]
            acc += a.prob * np.outer(dest, dest.conj())
        out += weights[k] * acc
    return out


# ---------------------------------------------------------------------------
# run loop
# ---------------------------------------------------------------------------

_WORK: dict | None = None


def _worker_entry(task_id: int):
    if _WORK["kind"] == "chunk":
        return _simulate_chunk(_WORK, task_id)
    return _simulate_batch(_WORK, task_id)


def _map_tasks(work: dict, ids: list[int], threads: int):
    global _WORK
    _WORK = work
    try:
        if threads <= 1 or len(ids) <= 1:
            return [_worker_entry(i) for i in ids]
        try:
            ctx = multiprocessing.get_context("fork")
        except ValueError:
            return [_worker_entry(i) for i in ids]
        with ctx.Pool(processes=min(threads, len(ids))) as pool:
            return pool.map(_worker_entry, ids)
    finally:
        _WORK = None


def _initial_spec(model, initial):
    """Normalise the initial condition to (kind, payload)."""
    arr = np.asarray(initial, dtype=complex)
    if arr.ndim == 1:
        if arr.shape != (model.n,):
            raise ValueError(f"initial state has shape {arr.shape}, expected ({model.n},)")
        nrm = np.linalg.norm(arr)
        if abs(nrm - 1.0) > 1e-8:
            raise ValueError("initial pure state must be normalised")
        return ("pure", arr / nrm)
    if arr.shape != (model.n, model.n):
        raise ValueError(f"initial density matrix has shape {arr.shape}, expected square n = {model.n}")
    if np.max(np.abs(arr - arr.conj().T)) > 1e-10:
        raise ValueError("initial density matrix must be Hermitian")
    if abs(np.trace(arr).real - 1.0) > 1e-10:
        raise ValueError("initial density matrix must have unit trace")
    vals, vecs = np.linalg.eigh(arr)
    if np.min(vals) < -1e-8:
        raise ValueError("initial density matrix must be positive semi-definite")
    keep = vals > 1e-12
    weights = vals[keep] / vals[keep].sum()
    return ("mixed", (weights, vecs[:, keep].T.copy()))


def _draw_initial_states(spec, m, rng):
    kind, payload = spec
    if kind == "pure":
        return np.tile(payload, (m, 1))
    weights, basis = payload
    idx = rng.choice(len(weights), size=m, p=weights)
    return basis[idx].copy()


def _simulate_chunk(work, chunk_id):
    model = work["model"]
    cfg: RunConfig = work["config"]
    sample_idx = work["sample_idx"]
    lo, hi = work["chunk_bounds"][chunk_id]
    m = hi - lo
    rng = _stream(cfg.seed, 1, chunk_id)
    states = _draw_initial_states(work["initial"], m, rng)
    n_steps = cfg.n_steps()
    n_t = len(sample_idx)
    n_obs = len(cfg.observables)
    rho_sum = np.zeros((n_t, model.n, model.n), dtype=complex)
    obs_sum = np.zeros((n_t, n_obs))
    obs_sumsq = np.zeros((n_t, n_obs))
    hist_len = work["hist_len"]
    hist = np.zeros(hist_len, dtype=np.int64)
    max_fwd = 0
    rec_rows = [i for i in range(m) if lo + i < cfg.record_realizations]
    rec_states = [np.zeros((n_t, model.n), dtype=complex) for _ in rec_rows]
    rec_events = [MeasurementRecord() for _ in rec_rows]
    sample_pos = {k: i for i, k in enumerate(sample_idx)}

    def take_sample(pos):
        rho_sum[pos] += np.einsum("mi,mj->ij", states, states.conj())
        for o, obs in enumerate(cfg.observables):
            vals = obs.of_states(states)
            obs_sum[pos, o] += vals.sum()
            obs_sumsq[pos, o] += (vals**2).sum()
        for r, row in enumerate(rec_rows):
            rec_states[r][pos] = states[row]

    if 0 in sample_pos:
        take_sample(sample_pos[0])
    for k in range(n_steps):
        t = k * cfg.dt
        u = rng.random(m)
        if cfg.engine == "roqj_p":
            states, rank, n_fwd = _kernel_roqj_p(model, t, cfg.dt, states, u)
            max_fwd = max(max_fwd, n_fwd)
        else:
            states, rank = _kernel_mcwf(model, t, cfg.dt, states, u)
        jumped = rank >= 0
        if np.any(jumped):
            hist += np.bincount(rank[jumped], minlength=hist_len)
            for r, row in enumerate(rec_rows):
                if jumped[row]:
                    rec_events[r].events.append(
                        JumpEvent(time=t, channel=int(rank[row]), kind="forward")
                    )
        if (k + 1) in sample_pos:
            take_sample(sample_pos[k + 1])
    return {
        "rho_sum": rho_sum,
        "obs_sum": obs_sum,
        "obs_sumsq": obs_sumsq,
        "hist": hist,
        "max_fwd": max_fwd,
        "rec_states": rec_states,
        "rec_events": rec_events,
    }


def _run_independent(model, initial, cfg: RunConfig, echo):
    sample_idx = cfg.sample_indices()
    cs = cfg.chunk_size
    bounds = [(lo, min(lo + cs, cfg.n_traj)) for lo in range(0, cfg.n_traj, cs)]
    hist_len = model.n if cfg.engine == "roqj_p" else max(len(model.terms), 1)
    work = {
        "kind": "chunk",
        "model": model,
        "config": cfg,
        "initial": initial,
        "sample_idx": sample_idx,
        "chunk_bounds": bounds,
        "hist_len": hist_len,
    }
    parts = _map_tasks(work, list(range(len(bounds))), cfg.threads)
    n_t = len(sample_idx)
    n_obs = len(cfg.observables)
    rho_sum = np.zeros((n_t, model.n, model.n), dtype=complex)
    obs_sum = np.zeros((n_t, n_obs))
    obs_sumsq = np.zeros((n_t, n_obs))
    hist = np.zeros(hist_len, dtype=np.int64)
    max_fwd = 0
    rec_states: list[np.ndarray] = []
    rec_events: list[MeasurementRecord] = []
    for part in parts:
        rho_sum += part["rho_sum"]
        obs_sum += part["obs_sum"]
        obs_sumsq += part["obs_sumsq"]
        hist += part["hist"]
        max_fwd = max(max_fwd, part["max_fwd"])
        rec_states.extend(part["rec_states"])
        rec_events.extend(part["rec_events"])
    n = float(cfg.n_traj)
    means = obs_sum / n
    var = np.maximum(obs_sumsq / n - means**2, 0.0)
    stderr = np.sqrt(var / n)
    times = np.array([k * cfg.dt for k in sample_idx])
    return SimulationResult(
        times=times,
        averaged_states=rho_sum / n,
        observable_names=[o.name for o in cfg.observables],
        observable_means=means,
        observable_stderr=stderr,
        jump_histogram={"forward": hist},
        leaked_weight=0.0,
        total_jump_weight=float(hist.sum()) / n,
        seed=cfg.seed,
        config_echo=echo,
        diagnostics={"max_forward_channels": max_fwd, "engine": cfg.engine},
        records=rec_events,
        realizations=rec_states,
    )


def _simulate_batch(work, batch_id):
    model = work["model"]
    cfg: RunConfig = work["config"]
    sample_idx = work["sample_idx"]
    n_b = work["batch_sizes"][batch_id]
    rng = _stream(cfg.seed, 2, batch_id)
    kind, payload = work["initial"]
    if kind == "pure":
        ens = Ensemble(classes=[TrajectoryClass(state=payload.copy(), count=n_b)], total=n_b)
    else:
        weights, basis = payload
        alloc = rng.multinomial(n_b, weights)
        classes = [
            TrajectoryClass(state=basis[i].copy(), count=int(c))
            for i, c in enumerate(alloc)
            if c > 0
        ]
        ens = Ensemble(classes=classes, total=n_b)
    n_steps = cfg.n_steps()
    n_t = len(sample_idx)
    n_obs = len(cfg.observables)
    rho = np.zeros((n_t, model.n, model.n), dtype=complex)
    obs = np.zeros((n_t, n_obs))
    diag = GeneralDiagnostics()
    hist_f = np.zeros(model.n, dtype=np.int64)
    hist_r = np.zeros(model.n, dtype=np.int64)
    n_track = cfg.record_realizations if batch_id == 0 else 0
    n_track = min(n_track, n_b)
    # tracked member ti starts as the ti-th member in class enumeration order
    cum = np.cumsum([c.count for c in ens.classes])
    tracked = [int(np.searchsorted(cum, ti, side="right")) for ti in range(n_track)]
    track_events = [MeasurementRecord() for _ in range(n_track)]
    track_states = [np.zeros((n_t, model.n), dtype=complex) for _ in range(n_track)]
    sample_pos = {k: i for i, k in enumerate(sample_idx)}

    def take_sample(pos):
        avg = ensemble_average(ens)
        rho[pos] = avg
        for o, ob in enumerate(cfg.observables):
            obs[pos, o] = ob.of_rho(avg)
        for ti in range(n_track):
            track_states[ti][pos] = ens.classes[tracked[ti]].state

    if 0 in sample_pos:
        take_sample(sample_pos[0])
    for k in range(n_steps):
        t = k * cfg.dt
        ens, events = roqj_step_general(
            ens,
            model,
            t,
            cfg.dt,
            rng,
            match_tol=cfg.match_tol,
            degeneracy_tol=cfg.degeneracy_tol,
            diagnostics=diag,
            tracked=tracked if n_track else None,
            track_events=track_events if n_track else None,
        )
        for ev in events:
            h = hist_f if ev.kind == "forward" else hist_r
            h[min(ev.channel, model.n - 1)] += ev.count
        if (k + 1) in sample_pos:
            take_sample(sample_pos[k + 1])
    return {
        "rho": rho,
        "obs": obs,
        "diag": diag,
        "hist_f": hist_f,
        "hist_r": hist_r,
        "n_b": n_b,
        "track_states": track_states,
        "track_events": track_events,
    }


def _run_general(model, initial, cfg: RunConfig, echo):
    sample_idx = cfg.sample_indices()
    n_batches = min(cfg.n_batches, cfg.n_traj)
    base = cfg.n_traj // n_batches
    sizes = [base + (1 if b < cfg.n_traj % n_batches else 0) for b in range(n_batches)]
    work = {
        "kind": "batch",
        "model": model,
        "config": cfg,
        "initial": initial,
        "sample_idx": sample_idx,
        "batch_sizes": sizes,
    }
    parts = _map_tasks(work, list(range(n_batches)), cfg.threads)
    n_t = len(sample_idx)
    n_obs = len(cfg.observables)
    weights = np.array([p["n_b"] for p in parts], dtype=float)
    weights /= weights.sum()
    rho = np.zeros((n_t, model.n, model.n), dtype=complex)
    batch_obs = np.zeros((len(parts), n_t, n_obs))
    hist_f = np.zeros(model.n, dtype=np.int64)
    hist_r = np.zeros(model.n, dtype=np.int64)
    diag = GeneralDiagnostics()
    leaked = 0.0
    total = 0.0
    for b, part in enumerate(parts):
        rho += weights[b] * part["rho"]
        batch_obs[b] = part["obs"]
        hist_f += part["hist_f"]
        hist_r += part["hist_r"]
        d: GeneralDiagnostics = part["diag"]
        leaked += weights[b] * d.leaked_weight
        total += weights[b] * d.total_jump_weight
        diag.unmatched_channels += d.unmatched_channels
        diag.clamped_classes += d.clamped_classes
        diag.tie_events += d.tie_events
        diag.max_forward_channels = max(diag.max_forward_channels, d.max_forward_channels)
        diag.max_classes = max(diag.max_classes, d.max_classes)
    means = np.einsum("b,bto->to", weights, batch_obs)
    if len(parts) >= 2:
        stderr = batch_obs.std(axis=0) / np.sqrt(len(parts))
    else:
        stderr = np.zeros_like(means)
    times = np.array([k * cfg.dt for k in sample_idx])
    if total > 0 and leaked / total > cfg.leak_budget:
        warnings.warn(
            f"leaked reverse-jump weight {leaked:.3e} exceeds {cfg.leak_budget:.1%} "
            f"of the total jump weight {total:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
    return SimulationResult(
        times=times,
        averaged_states=rho,
        observable_names=[o.name for o in cfg.observables],
        observable_means=means,
        observable_stderr=stderr,
        jump_histogram={"forward": hist_f, "reverse": hist_r},
        leaked_weight=leaked,
        total_jump_weight=total,
        seed=cfg.seed,
        config_echo=echo,
        diagnostics={
            "engine": cfg.engine,
            "n_batches": len(parts),
            "max_forward_channels": diag.max_forward_channels,
            "max_classes": diag.max_classes,
            "unmatched_channels": diag.unmatched_channels,
            "clamped_classes": diag.clamped_classes,
            "tie_events": diag.tie_events,
        },
        records=parts[0]["track_events"],
        realizations=parts[0]["track_states"],
    )


def run(model: MasterEquationModel, initial, config: RunConfig, config_echo: dict | None = None):
    """Run a full trajectory simulation and aggregate the ensemble statistics.

    `initial` is a pure-state vector or a density matrix (eigendecomposed,
    with class counts allocated by multinomial sampling of the eigenweights).
    Engine incompatibilities (negative rate for mcwf, broken P-divisibility
    for roqj_p) surface as step errors naming the offending time.
    """
    config.validate()
    echo = dict(config_echo or {})
    initial_spec = _initial_spec(model, initial)
    if config.engine in ("mcwf", "roqj_p"):
        return _run_independent(model, initial_spec, config, echo)
    return _run_general(model, initial_spec, config, echo)
