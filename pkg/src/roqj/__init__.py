"""Stochastic quantum-jump unravelling of time-local master equations.

Jump channels are read off the spectral decomposition of a state-dependent
rate operator, which extends piecewise-deterministic pure-state simulation
beyond non-negative rates: P-divisible dynamics run with independent
trajectories, and arbitrary time-local dynamics run with an ensemble of
trajectory classes coupled by reverse jumps.  Exact integrators and closed
forms are bundled as verification oracles.
"""

from .analysis import (
    Observable,
    SimulationResult,
    ensemble_average,
    observable_mean_stderr,
    trace_distance,
)
from .engines import (
    ENGINES,
    Ensemble,
    GeneralDiagnostics,
    JumpEvent,
    MeasurementRecord,
    NegativeRateError,
    PDivisibilityError,
    RunConfig,
    TrajectoryClass,
    UnmatchedChannelError,
    expected_ensemble_update,
    expected_one_step,
    match_class,
    mcwf_step,
    roqj_step_general,
    roqj_step_p,
    run,
)
from .model import (
    LindbladTerm,
    MasterEquationModel,
    SIGMA,
    build_amplitude_damping,
    build_dephasing,
    build_network_model,
    build_pauli_model,
    evaluate_generator,
    network_rate_default,
    pauli_mu,
    pauli_rates,
    sample_network_omega,
)
from .oracle import (
    ProbeReport,
    haar_state,
    integrate_master_equation,
    p_divisibility_probe,
    pauli_exact,
)
from .rate_operator import (
    JumpChannel,
    RateOperatorSpectrum,
    StepSizeError,
    build_rate_operator,
    deterministic_step,
    effective_hamiltonian,
    lindblad_expectation,
    spectral_split,
)

__version__ = "0.1.0"
