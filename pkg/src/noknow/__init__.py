"""Stochastic master equations for monitored open quantum systems.

Homodyne and photodetection unravelings, measurement-based feedback that can
erase measurement backaction ("no-knowledge" monitoring), filter convergence
diagnostics, steady-state solvers, and a dissipatively prepared cluster-state
model.
"""

__version__ = "0.1.0"

from .errors import (
    AngleError,
    ConfigError,
    DimensionError,
    ModelError,
    NoknowError,
    NonHermitianChannelError,
    NonUnitaryError,
    NoQuadratureError,
    NumericalError,
    ParseError,
    RecordError,
    ResourceError,
    SolverError,
    StateError,
    ValidationError,
)
from .feedback import (
    FeedbackLaw,
    beamsplitter_network,
    hermitian_split,
    jump_correction,
    no_knowledge_angle,
    no_knowledge_feedback,
)
from .models import (
    BlochState,
    DephasingQubitParams,
    DqcChainParams,
    bloch_rhs,
    bloch_to_matrix,
    dephasing_qubit,
    dqc_chain,
    general_L_model,
    matrix_to_bloch,
)
from .operators import (
    QuantumState,
    cluster_stabilizers,
    cluster_state,
    dagger,
    dissipator,
    expectation,
    frobenius_distance,
    hermitize,
    innovation_action,
    innovation_squared,
    is_hermitian,
    is_unitary,
    lindblad_rhs,
    overlap_fidelity,
    pauli,
)
from .sde import (
    IntegratorConfig,
    NoiseStream,
    ito_step,
    strat_correction,
    stratonovich_step,
)
from .steady import (
    LiouvillianMatrix,
    SteadyStateResult,
    fidelity_scan,
    lindblad_evolution,
    steady_state,
    vectorize,
)
from .trajectories import (
    Channel,
    EnsembleResult,
    FilterRun,
    JumpEnsembleResult,
    MeasurementRecord,
    MonitoredModel,
    TrajectoryResult,
    ensemble_average,
    homodyne_signal,
    integrate_sme_engine,
    jump_ensemble,
    propagate_filter,
    propagate_homodyne,
    propagate_homodyne_batch,
    propagate_jump,
    propagate_with_filter,
    propagate_with_filter_batch,
    sme_rhs,
)

__all__ = [
    "__version__",
    # errors
    "NoknowError",
    "DimensionError",
    "ModelError",
    "StateError",
    "NumericalError",
    "RecordError",
    "ConfigError",
    "ResourceError",
    "SolverError",
    "NonHermitianChannelError",
    "AngleError",
    "NonUnitaryError",
    "NoQuadratureError",
    "ParseError",
    "ValidationError",
    # operators
    "QuantumState",
    "pauli",
    "dagger",
    "hermitize",
    "is_hermitian",
    "is_unitary",
    "dissipator",
    "innovation_action",
    "innovation_squared",
    "lindblad_rhs",
    "expectation",
    "frobenius_distance",
    "overlap_fidelity",
    "cluster_stabilizers",
    "cluster_state",
    # sde
    "NoiseStream",
    "IntegratorConfig",
    "ito_step",
    "stratonovich_step",
    "strat_correction",
    # feedback
    "FeedbackLaw",
    "hermitian_split",
    "beamsplitter_network",
    "no_knowledge_feedback",
    "no_knowledge_angle",
    "jump_correction",
    # trajectories
    "Channel",
    "MonitoredModel",
    "MeasurementRecord",
    "TrajectoryResult",
    "FilterRun",
    "EnsembleResult",
    "JumpEnsembleResult",
    "homodyne_signal",
    "sme_rhs",
    "integrate_sme_engine",
    "propagate_homodyne",
    "propagate_homodyne_batch",
    "propagate_filter",
    "propagate_with_filter",
    "propagate_with_filter_batch",
    "ensemble_average",
    "propagate_jump",
    "jump_ensemble",
    # models
    "DephasingQubitParams",
    "BlochState",
    "bloch_to_matrix",
    "matrix_to_bloch",
    "dephasing_qubit",
    "bloch_rhs",
    "general_L_model",
    "DqcChainParams",
    "dqc_chain",
    # steady
    "LiouvillianMatrix",
    "SteadyStateResult",
    "vectorize",
    "steady_state",
    "lindblad_evolution",
    "fidelity_scan",
]
