"""Single-trajectory quantum parameter estimation with continuous measurement.

Simulates noisy homodyne records of a continuously monitored oscillator,
re-estimates Hamiltonian parameters from one record with a record-driven
filter and a trajectory-matching loss, and evaluates spectral lower bounds
on the achievable force-estimation error.
"""

from .errors import QpeError
from .hilbert import (
    HilbertSpace,
    Operator,
    Quadrature,
    QuantumState,
    build_ladder,
    build_quadratures,
    coherent_density,
    expect,
    fidelity,
)
from .models import ModelSpec, ParamPoint, PhysicalUnits, get_model, model_names, to_physical_force
from .record import Metadata, TrajectoryRecord, derive_seed, read_record, write_record
from .sme import (
    EstimatorRun,
    SmeTerms,
    StepperConfig,
    em_step_driven,
    em_step_sampled,
    lindblad_evolve,
    run_estimator,
    simulate_record,
)
from .estimate import (
    GridSpec,
    LossKind,
    LossSurface,
    LossVariant,
    Perturbation,
    loss_eval,
    refine_min,
    robustness_scan,
    sensitivity,
    sweep_1d,
    sweep_2d,
)
from .spectral import (
    Psd,
    QcrbInputs,
    SYMBOLIC_INFINITE,
    bandwidth_variance,
    periodogram,
    qcrb_spectral_bound,
    smoothing_variance_bound,
)

__version__ = "0.1.0"
