"""psde: diffusions with a periodic drift signal -- simulation, likelihood
machinery, minimum distance + one-step estimation, and Monte Carlo checks."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateObjective,
    DimensionMismatch,
    InvalidFamilyConfig,
    LinearlyDependentDerivatives,
    NoInteriorCube,
    NonFiniteState,
    ParameterOutOfDomain,
    PsdeError,
    SingularInformation,
)
from .model import (
    DiffusionSpec,
    ParameterDomain,
    SignalModel,
    builtin_family,
    signal_gradient,
    signal_value,
    wrap_time,
)
from .simulate import (
    Path,
    Segment,
    noise_increments,
    read_path,
    segment_chain,
    simulate_path,
    write_path,
)
from .inference import (
    FisherMatrix,
    LambdaWeight,
    empirical_fisher,
    fisher_quadrature,
    log_likelihood_ratio,
    score,
)
from .estimators import (
    EmpiricalPsi,
    EstimateRecord,
    SearchConfig,
    default_dyadic_level,
    dyadic_discretize,
    estimate_pipeline,
    grid_mle,
    mde_asymptotic_covariance,
    mde_estimate,
    one_step,
    psi_hat,
    psi_theoretical,
)
from .mcstudy import (
    ReplicateRecord,
    StudyConfig,
    StudyResult,
    lan_diagnostic,
    normality_diagnostic,
    run_study,
    write_study,
)
