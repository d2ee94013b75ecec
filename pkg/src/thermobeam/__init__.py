"""Spectral simulator and verification toolkit for a thermoelastic extensible beam."""

__version__ = "0.1.0"

from .spectral import (  # noqa: E402
    BasisSpec,
    SpectralField,
    apply_A_power,
    inner_r,
    make_basis,
    norm_gamma,
    norm_r,
    sample_physical,
)
from .model import (  # noqa: E402
    BeamState,
    Forcing,
    ForcingTerm,
    FunctionalRecord,
    ModelParams,
    auxiliary_functionals,
    continuous_dependence_check,
    energy,
    lyapunov_shifted,
    rhs,
    shift_from_omega,
    shift_to_omega,
    state_norm,
)
from .integrator import (  # noqa: E402
    IntegrationError,
    IntegratorConfig,
    TrajectoryRecord,
    dissipation_integrals,
    energy_residual,
    linear_block,
    simulate,
    step,
    write_trajectory_csv,
)
from .stationary import (  # noqa: E402
    PoleError,
    StationaryPoint,
    branch_amplitude,
    enumerate_stationary,
    residual,
    scalar_defect,
    stationary_from_s,
    stationary_state,
)
from .decomposition import (  # noqa: E402
    MatrixBSpectrum,
    SplitState,
    decay_rate_fit,
    evolve_split,
    gamma_ratio_monitor,
    h2_bound,
    matrix_B_spectrum,
)
from .gronwall import InequalityReport, verify_exponential, verify_superlinear  # noqa: E402
