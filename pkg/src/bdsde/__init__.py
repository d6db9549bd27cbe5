"""Simulation and numerical checks for backward doubly stochastic differential equations."""

__version__ = "0.1.0"

from .calculus import (  # noqa: E402
    PowerOfNorm,
    SemimartingaleSpec,
    TanakaReport,
    backward_ito,
    c_of_p,
    corollary_inequality,
    evaluate_tanaka_identity,
    forward_ito,
    hat,
    u_eps,
    u_eps_gradient,
    u_eps_hessian,
)
from .catalog import get_problem, list_catalog  # noqa: E402
from .exceptions import (  # noqa: E402
    BDSDEError,
    ConfigurationError,
    EvaluationError,
    NumericalError,
    PreconditionError,
)
from .generators import (  # noqa: E402
    GeneratorSpec,
    SamplingCloud,
    TruncationParams,
    build_h_n,
    build_step2_data,
    psi_r,
    q_n,
    step1_radius,
    theta_r,
    validate_assumptions,
)
from .paths import BrownianBundle, TimeGrid, make_grid, sample_brownian  # noqa: E402
from .solver import (  # noqa: E402
    BDSDESolver,
    SolutionEnsemble,
    SolverConfig,
    lp_norms,
    nested_mc_oracle,
    solve_bdsde,
)
