"""Dropout-robust distributed LQR by system level synthesis."""

from .dropout import (
    CommTopology,
    DropoutDistribution,
    DropoutPattern,
    chain_topology,
    enumerate_joint_support,
    sample_pattern,
    uniform_d_distribution,
)
from .errors import (
    CertificationError,
    ConfigError,
    ConvergenceError,
    DimensionError,
    DivergenceError,
    InfeasibleError,
)
from .operators import (
    ColumnResponse,
    FirResponse,
    ResidualColumn,
    SystemModel,
    achievability_residual,
    h2_norm_fir,
    l1_column_norm,
    neumann_apply,
    norm_2to1,
)
from .synthesis import (
    ColumnProblem,
    ControllerBank,
    SolveReport,
    bisect_lambda,
    certify_bank,
    solve_column,
    synthesize_offline,
    synthesize_online_bank,
)

__version__ = "0.1.0"
