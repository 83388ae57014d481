"""Convex QCQP solving by tangent-plane linearization at low-discrepancy boundary points."""
from .errors import (
    DimensionMismatchError,
    FactorizationError,
    InfeasibleError,
    InfiniteEnergyError,
    NotPositiveDefiniteError,
    QcqpError,
    UnboundedCoverError,
)
from .geometry import (
    BoundaryPointSet,
    EllipsoidConstraint,
    SpherePointSet,
    boundary_points,
    cap_threshold,
    cover_distance_2d,
    cover_excess_2d,
    cube_to_sphere,
    equidistribution_test,
    map_cube_to_sphere,
    map_sphere_to_ellipsoid,
    riesz_energy,
    sample_uniform_sphere,
)
from .harness import (
    ExperimentConfig,
    MetricsRow,
    exact_solution,
    feasibility_error,
    generate_problem,
    pipeline_qp,
    rel_sq_error,
    run_sweep,
    solve_pipeline,
)
from .linearizer import QcqpProblem, QpProblem, build_qp, containment_check, default_n_points, tangent_constraints
from .nets import CubePointSet, InstanceTooLargeError, NetConfig, generate_net, sample_uniform_cube, t_value, verify_net_property
from .oracle import OracleSolution, norm_bound, solve_exact_bisection, solve_grid_bruteforce
from .qpsolver import SolveReport, SolverConfig, kkt_residuals, solve_qp

__version__ = "0.1.0"
