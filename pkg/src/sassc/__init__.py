"""Two-stage stochastic PDE-constrained optimization with almost-sure
state constraints: solvers, multiplier certification, and penalization
studies on a finite-difference model problem."""

from .certify import (
    FixedPointGaps,
    KktReport,
    duality_gap,
    kkt_residuals,
    multiplier_l1_norms,
    stationarity_fixed_points,
)
from .grid import (
    EllipticityError,
    Grid,
    LinearSolveError,
    MmsRow,
    assemble_operator,
    build_grid,
    export_coo_text,
    mms_convergence_study,
    operator_norm_estimate,
    solve_linear,
)
from .homotopy import (
    HomotopyError,
    HomotopyLevel,
    HomotopyReport,
    fit_decay_rate,
    run_homotopy,
)
from .problem import (
    DualPoint,
    FeasibilityReport,
    Instance,
    PrimalPoint,
    RecourseReport,
    SlaterReport,
    dual_function,
    feasibility_check,
    lagrangian,
    objective,
    pairing,
    project_c1,
    project_c2,
    project_koplus,
    recourse_probe,
    slater_check,
    zeros_dual,
    zeros_primal,
)
from .scenarios import (
    FieldSpec,
    ScenarioSet,
    ellipticity_report,
    realize_fields,
    sample_scenarios,
)
from .solvers import (
    BarrierFailure,
    BarrierSizeError,
    SolveReport,
    SolverParams,
    extract_rho,
    solve_barrier_reference,
    solve_hard,
    solve_pdhg,
    solve_progressive_hedging,
)

__version__ = "0.1.0"
