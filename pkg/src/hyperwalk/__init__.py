"""One-dependent random walks in hypergeometric random environments.

The package provides the simplex special functions and their duality, exact
environment sampling on arc graphs, quenched-chain identities (stationary
law, time reversal, cycle moments, killed Green functions), the trap-strength
calculus with min-cut flows, and reproducible numerical experiment drivers.
"""

from .graph import (
    ArcGraph,
    ArcGraphModel,
    BoxGraphSpec,
    DirectedGraph,
    GraphError,
    TorusSpec,
    box_model,
    build_arc_graph,
    build_box_graph,
    build_torus,
    div_arc,
    div_vertex,
    max_flow_min_cut,
    torus_model,
)
from .hypergeom import (
    Estimate,
    HypergeomParams,
    NumericsError,
    ParameterError,
    SimplexPoint,
    beta_multivariate,
    duality_residual,
    duality_sides,
    phi_density,
    phi_mc,
    phi_quadrature,
)
from .environment import (
    Environment,
    WeightSystem,
    F_product,
    lattice_weights,
    marginal_moment,
    moments_exact,
    moments_mc,
    rn_weight,
    sample_environment,
    sample_u_vertex,
)
from .chain import (
    CycleOnArcs,
    StationaryLaw,
    check_weak_reversal,
    cycle_moment_exact,
    cycle_weight,
    escape_probability,
    green_function_killed,
    hitting_prob_check,
    reverse_environment,
    stationary,
    trap_time_mean_quenched,
    trap_time_sample,
)
from .flows import (
    ArcFlow,
    VertexFlow,
    alpha_boosted,
    build_vertex_flow,
    flow_identity_check,
    kappa,
    kappa_pair_formula,
    kappa_tilde,
    lift_to_arc_flow,
    min_cut_lattice,
    total_flow_for_exponent,
)
from .experiments import ExperimentConfig, ExperimentReport, run_experiment

__version__ = "0.1.0"
