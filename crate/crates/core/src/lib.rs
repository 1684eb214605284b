//! Finite-element ensemble solvers for stochastic incompressible
//! magnetohydrodynamics in Elsässer form.
//!
//! The crate provides the building blocks (meshes, quadrature, finite-element
//! spaces, sparse linear algebra) plus two ensemble time steppers for the
//! coupled Elsässer system: a monolithic saddle-point scheme and a
//! penalty-projection variant that decouples velocity-like updates from the
//! incompressibility projection.  Uncertain viscosities enter through either
//! Monte Carlo-style prescribed constants or sparse-grid stochastic
//! collocation; all realizations at a time step share one system matrix, so a
//! single factorization serves the whole ensemble.

pub mod assemble;
pub mod bc;
pub mod elsasser;
pub mod harness;
pub mod mesh;
pub mod norms;
pub mod quadrature;
pub mod schemes;
pub mod solver;
pub mod space;
pub mod sparse;
pub mod stochastic;

pub use assemble::{assemble_load, convection_apply, weighted_grad_apply};
pub use assemble::{Assembler, Coeff, OperatorKind, QuadGrid};
pub use bc::{ConstraintEntry, ConstraintSet};
pub use harness::{
    parse_config, parse_config_file, run_cavity, run_channel, run_experiment, run_gamma_study,
    run_spatial_study, run_temporal_study, ConfigError, ConvergenceTable, ExperimentKind,
    ExperimentReport, ExperimentSpec, HarnessError, MonitorCheck,
};
pub use elsasser::{
    elsasser_pair, forcing_transform, from_elsasser, primitive_pair, to_elsasser, CouplingParams,
    ElsasserError, MmsRealization,
};
pub use schemes::{
    covers_whole_boundary, realization_energies, run_transient, stability_params,
    weighted_mean_energy, Algorithm,
    CoupledRunner, ElementPair, EnsembleState, Problem, RunOutput, SchemeConfig, SchemeError,
    SppRunner, StabilityReport, StepRecord, SubProblemWork, WorkReport,
};
pub use mesh::{BoundaryEdge, BoundaryTag, MeshError, TriMesh};
pub use quadrature::{GaussLegendre, TriRule};
pub use solver::{IterativeConfig, LuSolver, Preconditioner, SolveError, SolverCounters};
pub use space::{ensemble_mean, EdgeTable, ElementGeometry, Family, FeFunction, FeSpace};
pub use sparse::{CsrMatrix, SparsityPattern};
pub use stochastic::{
    clenshaw_curtis, perturbation_factors, qoi_expectation, smolyak, EnsembleCoefficients,
    KlField, Rule1D, SparseGrid, StochasticError, StochasticPlan, ViscosityModel,
};
