//! The two ensemble time steppers.
//!
//! Both schemes advance all stochastic realizations together with backward
//! Euler in Elsässer variables:
//!
//! * [`CoupledRunner`] solves, per step, two saddle-point systems (velocity
//!   with pressure, mirrored for the second Elsässer field).  The implicit
//!   operator uses the ensemble-mean wind and mean diffusion, so one
//!   factorization per sub-problem per step serves every realization; each
//!   realization contributes only a right-hand side.
//! * [`SppRunner`] is the penalty-projection splitting: a grad-div-stabilized
//!   momentum solve with full Dirichlet conditions (Steps 1/3), followed by a
//!   pressure projection onto the discretely divergence-free space with
//!   normal-component boundary conditions (Steps 2/4).  The projection
//!   matrix is time-step-independent and is factorized once per simulation.
//!
//! All ensemble reductions run in a fixed realization order so results are
//! independent of the thread count.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::assemble::{
    assemble_load, convection_apply, weighted_grad_apply, Assembler, Coeff, OperatorKind,
};
use crate::bc::ConstraintSet;
use crate::elsasser::CouplingParams;
use crate::mesh::{BoundaryTag, TriMesh};
use crate::norms;
use crate::quadrature::TriRule;
use crate::solver::{LuSolver, SolveError, SolverCounters};
use crate::space::{ensemble_mean, Family, FeFunction, FeSpace};
use crate::sparse::{CsrMatrix, SparsityPattern};
use crate::stochastic::{EnsembleCoefficients, StochasticError, StochasticPlan};

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("end time {t_end} is not an integer multiple of dt {dt} (|T - M dt| > 1e-12 T)")]
    BadTimeGrid { t_end: f64, dt: f64 },
    #[error("invalid scheme parameter {name}: {value}")]
    BadParameter { name: &'static str, value: f64 },
    #[error("non-finite value in {field} of realization {realization} at step {step}")]
    NonFinite { step: usize, realization: usize, field: &'static str },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
    #[error(transparent)]
    Coupling(#[from] crate::elsasser::ElsasserError),
}

/// Mixed velocity/pressure element pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementPair {
    /// (P2, P1): weakly divergence-free; pair with grad-div stabilization.
    TaylorHood,
    /// (P2, discontinuous P1): divergence-free on barycenter-refined meshes.
    /// Callers must supply such a mesh.
    ScottVogelius,
}

impl ElementPair {
    pub fn velocity_family(&self) -> Family {
        Family::P2
    }

    pub fn pressure_family(&self) -> Family {
        match self {
            ElementPair::TaylorHood => Family::P1,
            ElementPair::ScottVogelius => Family::P1Disc,
        }
    }
}

/// Time grid, stabilization, and coupling parameters shared by both schemes.
#[derive(Debug, Clone)]
pub struct SchemeConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Grad-div coefficient of the projection scheme's momentum steps.
    pub gamma: f64,
    /// Grad-div coefficient added to the coupled scheme's momentum forms
    /// (zero reproduces the plain coupled scheme; the γ-comparison study sets
    /// it equal to `gamma` so both schemes act on identical forms).
    pub coupled_grad_div: f64,
    /// Eddy-viscosity scale μ (the coefficient is `2 μ Δt (l_z)²`).
    pub mu: f64,
    /// Lorentz coupling parameter `s > 0`.
    pub s: f64,
    pub element_pair: ElementPair,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            dt: 0.1,
            t_end: 1.0,
            gamma: 0.0,
            coupled_grad_div: 0.0,
            mu: 1.0,
            s: 1.0,
            element_pair: ElementPair::TaylorHood,
        }
    }
}

impl SchemeConfig {
    /// Number of steps `M`, requiring `T` to be an integer multiple of `dt`
    /// up to relative slack 1e-12.
    pub fn n_steps(&self) -> Result<usize, SchemeError> {
        if !(self.dt > 0.0) {
            return Err(SchemeError::BadParameter { name: "dt", value: self.dt });
        }
        if self.t_end < self.dt {
            return Err(SchemeError::BadTimeGrid { t_end: self.t_end, dt: self.dt });
        }
        let m = (self.t_end / self.dt).round();
        if (self.t_end - m * self.dt).abs() > 1e-12 * self.t_end.abs() {
            return Err(SchemeError::BadTimeGrid { t_end: self.t_end, dt: self.dt });
        }
        Ok(m as usize)
    }

    pub fn validate(&self) -> Result<(), SchemeError> {
        self.n_steps()?;
        if self.gamma < 0.0 {
            return Err(SchemeError::BadParameter { name: "gamma", value: self.gamma });
        }
        if self.coupled_grad_div < 0.0 {
            return Err(SchemeError::BadParameter {
                name: "coupled_grad_div",
                value: self.coupled_grad_div,
            });
        }
        if self.mu < 0.0 {
            return Err(SchemeError::BadParameter { name: "mu", value: self.mu });
        }
        if !(self.s > 0.0) {
            return Err(SchemeError::BadParameter { name: "s", value: self.s });
        }
        Ok(())
    }
}

/// Boundary data per (realization, time, tag, point).
pub type BoundaryFn = Arc<dyn Fn(usize, f64, BoundaryTag, [f64; 2]) -> [f64; 2] + Send + Sync>;
/// Initial data per (realization, point).
pub type InitFn = Arc<dyn Fn(usize, [f64; 2]) -> [f64; 2] + Send + Sync>;
/// Forcing per (realization, time, point).
pub type ForceFn = Arc<dyn Fn(usize, f64, [f64; 2]) -> [f64; 2] + Send + Sync>;

/// A complete problem statement in Elsässer variables: mesh, boundary
/// semantics, initial data, and optional body forcings.
#[derive(Clone)]
pub struct Problem {
    pub mesh: Arc<TriMesh>,
    /// Tags holding full Dirichlet conditions in the momentum/coupled solves.
    pub dirichlet_tags: Vec<BoundaryTag>,
    /// Tags where the projection constrains the normal velocity component.
    pub normal_tags: Vec<BoundaryTag>,
    pub v_bc: BoundaryFn,
    pub w_bc: BoundaryFn,
    pub v_init: InitFn,
    pub w_init: InitFn,
    /// `(f1, f2)` driving the two Elsässer equations; `None` means zero.
    pub forcing: Option<(ForceFn, ForceFn)>,
}

impl Problem {
    /// The analytic test problem on the unit square: realization `j` scales
    /// the smooth base pair by its data factor and carries its own constant
    /// viscosities.  Dirichlet data everywhere; the projection constrains the
    /// normal component on the whole boundary.
    pub fn manufactured(mesh: Arc<TriMesh>, cases: Vec<crate::elsasser::MmsRealization>) -> Self {
        let c1 = cases.clone();
        let c2 = cases.clone();
        let c3 = cases.clone();
        let c4 = cases.clone();
        let c5 = cases.clone();
        let c6 = cases;
        Problem {
            mesh,
            dirichlet_tags: vec![BoundaryTag::Wall],
            normal_tags: vec![BoundaryTag::Wall],
            v_bc: Arc::new(move |j, t, _tag, x| c1[j].v(t, x)),
            w_bc: Arc::new(move |j, t, _tag, x| c2[j].w(t, x)),
            v_init: Arc::new(move |j, x| c3[j].v(0.0, x)),
            w_init: Arc::new(move |j, x| c4[j].w(0.0, x)),
            forcing: Some((
                Arc::new(move |j, t, x| c5[j].f1(t, x)),
                Arc::new(move |j, t, x| c6[j].f2(t, x)),
            )),
        }
    }
}

/// True when every boundary edge of the mesh carries one of `tags` — the
/// condition under which velocity constraints leave the pressure defined
/// only up to a constant.
pub fn covers_whole_boundary(mesh: &TriMesh, tags: &[BoundaryTag]) -> bool {
    mesh.boundary_edges().iter().all(|e| tags.contains(&e.tag))
}

/// Signed quadrature weights of the boundary-flux functional: for a P2
/// vector field `u`, `Σ_i w_i·u[dof_i] = ∮ u·n̂ ds` over the tagged
/// axis-aligned edges (Simpson's rule per edge, exact for the quadratic
/// trace).  The weighted dofs are exactly the normal-component dofs.
struct TraceFlux {
    weights: Vec<(usize, f64)>,
    /// `Σ |w_i|` — the flux of the outward unit-normal trace itself.
    perimeter: f64,
}

fn trace_flux_weights(space: &FeSpace, tags: &[BoundaryTag]) -> TraceFlux {
    assert_eq!(space.family(), Family::P2);
    let mesh = space.mesh();
    let mut acc = vec![0.0; space.n_dofs()];
    for edge in mesh.boundary_edges() {
        if !tags.contains(&edge.tag) {
            continue;
        }
        let n = edge.outward_normal(mesh);
        let axis = if n[1].abs() < 1e-12 {
            0
        } else if n[0].abs() < 1e-12 {
            1
        } else {
            panic!("normal-trace flux requires axis-aligned edges (normal {n:?})");
        };
        let sign = if n[axis] > 0.0 { 1.0 } else { -1.0 };
        let a = mesh.vertices()[edge.v[0]];
        let b = mesh.vertices()[edge.v[1]];
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let mid = space
            .edges()
            .edge_id(edge.v[0], edge.v[1])
            .expect("boundary edge missing from edge table");
        acc[space.dof(edge.v[0], axis)] += sign * len / 6.0;
        acc[space.dof(edge.v[1], axis)] += sign * len / 6.0;
        acc[space.dof(mesh.n_vertices() + mid, axis)] += sign * 4.0 * len / 6.0;
    }
    let weights: Vec<(usize, f64)> =
        acc.into_iter().enumerate().filter(|&(_, w)| w != 0.0).collect();
    let perimeter = weights.iter().map(|&(_, w)| w.abs()).sum();
    TraceFlux { weights, perimeter }
}

/// Per-realization fields at one time level.  The coupled scheme uses
/// `v/w/q/r` as its solution; the projection scheme stores the momentum
/// (hat) fields in `v/w`, the projected (tilde) fields in
/// `v_tilde/w_tilde`, and the projection pressures in `q/r`.
#[derive(Clone)]
pub struct EnsembleState {
    pub v: Vec<FeFunction>,
    pub w: Vec<FeFunction>,
    pub v_tilde: Vec<FeFunction>,
    pub w_tilde: Vec<FeFunction>,
    pub q: Vec<FeFunction>,
    pub r: Vec<FeFunction>,
    /// Completed time level `n` (0 = initial data).
    pub level: usize,
}

impl EnsembleState {
    fn check_finite(&self, step: usize) -> Result<(), SchemeError> {
        let groups: [(&str, &[FeFunction]); 6] = [
            ("v", &self.v),
            ("w", &self.w),
            ("v_tilde", &self.v_tilde),
            ("w_tilde", &self.w_tilde),
            ("q", &self.q),
            ("r", &self.r),
        ];
        for (name, fields) in groups {
            for (j, f) in fields.iter().enumerate() {
                if !f.coeffs().iter().all(|c| c.is_finite()) {
                    return Err(SchemeError::NonFinite { step, realization: j, field: name });
                }
            }
        }
        Ok(())
    }
}

/// Norm-level diagnostics recorded after every completed step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub level: usize,
    pub t: f64,
    /// `‖v_j‖²` per realization (hat fields for the projection scheme).
    pub energy_v: Vec<f64>,
    pub energy_w: Vec<f64>,
    /// `‖∇v_j‖²` per realization.
    pub grad_v: Vec<f64>,
    pub grad_w: Vec<f64>,
    /// Per-realization stability functional
    /// `‖v_j‖² + ‖w_j‖² + (ν̄_min+ν̄_m,min) Δt/2 (‖∇v_j‖² + ‖∇w_j‖²)`.
    pub monitor: Vec<f64>,
    /// Projection scheme only: `(‖P₀v̂_j‖, ‖v̂_j‖, ‖P₀ŵ_j‖, ‖ŵ_j‖)` per
    /// realization, where `P₀` is the projection operator with homogeneous
    /// normal trace — the linear part of the projection sub-step, for which
    /// `‖P₀z‖ ≤ ‖z‖` holds exactly.  The scheme's ṽ adds the minimal-norm
    /// divergence-free extension of the boundary data on top of `P₀v̂`; an
    /// affine map is not norm-contractive, so the stability mechanism is
    /// monitored on the operator itself.
    pub contraction: Vec<(f64, f64, f64, f64)>,
    /// Largest discrete divergence residual `max_ζ |(∇·z, ζ)|` over both
    /// projected fields and all realizations.
    pub div_residual: f64,
    /// `max_j ‖z_j‖_{H¹}` matching `div_residual`'s field, for scaling.
    pub div_scale: f64,
    /// Per-realization energy `½‖u_j‖` with `u_j = (v_j + w_j)/2` (hat
    /// fields for the projection scheme).
    pub energy_u: Vec<f64>,
    /// Collocation-weighted mean of `½‖u_j‖` (the reported energy).
    pub mean_energy: f64,
    /// Collocation-weighted mean of `½‖u_j‖²`.
    pub mean_energy_sq: f64,
}

/// Stability margins of the ensemble, evaluated once per run.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub alpha: Vec<f64>,
    pub alpha_min: f64,
    /// `1/(2 Δt α_min)` with the convention C=1 (infinite if α_min ≤ 0).
    pub mu_threshold: f64,
    pub mu_threshold_ok: bool,
    pub warnings: Vec<String>,
}

/// Builds a [`StabilityReport`] from materialized ensemble coefficients.
pub fn stability_params(coeffs: &EnsembleCoefficients, config: &SchemeConfig) -> StabilityReport {
    let alpha = coeffs.alpha.clone();
    let alpha_min = coeffs.alpha_min();
    let mut warnings = Vec::new();
    for (j, &a) in alpha.iter().enumerate() {
        if a <= 0.0 {
            warnings.push(format!(
                "stability margin alpha_{j} = {a:.6e} is not positive; the energy bound is void"
            ));
        }
    }
    let mu_threshold =
        if alpha_min > 0.0 { 1.0 / (2.0 * config.dt * alpha_min) } else { f64::INFINITY };
    let mu_threshold_ok = config.mu > mu_threshold;
    if !mu_threshold_ok {
        warnings.push(format!(
            "mu = {} does not exceed the C=1 threshold 1/(2 dt alpha_min) = {mu_threshold:.6e}",
            config.mu
        ));
    }
    StabilityReport { alpha, alpha_min, mu_threshold, mu_threshold_ok, warnings }
}

/// Assembly/factorization/solve tallies for one shared-matrix sub-problem.
#[derive(Debug, Clone, Default)]
pub struct SubProblemWork {
    pub assemblies: usize,
    pub factorizations: usize,
    pub solves: usize,
}

/// Work tallies per sub-problem, keyed by a stable name.
#[derive(Debug, Clone, Default)]
pub struct WorkReport {
    pub subproblems: Vec<(String, SubProblemWork)>,
}

impl WorkReport {
    pub fn get(&self, name: &str) -> Option<&SubProblemWork> {
        self.subproblems.iter().find(|(n, _)| n == name).map(|(_, w)| w)
    }
}

/// Everything a finished run hands back to the harness.
pub struct RunOutput {
    pub records: Vec<StepRecord>,
    pub stability: StabilityReport,
    pub work: WorkReport,
}

// ---------------------------------------------------------------------------
// shared discretization machinery
// ---------------------------------------------------------------------------

/// Spaces, constant matrices, constraint sets, and ensemble coefficient
/// grids shared by both schemes.
struct Discretization {
    velocity: FeSpace,
    pressure: FeSpace,
    rule: TriRule,
    vel_asm: Assembler,
    /// Plain velocity mass matrix (no boundary rows).
    mass: CsrMatrix,
    /// Discrete divergence `B` with `B[ζ, φ] = (∇·φ, ζ)`.
    div: CsrMatrix,
    div_t: CsrMatrix,
    dirichlet: ConstraintSet,
    normal: ConstraintSet,
    coeffs: EnsembleCoefficients,
    norm_rule: TriRule,
}

impl Discretization {
    fn new(
        problem: &Problem,
        config: &SchemeConfig,
        plan: &StochasticPlan,
    ) -> Result<Self, SchemeError> {
        let pair = config.element_pair;
        let velocity = FeSpace::vector(problem.mesh.clone(), pair.velocity_family());
        let pressure = FeSpace::scalar(problem.mesh.clone(), pair.pressure_family());
        let rule = TriRule::degree5();
        let vel_asm = Assembler::new(velocity.clone(), velocity.clone(), rule.clone());
        let div_asm = Assembler::new(velocity.clone(), pressure.clone(), rule.clone());
        let mass = vel_asm.assemble(OperatorKind::Mass);
        let div = div_asm.assemble(OperatorKind::Divergence);
        let div_t = div.transpose();
        let dirichlet = ConstraintSet::dirichlet(&velocity, &problem.dirichlet_tags);
        let normal = ConstraintSet::normal_component(&velocity, &problem.normal_tags);
        let coeffs = EnsembleCoefficients::materialize(plan, &problem.mesh, &rule)?;
        Ok(Discretization {
            velocity,
            pressure,
            rule,
            vel_asm,
            mass,
            div,
            div_t,
            dirichlet,
            normal,
            coeffs,
            // Degree-5 exactness covers the quadratic velocity fields in every
            // norm the step records need, at a fraction of the reference
            // rule's point count.
            norm_rule: TriRule::degree5(),
        })
    }

    fn n_v(&self) -> usize {
        self.velocity.n_dofs()
    }

    fn n_q(&self) -> usize {
        self.pressure.n_dofs()
    }

    /// Largest discrete divergence functional `max_ζ |(∇·z, ζ_h)|`.
    fn div_residual(&self, z: &FeFunction) -> f64 {
        let mut out = vec![0.0; self.n_q()];
        self.div.matvec(z.coeffs(), &mut out);
        out.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Ensemble means and fluctuations of the level-`n` fields, built once per
/// step and shared by both sub-problems.
struct LevelStats {
    mean_v: FeFunction,
    mean_w: FeFunction,
    fluct_v: Vec<FeFunction>,
    fluct_w: Vec<FeFunction>,
}

impl LevelStats {
    fn build(v: &[FeFunction], w: &[FeFunction]) -> Self {
        let mean_v = ensemble_mean(v);
        let mean_w = ensemble_mean(w);
        let fluct = |fields: &[FeFunction], mean: &FeFunction| {
            fields
                .iter()
                .map(|f| {
                    let mut d = f.clone();
                    d.axpy(-1.0, mean);
                    d
                })
                .collect::<Vec<_>>()
        };
        let fluct_v = fluct(v, &mean_v);
        let fluct_w = fluct(w, &mean_w);
        LevelStats { mean_v, mean_w, fluct_v, fluct_w }
    }
}

/// Sparse 2×2 block composer for saddle systems
/// `[[A, -Bᵀ], [B, 0]]` with precomputed slot maps so per-step rebuilds are
/// pure value scatters on a fixed pattern.
struct BlockSystem {
    matrix: CsrMatrix,
    a_slots: Vec<usize>,
    bt_slots: Vec<usize>,
    b_slots: Vec<usize>,
}

impl BlockSystem {
    fn new(a_pattern: &Arc<SparsityPattern>, div: &CsrMatrix, div_t: &CsrMatrix) -> Self {
        let n_v = a_pattern.nrows();
        let n_q = div.nrows();
        let n = n_v + n_q;
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for i in 0..n_v {
            for &j in a_pattern.row_cols(i) {
                pairs.push((i, j));
            }
        }
        for i in 0..n_v {
            let (cols, _) = div_t.row(i);
            for &k in cols {
                pairs.push((i, n_v + k));
            }
        }
        for k in 0..n_q {
            let (cols, _) = div.row(k);
            for &j in cols {
                pairs.push((n_v + k, j));
            }
        }
        // Pressure diagonal slots so constraint rows (pinning) stay in pattern.
        for k in 0..n_q {
            pairs.push((n_v + k, n_v + k));
        }
        let pattern = SparsityPattern::from_pairs(n, n, pairs);

        let slot_map = |rows: usize, row_of: &dyn Fn(usize) -> (Vec<usize>, usize)| {
            let mut slots = Vec::new();
            for i in 0..rows {
                let (cols, row_offset) = row_of(i);
                for j in cols {
                    slots.push(pattern.slot(row_offset, j).expect("pattern contains block entry"));
                }
            }
            slots
        };
        let a_slots = slot_map(n_v, &|i| (a_pattern.row_cols(i).to_vec(), i));
        let bt_slots = slot_map(n_v, &|i| {
            let (cols, _) = div_t.row(i);
            (cols.iter().map(|&k| n_v + k).collect(), i)
        });
        let b_slots = slot_map(n_q, &|k| {
            let (cols, _) = div.row(k);
            (cols.to_vec(), n_v + k)
        });
        BlockSystem { matrix: CsrMatrix::zeros(pattern), a_slots, bt_slots, b_slots }
    }

    /// Rebuilds `[[A, -Bᵀ], [B, 0]]` in place.
    fn compose(&mut self, a: &CsrMatrix, div: &CsrMatrix, div_t: &CsrMatrix) {
        self.matrix.set_zero();
        let values = self.matrix.values_mut();
        for (slot, &v) in self.a_slots.iter().zip(a.values()) {
            values[*slot] = v;
        }
        for (slot, &v) in self.bt_slots.iter().zip(div_t.values()) {
            values[*slot] = -v;
        }
        for (slot, &v) in self.b_slots.iter().zip(div.values()) {
            values[*slot] = v;
        }
    }
}

/// Applies Dirichlet-style identity rows for `constraints` (velocity block)
/// and, when `pin` is set, replaces that pressure row with identity to fix
/// the constant mode.
fn constrain_block(matrix: &mut CsrMatrix, constraints: &ConstraintSet, pin: Option<usize>) {
    for e in constraints.entries() {
        matrix.zero_row(e.dof);
        matrix.set(e.dof, e.dof, 1.0);
    }
    if let Some(row) = pin {
        matrix.zero_row(row);
        matrix.set(row, row, 1.0);
    }
}

/// Collocation-weighted mean of `½‖u_j‖` and `½‖u_j‖²`, with
/// `u_j = (v_j + w_j)/2` reconstructed from the Elsässer pair.
pub fn weighted_mean_energy(
    v: &[FeFunction],
    w: &[FeFunction],
    plan: &StochasticPlan,
    rule: &TriRule,
) -> (f64, f64) {
    assert_eq!(v.len(), plan.n_realizations());
    weight_energies(&realization_energies(v, w, rule), plan)
}

/// Per-realization energies `½‖u_j‖` with `u_j = (v_j + w_j)/2`.
pub fn realization_energies(v: &[FeFunction], w: &[FeFunction], rule: &TriRule) -> Vec<f64> {
    v.iter()
        .zip(w)
        .map(|(vj, wj)| {
            let mut u = vj.clone();
            u.axpy(1.0, wj);
            u.scale(0.5);
            0.5 * norms::l2_norm(&u, rule)
        })
        .collect()
}

/// Collocation-weighted `(Σ λ_j e_j, Σ λ_j·½‖u_j‖²)` from energies
/// `e_j = ½‖u_j‖` (so `½‖u_j‖² = 2 e_j²`).
fn weight_energies(energies: &[f64], plan: &StochasticPlan) -> (f64, f64) {
    let mut mean = 0.0;
    let mut mean_sq = 0.0;
    for (j, e) in energies.iter().enumerate() {
        mean += plan.weights[j] * e;
        mean_sq += plan.weights[j] * 2.0 * e * e;
    }
    (mean, mean_sq)
}

// ---------------------------------------------------------------------------
// coupled scheme
// ---------------------------------------------------------------------------

/// Backward-Euler coupled scheme: per step, one saddle factorization for the
/// first Elsässer field (ensemble-mean wind `<w>ⁿ`) and one for the second
/// (`<v>ⁿ`), each solved against all realizations' right-hand sides.
pub struct CoupledRunner {
    pub config: SchemeConfig,
    pub problem: Problem,
    pub plan: StochasticPlan,
    disc: Discretization,
    /// One block buffer per sub-problem so the two halves of a step can be
    /// assembled and factorized concurrently.
    block_v: BlockSystem,
    block_w: BlockSystem,
    pressure_pin: Option<usize>,
    counters_v: Arc<SolverCounters>,
    counters_w: Arc<SolverCounters>,
    assemblies_v: usize,
    assemblies_w: usize,
    pub state: EnsembleState,
    pub stability: StabilityReport,
}

impl CoupledRunner {
    pub fn new(
        config: SchemeConfig,
        problem: Problem,
        plan: StochasticPlan,
    ) -> Result<Self, SchemeError> {
        config.validate()?;
        CouplingParams::new(config.s)?;
        let disc = Discretization::new(&problem, &config, &plan)?;
        let block_v = BlockSystem::new(disc.vel_asm.pattern(), &disc.div, &disc.div_t);
        let block_w = BlockSystem::new(disc.vel_asm.pattern(), &disc.div, &disc.div_t);
        let pressure_pin = covers_whole_boundary(&problem.mesh, &problem.dirichlet_tags)
            .then(|| disc.n_v());
        let n = plan.n_realizations();
        let state = EnsembleState {
            v: (0..n)
                .map(|j| disc.velocity.interpolate_vector(|x| (problem.v_init)(j, x)))
                .collect(),
            w: (0..n)
                .map(|j| disc.velocity.interpolate_vector(|x| (problem.w_init)(j, x)))
                .collect(),
            v_tilde: Vec::new(),
            w_tilde: Vec::new(),
            q: (0..n).map(|_| disc.pressure.zero_function()).collect(),
            r: (0..n).map(|_| disc.pressure.zero_function()).collect(),
            level: 0,
        };
        let stability = stability_params(&disc.coeffs, &config);
        Ok(CoupledRunner {
            config,
            problem,
            plan,
            disc,
            block_v,
            block_w,
            pressure_pin,
            counters_v: SolverCounters::new(),
            counters_w: SolverCounters::new(),
            assemblies_v: 0,
            assemblies_w: 0,
            state,
            stability,
        })
    }

    /// Advances one step: assembles and factorizes each saddle sub-problem
    /// once, then solves all realizations against the shared factorization.
    /// The two sub-problems read only level-`n` data and run concurrently.
    pub fn coupled_step(&mut self) -> Result<StepRecord, SchemeError> {
        let dt = self.config.dt;
        let t_next = dt * (self.state.level + 1) as f64;
        let old_v = std::mem::take(&mut self.state.v);
        let old_w = std::mem::take(&mut self.state.w);
        let stats = LevelStats::build(&old_v, &old_w);

        let disc = &self.disc;
        let problem = &self.problem;
        let config = &self.config;
        let pin = self.pressure_pin;
        let (res_v, res_w) = {
            let (block_v, block_w) = (&mut self.block_v, &mut self.block_w);
            let (cv, cw) = (self.counters_v.clone(), self.counters_w.clone());
            rayon::join(
                || {
                    coupled_half(
                        disc, problem, config, block_v, cv, pin, &stats.mean_w, &stats.fluct_w,
                        &old_v, &old_w, t_next, true,
                    )
                },
                || {
                    coupled_half(
                        disc, problem, config, block_w, cw, pin, &stats.mean_v, &stats.fluct_v,
                        &old_w, &old_v, t_next, false,
                    )
                },
            )
        };
        let (new_v, new_q) = res_v?;
        let (new_w, new_r) = res_w?;
        self.assemblies_v += 1;
        self.assemblies_w += 1;

        self.state.v = new_v;
        self.state.q = new_q;
        self.state.w = new_w;
        self.state.r = new_r;
        self.state.level += 1;
        self.state.check_finite(self.state.level)?;
        Ok(self.record(t_next))
    }

    fn record(&self, t: f64) -> StepRecord {
        record_from_state(
            &self.disc,
            &self.plan,
            &self.config,
            &self.state.v,
            &self.state.w,
            None,
            t,
            self.state.level,
        )
    }

    /// Runs all `M` steps, invoking `observer` after the initial level and
    /// after every completed step.
    pub fn run_transient(
        &mut self,
        mut observer: impl FnMut(usize, f64, &EnsembleState),
    ) -> Result<RunOutput, SchemeError> {
        let m = self.config.n_steps()?;
        self.state.check_finite(0)?;
        observer(0, 0.0, &self.state);
        let mut records = Vec::with_capacity(m);
        for _ in 0..m {
            let rec = self.coupled_step()?;
            observer(self.state.level, rec.t, &self.state);
            records.push(rec);
        }
        Ok(RunOutput {
            records,
            stability: self.stability.clone(),
            work: self.work(),
        })
    }

    pub fn work(&self) -> WorkReport {
        WorkReport {
            subproblems: vec![
                (
                    "saddle-v".into(),
                    SubProblemWork {
                        assemblies: self.assemblies_v,
                        factorizations: self.counters_v.factorizations(),
                        solves: self.counters_v.solves(),
                    },
                ),
                (
                    "saddle-w".into(),
                    SubProblemWork {
                        assemblies: self.assemblies_w,
                        factorizations: self.counters_w.factorizations(),
                        solves: self.counters_w.solves(),
                    },
                ),
            ],
        }
    }
}

/// One coupled saddle sub-problem: `field` is the unknown (v or w), `other`
/// the opposite field entering the explicit cross-diffusion term.  Assembles
/// the shared matrix once and solves every realization against it.
#[allow(clippy::too_many_arguments)]
fn coupled_half(
    disc: &Discretization,
    problem: &Problem,
    config: &SchemeConfig,
    block: &mut BlockSystem,
    counters: Arc<SolverCounters>,
    pin: Option<usize>,
    wind: &FeFunction,
    wind_flucts: &[FeFunction],
    field: &[FeFunction],
    other: &[FeFunction],
    t_next: f64,
    first: bool,
) -> Result<(Vec<FeFunction>, Vec<FeFunction>), SchemeError> {
    let dt = config.dt;
    let n_v = disc.n_v();
    let n_q = disc.n_q();

    let mut a = CsrMatrix::zeros(disc.vel_asm.pattern().clone());
    disc.vel_asm.add_to(&mut a, OperatorKind::Mass, 1.0 / dt);
    disc.vel_asm.add_to(&mut a, OperatorKind::Convection(wind), 1.0);
    disc.vel_asm.add_to(
        &mut a,
        OperatorKind::Stiffness(Coeff::Grid(&disc.coeffs.implicit_half)),
        1.0,
    );
    disc.vel_asm.add_to(
        &mut a,
        OperatorKind::EddyViscosity { fluctuations: wind_flucts, mu: config.mu, dt },
        1.0,
    );
    if config.coupled_grad_div > 0.0 {
        disc.vel_asm.add_to(&mut a, OperatorKind::GradDiv, config.coupled_grad_div);
    }

    block.compose(&a, &disc.div, &disc.div_t);
    constrain_block(&mut block.matrix, &disc.dirichlet, pin);
    let lu = LuSolver::factor(&block.matrix, counters)?;

    let coeffs = &disc.coeffs;
    let n = field.len();
    let rhss: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut rhs = vec![0.0; n_v + n_q];
            let load = match (&problem.forcing, first) {
                (Some((f1, _)), true) => {
                    assemble_load(&disc.velocity, &disc.rule, |x| f1(j, t_next, x))
                }
                (Some((_, f2)), false) => {
                    assemble_load(&disc.velocity, &disc.rule, |x| f2(j, t_next, x))
                }
                (None, _) => vec![0.0; n_v],
            };
            rhs[..n_v].copy_from_slice(&load);
            let mut mass_old = vec![0.0; n_v];
            disc.mass.matvec(field[j].coeffs(), &mut mass_old);
            for (r, m) in rhs[..n_v].iter_mut().zip(&mass_old) {
                *r += m / dt;
            }
            let conv = convection_apply(&wind_flucts[j], &field[j], &disc.velocity, &disc.rule);
            let cross = weighted_grad_apply(
                Coeff::Grid(&coeffs.cross_half[j]),
                &other[j],
                &disc.velocity,
                &disc.rule,
            );
            let fluct = weighted_grad_apply(
                Coeff::Grid(&coeffs.fluct_half[j]),
                &field[j],
                &disc.velocity,
                &disc.rule,
            );
            for i in 0..n_v {
                rhs[i] -= conv[i] + cross[i] + fluct[i];
            }
            let bc = if first { &problem.v_bc } else { &problem.w_bc };
            disc.dirichlet.apply_values(&mut rhs[..n_v], |tag, x| bc(j, t_next, tag, x));
            if let Some(pin) = pin {
                rhs[pin] = 0.0;
            }
            rhs
        })
        .collect();

    let sols = lu.solve_many(&rhss);
    let mut fields = Vec::with_capacity(n);
    let mut pressures = Vec::with_capacity(n);
    for sol in sols {
        fields.push(FeFunction::from_coeffs(disc.velocity.clone(), sol[..n_v].to_vec()));
        pressures.push(FeFunction::from_coeffs(disc.pressure.clone(), sol[n_v..].to_vec()));
    }
    Ok((fields, pressures))
}

// ---------------------------------------------------------------------------
// penalty-projection scheme
// ---------------------------------------------------------------------------

/// Grad-div-stabilized penalty-projection scheme.  Per step: two momentum
/// solves on the velocity space alone (assembled and factorized once each,
/// shared across realizations), then two pressure projections against a
/// single factorization computed at construction and reused for the entire
/// simulation.
pub struct SppRunner {
    pub config: SchemeConfig,
    pub problem: Problem,
    pub plan: StochasticPlan,
    disc: Discretization,
    proj_lu: LuSolver,
    proj_pin: Option<usize>,
    /// Flux functional of the constrained trace; present exactly when the
    /// whole boundary is normal-constrained (`proj_pin` active), where the
    /// projected field's boundary flux must vanish for the dropped
    /// constant-mode divergence row to hold.
    proj_flux: Option<TraceFlux>,
    counters_v: Arc<SolverCounters>,
    counters_w: Arc<SolverCounters>,
    counters_proj: Arc<SolverCounters>,
    assemblies_v: usize,
    assemblies_w: usize,
    assemblies_proj: usize,
    pub state: EnsembleState,
    pub stability: StabilityReport,
}

impl SppRunner {
    pub fn new(
        config: SchemeConfig,
        problem: Problem,
        plan: StochasticPlan,
    ) -> Result<Self, SchemeError> {
        config.validate()?;
        CouplingParams::new(config.s)?;
        let disc = Discretization::new(&problem, &config, &plan)?;

        // Projection system [[M, -Bᵀ], [B, 0]] on (normal-constrained
        // velocity) × pressure.  The first block row is the mass equation
        // scaled by Δt, so the matrix carries no time-step dependence: the
        // auxiliary unknown is z = Δt q̂.  Factorized once, reused by Steps
        // 2 and 4 of every time step.
        let mut block = BlockSystem::new(disc.vel_asm.pattern(), &disc.div, &disc.div_t);
        block.compose(&disc.mass, &disc.div, &disc.div_t);
        let proj_pin = covers_whole_boundary(&problem.mesh, &problem.normal_tags)
            .then(|| disc.n_v());
        constrain_block(&mut block.matrix, &disc.normal, proj_pin);
        let proj_flux = proj_pin
            .is_some()
            .then(|| trace_flux_weights(&disc.velocity, &problem.normal_tags));
        let counters_proj = SolverCounters::new();
        let assemblies_proj = 1;
        let proj_lu = LuSolver::factor(&block.matrix, counters_proj.clone())?;

        let n = plan.n_realizations();
        let v0: Vec<FeFunction> = (0..n)
            .map(|j| disc.velocity.interpolate_vector(|x| (problem.v_init)(j, x)))
            .collect();
        let w0: Vec<FeFunction> = (0..n)
            .map(|j| disc.velocity.interpolate_vector(|x| (problem.w_init)(j, x)))
            .collect();
        let state = EnsembleState {
            v_tilde: v0.clone(),
            w_tilde: w0.clone(),
            v: v0,
            w: w0,
            q: (0..n).map(|_| disc.pressure.zero_function()).collect(),
            r: (0..n).map(|_| disc.pressure.zero_function()).collect(),
            level: 0,
        };
        let stability = stability_params(&disc.coeffs, &config);
        Ok(SppRunner {
            config,
            problem,
            plan,
            disc,
            proj_lu,
            proj_pin,
            proj_flux,
            counters_v: SolverCounters::new(),
            counters_w: SolverCounters::new(),
            counters_proj,
            assemblies_v: 0,
            assemblies_w: 0,
            assemblies_proj,
            state,
            stability,
        })
    }

    /// Momentum sub-step (Step 1 for the first Elsässer field, Step 3 for
    /// the second): velocity-only system with grad-div and full Dirichlet
    /// conditions, one factorization shared by all realizations.
    fn spp_momentum_substep(
        &self,
        first: bool,
        stats: &LevelStats,
        t_next: f64,
    ) -> Result<Vec<FeFunction>, SchemeError> {
        let disc = &self.disc;
        let dt = self.config.dt;
        let n_v = disc.n_v();
        let (wind, wind_flucts) =
            if first { (&stats.mean_w, &stats.fluct_w) } else { (&stats.mean_v, &stats.fluct_v) };
        let (hat, hat_other, tilde) = if first {
            (&self.state.v, &self.state.w, &self.state.v_tilde)
        } else {
            (&self.state.w, &self.state.v, &self.state.w_tilde)
        };

        let mut a = CsrMatrix::zeros(disc.vel_asm.pattern().clone());
        disc.vel_asm.add_to(&mut a, OperatorKind::Mass, 1.0 / dt);
        disc.vel_asm.add_to(&mut a, OperatorKind::Convection(wind), 1.0);
        disc.vel_asm.add_to(
            &mut a,
            OperatorKind::Stiffness(Coeff::Grid(&disc.coeffs.implicit_half)),
            1.0,
        );
        if self.config.gamma > 0.0 {
            disc.vel_asm.add_to(&mut a, OperatorKind::GradDiv, self.config.gamma);
        }
        disc.vel_asm.add_to(
            &mut a,
            OperatorKind::EddyViscosity {
                fluctuations: wind_flucts,
                mu: self.config.mu,
                dt,
            },
            1.0,
        );
        for e in disc.dirichlet.entries() {
            a.zero_row(e.dof);
            a.set(e.dof, e.dof, 1.0);
        }
        let counters =
            if first { self.counters_v.clone() } else { self.counters_w.clone() };
        let lu = LuSolver::factor(&a, counters)?;

        let problem = &self.problem;
        let coeffs = &disc.coeffs;
        let n = self.plan.n_realizations();
        let rhss: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut rhs = match (&problem.forcing, first) {
                    (Some((f1, _)), true) => {
                        assemble_load(&disc.velocity, &disc.rule, |x| f1(j, t_next, x))
                    }
                    (Some((_, f2)), false) => {
                        assemble_load(&disc.velocity, &disc.rule, |x| f2(j, t_next, x))
                    }
                    (None, _) => vec![0.0; n_v],
                };
                let mut mass_old = vec![0.0; n_v];
                disc.mass.matvec(tilde[j].coeffs(), &mut mass_old);
                for (r, m) in rhs.iter_mut().zip(&mass_old) {
                    *r += m / dt;
                }
                let conv = convection_apply(&wind_flucts[j], &hat[j], &disc.velocity, &disc.rule);
                let cross = weighted_grad_apply(
                    Coeff::Grid(&coeffs.cross_half[j]),
                    &hat_other[j],
                    &disc.velocity,
                    &disc.rule,
                );
                let fluct = weighted_grad_apply(
                    Coeff::Grid(&coeffs.fluct_half[j]),
                    &hat[j],
                    &disc.velocity,
                    &disc.rule,
                );
                for i in 0..n_v {
                    rhs[i] -= conv[i] + cross[i] + fluct[i];
                }
                let bc = if first { &problem.v_bc } else { &problem.w_bc };
                disc.dirichlet.apply_values(&mut rhs, |tag, x| bc(j, t_next, tag, x));
                rhs
            })
            .collect();

        let sols = lu.solve_many(&rhss);
        Ok(sols
            .into_iter()
            .map(|s| FeFunction::from_coeffs(disc.velocity.clone(), s))
            .collect())
    }

    /// Projection sub-step (Steps 2 and 4): solves the shared
    /// time-step-independent saddle factorization; the pressure is recovered
    /// from the auxiliary unknown as `q̂ = z/Δt`.
    ///
    /// The normal-component condition keeps the intermediate field's own
    /// trace: the momentum sub-step has already imposed the boundary data
    /// there, and re-imposing a zero normal trace on non-homogeneous data
    /// would displace the projected field by an O(1) boundary mismatch whose
    /// recovered pressure scales like 1/Δt and pollutes the next momentum
    /// solve.  (For homogeneous data the imposed values are exactly zero.)
    /// When the whole boundary is constrained, the imposed trace is shifted
    /// by the constant that makes its discrete boundary flux vanish — the
    /// compatibility the dropped (pinned) divergence row would otherwise
    /// enforce — so the projected field is divergence-free against the full
    /// pressure basis, not just the pinned complement.
    fn spp_projection_substep(
        &self,
        intermediate: &[FeFunction],
    ) -> Result<(Vec<FeFunction>, Vec<FeFunction>, Vec<f64>), SchemeError> {
        let disc = &self.disc;
        let n_v = disc.n_v();
        let n_q = disc.n_q();
        let n = intermediate.len();
        // Per realization, two right-hand sides against the one factorization:
        // the trace-preserving projection the scheme advances with, and its
        // homogeneous-trace companion whose solution norm is the contraction
        // gauge recorded for the stability monitor.
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = intermediate
            .par_iter()
            .map(|vhat| {
                let mut rhs = vec![0.0; n_v + n_q];
                disc.mass.matvec(vhat.coeffs(), &mut rhs[..n_v]);
                let mut rhs0 = rhs.clone();
                for e in disc.normal.entries() {
                    rhs[e.dof] = vhat.coeffs()[e.dof];
                }
                if let Some(flux) = &self.proj_flux {
                    let defect: f64 =
                        flux.weights.iter().map(|&(dof, w)| w * rhs[dof]).sum();
                    let shift = defect / flux.perimeter;
                    for &(dof, w) in &flux.weights {
                        rhs[dof] -= shift * w.signum();
                    }
                }
                disc.normal.apply_zero(&mut rhs0[..n_v]);
                if let Some(pin) = self.proj_pin {
                    rhs[pin] = 0.0;
                    rhs0[pin] = 0.0;
                }
                (rhs, rhs0)
            })
            .collect();
        let mut rhss = Vec::with_capacity(2 * n);
        let mut companions = Vec::with_capacity(n);
        for (rhs, rhs0) in pairs {
            rhss.push(rhs);
            companions.push(rhs0);
        }
        rhss.append(&mut companions);
        let sols = self.proj_lu.solve_many(&rhss);
        let mut tildes = Vec::with_capacity(n);
        let mut pressures = Vec::with_capacity(n);
        for sol in &sols[..n] {
            tildes.push(FeFunction::from_coeffs(disc.velocity.clone(), sol[..n_v].to_vec()));
            let mut p = FeFunction::from_coeffs(disc.pressure.clone(), sol[n_v..].to_vec());
            p.scale(1.0 / self.config.dt);
            pressures.push(p);
        }
        let gauges: Vec<f64> = sols[n..]
            .iter()
            .map(|sol| {
                let g = FeFunction::from_coeffs(disc.velocity.clone(), sol[..n_v].to_vec());
                norms::l2_norm(&g, &disc.norm_rule)
            })
            .collect();
        Ok((tildes, pressures, gauges))
    }

    /// Advances one full step (Steps 1–4).  Steps 1 and 3 both read only
    /// level-`n` data and run concurrently; Steps 2/4 reuse the
    /// simulation-lifetime projection factorization.
    pub fn step(&mut self) -> Result<StepRecord, SchemeError> {
        let dt = self.config.dt;
        let t_next = dt * (self.state.level + 1) as f64;
        let stats = LevelStats::build(&self.state.v, &self.state.w);

        let (res_v, res_w) = rayon::join(
            || self.spp_momentum_substep(true, &stats, t_next),
            || self.spp_momentum_substep(false, &stats, t_next),
        );
        let v_hat = res_v?;
        let w_hat = res_w?;
        self.assemblies_v += 1;
        self.assemblies_w += 1;
        let (v_tilde, q_hat, gauge_v) = self.spp_projection_substep(&v_hat)?;
        let (w_tilde, r_hat, gauge_w) = self.spp_projection_substep(&w_hat)?;

        self.state.v = v_hat;
        self.state.w = w_hat;
        self.state.v_tilde = v_tilde;
        self.state.w_tilde = w_tilde;
        self.state.q = q_hat;
        self.state.r = r_hat;
        self.state.level += 1;
        self.state.check_finite(self.state.level)?;
        Ok(self.record(t_next, &gauge_v, &gauge_w))
    }

    fn record(&self, t: f64, gauge_v: &[f64], gauge_w: &[f64]) -> StepRecord {
        record_from_state(
            &self.disc,
            &self.plan,
            &self.config,
            &self.state.v,
            &self.state.w,
            Some(ProjectionSnapshot {
                v_tilde: &self.state.v_tilde,
                w_tilde: &self.state.w_tilde,
                gauge_v,
                gauge_w,
            }),
            t,
            self.state.level,
        )
    }

    /// Runs all `M` steps, invoking `observer` after the initial level and
    /// after every completed step.
    pub fn run_transient(
        &mut self,
        mut observer: impl FnMut(usize, f64, &EnsembleState),
    ) -> Result<RunOutput, SchemeError> {
        let m = self.config.n_steps()?;
        self.state.check_finite(0)?;
        observer(0, 0.0, &self.state);
        let mut records = Vec::with_capacity(m);
        for _ in 0..m {
            let rec = self.step()?;
            observer(self.state.level, rec.t, &self.state);
            records.push(rec);
        }
        Ok(RunOutput {
            records,
            stability: self.stability.clone(),
            work: self.work(),
        })
    }

    pub fn work(&self) -> WorkReport {
        WorkReport {
            subproblems: vec![
                (
                    "momentum-v".into(),
                    SubProblemWork {
                        assemblies: self.assemblies_v,
                        factorizations: self.counters_v.factorizations(),
                        solves: self.counters_v.solves(),
                    },
                ),
                (
                    "momentum-w".into(),
                    SubProblemWork {
                        assemblies: self.assemblies_w,
                        factorizations: self.counters_w.factorizations(),
                        solves: self.counters_w.solves(),
                    },
                ),
                (
                    "projection".into(),
                    SubProblemWork {
                        assemblies: self.assemblies_proj,
                        factorizations: self.counters_proj.factorizations(),
                        solves: self.counters_proj.solves(),
                    },
                ),
            ],
        }
    }
}

/// Which algorithm [`run_transient`] drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Coupled,
    PenaltyProjection,
}

/// Convenience dispatcher: builds the runner for `algorithm` and advances
/// all `M` steps with the observer.
pub fn run_transient(
    algorithm: Algorithm,
    config: SchemeConfig,
    problem: Problem,
    plan: StochasticPlan,
    observer: impl FnMut(usize, f64, &EnsembleState),
) -> Result<RunOutput, SchemeError> {
    match algorithm {
        Algorithm::Coupled => CoupledRunner::new(config, problem, plan)?.run_transient(observer),
        Algorithm::PenaltyProjection => {
            SppRunner::new(config, problem, plan)?.run_transient(observer)
        }
    }
}

/// Projection-scheme extras captured per step: the projected fields (for the
/// divergence monitor) and the homogeneous-trace companion norms (for the
/// contraction monitor).
struct ProjectionSnapshot<'a> {
    v_tilde: &'a [FeFunction],
    w_tilde: &'a [FeFunction],
    gauge_v: &'a [f64],
    gauge_w: &'a [f64],
}

#[allow(clippy::too_many_arguments)]
fn record_from_state(
    disc: &Discretization,
    plan: &StochasticPlan,
    config: &SchemeConfig,
    v: &[FeFunction],
    w: &[FeFunction],
    tildes: Option<ProjectionSnapshot<'_>>,
    t: f64,
    level: usize,
) -> StepRecord {
    let rule = &disc.norm_rule;
    let per_j: Vec<(f64, f64, f64, f64)> = v
        .par_iter()
        .zip(w.par_iter())
        .map(|(vj, wj)| {
            (
                norms::l2_norm(vj, rule).powi(2),
                norms::l2_norm(wj, rule).powi(2),
                norms::h1_seminorm(vj, rule).powi(2),
                norms::h1_seminorm(wj, rule).powi(2),
            )
        })
        .collect();
    let energy_v: Vec<f64> = per_j.iter().map(|p| p.0).collect();
    let energy_w: Vec<f64> = per_j.iter().map(|p| p.1).collect();
    let grad_v: Vec<f64> = per_j.iter().map(|p| p.2).collect();
    let grad_w: Vec<f64> = per_j.iter().map(|p| p.3).collect();
    let visc = disc.coeffs.nu_bar_min + disc.coeffs.nu_m_bar_min;
    let monitor: Vec<f64> = per_j
        .iter()
        .map(|p| p.0 + p.1 + visc * config.dt / 2.0 * (p.2 + p.3))
        .collect();

    let mut contraction = Vec::new();
    let mut div_residual = 0.0_f64;
    let mut div_scale = 0.0_f64;
    match tildes {
        Some(snap) => {
            for j in 0..v.len() {
                contraction.push((
                    snap.gauge_v[j],
                    energy_v[j].sqrt(),
                    snap.gauge_w[j],
                    energy_w[j].sqrt(),
                ));
                for z in [&snap.v_tilde[j], &snap.w_tilde[j]] {
                    div_residual = div_residual.max(disc.div_residual(z));
                    div_scale = div_scale.max(norms::h1_norm(z, rule));
                }
            }
        }
        None => {
            for j in 0..v.len() {
                for z in [&v[j], &w[j]] {
                    div_residual = div_residual.max(disc.div_residual(z));
                    div_scale = div_scale.max(norms::h1_norm(z, rule));
                }
            }
        }
    }
    // Mean energies always come from the momentum solutions so the two
    // algorithms report the comparison fields the gap bound is stated on.
    let energy_u = realization_energies(v, w, rule);
    let (mean_energy, mean_energy_sq) = weight_energies(&energy_u, plan);

    StepRecord {
        level,
        t,
        energy_v,
        energy_w,
        grad_v,
        grad_w,
        monitor,
        contraction,
        div_residual,
        div_scale,
        energy_u,
        mean_energy,
        mean_energy_sq,
    }
}
