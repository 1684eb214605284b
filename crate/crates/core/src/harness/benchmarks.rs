//! The two physical benchmarks, each run with both algorithms on one mesh:
//!
//! * conducting channel flow past a unit step — Scott–Vogelius for the
//!   coupled scheme, Taylor–Hood with a large grad-div penalty for the
//!   projection scheme, both on the same barycenter-refined mesh;
//! * the regularized lid-driven cavity with Karhunen–Loève viscosities,
//!   swept over the coupling parameter `s`.
//!
//! The reported energy is the collocation-weighted average of `½‖u_j‖` (with
//! the weighted average of `½‖u_j‖²` as a companion column), evaluated on the
//! momentum fields so the two algorithms are compared on the quantity the
//! penalty-convergence bound controls.

use std::sync::Arc;

use crate::elsasser::elsasser_pair;
use crate::mesh::{BoundaryTag, TriMesh};
use crate::norms::boundary_flux_where;
use crate::quadrature::TriRule;
use crate::schemes::{
    realization_energies, weighted_mean_energy, Algorithm, ElementPair, Problem, RunOutput,
    SchemeConfig, SchemeError,
};
use crate::space::{ensemble_mean, FeFunction};
use crate::stochastic::{KlField, StochasticPlan};

use super::config::ExperimentSpec;
use super::HarnessError;

/// One energy sample: time, per-realization `½‖u_j‖`, and the two weighted
/// means.  Rows start at the initial level.
#[derive(Debug, Clone)]
pub struct EnergyRow {
    pub t: f64,
    pub per_j: Vec<f64>,
    pub mean: f64,
    pub mean_sq: f64,
}

/// One algorithm's benchmark run: the transient output, the energy series,
/// and the final-time ensemble-mean primitive fields for snapshots.
pub struct BenchmarkRun {
    pub label: String,
    pub algorithm: Algorithm,
    pub output: RunOutput,
    pub energy: Vec<EnergyRow>,
    /// Ensemble-mean velocity `⟨u⟩ = (⟨v⟩+⟨w⟩)/2` at the final time.
    pub final_u: FeFunction,
    /// Ensemble-mean magnetic field `⟨B⟩ = (⟨v⟩−⟨w⟩)/(2√s)` at the final time.
    pub final_b: FeFunction,
}

fn run_benchmark(
    label: &str,
    algorithm: Algorithm,
    config: SchemeConfig,
    problem: &Problem,
    plan: &StochasticPlan,
) -> Result<BenchmarkRun, SchemeError> {
    let steps = config.n_steps()?;
    let rule = TriRule::degree5();
    let mut energy = Vec::with_capacity(steps + 1);
    let mut finals = None;
    let mut observer = |level: usize, t: f64, state: &crate::schemes::EnsembleState| {
        let per_j = realization_energies(&state.v, &state.w, &rule);
        let (mean, mean_sq) = weighted_mean_energy(&state.v, &state.w, plan, &rule);
        energy.push(EnergyRow { t, per_j, mean, mean_sq });
        if level == steps {
            finals = Some((ensemble_mean(&state.v), ensemble_mean(&state.w)));
        }
    };
    let output = crate::schemes::run_transient(
        algorithm,
        config.clone(),
        problem.clone(),
        plan.clone(),
        &mut observer,
    )?;
    let (mean_v, mean_w) = finals.expect("final level observed");
    let mut final_u = mean_v.clone();
    final_u.axpy(1.0, &mean_w);
    final_u.scale(0.5);
    let mut final_b = mean_v;
    final_b.axpy(-1.0, &mean_w);
    final_b.scale(0.5 / config.s.sqrt());
    Ok(BenchmarkRun {
        label: label.to_string(),
        algorithm,
        output,
        energy,
        final_u,
        final_b,
    })
}

/// Largest pointwise difference between two mean-energy series, relative to
/// the largest energy of the reference series.
pub fn energy_gap(reference: &[EnergyRow], other: &[EnergyRow]) -> f64 {
    assert_eq!(reference.len(), other.len());
    let scale = reference.iter().map(|r| r.mean).fold(0.0_f64, f64::max);
    let diff = reference
        .iter()
        .zip(other)
        .map(|(a, b)| (a.mean - b.mean).abs())
        .fold(0.0_f64, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

// ---------------------------------------------------------------------------
// channel past a step
// ---------------------------------------------------------------------------

/// Parabolic channel inflow profile `(x₂(10−x₂)/25, 0)`.
pub fn channel_profile(x: [f64; 2]) -> [f64; 2] {
    [x[1] * (10.0 - x[1]) / 25.0, 0.0]
}

/// Per-realization primitive boundary data of the channel: the parabolic
/// velocity profile at inflow and outflow (scaled by the data factor), no
/// slip at walls; the magnetic field is the unperturbed `(0,1)` at inflow
/// and outflow and the factor-scaled `(0,1)` at walls.
fn channel_data(tag: BoundaryTag, x: [f64; 2], factor: f64) -> ([f64; 2], [f64; 2]) {
    match tag {
        BoundaryTag::Inflow | BoundaryTag::Outflow => {
            let p = channel_profile(x);
            ([factor * p[0], factor * p[1]], [0.0, 1.0])
        }
        _ => ([0.0, 0.0], [0.0, factor]),
    }
}

/// Channel problem description in Elsässer variables.  Dirichlet data covers
/// the whole boundary; the projection constrains the normal component on the
/// walls only, leaving inflow and outflow free.
pub fn channel_problem(mesh: Arc<TriMesh>, factors: Vec<f64>, s: f64) -> Problem {
    let sqrt_s = s.sqrt();
    let f_bc = factors.clone();
    let g_bc = factors.clone();
    let f_init = factors.clone();
    let g_init = factors;
    Problem {
        mesh,
        dirichlet_tags: vec![BoundaryTag::Inflow, BoundaryTag::Outflow, BoundaryTag::Wall],
        normal_tags: vec![BoundaryTag::Wall],
        v_bc: Arc::new(move |j, _t, tag, x| {
            let (u, b) = channel_data(tag, x, f_bc[j]);
            elsasser_pair(u, b, sqrt_s).0
        }),
        w_bc: Arc::new(move |j, _t, tag, x| {
            let (u, b) = channel_data(tag, x, g_bc[j]);
            elsasser_pair(u, b, sqrt_s).1
        }),
        // The flow starts from the extended parabolic profile with no
        // magnetic field, so both Elsässer fields equal the velocity.
        v_init: Arc::new(move |j, x| {
            let p = channel_profile(x);
            [f_init[j] * p[0], f_init[j] * p[1]]
        }),
        w_init: Arc::new(move |j, x| {
            let p = channel_profile(x);
            [g_init[j] * p[0], g_init[j] * p[1]]
        }),
        forcing: None,
    }
}

pub struct ChannelStudy {
    pub mesh: Arc<TriMesh>,
    pub plan: StochasticPlan,
    pub coupled: BenchmarkRun,
    pub spp: BenchmarkRun,
    /// Relative max deviation between the two mean-energy series.
    pub energy_gap: f64,
    /// Signed mass fluxes of the final mean velocity (projection run):
    /// inflow is negative, outflow positive for a left-to-right flow.
    pub influx: f64,
    pub outflux: f64,
}

impl ChannelStudy {
    /// Relative mass imbalance `|influx + outflux| / |influx|`.
    pub fn flux_imbalance(&self) -> f64 {
        (self.influx + self.outflux).abs() / self.influx.abs().max(f64::MIN_POSITIVE)
    }
}

/// Runs the step-channel benchmark with both algorithms on one
/// barycenter-refined mesh and compares their energy series.
pub fn run_channel(spec: &ExperimentSpec) -> Result<ChannelStudy, HarnessError> {
    let params = &spec.channel;
    let mesh = Arc::new(TriMesh::step_channel(params.resolution).barycentric_refine());
    let plan = StochasticPlan::uniform_constants(
        spec.n_sc,
        spec.eps,
        spec.nu_box,
        spec.nu_m_box,
        spec.seed,
    )
    .map_err(SchemeError::from)?;
    let problem = channel_problem(mesh.clone(), plan.data_factors.clone(), params.s);
    let base = SchemeConfig {
        dt: params.dt,
        t_end: params.t_end,
        gamma: params.gamma,
        coupled_grad_div: 0.0,
        mu: spec.mu,
        s: params.s,
        element_pair: ElementPair::TaylorHood,
    };
    let annotate = |label: &str| {
        let label = label.to_string();
        move |source| HarnessError::Benchmark { label, source }
    };
    let coupled = run_benchmark(
        "coupled",
        Algorithm::Coupled,
        SchemeConfig { element_pair: ElementPair::ScottVogelius, ..base.clone() },
        &problem,
        &plan,
    )
    .map_err(annotate("channel coupled"))?;
    let spp = run_benchmark("spp", Algorithm::PenaltyProjection, base, &problem, &plan)
        .map_err(annotate("channel spp"))?;
    let gap = energy_gap(&coupled.energy, &spp.energy);
    let influx = boundary_flux_where(&spp.final_u, |t| t == BoundaryTag::Inflow);
    let outflux = boundary_flux_where(&spp.final_u, |t| t == BoundaryTag::Outflow);
    Ok(ChannelStudy { mesh, plan, coupled, spp, energy_gap: gap, influx, outflux })
}

// ---------------------------------------------------------------------------
// regularized lid-driven cavity
// ---------------------------------------------------------------------------

/// Regularized lid profile `((1−x₁²)², 0)`.
pub fn lid_profile(x: [f64; 2]) -> [f64; 2] {
    let g = 1.0 - x[0] * x[0];
    [g * g, 0.0]
}

/// Cavity mesh: (-1,1)² with the top side tagged as the lid, then
/// barycenter-refined so the Scott–Vogelius pair is inf-sup stable.
pub fn cavity_mesh(resolution: usize) -> TriMesh {
    let mut mesh = TriMesh::rectangle([-1.0, -1.0], [1.0, 1.0], resolution, resolution);
    mesh.retag(|mid| (mid[1] > 1.0 - 1e-9).then_some(BoundaryTag::Lid));
    mesh.barycentric_refine()
}

/// Cavity problem in Elsässer variables: factor-scaled regularized lid
/// velocity, no slip elsewhere, factor-scaled vertical magnetic field on the
/// whole boundary, and a start from rest (`u⁰ = B⁰ = 0`).
pub fn cavity_problem(mesh: Arc<TriMesh>, factors: Vec<f64>, s: f64) -> Problem {
    let sqrt_s = s.sqrt();
    let data = move |tag: BoundaryTag, x: [f64; 2], factor: f64| {
        let u = match tag {
            BoundaryTag::Lid => {
                let p = lid_profile(x);
                [factor * p[0], factor * p[1]]
            }
            _ => [0.0, 0.0],
        };
        (u, [0.0, factor])
    };
    let f_bc = factors.clone();
    let g_bc = factors;
    let whole = vec![BoundaryTag::Wall, BoundaryTag::Lid];
    Problem {
        mesh,
        dirichlet_tags: whole.clone(),
        normal_tags: whole,
        v_bc: Arc::new(move |j, _t, tag, x| elsasser_pair(data(tag, x, f_bc[j]).0, data(tag, x, f_bc[j]).1, sqrt_s).0),
        w_bc: Arc::new(move |j, _t, tag, x| elsasser_pair(data(tag, x, g_bc[j]).0, data(tag, x, g_bc[j]).1, sqrt_s).1),
        v_init: Arc::new(|_, _| [0.0, 0.0]),
        w_init: Arc::new(|_, _| [0.0, 0.0]),
        forcing: None,
    }
}

/// Both algorithms' runs at one coupling parameter.
pub struct CavityCase {
    pub s: f64,
    pub coupled: BenchmarkRun,
    pub spp: BenchmarkRun,
    pub energy_gap: f64,
}

pub struct CavityStudy {
    pub mesh: Arc<TriMesh>,
    pub plan: StochasticPlan,
    pub cases: Vec<CavityCase>,
}

impl CavityStudy {
    /// Final-time mean energies across the s-sweep for one algorithm.
    pub fn final_energies(&self, coupled: bool) -> Vec<f64> {
        self.cases
            .iter()
            .map(|c| {
                let run = if coupled { &c.coupled } else { &c.spp };
                run.energy.last().expect("energy series non-empty").mean
            })
            .collect()
    }

    /// True when the final energy is non-increasing across the sweep
    /// (small relative slack for roundoff).
    pub fn monotone_in_s(&self, coupled: bool) -> bool {
        let finals = self.final_energies(coupled);
        finals.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-9))
    }
}

/// Runs the lid-driven cavity sweep over the coupling parameter with both
/// algorithms, sharing one KL collocation plan across the sweep.
pub fn run_cavity(spec: &ExperimentSpec) -> Result<CavityStudy, HarnessError> {
    let params = &spec.cavity;
    let mesh = Arc::new(cavity_mesh(params.resolution));
    let plan = StochasticPlan::kl_collocation(
        params.kl_level,
        KlField { c: params.kl_c, corr_len: params.kl_corr_len, q: params.kl_q },
        params.kl_nu_scale,
        params.kl_nu_m_scale,
        spec.eps,
    );
    let mut cases = Vec::new();
    for &s in &params.s_ladder {
        let problem = cavity_problem(mesh.clone(), plan.data_factors.clone(), s);
        let base = SchemeConfig {
            dt: params.dt,
            t_end: params.t_end,
            gamma: params.gamma,
            coupled_grad_div: 0.0,
            mu: spec.mu,
            s,
            element_pair: ElementPair::TaylorHood,
        };
        let annotate = move |source| HarnessError::Run {
            parameter: "s".to_string(),
            value: s,
            source,
        };
        let coupled = run_benchmark(
            "coupled",
            Algorithm::Coupled,
            SchemeConfig { element_pair: ElementPair::ScottVogelius, ..base.clone() },
            &problem,
            &plan,
        )
        .map_err(annotate)?;
        let spp = run_benchmark("spp", Algorithm::PenaltyProjection, base, &problem, &plan)
            .map_err(annotate)?;
        let gap = energy_gap(&coupled.energy, &spp.energy);
        cases.push(CavityCase { s, coupled, spp, energy_gap: gap });
    }
    Ok(CavityStudy { mesh, plan, cases })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;
    use crate::norms;
    use crate::schemes::SppRunner;
    use crate::stochastic::ViscosityModel;

    #[test]
    fn channel_starts_from_the_parabolic_interpolant_with_no_magnetic_field() {
        let spec = parse_config(
            "[run]\nkind=channel\n[stochastic]\nn_sc=3\n[channel]\nt_end=0.05\n",
        )
        .unwrap();
        let mesh = Arc::new(TriMesh::step_channel(1).barycentric_refine());
        let plan = StochasticPlan::uniform_constants(
            spec.n_sc,
            spec.eps,
            spec.nu_box,
            spec.nu_m_box,
            spec.seed,
        )
        .unwrap();
        let problem = channel_problem(mesh, plan.data_factors.clone(), spec.channel.s);
        let config = spec.scheme_config();
        let mut initial = None;
        let mut runner = SppRunner::new(config, problem, plan.clone()).unwrap();
        runner
            .run_transient(|level, _t, state| {
                if level == 0 {
                    initial = Some((state.v.clone(), state.w.clone()));
                }
            })
            .unwrap();
        let (v0, w0) = initial.unwrap();
        let rule = TriRule::degree5();
        for j in 0..plan.n_realizations() {
            // v = w at t=0 means B = 0.
            let mut diff = v0[j].clone();
            diff.axpy(-1.0, &w0[j]);
            assert!(norms::l2_norm(&diff, &rule) <= 1e-13);
            // The parabolic profile is quadratic, so the interpolant is exact.
            let factor = plan.data_factors[j];
            let err = norms::error_l2(
                &v0[j],
                |x| {
                    let p = channel_profile(x);
                    [factor * p[0], factor * p[1]]
                },
                &rule,
            );
            assert!(err <= 1e-12, "realization {j}: interpolation error {err}");
        }
    }

    #[test]
    fn energy_gap_measures_relative_max_deviation() {
        let a: Vec<EnergyRow> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&m| EnergyRow { t: 0.0, per_j: vec![], mean: m, mean_sq: 0.0 })
            .collect();
        let mut b = a.clone();
        assert_eq!(energy_gap(&a, &b), 0.0);
        b[2].mean = 4.2;
        assert!((energy_gap(&a, &b) - 0.05).abs() <= 1e-15);
    }

    #[test]
    fn cavity_starts_from_rest_and_lid_data_is_consistent() {
        let mesh = Arc::new(cavity_mesh(6));
        // Corners of the lid meet the walls: the regularized profile vanishes
        // there, so the boundary data is continuous.
        assert_eq!(lid_profile([-1.0, 1.0]), [0.0, 0.0]);
        assert_eq!(lid_profile([1.0, 1.0]), [0.0, 0.0]);
        assert!(mesh.boundary_edges().iter().any(|e| e.tag == BoundaryTag::Lid));
        assert!(mesh.boundary_edges().iter().any(|e| e.tag == BoundaryTag::Wall));

        let problem = cavity_problem(mesh, vec![1.0, 1.01], 0.01);
        let spec = parse_config("[run]\nkind=cavity\n").unwrap();
        let config = SchemeConfig {
            dt: 5.0,
            t_end: 10.0,
            gamma: 1.0e4,
            coupled_grad_div: 0.0,
            mu: spec.mu,
            s: 0.01,
            element_pair: ElementPair::TaylorHood,
        };
        let plan = StochasticPlan::uniform_constants(2, 0.01, (1e-4, 2e-4), (0.009, 0.011), 3)
            .unwrap();
        let run =
            run_benchmark("spp", Algorithm::PenaltyProjection, config, &problem, &plan).unwrap();
        assert_eq!(run.energy[0].mean, 0.0, "the flow starts from rest");
        assert!(run.energy.last().unwrap().mean > 0.0, "the lid spins the flow up");
    }

    #[test]
    fn kl_plan_at_the_origin_degenerates_to_a_deterministic_run() {
        // A level-0 sparse grid is the single point y = 0, where the KL field
        // equals its mean offset: the run must match a constant-viscosity
        // single-realization ensemble with no data perturbation, bitwise.
        let field = KlField { c: 1.0, corr_len: 0.01, q: 2 };
        let kl_plan = StochasticPlan::kl_collocation(0, field, 2.0 / 15000.0, 0.01, 0.0);
        assert_eq!(kl_plan.n_realizations(), 1);
        assert_eq!(kl_plan.data_factors, vec![1.0]);
        let const_plan = StochasticPlan {
            weights: vec![1.0],
            points: vec![vec![]],
            samples: vec![ViscosityModel::Constant { nu: 2.0 / 15000.0, nu_m: 0.01 }],
            data_factors: vec![1.0],
            seed: 0,
        };
        let mesh = Arc::new(cavity_mesh(4));
        let config = SchemeConfig {
            dt: 2.0,
            t_end: 6.0,
            gamma: 1.0e4,
            coupled_grad_div: 0.0,
            mu: 1.0,
            s: 0.01,
            element_pair: ElementPair::TaylorHood,
        };
        let problem_kl = cavity_problem(mesh.clone(), kl_plan.data_factors.clone(), 0.01);
        let problem_const = cavity_problem(mesh, const_plan.data_factors.clone(), 0.01);
        let run_kl = run_benchmark(
            "spp",
            Algorithm::PenaltyProjection,
            config.clone(),
            &problem_kl,
            &kl_plan,
        )
        .unwrap();
        let run_const = run_benchmark(
            "spp",
            Algorithm::PenaltyProjection,
            config,
            &problem_const,
            &const_plan,
        )
        .unwrap();
        for (a, b) in run_kl.energy.iter().zip(&run_const.energy) {
            assert_eq!(a.mean, b.mean, "KL at y=0 must equal the constant run exactly");
        }
    }
}
