//! Manufactured-solution experiment drivers: the penalty-convergence (γ) gap
//! study and the temporal/spatial convergence studies, each producing a table
//! of errors and observed rates.
//!
//! All error norms are the discrete `L²(0,T;H¹)` norm
//! `sqrt(Δt Σ_{n≥1} ‖e^n‖²_{H¹})` of the ensemble-mean difference — between
//! the two algorithms' means for the γ study, and against the analytic mean
//! solution for the temporal/spatial studies.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::elsasser::MmsRealization;
use crate::mesh::TriMesh;
use crate::norms;
use crate::quadrature::TriRule;
use crate::schemes::{
    Algorithm, CoupledRunner, ElementPair, Problem, RunOutput, SchemeConfig, SchemeError,
    SppRunner,
};
use crate::space::{ensemble_mean, FeFunction};
use crate::stochastic::StochasticPlan;

use super::config::ExperimentSpec;
use super::output::fmt_num;
use super::HarnessError;

// ---------------------------------------------------------------------------
// convergence table
// ---------------------------------------------------------------------------

/// One table row: the laddered parameter value, one error per field, and the
/// observed rates against the previous row (absent on the first row).
#[derive(Debug, Clone)]
pub struct TableRow {
    pub value: f64,
    pub errors: Vec<f64>,
    pub rates: Option<Vec<f64>>,
}

/// Errors and observed convergence rates over a parameter ladder.
///
/// The rate between consecutive rows is `ln(e_{k-1}/e_k) / ln(ratio_k)` with
/// `ratio_k > 1` the factor between the parameter values, so halving the
/// error when the parameter doubles (or halves) reads as rate 1.
#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    /// Name of the laddered parameter (the first CSV column).
    pub parameter: String,
    /// Field labels, one per error column.
    pub fields: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl ConvergenceTable {
    pub fn new(parameter: &str, fields: &[&str]) -> Self {
        ConvergenceTable {
            parameter: parameter.to_string(),
            fields: fields.iter().map(|f| f.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends a row, computing rates against the previous one.
    pub fn push(&mut self, value: f64, errors: Vec<f64>) {
        assert_eq!(errors.len(), self.fields.len());
        assert!(value > 0.0, "ladder values must be positive");
        assert!(
            errors.iter().all(|e| *e > 0.0 && e.is_finite()),
            "convergence-table errors must be positive and finite"
        );
        let rates = self.rows.last().map(|prev| {
            let ratio = (value / prev.value).max(prev.value / value);
            assert!(ratio > 1.0, "consecutive ladder values must differ");
            prev.errors
                .iter()
                .zip(&errors)
                .map(|(e0, e1)| (e0 / e1).ln() / ratio.ln())
                .collect()
        });
        self.rows.push(TableRow { value, errors, rates });
    }

    /// The rate column for one field, one entry per row after the first.
    pub fn rates_for(&self, field: &str) -> Vec<f64> {
        let idx = self
            .fields
            .iter()
            .position(|f| f == field)
            .unwrap_or_else(|| panic!("no field {field:?} in table"));
        self.rows.iter().filter_map(|r| r.rates.as_ref().map(|v| v[idx])).collect()
    }

    /// Errors of one field, one per row.
    pub fn errors_for(&self, field: &str) -> Vec<f64> {
        let idx = self
            .fields
            .iter()
            .position(|f| f == field)
            .unwrap_or_else(|| panic!("no field {field:?} in table"));
        self.rows.iter().map(|r| r.errors[idx]).collect()
    }

    /// Canonical CSV: `parameter,err_a,rate_a,err_b,rate_b,...` with empty
    /// rate cells on the first row.
    pub fn to_csv(&self) -> String {
        let mut header = vec![self.parameter.clone()];
        for f in &self.fields {
            header.push(format!("err_{f}"));
            header.push(format!("rate_{f}"));
        }
        let mut out = header.join(",");
        out.push('\n');
        for row in &self.rows {
            let mut cells = vec![fmt_num(row.value)];
            for (i, e) in row.errors.iter().enumerate() {
                cells.push(fmt_num(*e));
                cells.push(row.rates.as_ref().map_or(String::new(), |r| fmt_num(r[i])));
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Fixed-width text rendering for terminal output.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:>12}", self.parameter);
        for f in &self.fields {
            let _ = write!(out, "{:>14}{:>8}", format!("err_{f}"), "rate");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:>12}", fmt_num(row.value));
            for (i, e) in row.errors.iter().enumerate() {
                let rate = row
                    .rates
                    .as_ref()
                    .map_or_else(|| "-".to_string(), |r| format!("{:.2}", r[i]));
                let _ = write!(out, "{:>14}{rate:>8}", format!("{e:.4e}"));
            }
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// shared manufactured-solution plumbing
// ---------------------------------------------------------------------------

/// Mesh, stochastic plan, per-realization manufactured cases, and the
/// resulting problem description, bundled so every study draws identical data.
pub struct MmsEnsemble {
    pub mesh: Arc<TriMesh>,
    pub plan: StochasticPlan,
    pub cases: Vec<MmsRealization>,
    pub problem: Problem,
}

/// Builds the manufactured ensemble on a unit square of the given resolution:
/// constant viscosity pairs drawn from the spec's sample boxes, data factors
/// `1 + k_j ε`, and forcings consistent with each realization's sample.
pub fn mms_ensemble(resolution: usize, spec: &ExperimentSpec) -> Result<MmsEnsemble, HarnessError> {
    let mesh = Arc::new(TriMesh::unit_square(resolution));
    let plan = StochasticPlan::uniform_constants(
        spec.n_sc,
        spec.eps,
        spec.nu_box,
        spec.nu_m_box,
        spec.seed,
    )
    .map_err(SchemeError::from)?;
    let cases = mms_cases(&plan);
    let problem = Problem::manufactured(mesh.clone(), cases.clone());
    Ok(MmsEnsemble { mesh, plan, cases, problem })
}

/// One manufactured realization per plan sample, with the forcing viscosities
/// matching the sampled pair exactly.
pub fn mms_cases(plan: &StochasticPlan) -> Vec<MmsRealization> {
    (0..plan.n_realizations())
        .map(|j| MmsRealization {
            factor: plan.data_factors[j],
            nu: plan.points[j][0],
            nu_m: plan.points[j][1],
        })
        .collect()
}

/// The analytic ensemble mean: the manufactured fields are linear in the data
/// factor and independent of the viscosities, so the equal-weight mean
/// solution is the realization at the mean factor (its forcing members are
/// meaningless and must not be used).
pub fn mean_case(plan: &StochasticPlan) -> MmsRealization {
    let n = plan.n_realizations() as f64;
    let factor = plan.data_factors.iter().sum::<f64>() / n;
    MmsRealization { factor, nu: f64::NAN, nu_m: f64::NAN }
}

/// Runs one algorithm, recording the ensemble means `(⟨v⟩, ⟨w⟩)` at every
/// level including the initial one.  The projection scheme's means are taken
/// from the momentum (hat) fields — the quantity the γ-gap bound controls.
pub fn run_with_mean_history(
    algorithm: Algorithm,
    config: &SchemeConfig,
    problem: &Problem,
    plan: &StochasticPlan,
) -> Result<(RunOutput, Vec<(FeFunction, FeFunction)>), SchemeError> {
    let mut history = Vec::new();
    let mut observer = |_level: usize, _t: f64, state: &crate::schemes::EnsembleState| {
        history.push((ensemble_mean(&state.v), ensemble_mean(&state.w)));
    };
    let output = match algorithm {
        Algorithm::Coupled => {
            CoupledRunner::new(config.clone(), problem.clone(), plan.clone())?
                .run_transient(&mut observer)?
        }
        Algorithm::PenaltyProjection => {
            SppRunner::new(config.clone(), problem.clone(), plan.clone())?
                .run_transient(&mut observer)?
        }
    };
    Ok((output, history))
}

/// Discrete `L²(0,T;H¹)` gap between two mean-field histories, per field.
/// The initial level is shared data and excluded.  Comparing a history with
/// itself gives exactly zero.
pub fn history_gap(
    dt: f64,
    a: &[(FeFunction, FeFunction)],
    b: &[(FeFunction, FeFunction)],
    rule: &TriRule,
) -> (f64, f64) {
    assert_eq!(a.len(), b.len(), "histories must cover the same levels");
    let mut errs_v = Vec::with_capacity(a.len().saturating_sub(1));
    let mut errs_w = Vec::with_capacity(a.len().saturating_sub(1));
    for k in 1..a.len() {
        let mut dv = a[k].0.clone();
        dv.axpy(-1.0, &b[k].0);
        errs_v.push(norms::h1_norm(&dv, rule));
        let mut dw = a[k].1.clone();
        dw.axpy(-1.0, &b[k].1);
        errs_w.push(norms::h1_norm(&dw, rule));
    }
    (norms::space_time_norm(dt, &errs_v), norms::space_time_norm(dt, &errs_w))
}

fn annotate(parameter: &str, value: f64) -> impl FnOnce(SchemeError) -> HarnessError + '_ {
    move |source| HarnessError::Run { parameter: parameter.to_string(), value, source }
}

// ---------------------------------------------------------------------------
// γ-gap study
// ---------------------------------------------------------------------------

/// Both algorithms' outputs at one γ rung.
pub struct GammaRun {
    pub gamma: f64,
    pub coupled: RunOutput,
    pub spp: RunOutput,
}

pub struct GammaStudy {
    pub table: ConvergenceTable,
    pub runs: Vec<GammaRun>,
    pub plan: StochasticPlan,
}

/// Runs the coupled and penalty-projection schemes with identical data for
/// each γ in the ladder and tabulates the decay of the mean-field gap.
///
/// Both algorithms use the Taylor–Hood pair with the grad-div term added to
/// the coupled momentum forms as well, so the two discrete systems differ
/// only in the splitting the gap bound quantifies.
pub fn run_gamma_study(spec: &ExperimentSpec) -> Result<GammaStudy, HarnessError> {
    let params = &spec.gamma;
    let ens = mms_ensemble(params.resolution, spec)?;
    // The gap is a difference of piecewise-quadratic fields, so the
    // degree-5 rule integrates its H¹ norm exactly.
    let rule = TriRule::degree5();
    let mut table = ConvergenceTable::new("gamma", &["v", "w"]);
    let mut runs = Vec::new();
    for &gamma in &params.ladder {
        let config = SchemeConfig {
            dt: params.dt,
            t_end: params.t_end,
            gamma,
            coupled_grad_div: gamma,
            mu: spec.mu,
            s: 1.0,
            element_pair: ElementPair::TaylorHood,
        };
        let (coupled, hist_c) =
            run_with_mean_history(Algorithm::Coupled, &config, &ens.problem, &ens.plan)
                .map_err(annotate("gamma", gamma))?;
        let (spp, hist_s) =
            run_with_mean_history(Algorithm::PenaltyProjection, &config, &ens.problem, &ens.plan)
                .map_err(annotate("gamma", gamma))?;
        let (err_v, err_w) = history_gap(params.dt, &hist_c, &hist_s, &rule);
        table.push(gamma, vec![err_v, err_w]);
        runs.push(GammaRun { gamma, coupled, spp });
    }
    Ok(GammaStudy { table, runs, plan: ens.plan })
}

// ---------------------------------------------------------------------------
// temporal / spatial studies
// ---------------------------------------------------------------------------

/// One rung of a refinement study.
pub struct RungRun {
    pub value: f64,
    pub output: RunOutput,
}

pub struct RateStudy {
    pub table: ConvergenceTable,
    pub runs: Vec<RungRun>,
    pub plan: StochasticPlan,
}

/// Penalty-projection run measuring `‖⟨z⟩ − ⟨ẑ_h⟩‖_{2,1}` against the
/// analytic mean solution for both Elsässer fields.
fn spp_mean_errors(
    config: &SchemeConfig,
    ens: &MmsEnsemble,
    exact: MmsRealization,
    rule: &TriRule,
) -> Result<(RunOutput, f64, f64), SchemeError> {
    let mut errs_v = Vec::new();
    let mut errs_w = Vec::new();
    let mut runner = SppRunner::new(config.clone(), ens.problem.clone(), ens.plan.clone())?;
    let output = runner.run_transient(|level, t, state| {
        if level >= 1 {
            let mean_v = ensemble_mean(&state.v);
            let mean_w = ensemble_mean(&state.w);
            errs_v.push(norms::error_h1(
                &mean_v,
                |x| exact.v(t, x),
                |x| exact.v_grad(t, x),
                rule,
            ));
            errs_w.push(norms::error_h1(
                &mean_w,
                |x| exact.w(t, x),
                |x| exact.w_grad(t, x),
                rule,
            ));
        }
    })?;
    Ok((
        output,
        norms::space_time_norm(config.dt, &errs_v),
        norms::space_time_norm(config.dt, &errs_w),
    ))
}

/// Halving-Δt convergence of the penalty-projection scheme at fixed mesh.
pub fn run_temporal_study(spec: &ExperimentSpec) -> Result<RateStudy, HarnessError> {
    let params = &spec.temporal;
    let ens = mms_ensemble(params.resolution, spec)?;
    let exact = mean_case(&ens.plan);
    let rule = norms::reference_rule();
    let mut table = ConvergenceTable::new("dt", &["v", "w"]);
    let mut runs = Vec::new();
    for &dt in &params.dt_ladder {
        let config = SchemeConfig {
            dt,
            t_end: params.t_end,
            gamma: params.gamma,
            coupled_grad_div: 0.0,
            mu: spec.mu,
            s: 1.0,
            element_pair: ElementPair::TaylorHood,
        };
        let (output, err_v, err_w) =
            spp_mean_errors(&config, &ens, exact, &rule).map_err(annotate("dt", dt))?;
        table.push(dt, vec![err_v, err_w]);
        runs.push(RungRun { value: dt, output });
    }
    Ok(RateStudy { table, runs, plan: ens.plan })
}

/// Halving-h convergence of the penalty-projection scheme over a short time
/// window (the temporal error is negligible at Δt = t_end/steps).  The table
/// value column is the mesh size h = 1/resolution.
pub fn run_spatial_study(spec: &ExperimentSpec) -> Result<RateStudy, HarnessError> {
    let params = &spec.spatial;
    let rule = norms::reference_rule();
    let dt = params.t_end / params.steps as f64;
    let mut table = ConvergenceTable::new("h", &["v", "w"]);
    let mut runs = Vec::new();
    let mut plan = None;
    for &resolution in &params.mesh_ladder {
        // Fresh mesh per rung; the seed is fixed, so every rung draws the
        // identical viscosity samples and only h varies.
        let ens = mms_ensemble(resolution, spec)?;
        let exact = mean_case(&ens.plan);
        let h = 1.0 / resolution as f64;
        let config = SchemeConfig {
            dt,
            t_end: params.t_end,
            gamma: params.gamma,
            coupled_grad_div: 0.0,
            mu: spec.mu,
            s: 1.0,
            element_pair: ElementPair::TaylorHood,
        };
        let (output, err_v, err_w) =
            spp_mean_errors(&config, &ens, exact, &rule).map_err(annotate("h", h))?;
        table.push(h, vec![err_v, err_w]);
        runs.push(RungRun { value: h, output });
        plan = Some(ens.plan);
    }
    Ok(RateStudy { table, runs, plan: plan.expect("ladder validated non-empty") })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn tiny_spec(kind: &str, extra: &str) -> ExperimentSpec {
        parse_config(&format!(
            "[run]\nkind={kind}\nseed=11\n[stochastic]\nn_sc=2\neps=0.01\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn synthetic_error_sequences_report_exact_rates() {
        // e_k = 3 * 4^{-k} on values 2^{-k}: rate ln4/ln2 = 2 exactly.
        let mut table = ConvergenceTable::new("h", &["v"]);
        for k in 0..5 {
            table.push(0.5_f64.powi(k), vec![3.0 * 0.25_f64.powi(k)]);
        }
        for rate in table.rates_for("v") {
            assert!((rate - 2.0).abs() <= 1e-12, "rate {rate}");
        }
        // Increasing parameter direction: errors 10^{-k} on values 10^k.
        let mut table = ConvergenceTable::new("gamma", &["v"]);
        for k in 0..4 {
            table.push(10.0_f64.powi(k), vec![10.0_f64.powi(-k) * 0.7]);
        }
        for rate in table.rates_for("v") {
            assert!((rate - 1.0).abs() <= 1e-12, "rate {rate}");
        }
    }

    #[test]
    fn table_csv_leaves_first_rate_cells_empty() {
        let mut table = ConvergenceTable::new("dt", &["v", "w"]);
        table.push(0.5, vec![1.0, 2.0]);
        table.push(0.25, vec![0.5, 1.0]);
        let csv = table.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "dt,err_v,rate_v,err_w,rate_w");
        assert_eq!(lines.next().unwrap(), "0.5,1,,2,");
        assert_eq!(lines.next().unwrap(), "0.25,0.5,1,1,1");
    }

    #[test]
    #[should_panic(expected = "positive")]
    fn zero_errors_are_rejected_by_the_table() {
        let mut table = ConvergenceTable::new("h", &["v"]);
        table.push(0.5, vec![0.0]);
    }

    #[test]
    fn identical_runs_have_exactly_zero_gap() {
        let spec = tiny_spec("gamma_study", "[gamma]\nladder=5\nresolution=4\ndt=0.1\nt_end=0.2\n");
        let ens = mms_ensemble(4, &spec).unwrap();
        let config = SchemeConfig {
            dt: 0.1,
            t_end: 0.2,
            gamma: 5.0,
            coupled_grad_div: 5.0,
            mu: 1.0,
            s: 1.0,
            element_pair: ElementPair::TaylorHood,
        };
        let (_, hist_a) =
            run_with_mean_history(Algorithm::Coupled, &config, &ens.problem, &ens.plan).unwrap();
        let (_, hist_b) =
            run_with_mean_history(Algorithm::Coupled, &config, &ens.problem, &ens.plan).unwrap();
        let rule = TriRule::degree5();
        let (gap_v, gap_w) = history_gap(0.1, &hist_a, &hist_b, &rule);
        assert_eq!(gap_v, 0.0, "identical runs must compare to exactly zero");
        assert_eq!(gap_w, 0.0);
    }

    #[test]
    fn gamma_gap_drops_roughly_tenfold_per_decade() {
        let spec = tiny_spec(
            "gamma_study",
            "[gamma]\nladder=10,100\nresolution=8\ndt=0.1\nt_end=0.3\n",
        );
        let study = run_gamma_study(&spec).unwrap();
        let errs = study.table.errors_for("v");
        let ratio = errs[0] / errs[1];
        assert!(
            (4.0..=25.0).contains(&ratio),
            "gap ratio per decade of gamma was {ratio}, errors {errs:?}"
        );
    }

    #[test]
    fn temporal_rates_are_near_first_order() {
        let spec = tiny_spec(
            "temporal_study",
            "[temporal]\ndt_ladder=0.25,0.125\nresolution=16\ngamma=500\nt_end=0.5\n",
        );
        let study = run_temporal_study(&spec).unwrap();
        for field in ["v", "w"] {
            let rates = study.table.rates_for(field);
            assert!(
                (0.4..=1.6).contains(&rates[0]),
                "temporal rate for {field} was {} (coarse smoke bracket)",
                rates[0]
            );
        }
    }

    #[test]
    fn spatial_rates_are_near_second_order_and_first_rung_magnitude_matches() {
        let spec = tiny_spec(
            "spatial_study",
            "[spatial]\nmesh_ladder=4,8\nsteps=8\ngamma=1000000\nt_end=0.001\n",
        );
        let study = run_spatial_study(&spec).unwrap();
        let rates = study.table.rates_for("v");
        assert!((1.6..=2.4).contains(&rates[0]), "spatial rate was {}", rates[0]);
        // Magnitude sanity on the coarsest rung (loose: mesh/sample draws differ).
        let first = study.table.errors_for("v")[0];
        assert!(
            (1.1422e-5..=1.1422e-3).contains(&first),
            "first-rung error {first} should be within one order of 1.1422e-4"
        );
    }
}
