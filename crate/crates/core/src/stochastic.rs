//! Random-parameter modeling and sparse-grid stochastic collocation.
//!
//! Three parameter models are supported: i.i.d. uniform constant viscosity
//! pairs (the manufactured-solution and channel setups), the deterministic
//! perturbation family `1 + k_j eps` applied to boundary/initial data, and a
//! truncated Karhunen-Loève random field for spatially varying viscosity and
//! magnetic diffusivity (the cavity setup).  Collocation nodes come from
//! nested Clenshaw-Curtis rules combined into Smolyak sparse grids; weights
//! are normalized against the uniform density, so expectation is a plain
//! weighted sum.  Smolyak weights can be negative — nothing here assumes
//! positivity.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::assemble::QuadGrid;
use crate::mesh::TriMesh;
use crate::quadrature::TriRule;

#[derive(Debug, Error)]
pub enum StochasticError {
    #[error("viscosity bounds must be positive and ordered, got ({0}, {1})")]
    BadBounds(f64, f64),
    #[error("coefficient field is non-positive for realization {realization} (min {min:.3e})")]
    NonPositiveField { realization: usize, min: f64 },
}

/// One-dimensional quadrature rule on [-1, 1]; weights sum to 2.
#[derive(Debug, Clone)]
pub struct Rule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Canonical node value `cos(pi k / n)`, computed from the reduced fraction
/// so the same abstract node is bit-identical across nesting levels, with
/// exact symmetry about zero.
fn cc_node(k: usize, n: usize) -> f64 {
    let g = gcd(k, n);
    let (k, n) = (k / g, n / g);
    if 2 * k == n {
        0.0
    } else if 2 * k > n {
        -((std::f64::consts::PI * (n - k) as f64 / n as f64).cos())
    } else {
        (std::f64::consts::PI * k as f64 / n as f64).cos()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

/// Nested Clenshaw-Curtis rule: 1 point at level 0, `2^level + 1` points
/// after; nodes `cos(pi k/(m-1))` in descending order.
pub fn clenshaw_curtis(level: usize) -> Rule1D {
    if level == 0 {
        return Rule1D { nodes: vec![0.0], weights: vec![2.0] };
    }
    let n = 1usize << level; // m - 1, even
    let m = n + 1;
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for k in 0..=n {
        nodes.push(cc_node(k, n));
        let ck = if k == 0 || k == n { 0.5 } else { 1.0 };
        let mut sum = 0.0;
        for j in 1..=n / 2 {
            let bj = if j == n / 2 { 1.0 } else { 2.0 };
            sum += bj / ((4 * j * j - 1) as f64)
                * (2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64).cos();
        }
        weights.push(2.0 * ck / n as f64 * (1.0 - sum));
    }
    Rule1D { nodes, weights }
}

/// A multi-dimensional collocation grid with probability weights (sum 1).
#[derive(Debug, Clone)]
pub struct SparseGrid {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Smolyak combination of nested Clenshaw-Curtis rules in `dim` dimensions.
/// Duplicate points across the combination are merged with summed weights,
/// then weights are normalized by the measure `2^dim` of `[-1,1]^dim` so they
/// integrate against the uniform density.
pub fn smolyak(dim: usize, level: usize) -> SparseGrid {
    assert!(dim >= 1);
    let q = dim + level;
    let lo = dim.max(q - dim + 1);
    // key: per-dimension reduced fraction (k, n) of cos(pi k/n)
    use std::collections::BTreeMap;
    let mut acc: BTreeMap<Vec<(usize, usize)>, f64> = BTreeMap::new();

    let mut index = vec![1usize; dim];
    for total in lo..=q {
        let coef = neg_one_pow(q - total) * binomial(dim - 1, q - total);
        enumerate_compositions(total, dim, 0, &mut index, &mut |idx| {
            // tensor product of CC rules at levels idx[k] - 1
            let rules: Vec<Rule1D> = idx.iter().map(|&i| clenshaw_curtis(i - 1)).collect();
            let mut cursor = vec![0usize; dim];
            loop {
                let mut key = Vec::with_capacity(dim);
                let mut w = coef;
                for d in 0..dim {
                    let lvl = idx[d] - 1;
                    let n = if lvl == 0 { 2 } else { 1usize << lvl };
                    let k = if lvl == 0 { 1 } else { cursor[d] };
                    let g = gcd(k, n);
                    key.push((k / g, n / g));
                    w *= rules[d].weights[cursor[d]];
                }
                *acc.entry(key).or_insert(0.0) += w;
                // advance the mixed-radix cursor
                let mut d = 0;
                loop {
                    cursor[d] += 1;
                    if cursor[d] < rules[d].nodes.len() {
                        break;
                    }
                    cursor[d] = 0;
                    d += 1;
                    if d == dim {
                        return;
                    }
                }
            }
        });
    }

    let norm = 2.0_f64.powi(dim as i32);
    let mut rows: Vec<(Vec<f64>, f64)> = acc
        .into_iter()
        .map(|(key, w)| {
            let p: Vec<f64> = key.iter().map(|&(k, n)| cc_node(k, n)).collect();
            (p, w / norm)
        })
        .collect();
    rows.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let (points, weights) = rows.into_iter().unzip();
    SparseGrid { points, weights }
}

fn neg_one_pow(p: usize) -> f64 {
    if p % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut r = 1.0;
    for i in 0..k.min(n - k) {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// Calls `f` for every composition of `total` into `dim` parts >= 1.
fn enumerate_compositions(
    total: usize,
    dim: usize,
    pos: usize,
    index: &mut Vec<usize>,
    f: &mut impl FnMut(&[usize]),
) {
    if pos == dim - 1 {
        let used: usize = index[..pos].iter().sum();
        if total >= used + 1 {
            index[pos] = total - used;
            f(index);
        }
        return;
    }
    let used: usize = index[..pos].iter().sum();
    let remaining = total - used;
    // leave at least 1 for each later dimension
    for i in 1..=remaining.saturating_sub(dim - pos - 1) {
        index[pos] = i;
        enumerate_compositions(total, dim, pos + 1, index, f);
    }
}

/// Data perturbation factors `1 + k_j eps` with
/// `k_j = (-1)^(j+1) 4 ceil(j/2) / n`, `j = 1..n`.
pub fn perturbation_factors(n: usize, eps: f64) -> Vec<f64> {
    (1..=n)
        .map(|j| {
            let k = neg_one_pow(j + 1) * 4.0 * j.div_ceil(2) as f64 / n as f64;
            1.0 + k * eps
        })
        .collect()
}

/// Truncated Karhunen-Loève expansion of the common scalar field behind the
/// random viscosity and magnetic diffusivity.
#[derive(Debug, Clone)]
pub struct KlField {
    /// Mean offset `c` (> 0).
    pub c: f64,
    /// Correlation length `l`.
    pub corr_len: f64,
    /// Truncation order `q`; the parameter dimension is `2q + 1`.
    pub q: usize,
}

impl KlField {
    pub fn dim(&self) -> usize {
        2 * self.q + 1
    }

    /// Square root of the `j`-th eigenvalue (`j >= 1`).
    pub fn sqrt_eigenvalue(&self, j: usize) -> f64 {
        let l = self.corr_len;
        (std::f64::consts::PI.sqrt() * l).sqrt()
            * (-(j as f64 * std::f64::consts::PI * l).powi(2) / 8.0).exp()
    }

    /// The field `psi(x, y)` for a parameter vector `y` of length `2q + 1`.
    pub fn eval(&self, y: &[f64], x: [f64; 2]) -> f64 {
        assert_eq!(y.len(), self.dim());
        let half_pi = std::f64::consts::PI / 2.0;
        let mut psi = self.c
            + (std::f64::consts::PI.sqrt() * self.corr_len / 2.0).sqrt() * y[0];
        for j in 1..=self.q {
            let sj = self.sqrt_eigenvalue(j);
            let (a1, a2) = (j as f64 * half_pi * x[0], j as f64 * half_pi * x[1]);
            psi += sj * (a1.sin() * a2.sin() * y[2 * j - 1] + a1.cos() * a2.cos() * y[2 * j]);
        }
        psi
    }
}

/// Viscosity model of one realization, evaluable anywhere in the domain.
#[derive(Debug, Clone)]
pub enum ViscosityModel {
    /// Spatially constant pair.
    Constant { nu: f64, nu_m: f64 },
    /// Karhunen-Loève field at a fixed parameter point:
    /// `nu = nu_scale * psi(x, y)`, `nu_m = nu_m_scale * psi(x, y)`.
    Kl {
        field: Arc<KlField>,
        y: Vec<f64>,
        nu_scale: f64,
        nu_m_scale: f64,
    },
}

impl ViscosityModel {
    pub fn nu(&self, x: [f64; 2]) -> f64 {
        match self {
            ViscosityModel::Constant { nu, .. } => *nu,
            ViscosityModel::Kl { field, y, nu_scale, .. } => nu_scale * field.eval(y, x),
        }
    }

    pub fn nu_m(&self, x: [f64; 2]) -> f64 {
        match self {
            ViscosityModel::Constant { nu_m, .. } => *nu_m,
            ViscosityModel::Kl { field, y, nu_m_scale, .. } => nu_m_scale * field.eval(y, x),
        }
    }
}

/// A full sampling plan: collocation/ensemble points, expectation weights,
/// per-realization viscosity models, and the data perturbation factors.
#[derive(Debug, Clone)]
pub struct StochasticPlan {
    /// Expectation weights, summing to 1 (may be negative for sparse grids).
    pub weights: Vec<f64>,
    /// Parameter coordinates of each realization (for audit output).
    pub points: Vec<Vec<f64>>,
    /// Viscosity model per realization.
    pub samples: Vec<ViscosityModel>,
    /// Boundary/initial/forcing data multipliers `1 + k_j eps`.
    pub data_factors: Vec<f64>,
    /// Seed used for any random draws (0 when none).
    pub seed: u64,
}

impl StochasticPlan {
    pub fn n_realizations(&self) -> usize {
        self.samples.len()
    }

    /// Equal-weight ensemble with constant viscosity pairs drawn i.i.d.
    /// uniformly from `(lo, hi)` boxes — the manufactured-solution and
    /// channel parameter model.
    pub fn uniform_constants(
        n_sc: usize,
        eps: f64,
        nu_bounds: (f64, f64),
        nu_m_bounds: (f64, f64),
        seed: u64,
    ) -> Result<Self, StochasticError> {
        for &(lo, hi) in [&nu_bounds, &nu_m_bounds] {
            if !(lo > 0.0 && hi > lo) {
                return Err(StochasticError::BadBounds(lo, hi));
            }
        }
        assert!(n_sc >= 1);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(n_sc);
        let mut samples = Vec::with_capacity(n_sc);
        for _ in 0..n_sc {
            let nu = rng.random_range(nu_bounds.0..nu_bounds.1);
            let nu_m = rng.random_range(nu_m_bounds.0..nu_m_bounds.1);
            points.push(vec![nu, nu_m]);
            samples.push(ViscosityModel::Constant { nu, nu_m });
        }
        Ok(StochasticPlan {
            weights: vec![1.0 / n_sc as f64; n_sc],
            points,
            samples,
            data_factors: perturbation_factors(n_sc, eps),
            seed,
        })
    }

    /// Single deterministic realization (no perturbation).
    pub fn constant_single(nu: f64, nu_m: f64) -> Self {
        StochasticPlan {
            weights: vec![1.0],
            points: vec![vec![nu, nu_m]],
            samples: vec![ViscosityModel::Constant { nu, nu_m }],
            data_factors: vec![1.0],
            seed: 0,
        }
    }

    /// Sparse-grid collocation of the Karhunen-Loève viscosity model: nodes
    /// on `[-sqrt(3), sqrt(3)]^(2q+1)` (zero mean, unit variance), Smolyak
    /// weights, and the usual `1 + k_j eps` data factors — the cavity setup.
    pub fn kl_collocation(
        level: usize,
        field: KlField,
        nu_scale: f64,
        nu_m_scale: f64,
        eps: f64,
    ) -> Self {
        let dim = field.dim();
        let grid = smolyak(dim, level);
        let field = Arc::new(field);
        let scale = 3.0_f64.sqrt();
        let points: Vec<Vec<f64>> = grid
            .points
            .iter()
            .map(|p| p.iter().map(|v| scale * v).collect())
            .collect();
        let samples = points
            .iter()
            .map(|y| ViscosityModel::Kl {
                field: field.clone(),
                y: y.clone(),
                nu_scale,
                nu_m_scale,
            })
            .collect();
        let n = grid.points.len();
        StochasticPlan {
            weights: grid.weights,
            points,
            samples,
            data_factors: perturbation_factors(n, eps),
            seed: 0,
        }
    }

    /// Plain-text audit table: one row per realization with its weight, data
    /// factor, and parameter coordinates.
    pub fn audit_table(&self) -> String {
        let mut out = String::from("# j  weight  data_factor  coordinates...\n");
        for j in 0..self.n_realizations() {
            out.push_str(&format!("{}  {:.16e}  {:.16e}", j + 1, self.weights[j], self.data_factors[j]));
            for c in &self.points[j] {
                out.push_str(&format!("  {c:.16e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Expectation of a per-realization quantity under the plan's weights.
pub fn qoi_expectation(values: &[f64], plan: &StochasticPlan) -> f64 {
    assert_eq!(values.len(), plan.n_realizations());
    values.iter().zip(&plan.weights).map(|(v, w)| v * w).sum()
}

/// Viscosity statistics materialized at the quadrature points of a mesh:
/// everything the schemes' bilinear forms and stability margins need.
#[derive(Debug)]
pub struct EnsembleCoefficients {
    /// `(nu_bar + nu_m_bar)/2` — the implicit diffusion coefficient.
    pub implicit_half: QuadGrid,
    /// `(nu_j - nu_m_j)/2` per realization — the explicit cross-field term.
    pub cross_half: Vec<QuadGrid>,
    /// `(nu'_j + nu_m'_j)/2` per realization — the explicit fluctuation term.
    pub fluct_half: Vec<QuadGrid>,
    /// Stability margin per realization:
    /// `min(nu_bar) + min(nu_m_bar) - max|nu_j - nu_m_j| - max|nu'_j + nu_m'_j|`.
    pub alpha: Vec<f64>,
    pub nu_bar_min: f64,
    pub nu_m_bar_min: f64,
}

impl EnsembleCoefficients {
    /// Evaluates all realizations' viscosities at the quadrature points and
    /// forms the equal-weight mean, fluctuations, and stability margins.
    /// Sup-norms are maxima over the quadrature point set.
    pub fn materialize(
        plan: &StochasticPlan,
        mesh: &TriMesh,
        rule: &TriRule,
    ) -> Result<Self, StochasticError> {
        let n = plan.n_realizations();
        let nelems = mesh.n_triangles();
        let mut nu: Vec<QuadGrid> = Vec::with_capacity(n);
        let mut nu_m: Vec<QuadGrid> = Vec::with_capacity(n);
        for (j, sample) in plan.samples.iter().enumerate() {
            let gn = QuadGrid::from_fn(mesh, rule, |x| sample.nu(x));
            let gm = QuadGrid::from_fn(mesh, rule, |x| sample.nu_m(x));
            let min = gn.min().min(gm.min());
            if min <= 0.0 {
                return Err(StochasticError::NonPositiveField { realization: j, min });
            }
            nu.push(gn);
            nu_m.push(gm);
        }

        // Equal-weight means (the schemes' stabilization statistics average
        // with 1/N regardless of the collocation weights).
        let mut nu_bar = QuadGrid::constant(nelems, rule, 0.0);
        let mut nu_m_bar = QuadGrid::constant(nelems, rule, 0.0);
        for j in 0..n {
            nu_bar.add_scaled(1.0 / n as f64, &nu[j]);
            nu_m_bar.add_scaled(1.0 / n as f64, &nu_m[j]);
        }
        let (nu_bar_min, nu_m_bar_min) = (nu_bar.min(), nu_m_bar.min());

        let mut implicit_half = QuadGrid::constant(nelems, rule, 0.0);
        implicit_half.add_scaled(0.5, &nu_bar);
        implicit_half.add_scaled(0.5, &nu_m_bar);

        let mut cross_half = Vec::with_capacity(n);
        let mut fluct_half = Vec::with_capacity(n);
        let mut alpha = Vec::with_capacity(n);
        for j in 0..n {
            let mut cross = nu[j].clone();
            cross.add_scaled(-1.0, &nu_m[j]);
            let cross_sup = cross.max_abs();
            cross.scale(0.5);

            let mut fluct = nu[j].clone();
            fluct.add_scaled(-1.0, &nu_bar);
            fluct.add_scaled(1.0, &nu_m[j]);
            fluct.add_scaled(-1.0, &nu_m_bar);
            let fluct_sup = fluct.max_abs();
            fluct.scale(0.5);

            alpha.push(nu_bar_min + nu_m_bar_min - cross_sup - fluct_sup);
            cross_half.push(cross);
            fluct_half.push(fluct);
        }

        Ok(EnsembleCoefficients {
            implicit_half,
            cross_half,
            fluct_half,
            alpha,
            nu_bar_min,
            nu_m_bar_min,
        })
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriMesh;
    use approx::assert_relative_eq;

    /// Integral of y^p over [-1,1].
    fn monomial_integral(p: u32) -> f64 {
        if p % 2 == 1 {
            0.0
        } else {
            2.0 / (p as f64 + 1.0)
        }
    }

    #[test]
    fn clenshaw_curtis_known_levels() {
        let r0 = clenshaw_curtis(0);
        assert_eq!(r0.nodes, vec![0.0]);
        assert_eq!(r0.weights, vec![2.0]);

        let r1 = clenshaw_curtis(1);
        assert_eq!(r1.nodes, vec![1.0, 0.0, -1.0]);
        for (w, expect) in r1.weights.iter().zip([1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0]) {
            assert_relative_eq!(w, &expect, epsilon = 1e-14);
        }

        let r2 = clenshaw_curtis(2);
        let s = 0.5 * 2.0_f64.sqrt();
        let expect = [1.0, s, 0.0, -s, -1.0];
        for (n, e) in r2.nodes.iter().zip(expect) {
            assert_relative_eq!(n, &e, epsilon = 1e-15);
        }
    }

    #[test]
    fn clenshaw_curtis_monomial_exactness_and_nesting() {
        for level in 0..=5 {
            let rule = clenshaw_curtis(level);
            let m = rule.nodes.len();
            assert_relative_eq!(rule.weights.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            for p in 0..m as u32 {
                let quad: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(x, w)| w * x.powi(p as i32))
                    .sum();
                assert_relative_eq!(quad, monomial_integral(p), epsilon = 1e-12);
            }
            if level > 0 {
                let coarse = clenshaw_curtis(level - 1);
                for x in &coarse.nodes {
                    assert!(rule.nodes.contains(x), "level {level} must nest {x}");
                }
            }
        }
    }

    #[test]
    fn smolyak_level1_5d_matches_hand_construction() {
        let grid = smolyak(5, 1);
        assert_eq!(grid.points.len(), 11);
        assert_relative_eq!(grid.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        // Center point: weight -2/3; the ten +-1 points: 1/6 each.
        for (p, w) in grid.points.iter().zip(&grid.weights) {
            let nonzero = p.iter().filter(|v| **v != 0.0).count();
            if nonzero == 0 {
                assert_relative_eq!(w, &(-2.0 / 3.0), epsilon = 1e-13);
            } else {
                assert_eq!(nonzero, 1);
                assert_relative_eq!(w, &(1.0 / 6.0), epsilon = 1e-13);
            }
        }
        // Exact for sum of squares: E[sum y_i^2] = 5/3 on [-1,1]^5.
        let quad: f64 = grid
            .points
            .iter()
            .zip(&grid.weights)
            .map(|(p, w)| w * p.iter().map(|y| y * y).sum::<f64>())
            .sum();
        assert_relative_eq!(quad, 5.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn smolyak_univariate_reduces_to_clenshaw_curtis() {
        for level in 0..=3 {
            let grid = smolyak(1, level);
            let cc = clenshaw_curtis(level);
            let mut pairs: Vec<(f64, f64)> = cc
                .nodes
                .iter()
                .zip(&cc.weights)
                .map(|(n, w)| (*n, w / 2.0))
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert_eq!(grid.points.len(), pairs.len());
            for (j, (node, weight)) in pairs.into_iter().enumerate() {
                assert_eq!(grid.points[j][0], node);
                assert_relative_eq!(grid.weights[j], weight, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn smolyak_total_degree_exactness() {
        // Level-L CC-Smolyak integrates total degree <= 2L+1 exactly.
        for (dim, level) in [(2, 1), (2, 2), (3, 1)] {
            let grid = smolyak(dim, level);
            let max_deg = 2 * level + 1;
            let mut exps = vec![0u32; dim];
            check_monomials(&grid, &mut exps, 0, max_deg as u32);
        }
    }

    fn check_monomials(grid: &SparseGrid, exps: &mut Vec<u32>, pos: usize, budget: u32) {
        if pos == exps.len() {
            let quad: f64 = grid
                .points
                .iter()
                .zip(&grid.weights)
                .map(|(p, w)| {
                    w * p
                        .iter()
                        .zip(exps.iter())
                        .map(|(y, e)| y.powi(*e as i32))
                        .product::<f64>()
                })
                .sum();
            // normalized (probability) moments: product of 1/(e+1) for even e
            let exact: f64 = exps
                .iter()
                .map(|e| {
                    if e % 2 == 1 {
                        0.0
                    } else {
                        1.0 / (*e as f64 + 1.0)
                    }
                })
                .product();
            assert_relative_eq!(quad, exact, epsilon = 1e-12);
            return;
        }
        for e in 0..=budget {
            exps[pos] = e;
            check_monomials(grid, exps, pos + 1, budget - e);
        }
    }

    #[test]
    fn perturbation_factor_sequence() {
        let f = perturbation_factors(20, 1.0);
        assert_relative_eq!(f[0], 1.2, epsilon = 1e-15);
        assert_relative_eq!(f[1], 0.8, epsilon = 1e-15);
        assert_relative_eq!(f[2], 1.4, epsilon = 1e-15);
        assert_relative_eq!(f[3], 0.6, epsilon = 1e-15);
        let single = perturbation_factors(1, 0.5);
        assert_relative_eq!(single[0], 3.0, epsilon = 1e-15); // k_1 = 4
        for f in perturbation_factors(7, 0.0) {
            assert_eq!(f, 1.0);
        }
    }

    #[test]
    fn kl_field_values() {
        let field = KlField { c: 1.0, corr_len: 0.01, q: 2 };
        assert_eq!(field.dim(), 5);
        // Direct evaluation of the eigenvalue formula at j=1.
        assert!((field.sqrt_eigenvalue(1) - 0.133107).abs() < 2e-5);
        // y = 0 leaves only the mean offset.
        let y = vec![0.0; 5];
        assert_relative_eq!(field.eval(&y, [0.3, -0.7]), 1.0, epsilon = 1e-15);
        let plan = StochasticPlan::kl_collocation(1, field, 2.0 / 15000.0, 0.01, 0.0);
        assert_eq!(plan.n_realizations(), 11);
        // Expectation of nu at any x is 2c/15000: the grid integrates the
        // linear-in-y field exactly and every fluctuation has zero mean.
        for x in [[0.0, 0.0], [0.5, -0.25], [-1.0, 1.0]] {
            let nus: Vec<f64> = plan.samples.iter().map(|s| s.nu(x)).collect();
            assert_relative_eq!(
                qoi_expectation(&nus, &plan),
                2.0 / 15000.0,
                epsilon = 1e-12
            );
            // Positivity over the sampled points.
            for s in &plan.samples {
                assert!(s.nu(x) > 0.0 && s.nu_m(x) > 0.0);
            }
        }
        // Second moment of y_1 under the scaled grid: unit variance.
        let y1_sq: Vec<f64> = plan.points.iter().map(|p| p[0] * p[0]).collect();
        assert_relative_eq!(qoi_expectation(&y1_sq, &plan), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_plan_draws_inside_bounds_and_seeds_reproduce() {
        let plan = StochasticPlan::uniform_constants(20, 0.01, (0.009, 0.011), (0.0009, 0.0011), 7)
            .unwrap();
        assert_eq!(plan.n_realizations(), 20);
        for s in &plan.samples {
            match s {
                ViscosityModel::Constant { nu, nu_m } => {
                    assert!(*nu > 0.009 && *nu < 0.011);
                    assert!(*nu_m > 0.0009 && *nu_m < 0.0011);
                }
                _ => panic!("expected constants"),
            }
        }
        let again =
            StochasticPlan::uniform_constants(20, 0.01, (0.009, 0.011), (0.0009, 0.0011), 7)
                .unwrap();
        assert_eq!(plan.points, again.points);
        assert!(StochasticPlan::uniform_constants(3, 0.0, (0.0, 1.0), (1.0, 2.0), 0).is_err());
    }

    #[test]
    fn ensemble_coefficients_and_stability_margin() {
        let mesh = TriMesh::unit_square(2);
        let rule = TriRule::degree5();
        // Identical constant pairs: fluctuations vanish and
        // alpha = nu + nu_m - |nu - nu_m|.
        let plan = StochasticPlan {
            weights: vec![0.5, 0.5],
            points: vec![vec![], vec![]],
            samples: vec![
                ViscosityModel::Constant { nu: 0.01, nu_m: 0.01 },
                ViscosityModel::Constant { nu: 0.01, nu_m: 0.01 },
            ],
            data_factors: vec![1.0, 1.0],
            seed: 0,
        };
        let coeffs = EnsembleCoefficients::materialize(&plan, &mesh, &rule).unwrap();
        for a in &coeffs.alpha {
            assert_relative_eq!(a, &0.02, epsilon = 1e-15);
        }
        assert_relative_eq!(coeffs.implicit_half.value(0, 0), 0.01, epsilon = 1e-15);
        for j in 0..2 {
            assert_relative_eq!(coeffs.cross_half[j].value(1, 2), 0.0, epsilon = 1e-15);
            assert_relative_eq!(coeffs.fluct_half[j].value(1, 2), 0.0, epsilon = 1e-15);
        }

        // Asymmetric pair: nu_1=0.002, nu_2=0.004 (nu_m = nu): alpha_j =
        // 2*0.003 - 0 - 2*0.001 = 0.004.
        let plan = StochasticPlan {
            weights: vec![0.5, 0.5],
            points: vec![vec![], vec![]],
            samples: vec![
                ViscosityModel::Constant { nu: 0.002, nu_m: 0.002 },
                ViscosityModel::Constant { nu: 0.004, nu_m: 0.004 },
            ],
            data_factors: vec![1.0, 1.0],
            seed: 0,
        };
        let coeffs = EnsembleCoefficients::materialize(&plan, &mesh, &rule).unwrap();
        for a in &coeffs.alpha {
            assert_relative_eq!(a, &0.004, epsilon = 1e-15);
        }
        assert_relative_eq!(coeffs.nu_bar_min, 0.003, epsilon = 1e-15);
    }

    #[test]
    fn expectation_is_weighted_sum() {
        let plan = StochasticPlan {
            weights: vec![0.5, 0.5],
            points: vec![vec![], vec![]],
            samples: vec![
                ViscosityModel::Constant { nu: 1.0, nu_m: 1.0 },
                ViscosityModel::Constant { nu: 1.0, nu_m: 1.0 },
            ],
            data_factors: vec![1.0, 1.0],
            seed: 0,
        };
        assert_relative_eq!(qoi_expectation(&[1.0, 3.0], &plan), 2.0, epsilon = 1e-15);
        assert_relative_eq!(qoi_expectation(&[5.0, 5.0], &plan), 5.0, epsilon = 1e-15);
    }

    #[test]
    fn audit_table_round_trips_visually() {
        let plan = StochasticPlan::constant_single(0.01, 0.02);
        let table = plan.audit_table();
        assert!(table.contains("weight"));
        assert!(table.lines().count() == 2);
    }
}
