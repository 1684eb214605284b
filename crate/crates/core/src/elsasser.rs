//! Elsässer variable transforms and the manufactured-solution family used by
//! the convergence studies.
//!
//! The Elsässer change of variables `v = u + sqrt(s) B`, `w = u - sqrt(s) B`
//! turns the coupled momentum/induction system into two Oseen-type problems;
//! forcings transform as `f1 = f + sqrt(s) curl g`, `f2 = f - sqrt(s) curl g`
//! with the 2D scalar-potential curl `curl g = (dg/dx2, -dg/dx1)`.
//!
//! The manufactured solution is divergence-free by construction and its
//! forcing is hand-differentiated; a high-order finite-difference oracle in
//! the tests checks every term of the closed forms.

use thiserror::Error;

use crate::space::FeFunction;

#[derive(Debug, Error)]
pub enum ElsasserError {
    #[error("coupling parameter must be positive, got {0}")]
    NonPositiveCoupling(f64),
}

/// The Lorentz-force coupling parameter `s > 0` with its precomputed root.
#[derive(Debug, Clone, Copy)]
pub struct CouplingParams {
    s: f64,
    sqrt_s: f64,
}

impl CouplingParams {
    pub fn new(s: f64) -> Result<Self, ElsasserError> {
        if !(s > 0.0) {
            return Err(ElsasserError::NonPositiveCoupling(s));
        }
        Ok(CouplingParams { s, sqrt_s: s.sqrt() })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn sqrt_s(&self) -> f64 {
        self.sqrt_s
    }
}

/// Pointwise transform to Elsässer variables: `(u, B) -> (v, w)`.
#[inline]
pub fn elsasser_pair(u: [f64; 2], b: [f64; 2], sqrt_s: f64) -> ([f64; 2], [f64; 2]) {
    (
        [u[0] + sqrt_s * b[0], u[1] + sqrt_s * b[1]],
        [u[0] - sqrt_s * b[0], u[1] - sqrt_s * b[1]],
    )
}

/// Pointwise inverse transform: `(v, w) -> (u, B)`.
#[inline]
pub fn primitive_pair(v: [f64; 2], w: [f64; 2], sqrt_s: f64) -> ([f64; 2], [f64; 2]) {
    (
        [0.5 * (v[0] + w[0]), 0.5 * (v[1] + w[1])],
        [
            (v[0] - w[0]) / (2.0 * sqrt_s),
            (v[1] - w[1]) / (2.0 * sqrt_s),
        ],
    )
}

/// Field-level transform to Elsässer variables.
pub fn to_elsasser(
    u: &FeFunction,
    b: &FeFunction,
    coupling: &CouplingParams,
) -> (FeFunction, FeFunction) {
    assert!(u.space().same_space(b.space()));
    let mut v = u.clone();
    v.axpy(coupling.sqrt_s(), b);
    let mut w = u.clone();
    w.axpy(-coupling.sqrt_s(), b);
    (v, w)
}

/// Field-level inverse transform.
pub fn from_elsasser(
    v: &FeFunction,
    w: &FeFunction,
    coupling: &CouplingParams,
) -> (FeFunction, FeFunction) {
    assert!(v.space().same_space(w.space()));
    let mut u = v.clone();
    u.axpy(1.0, w);
    u.scale(0.5);
    let mut b = v.clone();
    b.axpy(-1.0, w);
    b.scale(0.5 / coupling.sqrt_s());
    (u, b)
}

/// Transforms body forcings `(f, g)` (momentum force and scalar current
/// potential) into the pair `(f1, f2)` driving the two Elsässer equations.
/// 2D curl convention: `curl g = (dg/dx2, -dg/dx1)`, so `grad_g` supplies the
/// gradient of `g`.
pub fn forcing_transform<F, G>(
    f: F,
    grad_g: G,
    coupling: &CouplingParams,
) -> (
    impl Fn([f64; 2]) -> [f64; 2],
    impl Fn([f64; 2]) -> [f64; 2],
)
where
    F: Fn([f64; 2]) -> [f64; 2] + Clone,
    G: Fn([f64; 2]) -> [f64; 2] + Clone,
{
    let sq = coupling.sqrt_s();
    let f2 = f.clone();
    let g2 = grad_g.clone();
    (
        move |x| {
            let fv = f(x);
            let gg = grad_g(x);
            [fv[0] + sq * gg[1], fv[1] - sq * gg[0]]
        },
        move |x| {
            let fv = f2(x);
            let gg = g2(x);
            [fv[0] - sq * gg[1], fv[1] + sq * gg[0]]
        },
    )
}

/// One realization of the manufactured solution: the smooth base pair scaled
/// by `factor = 1 + k_j eps`, with constant viscosities `(nu, nu_m)`.
///
/// Base fields (`a(t) = 1 + exp(t)`):
/// `v = (cos x2 + a sin x2, sin x1 + a cos x1)`,
/// `w = (cos x2 - a sin x2, sin x1 - a cos x1)`,
/// `q = a sin(x1 + x2)`, `r = 0`; both velocities are divergence-free and
/// satisfy `laplacian v = -v`, `laplacian w = -w`.
#[derive(Debug, Clone, Copy)]
pub struct MmsRealization {
    pub factor: f64,
    pub nu: f64,
    pub nu_m: f64,
}

fn a_of_t(t: f64) -> f64 {
    1.0 + t.exp()
}

impl MmsRealization {
    pub fn v(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let a = a_of_t(t);
        [
            self.factor * (x[1].cos() + a * x[1].sin()),
            self.factor * (x[0].sin() + a * x[0].cos()),
        ]
    }

    pub fn w(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let a = a_of_t(t);
        [
            self.factor * (x[1].cos() - a * x[1].sin()),
            self.factor * (x[0].sin() - a * x[0].cos()),
        ]
    }

    pub fn q(&self, t: f64, x: [f64; 2]) -> f64 {
        self.factor * a_of_t(t) * (x[0] + x[1]).sin()
    }

    pub fn r(&self, _t: f64, _x: [f64; 2]) -> f64 {
        0.0
    }

    /// `out[c][d] = d v_c / d x_d`.
    pub fn v_grad(&self, t: f64, x: [f64; 2]) -> [[f64; 2]; 2] {
        let a = a_of_t(t);
        [
            [0.0, self.factor * (-x[1].sin() + a * x[1].cos())],
            [self.factor * (x[0].cos() - a * x[0].sin()), 0.0],
        ]
    }

    pub fn w_grad(&self, t: f64, x: [f64; 2]) -> [[f64; 2]; 2] {
        let a = a_of_t(t);
        [
            [0.0, self.factor * (-x[1].sin() - a * x[1].cos())],
            [self.factor * (x[0].cos() + a * x[0].sin()), 0.0],
        ]
    }

    /// Forcing of the first Elsässer equation:
    /// `f1 = v_t + (w . grad) v - (nu+nu_m)/2 lap v - (nu-nu_m)/2 lap w + grad q`.
    pub fn f1(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let et = t.exp();
        let c = self.factor;
        let v = self.v(t, x);
        let w = self.w(t, x);
        let gv = self.v_grad(t, x);
        let a = a_of_t(t);
        let grad_q = [
            c * a * (x[0] + x[1]).cos(),
            c * a * (x[0] + x[1]).cos(),
        ];
        let vis_plus = 0.5 * (self.nu + self.nu_m);
        let vis_minus = 0.5 * (self.nu - self.nu_m);
        [
            c * et * x[1].sin() + (w[0] * gv[0][0] + w[1] * gv[0][1]) + vis_plus * v[0]
                + vis_minus * w[0]
                + grad_q[0],
            c * et * x[0].cos() + (w[0] * gv[1][0] + w[1] * gv[1][1]) + vis_plus * v[1]
                + vis_minus * w[1]
                + grad_q[1],
        ]
    }

    /// Forcing of the second Elsässer equation:
    /// `f2 = w_t + (v . grad) w - (nu+nu_m)/2 lap w - (nu-nu_m)/2 lap v + grad r`.
    pub fn f2(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let et = t.exp();
        let c = self.factor;
        let v = self.v(t, x);
        let w = self.w(t, x);
        let gw = self.w_grad(t, x);
        let vis_plus = 0.5 * (self.nu + self.nu_m);
        let vis_minus = 0.5 * (self.nu - self.nu_m);
        [
            -c * et * x[1].sin() + (v[0] * gw[0][0] + v[1] * gw[0][1]) + vis_plus * w[0]
                + vis_minus * v[0],
            -c * et * x[0].cos() + (v[0] * gw[1][0] + v[1] * gw[1][1]) + vis_plus * w[1]
                + vis_minus * v[1],
        ]
    }
}
