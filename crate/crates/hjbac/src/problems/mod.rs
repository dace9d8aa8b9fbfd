//! Stopped control problems on a ball.
//!
//! Each problem supplies the coefficients of the PDE
//! `1/2 Tr(sigma sigma^T Hess V) + b . grad V + f - gamma V = 0` on
//! `B_R` with `V = g` on the sphere, together with a known exact solution
//! `(V*, u*)` used for validation. All four built-in problems have diagonal
//! diffusion, so `sigma` is exposed as its diagonal.
//!
//! Every coefficient has a plain and a tape version that perform identical
//! arithmetic, allowing a simulated trajectory to be retraced on a tape.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{NodeId, Tape};
use crate::networks::ControlHead;

mod eikonal;
mod lqr;
mod nonconstant_lqr;
mod van_der_pol;

pub use eikonal::{make_eikonal, Eikonal};
pub use lqr::{lqr_gain, make_lqr, Lqr};
pub use nonconstant_lqr::{make_nonconstant_lqr, NonconstantLqr};
pub use van_der_pol::{make_van_der_pol, VanDerPol};

/// The open ball `{ |x| < R }`.
#[derive(Clone, Copy, Debug)]
pub struct BallDomain {
    pub radius: f64,
}

impl BallDomain {
    pub fn new(radius: f64) -> Self {
        assert!(radius > 0.0, "ball radius must be positive");
        BallDomain { radius }
    }

    /// Positive inside, zero on the sphere, negative outside.
    pub fn signed_dist(&self, x: &[f64]) -> f64 {
        self.radius - norm(x)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.signed_dist(x) > 0.0
    }

    /// Uniform draw from the ball: isotropic direction, radius `R * U^(1/d)`.
    pub fn sample_interior(&self, dim: usize, rng: &mut impl Rng) -> Vec<f64> {
        let mut x = gaussian_direction(dim, rng);
        let u: f64 = rng.gen();
        let r = self.radius * u.powf(1.0 / dim as f64);
        for v in &mut x {
            *v *= r;
        }
        x
    }

    /// Uniform draw from the sphere `|x| = R`.
    pub fn sample_boundary(&self, dim: usize, rng: &mut impl Rng) -> Vec<f64> {
        let mut x = gaussian_direction(dim, rng);
        for v in &mut x {
            *v *= self.radius;
        }
        x
    }
}

fn gaussian_direction(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&x);
        if n > 1e-12 {
            return x.iter().map(|v| v / n).collect();
        }
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for v in x {
        acc += v * v;
    }
    acc.sqrt()
}

/// Coefficients and exact solution of one stopped control problem.
///
/// `*_tape` methods must match their plain counterparts bitwise.
pub trait Problem: Send + Sync {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn gamma(&self) -> f64;
    fn domain(&self) -> BallDomain;
    /// Upper bound on the operator norm of `sigma`, used by the adaptive
    /// step rule and asserted against observed values during simulation.
    fn sigma_bound(&self) -> f64;
    fn control_head(&self) -> ControlHead;

    fn drift(&self, x: &[f64], u: &[f64], out: &mut [f64]);
    fn sigma_diag(&self, x: &[f64], u: &[f64], out: &mut [f64]);
    fn running_cost(&self, x: &[f64], u: &[f64]) -> f64;
    fn boundary_cost(&self, x: &[f64]) -> f64;

    fn drift_tape(&self, t: &mut Tape, x: NodeId, u: NodeId) -> NodeId;
    fn sigma_diag_tape(&self, t: &mut Tape, x: NodeId, u: NodeId) -> NodeId;
    fn running_cost_tape(&self, t: &mut Tape, x: NodeId, u: NodeId) -> NodeId;
    fn boundary_cost_tape(&self, t: &mut Tape, x: NodeId) -> NodeId;

    fn exact_value(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    /// Writes `u*(x)` into `out` and returns true when available.
    fn exact_control(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// Finite-difference step of the residual oracle.
pub const RESIDUAL_FD_STEP: f64 = 1e-4;

/// HJB residual `1/2 Tr(sigma sigma^T Hess V) + b . grad V + f - gamma V`
/// at `x`, with grad and Hessian of the black-box `value` taken by central
/// differences. Independent of the tape; used to validate exact solutions
/// and trained networks. `x` must keep the whole stencil inside the ball.
pub fn pde_residual(
    problem: &dyn Problem,
    value: &dyn Fn(&[f64]) -> f64,
    control: &dyn Fn(&[f64], &mut [f64]),
    x: &[f64],
) -> f64 {
    pde_residual_with_step(problem, value, control, x, RESIDUAL_FD_STEP)
}

pub fn pde_residual_with_step(
    problem: &dyn Problem,
    value: &dyn Fn(&[f64]) -> f64,
    control: &dyn Fn(&[f64], &mut [f64]),
    x: &[f64],
    step: f64,
) -> f64 {
    let d = problem.dim();
    assert_eq!(x.len(), d, "point dimension mismatch");
    assert!(
        problem.domain().signed_dist(x) > step,
        "residual stencil crosses the boundary"
    );
    let mut u = vec![0.0; problem.control_dim()];
    control(x, &mut u);

    let v0 = value(x);
    let mut grad = vec![0.0; d];
    let mut hess_diag = vec![0.0; d];
    let mut xp = x.to_vec();
    for i in 0..d {
        let xi = x[i];
        xp[i] = xi + step;
        let vp = value(&xp);
        xp[i] = xi - step;
        let vm = value(&xp);
        xp[i] = xi;
        grad[i] = (vp - vm) / (2.0 * step);
        hess_diag[i] = (vp - 2.0 * v0 + vm) / (step * step);
    }

    let mut b = vec![0.0; d];
    problem.drift(x, &u, &mut b);
    let mut sd = vec![0.0; d];
    problem.sigma_diag(x, &u, &mut sd);

    let mut acc = 0.0;
    for i in 0..d {
        acc += 0.5 * sd[i] * sd[i] * hess_diag[i];
        acc += b[i] * grad[i];
    }
    acc + problem.running_cost(x, &u) - problem.gamma() * v0
}

/// Builds the named problem with its conventional constants; used by the
/// CLI and tests. `lqr`/`vdp`/`nclqr` take p = q = beta = gamma = R = 1
/// (a = 1, eps = 0.1 for vdp; eps = 0.1 for nclqr); `eikonal` takes
/// a2 = 1.2, a3 = 0.2, R = 1.
pub fn standard_problem(name: &str, dim: usize) -> Option<Box<dyn Problem>> {
    match name {
        "lqr" => Some(Box::new(make_lqr(dim, 1.0, 1.0, 1.0, 1.0, 1.0))),
        "vdp" => Some(Box::new(make_van_der_pol(dim, 1.0, 0.1, 1.0, 1.0, 1.0))),
        "eikonal" => Some(Box::new(make_eikonal(dim, 1.2, 0.2, 1.0))),
        "nclqr" => Some(Box::new(make_nonconstant_lqr(
            dim, 1.0, 1.0, 1.0, 1.0, 0.1,
        ))),
        _ => None,
    }
}
