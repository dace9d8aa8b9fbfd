//! Coupled stochastic Van der Pol oscillators.
//!
//! The state is `x = (y, z)` with `n = d/2` positions `y` and velocities
//! `z`. Dynamics: `dY_i = Z_i dt`, `dZ_i = ((1 - Y_i^2) Z_i - Y_i + u_i) dt
//! + sqrt(2) dW_i`. The target value function couples neighbouring
//! oscillators cyclically:
//!
//! `V*(x) = a|x|^2 - eps (sum_i y_{i-1} y_i + sum_i z_i z_{i+1})`
//!
//! with indices cyclic inside each block. The running cost is reverse
//! engineered so `V*` solves the PDE with optimal control
//! `u* = -w / (2q)` where `w = dV*/dz`:
//!
//! `f(x,u) = q|u|^2 + gamma V* + |w|^2/(4q) - 4na - z . dV*/dy - btilde . w`
//!
//! with `btilde_i = (1 - y_i^2) z_i - y_i` the uncontrolled `z`-drift.
//! Requires even `d >= 4` (one oscillator would make the cyclic sums
//! degenerate into squares and change the Laplacian).

use crate::autodiff::{NodeId, Tape};
use crate::networks::ControlHead;

use super::{BallDomain, Problem};

#[derive(Clone, Debug)]
pub struct VanDerPol {
    dim: usize,
    n: usize,
    a: f64,
    q: f64,
    gamma: f64,
    domain: BallDomain,
    sqrt2: f64,
    two_a: f64,
    neg_eps: f64,
    inv_4q: f64,
    neg_four_na: f64,
    two_q: f64,
}

pub fn make_van_der_pol(d: usize, a: f64, eps: f64, q: f64, gamma: f64, radius: f64) -> VanDerPol {
    assert!(d % 2 == 0 && d >= 4, "van der pol needs even dimension >= 4");
    assert!(a > 0.0 && q > 0.0, "a and q must be positive");
    assert!(gamma >= 0.0, "discount must be nonnegative");
    let n = d / 2;
    VanDerPol {
        dim: d,
        n,
        a,
        q,
        gamma,
        domain: BallDomain::new(radius),
        sqrt2: 2.0_f64.sqrt(),
        two_a: 2.0 * a,
        neg_eps: -eps,
        inv_4q: 1.0 / (4.0 * q),
        neg_four_na: -(4.0 * n as f64 * a),
        two_q: 2.0 * q,
    }
}

impl VanDerPol {
    fn vstar(&self, x: &[f64]) -> f64 {
        let n = self.n;
        let (y, z) = x.split_at(n);
        let mut sn = 0.0;
        for v in x {
            sn += v * v;
        }
        let av = sn * self.a;
        let mut ysum = 0.0;
        for j in 0..n {
            ysum += y[(j + n - 1) % n] * y[j];
        }
        let mut zsum = 0.0;
        for j in 0..n {
            zsum += z[j] * z[(j + 1) % n];
        }
        av + (ysum + zsum) * self.neg_eps
    }

    /// `dV*/dz`, the gradient block driving the optimal control.
    fn w_block(&self, z: &[f64], out: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            out[j] = z[j] * self.two_a + (z[(j + n - 1) % n] + z[(j + 1) % n]) * self.neg_eps;
        }
    }

    fn gy_block(&self, y: &[f64], out: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            out[j] = y[j] * self.two_a + (y[(j + n - 1) % n] + y[(j + 1) % n]) * self.neg_eps;
        }
    }

    fn vstar_tape(&self, t: &mut Tape, x: NodeId) -> NodeId {
        let n = self.n;
        let y = t.slice(x, 0, n);
        let z = t.slice(x, n, n);
        let sn = t.sq_norm(x);
        let av = t.scale(sn, self.a);
        let yprev = rot_prev(t, y, n);
        let dy = t.dot(yprev, y);
        let znext = rot_next(t, z, n);
        let dz = t.dot(z, znext);
        let cross = t.add(dy, dz);
        let ce = t.scale(cross, self.neg_eps);
        t.add(av, ce)
    }
}

fn rot_prev(t: &mut Tape, v: NodeId, n: usize) -> NodeId {
    let last = t.slice(v, n - 1, 1);
    let head = t.slice(v, 0, n - 1);
    t.concat(last, head)
}

fn rot_next(t: &mut Tape, v: NodeId, n: usize) -> NodeId {
    let tail = t.slice(v, 1, n - 1);
    let first = t.slice(v, 0, 1);
    t.concat(tail, first)
}

/// `w = 2a z - eps (z_prev + z_next)` on the tape, matching
/// [`VanDerPol::w_block`] bitwise.
fn neighbour_grad(t: &mut Tape, v: NodeId, n: usize, two_a: f64, neg_eps: f64) -> NodeId {
    let m = t.scale(v, two_a);
    let prev = rot_prev(t, v, n);
    let next = rot_next(t, v, n);
    let ss = t.add(prev, next);
    let e = t.scale(ss, neg_eps);
    t.add(m, e)
}

impl Problem for VanDerPol {
    fn name(&self) -> &'static str {
        "vdp"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn control_dim(&self) -> usize {
        self.n
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn domain(&self) -> BallDomain {
        self.domain
    }

    fn sigma_bound(&self) -> f64 {
        self.sqrt2
    }

    fn control_head(&self) -> ControlHead {
        ControlHead::Unconstrained
    }

    fn drift(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            out[i] = x[n + i];
        }
        for i in 0..n {
            let y = x[i];
            let z = x[n + i];
            let m1 = (y * y) * -1.0 + 1.0;
            let t3 = m1 * z - y;
            out[n + i] = t3 + u[i];
        }
    }

    fn sigma_diag(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.fill(self.sqrt2);
    }

    fn running_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let n = self.n;
        let (y, z) = x.split_at(n);
        let mut su = 0.0;
        for v in u {
            su += v * v;
        }
        let qn = su * self.q;
        let gv = self.vstar(x) * self.gamma;

        let mut w = vec![0.0; n];
        self.w_block(z, &mut w);
        let mut sw = 0.0;
        for v in &w {
            sw += v * v;
        }
        let wterm = sw * self.inv_4q;

        let mut gy = vec![0.0; n];
        self.gy_block(y, &mut gy);
        let mut zgy = 0.0;
        for j in 0..n {
            zgy += z[j] * gy[j];
        }

        let mut bw = 0.0;
        for j in 0..n {
            let m1 = (y[j] * y[j]) * -1.0 + 1.0;
            let bt = m1 * z[j] - y[j];
            bw += bt * w[j];
        }

        ((((qn + gv) + wterm) + self.neg_four_na) - zgy) - bw
    }

    fn boundary_cost(&self, x: &[f64]) -> f64 {
        self.vstar(x)
    }

    fn drift_tape(&self, t: &mut Tape, x: NodeId, u: NodeId) -> NodeId {
        let n = self.n;
        let y = t.slice(x, 0, n);
        let z = t.slice(x, n, n);
        let yy = t.mul(y, y);
        let ny = t.scale(yy, -1.0);
        let m1 = t.add_const(ny, 1.0);
        let t2 = t.mul(m1, z);
        let t3 = t.sub(t2, y);
        let t4 = t.add(t3, u);
        t.concat(z, t4)
    }

    fn sigma_diag_tape(&self, t: &mut Tape, _x: NodeId, _u: NodeId) -> NodeId {
        let v = vec![self.sqrt2; self.dim];
        t.constant(&v)
    }

    fn running_cost_tape(&self, t: &mut Tape, x: NodeId, u: NodeId) -> NodeId {
        let n = self.n;
        let y = t.slice(x, 0, n);
        let z = t.slice(x, n, n);
        let su = t.sq_norm(u);
        let qn = t.scale(su, self.q);
        let vs = self.vstar_tape(t, x);
        let gv = t.scale(vs, self.gamma);

        let w = neighbour_grad(t, z, n, self.two_a, self.neg_eps);
        let sw = t.sq_norm(w);
        let wterm = t.scale(sw, self.inv_4q);

        let gy = neighbour_grad(t, y, n, self.two_a, self.neg_eps);
        let zgy = t.dot(z, gy);

        let yy = t.mul(y, y);
        let ny = t.scale(yy, -1.0);
        let m1 = t.add_const(ny, 1.0);
        let t2 = t.mul(m1, z);
        let bt = t.sub(t2, y);
        let bw = t.dot(bt, w);

        let s1 = t.add(qn, gv);
        let s2 = t.add(s1, wterm);
        let s3 = t.add_const(s2, self.neg_four_na);
        let s4 = t.sub(s3, zgy);
        t.sub(s4, bw)
    }

    fn boundary_cost_tape(&self, t: &mut Tape, x: NodeId) -> NodeId {
        self.vstar_tape(t, x)
    }

    fn exact_value(&self, x: &[f64]) -> Option<f64> {
        Some(self.vstar(x))
    }

    fn exact_control(&self, x: &[f64], out: &mut [f64]) -> bool {
        let n = self.n;
        let z = &x[n..];
        let mut w = vec![0.0; n];
        self.w_block(z, &mut w);
        for j in 0..n {
            out[j] = -w[j] / self.two_q;
        }
        true
    }
}
