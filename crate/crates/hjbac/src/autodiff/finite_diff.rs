//! Central finite differences, used as the independent gradient oracle.
//!
//! Every tape gradient in this crate is validated against these routines in
//! tests; they deliberately share no code with the tape.

/// Central-difference gradient of a scalar function at `x`.
pub fn central_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + step;
        let fp = f(&xp);
        xp[i] = xi - step;
        let fm = f(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * step);
    }
    g
}

/// Largest relative component mismatch between two gradients, with an
/// absolute floor so near-zero components compare sanely.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut worst = 0.0f64;
    for i in 0..a.len() {
        let scale = a[i].abs().max(b[i].abs()).max(1e-8);
        worst = worst.max((a[i] - b[i]).abs() / scale);
    }
    worst
}
