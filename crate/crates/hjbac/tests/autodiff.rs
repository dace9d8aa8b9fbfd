//! Tape gradients against the central-difference oracle, Adam update
//! arithmetic, and parameter-vector layout properties.

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use hjbac::autodiff::finite_diff::{central_grad, max_rel_err};
use hjbac::autodiff::{adam_step, AdamState, ParamVector, Tape};

/// Builds one expression using every differentiable op and returns its
/// scalar value, differentiating w.r.t. the 8 entries of `p`.
fn omnibus(p: &[f64], with_grad: bool) -> (f64, Option<Vec<f64>>) {
    assert_eq!(p.len(), 8);
    let mut t = Tape::new();
    let g = t.add_group(8);
    let a = t.param(g, 0, &p[0..3]); // vector of 3
    let b = t.param(g, 3, &p[3..6]); // vector of 3
    let s = t.param(g, 6, &p[6..7]); // scalar
    let w = t.param(g, 7, &p[7..8]); // scalar

    let sum = t.add(a, b);
    let diff = t.sub(a, b);
    let prod = t.mul(sum, diff); // a^2 - b^2 elementwise
    let scaled = t.scale(prod, 0.75);
    let shifted = t.add_const(scaled, 0.2);
    let act = t.res_act(shifted);
    let r = t.relu(diff);
    let joined = t.concat(act, r); // length 6
    let head = t.slice(joined, 1, 4);
    let bs = t.broadcast(s, 4);
    let mixed = t.div(head, bs);
    let q = t.sq_norm(mixed);
    let dot = t.dot(act, r);
    let e = t.exp(w);
    let lift = t.add(q, dot);
    let damp = t.mul(lift, e);
    let root_in = t.add_const(damp, 1.5);
    let root = t.sqrt(root_in);
    let grad = if with_grad {
        t.backward(root).expect("finite");
        Some(t.group_grad(g))
    } else {
        None
    };
    (t.scalar_value(root), grad)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn omnibus_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut p: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        p[6] = rng.gen_range(0.5..1.5); // divisor kept away from 0
        // Keep the kinked ops (relu/res_act) away from their corner so the
        // finite-difference stencil stays on one side.
        let probe = omnibus(&p, false).0;
        prop_assume!(probe.is_finite());
        let (_, grad) = omnibus(&p, true);
        let fd = central_grad(|q| omnibus(q, false).0, &p, 1e-6);
        let err = max_rel_err(grad.as_ref().unwrap(), &fd);
        prop_assert!(err < 1e-6, "gradient mismatch {err}");
    }
}

#[test]
fn affine_gradient_matches_finite_differences() {
    // y = W x + b contracted to a scalar by sq_norm; differentiates all of
    // W (2x3), b (2), and x (3) at once.
    let vals: [f64; 11] = [
        0.3, -0.7, 0.5, 0.9, 0.2, -0.4, // W
        0.1, -0.6, // b
        0.8, -0.3, 0.25, // x
    ];
    let f = |p: &[f64]| {
        let mut t = Tape::new();
        let g = t.add_group(11);
        let w = t.param(g, 0, &p[0..6]);
        let b = t.param(g, 6, &p[6..8]);
        let x = t.param(g, 8, &p[8..11]);
        let y = t.affine(w, b, x);
        let r = t.sq_norm(y);
        (t, r, g)
    };
    let (mut t, r, g) = f(&vals);
    t.backward(r).unwrap();
    let grad = t.group_grad(g);
    let fd = central_grad(
        |p| {
            let (t, r, _) = f(p);
            t.scalar_value(r)
        },
        &vals,
        1e-6,
    );
    assert!(max_rel_err(&grad, &fd) < 1e-7, "affine gradcheck failed");
}

#[test]
fn two_groups_get_independent_gradients() {
    let mut t = Tape::new();
    let ga = t.add_group(2);
    let gb = t.add_group(2);
    let a = t.param(ga, 0, &[1.0, 2.0]);
    let b = t.param(gb, 0, &[3.0, 4.0]);
    let d = t.dot(a, b);
    t.backward(d).unwrap();
    assert_eq!(t.group_grad(ga), vec![3.0, 4.0]);
    assert_eq!(t.group_grad(gb), vec![1.0, 2.0]);
}

#[test]
fn repeated_binding_accumulates_gradients() {
    // The same parameter slot used twice must receive the sum of both
    // adjoints: d/dp (p * p) = 2p.
    let mut t = Tape::new();
    let g = t.add_group(1);
    let p1 = t.param(g, 0, &[3.0]);
    let p2 = t.param(g, 0, &[3.0]);
    let prod = t.mul(p1, p2);
    t.backward(prod).unwrap();
    assert_eq!(t.group_grad(g), vec![6.0]);
}

#[test]
fn sqrt_at_zero_has_zero_adjoint() {
    // Convention: the sqrt backward at exactly 0 propagates 0 rather than
    // infinity, so a control head at the origin stays finite.
    let mut t = Tape::new();
    let g = t.add_group(1);
    let p = t.param(g, 0, &[0.0]);
    let s = t.sqrt(p);
    t.backward(s).unwrap();
    assert_eq!(t.group_grad(g), vec![0.0]);
    assert_eq!(t.scalar_value(s), 0.0);
}

// --- Adam -----------------------------------------------------------------

#[test]
fn adam_first_step_matches_hand_formula() {
    let mut params = vec![1.0, -2.0];
    let grad = vec![0.5, -0.25];
    let mut st = AdamState::new(2);
    adam_step(&mut params, &grad, &mut st, 0.1).unwrap();
    for i in 0..2 {
        let m = (1.0 - st.beta1) * grad[i];
        let v = (1.0 - st.beta2) * grad[i] * grad[i];
        let m_hat = m / (1.0 - st.beta1);
        let v_hat = v / (1.0 - st.beta2);
        let want = [1.0, -2.0][i] - 0.1 * m_hat / (v_hat.sqrt() + st.eps_hat);
        assert_eq!(params[i], want, "component {i}");
    }
    assert_eq!(st.step_count, 1);
}

#[test]
fn adam_converges_on_a_quadratic() {
    // min (p - 3)^2: a few hundred steps land well inside lr of the optimum.
    let mut params = vec![-4.0];
    let mut st = AdamState::new(1);
    for _ in 0..800 {
        let grad = vec![2.0 * (params[0] - 3.0)];
        adam_step(&mut params, &grad, &mut st, 0.05).unwrap();
    }
    assert!((params[0] - 3.0).abs() < 0.05, "ended at {}", params[0]);
}

proptest! {
    #[test]
    fn adam_step_is_bounded_by_lr(
        g0 in -10.0f64..10.0,
        lr in 1e-5f64..1e-1,
    ) {
        prop_assume!(g0.abs() > 1e-6);
        let mut params = vec![0.7];
        let mut st = AdamState::new(1);
        adam_step(&mut params, &[g0], &mut st, lr).unwrap();
        let delta = params[0] - 0.7;
        // First bias-corrected step is -lr * sign(g) up to eps_hat rounding.
        prop_assert!(delta.abs() <= lr * 1.0000001);
        prop_assert!(delta.signum() == -g0.signum());
    }
}

// --- parameter vector -------------------------------------------------------

#[test]
fn param_vector_views_partition_the_storage() {
    let mut pv = ParamVector::new();
    pv.push("w", 3, 4);
    pv.push("b", 3, 1);
    pv.push("head", 1, 3);
    assert_eq!(pv.len(), 3 * 4 + 3 + 3);
    assert!(pv.check_tiling());
    let w = pv.view(0);
    assert_eq!((w.rows, w.cols, w.offset), (3, 4, 0));
    let b = pv.view(1);
    assert_eq!((b.rows, b.cols, b.offset), (3, 1, 12));
    pv.slice_mut(1).copy_from_slice(&[1.0, 2.0, 3.0]);
    assert_eq!(&pv.values()[12..15], &[1.0, 2.0, 3.0]);
    assert_eq!(pv.slice(1), &[1.0, 2.0, 3.0]);
}
