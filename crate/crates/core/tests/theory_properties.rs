//! Closed-form behaviour: reference values, limits, blow-ups and signs.

use nalgebra::DMatrix;
use overparam::presets::aligned_cosine;
use overparam::theory::{
    mtl_g, mtl_k, mtl_prediction, predict, pure_replay_prediction, replay_reg_prediction,
    sequential_finetune_prediction, stl_loss, TheoryInputs,
};
use overparam::{GramSpec, Method, Regime};
use proptest::prelude::*;

fn inputs(p: f64, t: usize, n: usize, sigma: f64, c: f64) -> TheoryInputs {
    TheoryInputs::new(p, vec![n; t], sigma, GramSpec::equi(t, c).unwrap()).unwrap()
}

#[test]
fn stl_matches_textbook_values() {
    let (e, r) = stl_loss(200.0, 50, 1.0, 1.0);
    assert_eq!(r, Regime::Overparam);
    assert!((e.value - (0.75 + 50.0 / 149.0)).abs() < 1e-15);
    let (e, r) = stl_loss(10.0, 50, 2.0, 1.0);
    assert_eq!(r, Regime::Underparam);
    assert!((e.value - 40.0 / 39.0).abs() < 1e-15);
    for p in [49.0, 50.0, 51.0] {
        let (e, r) = stl_loss(p, 50, 1.0, 1.0);
        assert_eq!(r, Regime::Threshold);
        assert!(!e.valid && e.value.is_nan());
    }
}

#[test]
fn reference_spot_values() {
    let c = aligned_cosine();
    let check = |got: f64, want: f64| assert!((got - want).abs() < 5e-6, "{got} vs {want}");
    let joint = inputs(202.0, 2, 50, 0.0, c);
    check(mtl_g(&joint).value, 0.561289);
    check(mtl_k(&joint).value, 0.191186);
    let two = inputs(202.0, 2, 50, 0.0, c).with_uniform_memory(25);
    let pr = pure_replay_prediction(&two).unwrap();
    check(pr.g.value, 0.664452);
    check(pr.f.unwrap().value, -0.078601);
    check(replay_reg_prediction(&two).unwrap().g.value, 0.58241);
    let seq = sequential_finetune_prediction(&inputs(202.0, 2, 50, 0.0, c));
    check(seq.g.value, 0.599238);
}

#[test]
fn large_dimension_limits() {
    let c = aligned_cosine();
    let p = 1e9;
    let stl = stl_loss(p, 50, 1.0, 1.0).0.value;
    assert!((stl - 1.0).abs() < 1e-6);
    let inp = inputs(p, 10, 50, 1.0, c);
    assert!((mtl_g(&inp).value - 1.0).abs() < 1e-6);
    assert!(mtl_k(&inp).value.abs() < 1e-6);
    for m in [0, 10, 50] {
        let r = pure_replay_prediction(&inp.clone().with_uniform_memory(m)).unwrap();
        assert!((r.g.value - 1.0).abs() < 1e-6);
        assert!(r.f.unwrap().value.abs() < 1e-6);
    }
    let seq = sequential_finetune_prediction(&inp);
    assert!((seq.g.value - 1.0).abs() < 1e-6);
}

#[test]
fn noise_term_blows_up_at_interpolation_threshold() {
    let c = aligned_cosine();
    let near = mtl_g(&inputs(502.0, 10, 50, 1.0, c)).value;
    let mid = mtl_g(&inputs(520.0, 10, 50, 1.0, c)).value;
    let far = mtl_g(&inputs(2000.0, 10, 50, 1.0, c)).value;
    assert!(near > 100.0 && near > mid && mid > far);
    assert!(!mtl_g(&inputs(500.0, 10, 50, 1.0, c)).valid);
    let r = pure_replay_prediction(&inputs(50.0 * 9.0 / 2.0 + 50.0 + 2.0, 10, 50, 0.5, c).with_uniform_memory(25))
        .unwrap();
    assert!(r.g.value > 10.0);
}

#[test]
fn identical_tasks_make_joint_fit_a_pooled_fit() {
    let inp = inputs(400.0, 4, 25, 0.7, 1.0);
    let pooled = stl_loss(400.0, 100, 0.7, 1.0).0.value;
    assert!((mtl_g(&inp).value - pooled).abs() < 1e-12);
}

#[test]
fn predict_dispatches_every_method() {
    let inp = inputs(300.0, 3, 20, 0.3, 0.5).with_uniform_memory(5);
    for method in Method::ALL {
        let pred = predict(method, &inp).unwrap();
        assert_eq!(pred.per_task_loss.len(), 3);
        assert!(pred.g.valid && pred.g.value > 0.0, "{method}");
    }
}

#[test]
fn explicit_gram_equals_equi_gram() {
    let c = 0.3;
    let mut inner = DMatrix::from_element(3, 3, c);
    inner.fill_diagonal(1.0);
    let a = TheoryInputs::new(150.0, vec![10, 20, 30], 0.5, GramSpec::explicit(inner).unwrap()).unwrap();
    let b = TheoryInputs::new(150.0, vec![10, 20, 30], 0.5, GramSpec::equi(3, c).unwrap()).unwrap();
    assert_eq!(mtl_prediction(&a).g.value, mtl_prediction(&b).g.value);
}

proptest! {
    #[test]
    fn overparameterised_losses_are_positive(
        t in 1usize..6, n in 1usize..40, gap in 2usize..300, c in -0.2f64..1.0, sigma in 0.0f64..2.0
    ) {
        let c = if t > 1 { c.max(-1.0 / (t as f64 - 1.0) + 1e-6) } else { c };
        let p = (t * n + gap) as f64;
        let inp = inputs(p, t, n, sigma, c);
        let pred = mtl_prediction(&inp);
        prop_assert!(pred.g.valid && pred.g.value > 0.0);
        for e in &pred.per_task_loss {
            prop_assert!(e.valid && e.value >= 0.0);
        }
        let seq = sequential_finetune_prediction(&inp);
        prop_assert!(seq.g.value > 0.0);
    }

    #[test]
    fn more_noise_never_helps(
        t in 1usize..5, n in 1usize..30, gap in 2usize..200, s1 in 0.0f64..1.0, ds in 0.0f64..1.0
    ) {
        let p = (t * n + gap) as f64;
        let lo = mtl_g(&inputs(p, t, n, s1, 0.5)).value;
        let hi = mtl_g(&inputs(p, t, n, s1 + ds, 0.5)).value;
        prop_assert!(hi >= lo - 1e-12);
    }

    #[test]
    fn equi_feasibility_boundary(t in 2usize..12, c in -1.0f64..1.0) {
        let bound = -1.0 / (t as f64 - 1.0);
        let feasible = GramSpec::equi(t, c).unwrap().feasibility().feasible;
        if c > bound + 1e-8 {
            prop_assert!(feasible);
        } else if c < bound - 1e-8 {
            prop_assert!(!feasible);
        }
    }
}
