use proptest::prelude::*;
use reslab_core::init::{build_weight_tape, Distribution, InitScheme, WeightTape};
use reslab_core::linalg::{dot, norm};
use reslab_core::model::{forward_from, residual};
use reslab_core::sensitivity::{
    backward_gradient, estimate_ratio_forward, forward_backward, forward_sensitivity, jacobian_transpose_vector,
    jacobian_vector, squared_loss_gradient,
};
use reslab_core::{derive_seed, forward, Arch, LayerSource, ModelSpec, Projections, ScalingRule, Stream};

fn arch(i: usize) -> Arch {
    [Arch::Res1, Arch::Res2, Arch::Res3][i]
}

struct Case {
    model: ModelSpec,
    tape: WeightTape,
    h0: Vec<f64>,
    rule: ScalingRule,
}

fn case(a: usize, d: usize, depth: usize, slope: f64, beta: f64, seed: u64) -> Case {
    let model = ModelSpec::new(arch(a), d, depth).with_slope(slope);
    let tape = build_weight_tape(&model, &InitScheme::iid(Distribution::GaussianScaled), seed).unwrap();
    let h0 = Stream::derived(seed, &[9]).gaussian_vec(d);
    Case {
        model,
        tape,
        h0,
        rule: ScalingRule::Beta(beta),
    }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn adjoint_pairing_is_preserved(
        a in 0usize..3, d in 1usize..10, depth in 1usize..40,
        slope in 0.7072f64..1.0, beta in 0.25f64..1.5, seed in any::<u64>(),
    ) {
        let c = case(a, d, depth, slope, beta, seed);
        let traj = forward_from(&c.model, &c.tape, &c.h0, &c.rule).unwrap();
        let mut s = Stream::derived(seed, &[10]);
        let z = s.gaussian_vec(d);
        let p_last = s.gaussian_vec(d);
        let q = forward_sensitivity(&c.model, &c.tape, &traj, &z, &c.rule).unwrap();
        let p = backward_gradient(&c.model, &c.tape, &traj, &p_last, &c.rule).unwrap();
        let lhs = dot(p.first(), &z);
        let rhs = dot(&p_last, q.last());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * norm(p.first()) * norm(&z));
    }

    #[test]
    fn jacobian_and_transpose_are_adjoint(
        a in 0usize..3, d in 1usize..12, slope in 0.7072f64..1.0, seed in any::<u64>(),
    ) {
        let c = case(a, d, 1, slope, 0.5, seed);
        let mut params = c.tape.scratch();
        c.tape.load(1, &mut params);
        let mut s = Stream::derived(seed, &[11]);
        let (u, v) = (s.gaussian_vec(d), s.gaussian_vec(d));
        let jv = jacobian_vector(&c.model, &params, &c.h0, &v).unwrap();
        let jtu = jacobian_transpose_vector(&c.model, &params, &c.h0, &u).unwrap();
        let scale = norm(&u) * norm(&v) * (1.0 + norm(&jv) + norm(&jtu));
        prop_assert!((dot(&u, &jv) - dot(&jtu, &v)).abs() <= 1e-12 * scale);
    }

    #[test]
    fn squared_norm_splits_into_three_terms(
        a in 0usize..3, d in 1usize..10, depth in 1usize..30, beta in 0.25f64..1.5, seed in any::<u64>(),
    ) {
        let c = case(a, d, depth, 1.0 / 2f64.sqrt(), beta, seed);
        let traj = forward_from(&c.model, &c.tape, &c.h0, &c.rule).unwrap();
        let alpha = c.rule.alpha(depth);
        let mut params = c.tape.scratch();
        for k in 0..depth {
            c.tape.load(k + 1, &mut params);
            let h = traj.state(k);
            let r = residual(&c.model, &params, h).unwrap();
            let expected = dot(h, h) + 2.0 * alpha * dot(h, &r) + alpha * alpha * dot(&r, &r);
            let next = traj.state(k + 1);
            let got = dot(next, next);
            prop_assert!((got - expected).abs() <= 1e-10 * got.max(1.0));
        }
    }

    #[test]
    fn positive_rescaling_commutes_with_forward(
        a in 0usize..3, d in 1usize..10, depth in 1usize..30, c in 0.01f64..100.0, seed in any::<u64>(),
    ) {
        let case = case(a, d, depth, 0.8, 0.5, seed);
        let base = forward_from(&case.model, &case.tape, &case.h0, &case.rule).unwrap();
        let scaled_h0: Vec<f64> = case.h0.iter().map(|x| c * x).collect();
        let scaled = forward_from(&case.model, &case.tape, &scaled_h0, &case.rule).unwrap();
        let expect: Vec<f64> = base.last().iter().map(|x| c * x).collect();
        prop_assert!(rel(scaled.last(), &expect) <= 1e-12);
        prop_assert!((scaled.output_ratio().unwrap() - base.output_ratio().unwrap()).abs() <= 1e-12 * (1.0 + base.output_ratio().unwrap()));
    }

    #[test]
    fn zero_scaling_gives_zero_ratio(a in 0usize..3, d in 1usize..8, depth in 1usize..20, seed in any::<u64>()) {
        let c = case(a, d, depth, 0.8, 0.5, seed);
        let traj = forward_from(&c.model, &c.tape, &c.h0, &ScalingRule::Alpha(0.0)).unwrap();
        prop_assert_eq!(traj.output_ratio().unwrap(), 0.0);
    }
}

#[test]
fn forward_sensitivity_matches_central_differences() {
    let eps = 1e-6;
    let mut worst = 0.0_f64;
    for i in 0..50u64 {
        let seed = derive_seed(77, &[i]);
        let a = (i % 2) as usize;
        let d = 3 + (i % 7) as usize;
        let c = case(a, d, 5 + (i % 20) as usize, 0.9, 0.5, seed);
        let z = Stream::derived(seed, &[12]).gaussian_vec(d);
        let traj = forward_from(&c.model, &c.tape, &c.h0, &c.rule).unwrap();
        let q = forward_sensitivity(&c.model, &c.tape, &traj, &z, &c.rule).unwrap();
        let shifted = |sign: f64| {
            let h: Vec<f64> = c.h0.iter().zip(&z).map(|(h, z)| h + sign * eps * z).collect();
            forward_from(&c.model, &c.tape, &h, &c.rule).unwrap().last().to_vec()
        };
        let (plus, minus) = (shifted(1.0), shifted(-1.0));
        let fd: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * eps)).collect();
        worst = worst.max(rel(&fd, q.last()));
    }
    assert!(worst <= 1e-5, "worst relative error {worst}");
}

#[test]
fn backward_gradient_matches_finite_difference_of_loss() {
    let model = ModelSpec::new(Arch::Res2, 6, 12).with_slope(0.9).with_io(4, 3);
    let tape = build_weight_tape(&model, &InitScheme::iid(Distribution::UniformScaled), 5).unwrap();
    let mut s = Stream::new(6);
    let proj = Projections::sample(&model, &mut s);
    let x = s.gaussian_vec(4);
    let y = s.gaussian_vec(3);
    let rule = ScalingRule::Beta(0.5);
    let traj = forward(&model, &tape, &proj, &x, &rule).unwrap();
    let p_last = squared_loss_gradient(&proj, traj.last(), &y).unwrap();
    let back = backward_gradient(&model, &tape, &traj, &p_last, &rule).unwrap();
    let loss = |h0: &[f64]| {
        let t = forward_from(&model, &tape, h0, &rule).unwrap();
        let r = proj.readout(t.last()).unwrap();
        r.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    };
    let eps = 1e-6;
    for i in 0..6 {
        let mut up = traj.initial().to_vec();
        let mut down = up.clone();
        up[i] += eps;
        down[i] -= eps;
        let fd = (loss(&up) - loss(&down)) / (2.0 * eps);
        assert!((fd - back.first()[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", back.first()[i]);
    }
}

#[test]
fn probe_estimate_agrees_with_reverse_mode() {
    let model = ModelSpec::new(Arch::Res3, 5, 50).with_io(5, 2);
    let tape = build_weight_tape(&model, &InitScheme::iid(Distribution::GaussianScaled), 21).unwrap();
    let mut s = Stream::new(22);
    let proj = Projections::sample(&model, &mut s);
    let x = s.gaussian_vec(5);
    let y = s.gaussian_vec(2);
    let rule = ScalingRule::Beta(0.5);
    let traj = forward(&model, &tape, &proj, &x, &rule).unwrap();
    let p_last = squared_loss_gradient(&proj, traj.last(), &y).unwrap();
    let back = backward_gradient(&model, &tape, &traj, &p_last, &rule).unwrap();
    let exact = dot(back.first(), back.first()) / dot(&p_last, &p_last);
    let est = estimate_ratio_forward(&model, &tape, &proj, &x, &y, &rule, 4000, &mut Stream::new(23)).unwrap();
    assert!(
        (est.value - exact).abs() <= 4.0 * est.std_error,
        "estimate {} ± {} vs exact {exact}",
        est.value,
        est.std_error
    );
    let summary = forward_backward(&model, &tape, &proj, &x, &y, &rule).unwrap();
    assert!(summary.gradient_ratio >= 0.0);
}
