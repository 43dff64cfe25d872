use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use reslab_core::continuum::{
    euler_maruyama_res1, ode_errors, ode_integrate, smooth_regime_probe, strong_error_sde, BrownianGrid, ProbeConfig,
    SdeConfig,
};
use reslab_core::init::{build_weight_tape, ConstantWeights, Distribution, GpSpec, InitScheme, LayerParams, PathLayers, SmoothPath};
use reslab_core::model::forward_from;
use reslab_core::stats::{mean_and_std_error, spearman_trend};
use reslab_core::{derive_seed, Activation, Arch, ModelSpec, ScalingRule, Stream};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn coarse_increments_are_exact_fine_sums(
        width in 1usize..4, steps in 1usize..12, log_m in 0u32..6, seed in any::<u64>(),
    ) {
        let m = 1usize << log_m;
        let g = BrownianGrid::sample(width, steps, m, seed).unwrap();
        let e = width * width;
        for k in 0..steps {
            for i in 0..e {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += g.fine()[(k * m + j) * e + i];
                }
                prop_assert_eq!(acc.to_bits(), g.coarse()[k * e + i].to_bits());
            }
        }
    }

    #[test]
    fn finer_grid_refines_the_same_path(width in 1usize..3, steps in 1usize..8, seed in any::<u64>()) {
        let a = BrownianGrid::sample(width, steps, 16, seed).unwrap();
        let b = BrownianGrid::sample(width, steps, 32, seed).unwrap();
        let e = width * width;
        for k in 0..steps * 16 {
            for i in 0..e {
                let sum = b.fine()[2 * k * e + i] + b.fine()[(2 * k + 1) * e + i];
                prop_assert!((sum - a.fine()[k * e + i]).abs() <= 1e-15);
            }
        }
    }
}

#[test]
fn brownian_increments_have_the_right_variance() {
    let g = BrownianGrid::sample(8, 16, 32, 3).unwrap();
    let fine = g.fine();
    let n = fine.len() as f64;
    let var = fine.iter().map(|x| x * x).sum::<f64>() / n;
    let target = 1.0 / (16.0 * 32.0);
    assert!((var - target).abs() <= 3.0 * target * (2.0 / n).sqrt());
}

#[test]
fn single_scalar_step() {
    let b = 0.37;
    let traj = euler_maruyama_res1(1, Activation::Identity, &[b], &[1.0]).unwrap();
    assert!((traj.last()[0] - (1.0 + 2f64.sqrt() * b)).abs() < 1e-15);
}

#[test]
fn zero_diffusion_keeps_the_state() {
    let g = BrownianGrid::sample(3, 10, 16, 1).unwrap();
    let traj = euler_maruyama_res1(3, Activation::Zero, g.coarse(), &[1.0, -2.0, 0.5]).unwrap();
    assert_eq!(traj.last(), &[1.0, -2.0, 0.5]);
    let fit = strong_error_sde(&SdeConfig {
        width: 3,
        depths: vec![4, 8, 16, 32],
        refinement: 16,
        trials: 5,
        seed: 2,
        activation: Activation::Zero,
    })
    .unwrap();
    assert!(fit.errors.iter().all(|&e| e == 0.0));
    assert!(fit.is_degenerate());
}

#[test]
fn euler_maruyama_has_the_law_of_the_discrete_network() {
    let (d, depth, trials) = (10, 100, 1000);
    let act = Activation::LeakyRelu {
        slope: std::f64::consts::FRAC_1_SQRT_2,
    };
    let model = ModelSpec::new(Arch::Res1, d, depth);
    let rule = ScalingRule::Alpha((2.0 / depth as f64).sqrt());
    let mut net = Vec::new();
    let mut sde = Vec::new();
    for t in 0..trials {
        let h0 = Stream::derived(5, &[t]).gaussian_vec(d);
        let tape = build_weight_tape(&model, &InitScheme::iid(Distribution::GaussianScaled), derive_seed(6, &[t])).unwrap();
        net.push(forward_from(&model, &tape, &h0, &rule).unwrap().norm_ratio().unwrap());
        let g = BrownianGrid::sample(d, depth, 1, derive_seed(7, &[t])).unwrap();
        sde.push(euler_maruyama_res1(d, act, g.coarse(), &h0).unwrap().norm_ratio().unwrap());
    }
    for power in [1, 2] {
        let a: Vec<f64> = net.iter().map(|x| x.powi(power)).collect();
        let b: Vec<f64> = sde.iter().map(|x| x.powi(power)).collect();
        let (ma, sa) = mean_and_std_error(&a);
        let (mb, sb) = mean_and_std_error(&b);
        assert!((ma - mb).abs() <= 3.0 * (sa * sa + sb * sb).sqrt(), "moment {power}: {ma} vs {mb}");
    }
}

#[test]
fn reference_refinement_barely_moves_the_sde_slope() {
    let cfg = |m| SdeConfig {
        width: 10,
        depths: vec![8, 16, 32, 64, 128],
        refinement: m,
        trials: 100,
        seed: 8,
        activation: Activation::LeakyRelu {
            slope: std::f64::consts::FRAC_1_SQRT_2,
        },
    };
    let a = strong_error_sde(&cfg(32)).unwrap().slope.unwrap();
    let b = strong_error_sde(&cfg(64)).unwrap().slope.unwrap();
    assert!((a - b).abs() < 0.05, "{a} vs {b}");
}

fn linear_res1(d: usize) -> ModelSpec {
    ModelSpec::new(Arch::Res1, d, 1).with_slope(1.0)
}

#[test]
fn scalar_linear_ode_converges_to_exponential() {
    let v = 0.7;
    let w = ConstantWeights(LayerParams {
        v: DMatrix::from_element(1, 1, v),
        w: None,
    });
    let mut last = f64::INFINITY;
    for n in [10, 100, 1000, 10000] {
        let h1 = ode_integrate(&linear_res1(1), &w, &[1.0], n).unwrap().last()[0];
        let err = (h1 - v.exp()).abs();
        let predicted = v * v * v.exp() / (2.0 * n as f64);
        assert!((err / predicted - 1.0).abs() < 0.1, "n={n}: {err} vs {predicted}");
        assert!(err < last);
        last = err;
    }
}

fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..40 {
        term = &term * m / k as f64;
        sum += &term;
    }
    sum
}

#[test]
fn constant_path_error_matches_linear_euler_formula() {
    let d = 4;
    let v = DMatrix::from_fn(d, d, |i, j| 0.3 * ((i * 7 + j * 3) as f64).sin());
    let w = ConstantWeights(LayerParams { v: v.clone(), w: None });
    let h0 = vec![1.0, -0.5, 0.25, 2.0];
    let n_ref = 64 * 256;
    let depths = [16, 32, 64, 128, 256];
    let errs = ode_errors(&linear_res1(d), &w, &h0, &depths, n_ref).unwrap();
    let h = DVector::from_vec(h0.clone());
    let lead = &v * &v * expm(&v) * &h;
    for (&n, &e) in depths.iter().zip(&errs) {
        let predicted = (0.5 / n as f64 - 0.5 / n_ref as f64) * lead.norm() / h.norm();
        assert!((e / predicted - 1.0).abs() < 0.1, "n={n}: {e} vs {predicted}");
    }
}

#[test]
fn ode_integration_equals_network_on_same_path() {
    let d = 5;
    let model = ModelSpec::new(Arch::Res2, d, 1);
    let path = SmoothPath::sample(d, true, &GpSpec::default(), 9).unwrap();
    let h0 = Stream::new(10).gaussian_vec(d);
    for l in [7, 64, 300] {
        let ode = ode_integrate(&model, &path, &h0, l).unwrap();
        let layers = PathLayers {
            weights: path.clone(),
            depth: l,
        };
        let net = forward_from(&model.with_depth(l), &layers, &h0, &ScalingRule::Beta(1.0)).unwrap();
        for (a, b) in ode.last().iter().zip(net.last()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn zero_path_gives_zero_ode_error() {
    let d = 3;
    let w = ConstantWeights(LayerParams::zeros(d, false));
    let errs = ode_errors(&linear_res1(d), &w, &[1.0, 2.0, 3.0], &[16, 32, 64, 128], 64 * 128).unwrap();
    assert!(errs.iter().all(|&e| e == 0.0));
}

fn probe(beta: f64, depths: Vec<usize>) -> Vec<f64> {
    let cfg = ProbeConfig {
        model: ModelSpec::new(Arch::Res3, 10, 1),
        gp: GpSpec::default(),
        beta,
        depths,
        trials: 10,
        seed: 11,
        shift: None,
    };
    smooth_regime_probe(&cfg).unwrap().median_output()
}

#[test]
fn smooth_weights_vanish_for_fast_scaling() {
    let depths = vec![100, 300, 1000, 3000];
    let med = probe(2.0, depths.clone());
    let xs: Vec<f64> = depths.iter().map(|&l| l as f64).collect();
    let trend = spearman_trend(&xs, &med).unwrap();
    assert_eq!(trend.rho, -1.0);
    assert!(med[3] < med[0] / 10.0);
}

#[test]
fn smooth_weights_stay_bounded_at_unit_scaling() {
    let med = probe(1.0, vec![100, 300, 1000, 3000]);
    let max = med.iter().cloned().fold(0.0, f64::max);
    assert!(max <= 2.0 * med[0], "{med:?}");
}

#[test]
fn shifted_linear_probe_explodes() {
    let cfg = ProbeConfig::explosion(10, 1.0, 0.5, vec![100, 1000], 5, 12);
    let med = smooth_regime_probe(&cfg).unwrap().median_max();
    assert!(med[1] >= 10.0 * med[0], "{med:?}");
}
