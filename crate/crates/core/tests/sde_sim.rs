use gsbp::sde::{euler_maruyama, euler_maruyama_with_noise, Dynamics, LinearDynamics, SyntheticTruth};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

fn zero(_: f64, _: &[f64]) -> Vec<f64> {
    vec![0.0]
}

fn endpoints(d: &Dynamics, x0: f64, t_end: f64, steps: usize, paths: u64) -> Vec<f64> {
    (0..paths).into_par_iter().map(|s| euler_maruyama(d, &[x0], &zero, t_end, steps, s).unwrap().last()[0]).collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn ornstein_uhlenbeck_variance() {
    // dx = −x dt + √2 (1/√2) dw: Var x(T) = (1 − e^{−2T}) / 2 from x0 = 0.
    let d = Dynamics::Linear(LinearDynamics::ornstein_uhlenbeck(1, 1.0, std::f64::consts::FRAC_1_SQRT_2));
    let t_end = 5.0;
    let x = endpoints(&d, 0.0, t_end, 500, 10_000);
    let (_, var) = mean_var(&x);
    let exact = 0.5 * (1.0 - (-2.0 * t_end).exp());
    assert!((var / exact - 1.0).abs() < 0.05, "variance {var}, analytic {exact}");
}

#[test]
fn pure_noise_mean_within_four_standard_errors() {
    let mut l = LinearDynamics::zero(1, 1, 1);
    l.g = vec![0.3];
    let d = Dynamics::Linear(l);
    let x = endpoints(&d, 1.25, 2.0, 20, 10_000);
    let (m, var) = mean_var(&x);
    let se = (var / x.len() as f64).sqrt();
    assert!((m - 1.25).abs() < 4.0 * se, "mean {m}, se {se}");
    // variance 2 g² T
    assert!((var / (2.0 * 0.09 * 2.0) - 1.0).abs() < 0.05);
}

#[test]
fn strong_error_refines_with_step() {
    let d = Dynamics::Linear(LinearDynamics::ornstein_uhlenbeck(1, 1.0, 1.0));
    let t_end = 1.0;
    let fine = 1024;
    let mut errs = Vec::new();
    for level in [8usize, 32, 128] {
        let mut acc = 0.0;
        for s in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let z: Vec<Vec<f64>> = (0..fine).map(|_| vec![rng.sample(StandardNormal)]).collect();
            let reference = euler_maruyama_with_noise(&d, &[1.0], &zero, t_end, &z).unwrap().last()[0];
            let r = fine / level;
            let coarse: Vec<Vec<f64>> =
                z.chunks(r).map(|c| vec![c.iter().map(|v| v[0]).sum::<f64>() / (r as f64).sqrt()]).collect();
            let x = euler_maruyama_with_noise(&d, &[1.0], &zero, t_end, &coarse).unwrap().last()[0];
            acc += (x - reference).abs();
        }
        errs.push(acc / 200.0);
    }
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn synthetic_diffusion_tensor_is_psd() {
    let s = Dynamics::Synthetic(SyntheticTruth::default());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let t = rng.random_range(0.0..200.0);
        let x = [rng.random_range(-0.5..1.5), rng.random_range(-0.5..1.5)];
        let u = [rng.random_range(-0.5..1.5), rng.random_range(-0.5..1.5)];
        let g = s.diffusion_tensor(t, &x, &u);
        let det = g[0] * g[3] - g[1] * g[2];
        assert!(g[0] >= 0.0 && g[3] >= 0.0 && det >= -1e-18 * (1.0 + g[0] * g[3]));
        assert_eq!(g[1], g[2]);
    }
}

#[test]
fn zero_control_paths_stay_in_box() {
    let s = Dynamics::Synthetic(SyntheticTruth::default());
    let zero2 = |_: f64, _: &[f64]| vec![0.0, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..50 {
        let x0 = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let p = euler_maruyama(&s, &x0, &zero2, 200.0, 499, seed).unwrap();
        for x in &p.x {
            assert!(x.iter().all(|v| (-0.5..=1.5).contains(v)), "left box: {x:?} from {x0:?}");
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Fixture {
    t: f64,
    x: Vec<f64>,
    u: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
}

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/synthetic_truth.json");

#[test]
fn synthetic_truth_matches_fixtures() {
    let s = SyntheticTruth::default();
    let fx: Vec<Fixture> = serde_json::from_str(&std::fs::read_to_string(FIXTURES).unwrap()).unwrap();
    assert!(fx.len() >= 10);
    for r in fx {
        assert_eq!(s.drift(r.t, &r.x, &r.u), r.f);
        assert_eq!(s.diffusion(r.t, &r.x, &r.u), r.g);
    }
}

#[test]
#[ignore = "writes the fixture file"]
fn regenerate_fixtures() {
    let s = SyntheticTruth::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = vec![];
    for k in 0..16 {
        let t = if k == 0 { 0.0 } else { rng.random_range(0.0..200.0) };
        let x = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let u = vec![rng.random_range(-0.5..1.5), rng.random_range(-0.5..1.5)];
        out.push(Fixture { f: s.drift(t, &x, &u), g: s.diffusion(t, &x, &u), t, x, u });
    }
    std::fs::write(FIXTURES, serde_json::to_string_pretty(&out).unwrap()).unwrap();
}
