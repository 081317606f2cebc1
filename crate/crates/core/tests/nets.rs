use gsbp::autodiff::Tape;
use gsbp::nets::*;
use gsbp::optim::Adam;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn file_round_trip_is_bit_exact() {
    let net = Mlp::init(MlpSpec::new(3, &[7, 4], 2), 11).unwrap();
    let dir = tempdir();
    let p = dir.join("net.json");
    save_json(&net, &p).unwrap();
    let back: Mlp = load_json(&p).unwrap();
    assert_eq!(back, net);
    let x = [0.3, 0.1, -0.9];
    assert_eq!(back.forward(&x).unwrap(), net.forward(&x).unwrap());
    std::fs::remove_dir_all(dir).ok();
}

fn tempdir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("gsbp-nets-{}-{:?}", std::process::id(), std::thread::current().id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn bad_shapes_are_rejected() {
    let net = Mlp::init(MlpSpec::new(2, &[3], 1), 0).unwrap();
    assert!(net.forward(&[1.0]).is_err());
    assert!(Mlp::from_theta(MlpSpec::new(2, &[3], 1), vec![0.0; 3]).is_err());
    assert!(Mlp::init(MlpSpec::new(0, &[3], 1), 0).is_err());
}

#[test]
fn adam_fits_a_small_regression() {
    let spec = MlpSpec::new(1, &[16], 1);
    let net = Mlp::init(spec, 3).unwrap();
    let xs: Vec<f64> = (0..32).map(|i| -2.0 + 4.0 * i as f64 / 31.0).collect();
    let loss_grad = |theta: &[f64]| {
        let tape = Tape::new();
        let th = tape.vars(theta);
        let mut terms = Vec::new();
        for &x in &xs {
            let y = net.forward_theta(&th, &[tape.var(x)]).unwrap()[0];
            let r = y - x.sin();
            terms.push(r * r);
        }
        let l = terms.iter().skip(1).fold(terms[0], |a, &b| a + b) / xs.len() as f64;
        (l.val(), tape.gradient(l).unwrap().wrt_all(&th))
    };
    let mut theta = net.theta.clone();
    let (first, _) = loss_grad(&theta);
    let mut opt = Adam::new(net.num_params(), 1e-2, 1.0);
    for _ in 0..1500 {
        let (_, g) = loss_grad(&theta);
        opt.step(&mut theta, &g).unwrap();
    }
    let (last, _) = loss_grad(&theta);
    assert!(last < 1e-3 && last < 0.01 * first, "{first} -> {last}");
}

#[test]
fn adam_minimizes_rosenbrock() {
    let mut x = vec![-1.2, 1.0];
    let mut opt = Adam::new(2, 2e-2, 1.0);
    for _ in 0..20_000 {
        let g = [-2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]), 200.0 * (x[1] - x[0] * x[0])];
        opt.step(&mut x, &g).unwrap();
    }
    assert!((x[0] - 1.0).abs() < 1e-2 && (x[1] - 1.0).abs() < 2e-2, "{x:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lipschitz_bound_holds(seed in 0u64..1000) {
        let net = Mlp::init(MlpSpec::new(3, &[10, 10], 2), seed).unwrap();
        let l = net.lipschitz_bound();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (fa, fb) = (net.forward(&a).unwrap(), net.forward(&b).unwrap());
            let dy = fa.iter().zip(&fb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            let dx = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            prop_assert!(dy <= l * dx * (1.0 + 1e-12));
        }
    }

    #[test]
    fn stored_and_external_parameters_agree(seed in 0u64..1000, x in proptest::collection::vec(-3.0f64..3.0, 2)) {
        let net = Mlp::init(MlpSpec::new(2, &[5, 3], 2), seed).unwrap();
        let a = net.forward(&x).unwrap();
        let b = net.forward_theta(&net.theta, &x).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-14);
        }
    }
}
