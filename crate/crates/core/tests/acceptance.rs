//! Acceptance run: every criterion at its stated tolerance, one line each.
//!
//! `GSBP_ACCEPTANCE=1,2,9 cargo test --test acceptance` restricts the run.
//! Criterion 6 reuses the network trained by criterion 5 and runs it if needed.
//! Failures are reported; the process exits non-zero only with `GSBP_ACCEPTANCE_STRICT` set.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{bcc, brute_force, grid20, rotation, seeded, HeatKernel, PlaneWave, Smooth};
use gsbp::autodiff::{grad, hessian, Function, Scalar};
use gsbp::nets::{Mlp, MlpSpec};
use gsbp::orderparams::{spherical_harmonic, steinhardt, ParticleConfiguration, MAX_L};
use gsbp::pinn::{self, CollocationSet, Field, GsbpProblem, PinnConfig, PinnNet};
use gsbp::policy::{closed_loop, GridSpec, PolicyTable, RolloutConfig};
use gsbp::sde::{generate_dataset, Dynamics, GaussianSampler, LinearDynamics, RampInput, SyntheticTruth};
use gsbp::sde_learn::{fit, split, SdeFitConfig, SplitDataset};
use gsbp::sinkhorn::{
    cost_matrix, sinkhorn, sinkhorn_loss_grad, unrolled, CostMatrix, DiscreteMeasure, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

struct Net(Mlp);

impl Function for Net {
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        self.0.forward(x).unwrap()[0]
    }
}

fn c1_autodiff() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut g1, mut g2) = (0.0_f64, 0.0_f64);
    let h = 1e-5;
    for k in 0..100 {
        let net = Net(Mlp::init(MlpSpec::new(3, &[16, 16], 1), 1000 + k).unwrap());
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let g = grad(&net, &x).unwrap();
        let hs = hessian(&net, &x).unwrap();
        for i in 0..3 {
            let mut p = x.clone();
            p[i] += h;
            let (fu, gu) = (net.eval(&p), grad(&net, &p).unwrap());
            p[i] -= 2.0 * h;
            let (fd, gd) = (net.eval(&p), grad(&net, &p).unwrap());
            g1 = g1.max(rel(g[i], (fu - fd) / (2.0 * h)));
            for j in 0..3 {
                g2 = g2.max(rel(hs[j][i], (gu[j] - gd[j]) / (2.0 * h)));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        g1 <= 1e-6 && g2 <= 1e-4 && secs < 10.0,
        format!("grad rel err {g1:.2e} (<= 1e-6), hessian rel err {g2:.2e} (<= 1e-4), {secs:.2} s (< 10)"),
    )
}

fn permutation_optimum(c: &CostMatrix) -> f64 {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    perms.iter().map(|p| (0..3).map(|i| c.get(i, p[i])).sum::<f64>() / 3.0).fold(f64::INFINITY, f64::min)
}

fn c2_sinkhorn_lp() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let w = [1.0 / 3.0; 3];
    let (mut gap, mut feas) = (0.0_f64, 0.0_f64);
    for _ in 0..20 {
        let c = CostMatrix::from_vec(3, 3, (0..9).map(|_| rng.random::<f64>()).collect());
        let r = sinkhorn(&w, &w, &c, 1e-3, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let opt = permutation_optimum(&c);
        gap = gap.max((r.transport_cost(&c) - opt).abs() / (1.0 + opt.abs()));
        for j in 0..3 {
            feas = feas.max(((0..3).map(|i| r.m(i, j)).sum::<f64>() - w[j]).abs());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        gap <= 1e-2 && feas <= 1e-9 && secs < 5.0,
        format!("max |<C,M>-opt|/(1+|opt|) {gap:.2e} (<= 1e-2), marginal {feas:.2e} (<= 1e-9), {secs:.2} s (< 5)"),
    )
}

fn c3_unrolled_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0_f64;
    let h = 1e-6;
    for _ in 0..10 {
        let x: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let y: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random::<f64>() + 0.3, rng.random::<f64>()]).collect();
        let b = DiscreteMeasure::uniform(y).unwrap();
        let f = |p: &[Vec<f64>]| {
            let a = DiscreteMeasure::uniform(p.to_vec()).unwrap();
            unrolled(&a.weights, &b.weights, &cost_matrix(&a, &b).unwrap(), 0.1, 50, false).unwrap().value
        };
        let (_, g) = sinkhorn_loss_grad(&DiscreteMeasure::uniform(x.clone()).unwrap(), &b, 0.1, 50).unwrap();
        for i in 0..8 {
            for d in 0..2 {
                let mut p = x.clone();
                p[i][d] += h;
                let up = f(&p);
                p[i][d] -= 2.0 * h;
                worst = worst.max(rel(g[i][d], (up - f(&p)) / (2.0 * h)));
            }
        }
    }
    outcome(worst <= 1e-4, format!("max rel err {worst:.2e} (<= 1e-4) over 10 clouds, K = 50"))
}

fn c4_manufactured() -> Outcome {
    let pw = PlaneWave { a: [0.37, -0.81] };
    let hjb = grid20().map(|(t, x)| pinn::hjb_residual(&pw, &Dynamics::Omt { n: 2 }, t, x).abs()).fold(0.0, f64::max);
    let hk = HeatKernel { s0: 0.3 };
    let fpk = grid20()
        .map(|(t, x)| pinn::fpk_residual(&hk, &Dynamics::ClassicalSbp { n: 2 }, t, x).abs())
        .fold(0.0, f64::max);
    let mut l = LinearDynamics::zero(2, 2, 2);
    l.a = vec![0.2, -0.1, 0.05, 0.3];
    l.b = vec![0.7, -0.3, 0.4, 1.1];
    l.g = vec![0.3, 0.0, 0.1, 0.2];
    let d = Dynamics::Linear(l.clone());
    let mut pol = 0.0_f64;
    for (t, x) in grid20() {
        let hd = Smooth.heads(seeded(t, x));
        for j in 0..2 {
            let want = hd.u[j].val - (l.b[j] * hd.psi.grad[0] + l.b[2 + j] * hd.psi.grad[1]);
            pol = pol.max((pinn::policy_residual(&Smooth, &d, t, x, j) - want).abs());
        }
    }
    outcome(
        hjb <= 1e-8 && fpk <= 1e-8 && pol <= 1e-10,
        format!("20^3 grid: HJB {hjb:.2e} (<= 1e-8), FPK {fpk:.2e} (<= 1e-8), policy {pol:.2e} (<= 1e-10)"),
    )
}

/// Desk-scale solve settings used by criteria 5 and 6.
fn desk_config() -> PinnConfig {
    PinnConfig { lr: 3e-3, boundary_batch: 512, ..PinnConfig::default() }
}

/// Endpoint batch for the post-training boundary estimate; its finite-sample bias is well under the gate.
const EVAL_BATCH: usize = 1024;

struct Solved {
    problem: GsbpProblem,
    net: PinnNet,
    /// Boundary losses at the training batch size.
    boundary: (f64, f64),
}

fn c5_classical_sbp(solved: &mut Option<Solved>) -> Outcome {
    let t0 = Instant::now();
    let problem = GsbpProblem::classical_sbp();
    let cfg = desk_config();
    let r = pinn::train(&problem, &cfg, None).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    // residuals on a fresh collocation set, boundary losses on fresh endpoint batches
    let fresh = CollocationSet::draw(&problem, cfg.n_colloc, cfg.boundary_batch, 0xacce_97).unwrap();
    let (rep, _) = pinn::total_loss(&r.net, &problem, &fresh, &cfg, false).unwrap();
    let averaged = |batch: usize| {
        let mut b = (0.0, 0.0);
        for s in 0..8 {
            let v = pinn::boundary_loss(&r.net, &problem, batch, cfg.eps, cfg.sinkhorn_iters, 5_000 + s).unwrap();
            b = (b.0 + v.0 / 8.0, b.1 + v.1 / 8.0);
        }
        b
    };
    let b = averaged(EVAL_BATCH);
    let at_train = averaged(cfg.boundary_batch);
    let lu = rep.l_u.iter().cloned().fold(0.0, f64::max);
    let masses: Vec<String> = [0.0, 0.5, 1.0]
        .iter()
        .map(|&f| format!("{:.3}", pinn::mass(&r.net, &problem, f * problem.horizon, 101)))
        .collect();
    let pass = rep.l_psi <= 1e-3 && rep.l_rho <= 1e-3 && lu <= 1e-3 && b.0 <= 5e-3 && b.1 <= 5e-3 && secs <= 1800.0;
    let detail = format!(
        "MSE psi {:.2e} rho {:.2e} u {:.2e} (<= 1e-3); boundary rho0 {:.2e} rhoT {:.2e} (<= 5e-3; at the training batch {:.2e} / {:.2e}); {} epochs, {:.0} s (<= 1800); box mass at 0, T/2, T: {}",
        rep.l_psi,
        rep.l_rho,
        lu,
        b.0,
        b.1,
        at_train.0,
        at_train.1,
        cfg.epochs,
        secs,
        masses.join(", ")
    );
    *solved = Some(Solved { problem, net: r.net, boundary: at_train });
    outcome(pass, detail)
}

/// Optimal feedback of the classical bridge (unit horizon, `dx = u dt + √2 dw`) between
/// `N(m0, s I)` and `N(m1, s I)`: Gaussian marginals with mean `m0 + (m1 − m0) t` and variance
/// `((1−t)² + t²) s + t(1−t)(2c + 2)`, `c = ½(√(4s² + 4) − 2)`, steered by `u = ṁ + k (x − m)`,
/// `k = (Σ̇ − 2) / 2Σ`.
fn bridge_policy(m0: [f64; 2], m1: [f64; 2], s: f64) -> impl Fn(f64, &[f64]) -> Vec<f64> + Sync {
    let c = 0.5 * ((4.0 * s * s + 4.0).sqrt() - 2.0);
    move |t: f64, x: &[f64]| {
        let var = ((1.0 - t).powi(2) + t * t) * s + t * (1.0 - t) * (2.0 * c + 2.0);
        let dvar = (4.0 * t - 2.0) * s + (1.0 - 2.0 * t) * (2.0 * c + 2.0);
        let k = (dvar - 2.0) / (2.0 * var);
        (0..2).map(|i| (m1[i] - m0[i]) + k * (x[i] - (m0[i] + (m1[i] - m0[i]) * t))).collect()
    }
}

fn c6_closed_loop(solved: &mut Option<Solved>) -> Outcome {
    if solved.is_none() {
        let _ = c5_classical_sbp(solved);
    }
    let s = solved.as_ref().unwrap();
    let grid = GridSpec::uniform(s.problem.horizon, s.problem.state_box.to_vec()).unwrap();
    let table = PolicyTable::build(&s.net, &grid, None).unwrap();
    let cfg = RolloutConfig { horizon: s.problem.horizon, ..RolloutConfig::default() };
    let r = closed_loop(&table, &s.problem.dynamics, &s.problem.rho0, &s.problem.rho_t, &cfg).unwrap();
    // the exact bridge, tabulated on the same grid, for reference
    let exact = PolicyTable::build(&bridge_policy([0.2, 0.2], [0.4, 0.375], 0.1), &grid, None).unwrap();
    let e = closed_loop(&exact, &s.problem.dynamics, &s.problem.rho0, &s.problem.rho_t, &cfg).unwrap().stats;
    let m_t = [0.4, 0.375];
    let dm = (0..2).map(|i| (r.stats.mean[i] - m_t[i]).abs()).fold(0.0, f64::max);
    let cov = [r.stats.covariance[0], r.stats.covariance[3]];
    let dc = cov.iter().map(|c| (c - 0.1).abs() / 0.1).fold(0.0, f64::max);
    let limit = 2.0 * s.boundary.1;
    outcome(
        dm <= 0.05 && r.stats.sinkhorn < limit && dc <= 0.5,
        format!(
            "{}x{}: mean ({:.3}, {:.3}) max dev {dm:.3} (<= 0.05); cov diag ({:.3}, {:.3}) rel dev {dc:.2} (<= 0.5); Sinkhorn {:.2e} (< 2 x {:.2e}); tabulated exact bridge: mean ({:.3}, {:.3}), cov diag ({:.3}, {:.3}), Sinkhorn {:.2e}",
            cfg.paths,
            cfg.steps,
            r.stats.mean[0],
            r.stats.mean[1],
            cov[0],
            cov[1],
            r.stats.sinkhorn,
            s.boundary.1,
            e.mean[0],
            e.mean[1],
            e.covariance[0],
            e.covariance[3],
            e.sinkhorn
        ),
    )
}

fn sde_data(noise: f64, n_traj: usize) -> (SyntheticTruth, SplitDataset) {
    let truth = SyntheticTruth { noise_scale: noise, ..SyntheticTruth::default() };
    let designs = RampInput::latin_designs(n_traj, &[0.5, 0.5], 4);
    let x0 = GaussianSampler::isotropic(vec![0.2, 0.2], 0.1, Some(SyntheticTruth::STATE_BOX.to_vec())).unwrap();
    let ds = generate_dataset(&Dynamics::Synthetic(truth.clone()), &designs, &x0, 200.0, 499, 500, 7).unwrap();
    (truth, split(&ds, 0).unwrap())
}

fn sde_cfg(arch: usize, noiseless: bool) -> SdeFitConfig {
    let mut cfg = SdeFitConfig::new(2, 2, 2, &SdeFitConfig::architecture(arch).unwrap());
    cfg.epochs = 200;
    if noiseless {
        cfg.diffusion_scale = 0.0;
    }
    cfg
}

fn c7_neural_sde() -> Outcome {
    let t0 = Instant::now();
    // drift recovery: more designs and a longer schedule than the ordering check below
    let (truth, data) = sde_data(0.0, 100);
    let mut cfg = sde_cfg(1, true);
    cfg.epochs = 600;
    cfg.lr0 = 3e-2;
    cfg.decay = 0.995;
    cfg.window = 5;
    cfg.stride = 3;
    let model = fit(&cfg, &data).unwrap().model;
    let (mut mae, mut base, mut count) = (0.0, 0.0, 0.0);
    for tr in &data.test.trajectories {
        for rec in &tr.records {
            let f = model.drift(rec.t, &rec.x, &rec.u);
            let g = truth.drift(rec.t, &rec.x, &rec.u);
            for i in 0..2 {
                mae += (f[i] - g[i]).abs();
                base += g[i].abs();
                count += 1.0;
            }
        }
    }
    let (mae, base) = (mae / count, base / count);
    let (_, noisy) = sde_data(1.0, 20);
    let v1 = fit(&sde_cfg(1, false), &noisy).unwrap().best_val;
    let v3 = fit(&sde_cfg(3, false), &noisy).unwrap().best_val;
    outcome(
        mae <= 0.05 && mae < 0.5 * base && v3 < v1,
        format!(
            "noiseless drift MAE {mae:.2e} (<= 0.05, < half the zero-drift baseline {base:.2e}; arch1, 100 trajectories); validation arch3 {v3:.3e} vs arch1 {v1:.3e} (200 epochs each); {:.0} s",
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn c8_kd_tree() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let pts: Vec<Vec<f64>> = (0..100_000).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
    let u: Vec<Vec<f64>> = (0..pts.len()).map(|i| vec![i as f64]).collect();
    let table = PolicyTable::from_entries(pts, u, vec![(0.0, 1.0); 3]).unwrap();
    let qs: Vec<[f64; 3]> = (0..10_000).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let t0 = Instant::now();
    let tree: Vec<usize> = qs.iter().map(|q| table.nearest_index(q[0], &q[1..])).collect();
    let t_tree = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let scan: Vec<usize> = qs.iter().map(|q| table.linear_index(q[0], &q[1..])).collect();
    let t_scan = t0.elapsed().as_secs_f64();
    let agree = tree.iter().zip(&scan).filter(|(a, b)| a == b).count();
    let speedup = t_scan / t_tree;
    outcome(
        agree == qs.len() && speedup >= 100.0,
        format!("{agree}/{} queries agree; speedup {speedup:.0}x (>= 100) on 1e5 points", qs.len()),
    )
}

fn c9_steinhardt() -> Outcome {
    let (p, cell) = bcc(4, 1.0);
    let cfg = ParticleConfiguration::new(p.clone(), cell, 0.9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let rand_pos: Vec<[f64; 3]> =
        (0..60).map(|_| [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)]).collect();
    let rand_cfg = ParticleConfiguration::new(rand_pos, [3.0; 3], 1.4).unwrap();
    let c0 = steinhardt(&cfg, 0)
        .unwrap()
        .per_particle
        .iter()
        .chain(&steinhardt(&rand_cfg, 0).unwrap().per_particle)
        .map(|c| (c - 1.0).abs())
        .fold(0.0, f64::max);
    let mut add = 0.0_f64;
    for _ in 0..200 {
        let (th, ph) = (rng.random_range(0.0..PI), rng.random_range(-PI..PI));
        for l in 0..=MAX_L {
            let s: f64 = (-(l as i64)..=l as i64).map(|m| spherical_harmonic(l, m, th, ph).unwrap().norm_sqr()).sum();
            add = add.max((s - (2 * l + 1) as f64 / (4.0 * PI)).abs());
        }
    }
    let mut brute = 0.0_f64;
    for l in [10, 12] {
        let ours = steinhardt(&cfg, l).unwrap().per_particle;
        for (a, b) in ours.iter().zip(brute_force(&p, cell, 0.9, l)) {
            brute = brute.max((a - b).abs());
        }
    }
    let (cluster, _) = bcc(3, 1.0);
    let place = |r: [[f64; 3]; 3]| -> Vec<[f64; 3]> {
        cluster
            .iter()
            .map(|q| {
                let d = [q[0] - 1.25, q[1] - 1.25, q[2] - 1.25];
                let mut o = [11.25; 3];
                for i in 0..3 {
                    o[i] += (0..3).map(|k| r[i][k] * d[k]).sum::<f64>();
                }
                o
            })
            .collect()
    };
    let base = ParticleConfiguration::new(place(rotation(0.0, 0.0, 0.0)), [24.0; 3], 0.9).unwrap();
    let mut rot = 0.0_f64;
    for _ in 0..5 {
        let r = rotation(rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..PI), rng.random_range(0.0..2.0 * PI));
        let moved = ParticleConfiguration::new(place(r), [24.0; 3], 0.9).unwrap();
        for l in [10, 12] {
            let a = steinhardt(&base, l).unwrap().per_particle;
            let b = steinhardt(&moved, l).unwrap().per_particle;
            rot = rot.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        }
    }
    outcome(
        c0 <= 1e-12 && add <= 1e-10 && brute <= 1e-10 && rot <= 1e-8,
        format!("|C0-1| {c0:.1e}; addition theorem {add:.1e} (<= 1e-10); BCC C10/C12 vs brute force {brute:.1e} (<= 1e-10); rotation {rot:.1e} (<= 1e-8)"),
    )
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("GSBP_ACCEPTANCE").ok().map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().is_none_or(|v| v.contains(&k));
    let mut solved = None;
    let names = [
        "autodiff vs finite differences",
        "Sinkhorn LP equivalence",
        "unrolled Sinkhorn gradient",
        "manufactured residuals",
        "desk-scale classical SBP solve",
        "closed-loop steering",
        "neural SDE pipeline",
        "k-d tree oracle",
        "Steinhardt order parameters",
    ];
    let mut failed = Vec::new();
    for (k, name) in names.iter().enumerate().map(|(i, n)| (i + 1, n)) {
        if !wanted(k) {
            continue;
        }
        let run = catch_unwind(AssertUnwindSafe(|| match k {
            1 => c1_autodiff(),
            2 => c2_sinkhorn_lp(),
            3 => c3_unrolled_gradient(),
            4 => c4_manufactured(),
            5 => c5_classical_sbp(&mut solved),
            6 => c6_closed_loop(&mut solved),
            7 => c7_neural_sde(),
            8 => c8_kd_tree(),
            _ => c9_steinhardt(),
        }));
        let o = run.unwrap_or_else(|_| outcome(false, "panicked".into()));
        println!("criterion {k} ({name}): {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(k);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        if std::env::var_os("GSBP_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
