//! Controlled neural SDE fitted to trajectory data by short-window rollout MSE.
//!
//! Training rolls the learnt SDE forward from the first state of each window
//! under the recorded controls, with a noise path fixed per window and epoch,
//! and back-propagates the squared state error through the unrolled
//! Euler–Maruyama steps into both networks.

use std::path::Path as FsPath;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Scalar;
use crate::nets::{Mlp, MlpSpec, NetError};
use crate::optim::{Adam, OptimError};
use crate::sde::{Dynamics, Record, TrajectoryDataset};

/// Loss reported for a window whose rollout left the finite numbers.
pub const NONFINITE_LOSS: f64 = 1e10;
const CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least 10 trajectories to split, got {0}")]
    TooFewTrajectories(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// `f(t,x,u) = s_f · N_Drift(ξ)`, `g(t,x,u) = s_g · reshape(N_Diffusion(ξ), n, p)`
/// with `ξ = ((t,x,u) − shift) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralSde {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub drift: Mlp,
    pub diffusion: Mlp,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub drift_scale: f64,
    pub diffusion_scale: f64,
}

impl NeuralSde {
    pub fn new(n: usize, m: usize, p: usize, drift: Mlp, diffusion: Mlp) -> Result<Self, FitError> {
        let d = 1 + n + m;
        if drift.spec.input_dim != d || diffusion.spec.input_dim != d {
            return Err(FitError::Config(format!("networks must take {d} inputs (t, x, u)")));
        }
        if drift.spec.output_dim != n || diffusion.spec.output_dim != n * p {
            return Err(FitError::Config(format!("drift must output {n} values and diffusion {}", n * p)));
        }
        Ok(NeuralSde {
            n,
            m,
            p,
            drift,
            diffusion,
            shift: vec![0.0; d],
            scale: vec![1.0; d],
            drift_scale: 1.0,
            diffusion_scale: 1.0,
        })
    }

    fn features<S: Scalar>(&self, t: S, x: &[S], u: &[S]) -> Vec<S> {
        std::iter::once(t)
            .chain(x.iter().copied())
            .chain(u.iter().copied())
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (&s, &c))| (v - s) / c)
            .collect()
    }

    pub fn drift<S: Scalar>(&self, t: S, x: &[S], u: &[S]) -> Vec<S> {
        let out = self.drift.forward(&self.features(t, x, u)).expect("validated input width");
        out.into_iter().map(|v| v * self.drift_scale).collect()
    }

    pub fn diffusion<S: Scalar>(&self, t: S, x: &[S], u: &[S]) -> Vec<S> {
        let out = self.diffusion.forward(&self.features(t, x, u)).expect("validated input width");
        out.into_iter().map(|v| v * self.diffusion_scale).collect()
    }

    fn theta(&self) -> Vec<f64> {
        self.drift.theta.iter().chain(&self.diffusion.theta).copied().collect()
    }

    fn set_theta(&mut self, theta: &[f64]) {
        let k = self.drift.theta.len();
        self.drift.theta.copy_from_slice(&theta[..k]);
        self.diffusion.theta.copy_from_slice(&theta[k..]);
    }

    pub fn save(&self, path: &FsPath) -> Result<(), NetError> {
        crate::nets::save_json(self, path)
    }

    pub fn load(path: &FsPath) -> Result<Self, NetError> {
        crate::nets::load_json(path)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: TrajectoryDataset,
    pub test: TrajectoryDataset,
    pub validation: TrajectoryDataset,
}

/// Whole-trajectory 70/20/10 partition after a seeded shuffle.
pub fn split(ds: &TrajectoryDataset, seed: u64) -> Result<SplitDataset, FitError> {
    let n = ds.len();
    if n < 10 {
        return Err(FitError::TooFewTrajectories(n));
    }
    let mut ids: Vec<usize> = ds.trajectories.iter().map(|t| t.id).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (0.7 * n as f64).round() as usize;
    let n_test = (0.2 * n as f64).round() as usize;
    let (train, rest) = ids.split_at(n_train);
    let (test, val) = rest.split_at(n_test);
    Ok(SplitDataset { train: ds.subset(train), test: ds.subset(test), validation: ds.subset(val) })
}

/// Consecutive windows of `len` records starting every `stride` records.
pub fn windows(ds: &TrajectoryDataset, len: usize, stride: usize) -> Vec<&[Record]> {
    let mut out = Vec::new();
    for tr in &ds.trajectories {
        let k = tr.records.len();
        let mut s = 0;
        while s + len <= k {
            out.push(&tr.records[s..s + len]);
            s += stride;
        }
    }
    out
}

fn noise_path(seed: u64, steps: usize, p: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps * p).map(|_| rng.sample(StandardNormal)).collect()
}

fn control_at(w: &[Record], k: usize, frac: f64) -> Vec<f64> {
    if frac == 0.0 {
        return w[k].u.clone();
    }
    w[k].u.iter().zip(&w[k + 1].u).map(|(a, b)| a + frac * (b - a)).collect()
}

/// Rollout MSE of `model` over one window: `substeps` Euler–Maruyama steps per
/// record interval, controls interpolated linearly between records, noise from
/// `noise_seed`; mean over recorded times after the first and over coordinates.
///
/// A non-finite rollout yields [`NONFINITE_LOSS`] and a warning.
pub fn nsde_loss(model: &Dynamics, window: &[Record], substeps: usize, noise_seed: u64) -> f64 {
    assert!(window.len() >= 2 && substeps >= 1, "window needs two records and at least one substep");
    let n = model.state_dim();
    let p = model.noise_dim();
    let dt = (window[1].t - window[0].t) / substeps as f64;
    let sdt = (2.0 * dt).sqrt();
    let z = noise_path(noise_seed, (window.len() - 1) * substeps, p);
    let mut x = window[0].x.clone();
    let mut acc = 0.0;
    for s in 0..(window.len() - 1) * substeps {
        let k = s / substeps;
        let frac = (s % substeps) as f64 / substeps as f64;
        let t = window[k].t + frac * (window[k + 1].t - window[k].t);
        let u = control_at(window, k, frac);
        let f = model.drift(t, &x, &u);
        let g = model.diffusion(t, &x, &u);
        for i in 0..n {
            let dw: f64 = (0..p).map(|j| g[i * p + j] * z[s * p + j]).sum();
            x[i] += f[i] * dt + sdt * dw;
        }
        if x.iter().any(|v| !v.is_finite()) {
            log::warn!("rollout left the finite range at step {s}");
            return NONFINITE_LOSS;
        }
        if (s + 1) % substeps == 0 {
            acc += x.iter().zip(&window[k + 1].x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    acc / ((window.len() - 1) * n) as f64
}

struct ChunkOut {
    loss: f64,
    grad: Vec<f64>,
    bad: usize,
}

// Batched rollout of one chunk of windows: summed window losses and, when
// requested, the summed gradient with respect to [θ_drift, θ_diffusion].
fn chunk_loss(model: &NeuralSde, wins: &[&[Record]], seeds: &[u64], substeps: usize, want_grad: bool) -> ChunkOut {
    let (n, m, p) = (model.n, model.m, model.p);
    let b = wins.len();
    let len = wins[0].len();
    let steps = (len - 1) * substeps;
    let d_in = 1 + n + m;
    let nd = model.drift.num_params();
    let noisy = model.diffusion_scale != 0.0;
    let z: Vec<Vec<f64>> = if noisy { seeds.iter().map(|&s| noise_path(s, steps, p)).collect() } else { Vec::new() };

    let mut x = vec![0.0; n * b];
    for (w, win) in wins.iter().enumerate() {
        for i in 0..n {
            x[i * b + w] = win[0].x[i];
        }
    }
    let mut passes = Vec::with_capacity(if want_grad { steps } else { 0 });
    let mut errs: Vec<Vec<f64>> = Vec::with_capacity(len - 1);
    let mut per_window = vec![0.0; b];
    let mut bad = vec![false; b];
    let norm = ((len - 1) * n) as f64;
    let dts: Vec<f64> = wins.iter().map(|w| (w[1].t - w[0].t) / substeps as f64).collect();
    for s in 0..steps {
        let k = s / substeps;
        let frac = (s % substeps) as f64 / substeps as f64;
        let mut input = vec![0.0; d_in * b];
        for (w, win) in wins.iter().enumerate() {
            let t = win[k].t + frac * (win[k + 1].t - win[k].t);
            let u = control_at(win, k, frac);
            input[w] = (t - model.shift[0]) / model.scale[0];
            for i in 0..n {
                input[(1 + i) * b + w] = (x[i * b + w] - model.shift[1 + i]) / model.scale[1 + i];
            }
            for j in 0..m {
                input[(1 + n + j) * b + w] = (u[j] - model.shift[1 + n + j]) / model.scale[1 + n + j];
            }
        }
        let dp = model.drift.forward_batch(0, b, input.clone()).expect("validated widths");
        let gp = if noisy { Some(model.diffusion.forward_batch(0, b, input).expect("validated widths")) } else { None };
        for w in 0..b {
            let dt = dts[w];
            let sdt = (2.0 * dt).sqrt();
            for i in 0..n {
                let mut v = x[i * b + w] + dt * model.drift_scale * dp.out(0, i, w);
                if let Some(gp) = &gp {
                    let dw: f64 = (0..p).map(|j| gp.out(0, i * p + j, w) * z[w][s * p + j]).sum();
                    v += sdt * model.diffusion_scale * dw;
                }
                if !v.is_finite() {
                    bad[w] = true;
                }
                x[i * b + w] = v;
            }
        }
        if want_grad {
            passes.push((dp, gp));
        }
        if (s + 1) % substeps == 0 {
            let mut e = vec![0.0; n * b];
            for (w, win) in wins.iter().enumerate() {
                for i in 0..n {
                    let d = x[i * b + w] - win[k + 1].x[i];
                    e[i * b + w] = d;
                    per_window[w] += d * d / norm;
                }
            }
            errs.push(e);
        }
    }
    let nbad = bad.iter().filter(|&&v| v).count();
    let loss: f64 =
        per_window.iter().zip(&bad).map(|(&l, &bd)| if bd || !l.is_finite() { NONFINITE_LOSS } else { l }).sum();
    if nbad > 0 || !want_grad {
        return ChunkOut { loss, grad: Vec::new(), bad: nbad };
    }

    let mut grad = vec![0.0; nd + model.diffusion.num_params()];
    let (gd, gg) = grad.split_at_mut(nd);
    let mut lam = vec![0.0; n * b];
    for s in (0..steps).rev() {
        if (s + 1) % substeps == 0 {
            let e = &errs[(s + 1) / substeps - 1];
            for (l, ev) in lam.iter_mut().zip(e) {
                *l += 2.0 * ev / norm;
            }
        }
        let (dp, gp) = &passes[s];
        let mut d_adj = vec![0.0; n * b];
        for i in 0..n {
            for w in 0..b {
                d_adj[i * b + w] = lam[i * b + w] * dts[w] * model.drift_scale;
            }
        }
        let hd = dp.backward(&d_adj, gd);
        let hg = gp.as_ref().map(|gp| {
            let mut g_adj = vec![0.0; n * p * b];
            for i in 0..n {
                for j in 0..p {
                    for w in 0..b {
                        g_adj[(i * p + j) * b + w] =
                            lam[i * b + w] * (2.0 * dts[w]).sqrt() * model.diffusion_scale * z[w][s * p + j];
                    }
                }
            }
            gp.backward(&g_adj, gg)
        });
        for i in 0..n {
            let c = 1.0 / model.scale[1 + i];
            for w in 0..b {
                let mut v = hd[(1 + i) * b + w];
                if let Some(hg) = &hg {
                    v += hg[(1 + i) * b + w];
                }
                lam[i * b + w] += v * c;
            }
        }
    }
    ChunkOut { loss, grad, bad: 0 }
}

/// Mean rollout loss over `wins` for a neural model, batched, with the
/// gradient with respect to `[θ_drift, θ_diffusion]` when `want_grad`.
/// Returns `(loss, grad, non_finite_windows)`. Chunks are reduced in order.
pub fn batch_loss(
    model: &NeuralSde,
    wins: &[&[Record]],
    seeds: &[u64],
    substeps: usize,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>, usize) {
    assert_eq!(wins.len(), seeds.len());
    if wins.is_empty() {
        return (0.0, None, 0);
    }
    let outs: Vec<ChunkOut> = wins
        .par_chunks(CHUNK)
        .zip(seeds.par_chunks(CHUNK))
        .map(|(w, s)| chunk_loss(model, w, s, substeps, want_grad))
        .collect();
    let count = wins.len() as f64;
    let loss = outs.iter().map(|o| o.loss).sum::<f64>() / count;
    let bad = outs.iter().map(|o| o.bad).sum();
    if !want_grad || bad > 0 {
        return (loss, None, bad);
    }
    let mut grad = vec![0.0; model.drift.num_params() + model.diffusion.num_params()];
    for o in &outs {
        for (g, v) in grad.iter_mut().zip(&o.grad) {
            *g += v;
        }
    }
    for g in &mut grad {
        *g /= count;
    }
    (loss, Some(grad), 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeFitConfig {
    pub drift_spec: MlpSpec,
    pub diffusion_spec: MlpSpec,
    pub lr0: f64,
    pub decay: f64,
    /// Fraction of the training windows per optimizer step.
    pub batch_fraction: f64,
    pub epochs: usize,
    /// Records per training window.
    pub window: usize,
    pub stride: usize,
    pub seed: u64,
    /// Output scale of the diffusion network.
    pub diffusion_scale: f64,
    pub clip: Option<f64>,
}

impl SdeFitConfig {
    /// Hidden layers of the three architectures compared in the sweep.
    pub fn architecture(arch: usize) -> Option<Vec<usize>> {
        match arch {
            1 => Some(vec![200]),
            2 => Some(vec![1000]),
            3 => Some(vec![200; 6]),
            _ => None,
        }
    }

    pub fn new(n: usize, m: usize, p: usize, hidden: &[usize]) -> Self {
        SdeFitConfig {
            drift_spec: MlpSpec::new(1 + n + m, hidden, n),
            diffusion_spec: MlpSpec::new(1 + n + m, hidden, n * p),
            lr0: 1e-3,
            decay: 0.999,
            batch_fraction: 0.25,
            epochs: 100,
            window: 10,
            stride: 5,
            seed: 0,
            diffusion_scale: 0.01,
            clip: None,
        }
    }

    fn validate(&self) -> Result<(), FitError> {
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return Err(FitError::Config("batch_fraction must lie in (0, 1]".into()));
        }
        if self.window < 2 || self.stride == 0 {
            return Err(FitError::Config("window needs >= 2 records and stride >= 1".into()));
        }
        if !(self.lr0 > 0.0) || !(self.decay > 0.0) {
            return Err(FitError::Config("lr0 and decay must be positive".into()));
        }
        self.drift_spec.validate()?;
        self.diffusion_spec.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub fn write_history(rows: &[HistoryRow], path: &FsPath) -> Result<(), FitError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "lr"])?;
    for r in rows {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string(), r.lr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Best-validation checkpoint.
    pub model: NeuralSde,
    pub history: Vec<HistoryRow>,
    pub best_epoch: Option<usize>,
    pub best_val: f64,
}

fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ c.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Affine feature normalization to [−1, 1] and drift output scale from the
/// training data.
pub fn init_model(cfg: &SdeFitConfig, train: &TrajectoryDataset) -> Result<NeuralSde, FitError> {
    let n = train.meta.state_dim;
    let m = train.meta.control_dim;
    let p = cfg.diffusion_spec.output_dim / n.max(1);
    let drift = Mlp::init(cfg.drift_spec.clone(), cfg.seed)?;
    let diffusion = Mlp::init(cfg.diffusion_spec.clone(), mix(cfg.seed, 1, 0))?;
    let mut model = NeuralSde::new(n, m, p, drift, diffusion)?;
    let d = 1 + n + m;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut rate = 0.0;
    let mut count = 0usize;
    for tr in &train.trajectories {
        for r in &tr.records {
            for (k, v) in std::iter::once(r.t).chain(r.x.iter().copied()).chain(r.u.iter().copied()).enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        for w in tr.records.windows(2) {
            let dt = w[1].t - w[0].t;
            for i in 0..n {
                rate += ((w[1].x[i] - w[0].x[i]) / dt).powi(2);
                count += 1;
            }
        }
    }
    for k in 0..d {
        model.shift[k] = 0.5 * (lo[k] + hi[k]);
        model.scale[k] = (0.5 * (hi[k] - lo[k])).max(1e-3);
    }
    model.drift_scale = if count > 0 { (rate / count as f64).sqrt().max(1e-6) } else { 1.0 };
    model.diffusion_scale = cfg.diffusion_scale;
    Ok(model)
}

/// Adam over `[θ_drift, θ_diffusion]` with per-epoch exponential decay; the
/// returned model is the best-validation checkpoint.
pub fn fit(cfg: &SdeFitConfig, data: &SplitDataset) -> Result<FitResult, FitError> {
    cfg.validate()?;
    let mut model = init_model(cfg, &data.train)?;
    let substeps = data.train.meta.substeps().max(1);
    let train_w = windows(&data.train, cfg.window, cfg.stride);
    let val_w = windows(&data.validation, cfg.window, cfg.stride);
    if cfg.epochs > 0 && (train_w.is_empty() || val_w.is_empty()) {
        return Err(FitError::Config("trajectories are shorter than one window".into()));
    }
    let val_seeds: Vec<u64> = (0..val_w.len() as u64).map(|w| mix(cfg.seed, u64::MAX, w)).collect();
    let mut theta = model.theta();
    let mut adam = Adam::new(theta.len(), cfg.lr0, cfg.decay);
    if let Some(c) = cfg.clip {
        adam = adam.with_clip(c);
    }
    let per_step = ((train_w.len() as f64 * cfg.batch_fraction).ceil() as usize).max(1);
    let mut order: Vec<usize> = (0..train_w.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 2, 0));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (model.clone(), None, f64::INFINITY);
    for epoch in 0..cfg.epochs {
        let lr = adam.lr();
        order.shuffle(&mut shuffle);
        let mut train_sum = 0.0;
        for batch in order.chunks(per_step) {
            let wins: Vec<&[Record]> = batch.iter().map(|&i| train_w[i]).collect();
            let seeds: Vec<u64> = batch.iter().map(|&i| mix(cfg.seed, epoch as u64 + 1, i as u64)).collect();
            let (loss, grad, bad) = batch_loss(&model, &wins, &seeds, substeps, true);
            let grad = match grad {
                Some(g) if bad == 0 && loss.is_finite() => g,
                _ => return Err(FitError::Diverged { epoch }),
            };
            train_sum += loss * wins.len() as f64;
            adam.step(&mut theta, &grad)?;
            model.set_theta(&theta);
        }
        adam.decay_epoch();
        let (val, _, bad) = batch_loss(&model, &val_w, &val_seeds, substeps, false);
        if bad > 0 || !val.is_finite() {
            return Err(FitError::Diverged { epoch });
        }
        let train_loss = train_sum / train_w.len() as f64;
        log::info!("epoch {epoch}: train {train_loss:.4e} val {val:.4e} lr {lr:.3e}");
        history.push(HistoryRow { epoch, train_loss, val_loss: val, lr });
        if val < best.2 {
            best = (model.clone(), Some(epoch), val);
        }
    }
    Ok(FitResult { model: best.0, history, best_epoch: best.1, best_val: best.2 })
}
