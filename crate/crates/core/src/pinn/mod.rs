//! Physics-informed solver for the generalized Schrödinger bridge optimality
//! system: HJB, FPK and policy residuals on collocation points plus Sinkhorn
//! losses at the two endpoint times.

mod boundary;
mod interior;
mod net;
pub mod residual;
pub mod sobol;

pub use boundary::{boundary_term, mass_term, BoundaryBatch, BoundaryTerm};
pub use interior::{interior_loss, InteriorLoss, InteriorWeights};
pub use net::PinnNet;
pub use residual::{fpk_residual, hjb_residual, policy_residual, residuals, Field, Heads, Residuals, NX};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AdError;
use crate::nets::NetError;
use crate::optim::{Adam, OptimError};
use crate::sde::{Dynamics, GaussianSampler, SdeError};
use crate::sinkhorn::SinkhornError;
use sobol::Sobol;

#[derive(Debug, Error)]
pub enum PinnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {component}{}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    NonFinite { epoch: Option<usize>, component: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sinkhorn(#[from] SinkhornError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl PinnError {
    fn at_epoch(self, epoch: usize) -> Self {
        match self {
            PinnError::NonFinite { component, .. } => PinnError::NonFinite { epoch: Some(epoch), component },
            e => e,
        }
    }
}

/// Dynamics, endpoint distributions, horizon and state box.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GsbpProblem {
    pub dynamics: Dynamics,
    pub rho0: GaussianSampler,
    pub rho_t: GaussianSampler,
    pub horizon: f64,
    pub state_box: [(f64, f64); NX],
    /// Physical control range, only used by the saturation diagnostic.
    pub control_box: Option<Vec<(f64, f64)>>,
}

impl GsbpProblem {
    /// Endpoint Gaussians `N(m₀, Σ₀)`, `N(m_T, Σ_T)` truncated to the state box.
    pub fn new(
        dynamics: Dynamics,
        m0: [f64; NX],
        cov0: [f64; NX * NX],
        m_t: [f64; NX],
        cov_t: [f64; NX * NX],
        horizon: f64,
        state_box: [(f64, f64); NX],
    ) -> Result<Self, PinnError> {
        if !(horizon > 0.0) {
            return Err(PinnError::Config("horizon must be positive".into()));
        }
        for c in [&cov0, &cov_t] {
            if (c[1] - c[2]).abs() > 1e-14 * (1.0 + c[1].abs()) {
                return Err(PinnError::Config("endpoint covariances must be symmetric".into()));
            }
        }
        if dynamics.state_dim() != NX {
            return Err(PinnError::Config(format!("the solver handles n = {NX} states")));
        }
        let bounds = Some(state_box.to_vec());
        Ok(GsbpProblem {
            rho0: GaussianSampler::new(m0.to_vec(), cov0.to_vec(), bounds.clone())?,
            rho_t: GaussianSampler::new(m_t.to_vec(), cov_t.to_vec(), bounds)?,
            dynamics,
            horizon,
            state_box,
            control_box: None,
        })
    }

    /// `f = u`, `G = I`, `m₀ = (0.2, 0.2)`, `m_T = (0.4, 0.375)`, `Σ = 0.1 I`, `T = 1`, box `[0, 1]²`.
    pub fn classical_sbp() -> Self {
        Self::new(
            Dynamics::ClassicalSbp { n: 2 },
            [0.2, 0.2],
            [0.1, 0.0, 0.0, 0.1],
            [0.4, 0.375],
            [0.1, 0.0, 0.0, 0.1],
            1.0,
            [(0.0, 1.0), (0.0, 1.0)],
        )
        .expect("valid constants")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rho0: f64,
    pub rho_t: f64,
    pub psi: f64,
    pub rho: f64,
    pub u: f64,
    pub mass: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { rho0: 1.0, rho_t: 1.0, psi: 1.0, rho: 1.0, u: 1.0, mass: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PinnConfig {
    pub hidden: Vec<usize>,
    pub n_colloc: usize,
    pub epochs: usize,
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    /// Unrolled Sinkhorn iterations in the boundary losses.
    pub sinkhorn_iters: usize,
    pub boundary_batch: usize,
    /// Collocation resampling period; `None` means `epochs / 5`.
    pub resample_every: Option<usize>,
    pub seed: u64,
    pub weights: LossWeights,
    pub debias: bool,
    pub clip: Option<f64>,
    /// Midpoint-rule resolution of the endpoint mass penalty; 0 disables it.
    pub mass_grid: usize,
}

impl Default for PinnConfig {
    fn default() -> Self {
        PinnConfig {
            hidden: vec![32, 32],
            n_colloc: 500,
            epochs: 5000,
            lr: 1e-3,
            decay: 1.0,
            eps: 0.1,
            sinkhorn_iters: 50,
            boundary_batch: 256,
            resample_every: None,
            seed: 0,
            weights: LossWeights::default(),
            debias: true,
            clip: None,
            mass_grid: 16,
        }
    }
}

impl PinnConfig {
    /// Network and schedule of the full-scale run: 4 × 70, N = 3000, 100 000 epochs.
    pub fn full_scale() -> Self {
        PinnConfig { hidden: vec![70; 4], n_colloc: 3000, epochs: 100_000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), PinnError> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(PinnError::Config("hidden layers must be non-empty and positive".into()));
        }
        if self.n_colloc == 0 || self.boundary_batch < 2 || self.sinkhorn_iters == 0 {
            return Err(PinnError::Config(
                "n_colloc ≥ 1, boundary_batch ≥ 2 and sinkhorn_iters ≥ 1 are required".into(),
            ));
        }
        if !(self.lr > 0.0 && self.decay > 0.0 && self.eps > 0.0) {
            return Err(PinnError::Config("lr, decay and eps must be positive".into()));
        }
        Ok(())
    }

    pub fn resample_period(&self) -> usize {
        self.resample_every.unwrap_or(self.epochs / 5).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_rho0: f64,
    pub l_rho_t: f64,
    pub l_psi: f64,
    pub l_rho: f64,
    pub l_u: Vec<f64>,
    /// `(M₀ − 1)² + (M_T − 1)²`.
    pub l_mass: f64,
    pub total: f64,
}

impl LossReport {
    fn new(l_rho0: f64, l_rho_t: f64, l_mass: f64, inner: &InteriorLoss, w: &LossWeights) -> Self {
        let total = w.mass * l_mass
            + w.rho0 * l_rho0
            + w.rho_t * l_rho_t
            + w.psi * inner.l_psi
            + w.rho * inner.l_rho
            + w.u * inner.l_u.iter().sum::<f64>();
        LossReport { l_rho0, l_rho_t, l_psi: inner.l_psi, l_rho: inner.l_rho, l_u: inner.l_u.clone(), l_mass, total }
    }
}

/// Interior Sobol points in `box × (0, T)` and the endpoint batches.
#[derive(Clone, Debug, PartialEq)]
pub struct CollocationSet {
    pub interior: Vec<[f64; 3]>,
    pub start: BoundaryBatch,
    pub end: BoundaryBatch,
}

impl CollocationSet {
    pub fn interior_sobol(problem: &GsbpProblem, n: usize, seed: u64) -> Vec<[f64; 3]> {
        let s = Sobol::scrambled(3, seed);
        let b = problem.state_box;
        (1..=n as u32)
            .map(|i| {
                let q = s.point(i);
                [b[0].0 + (b[0].1 - b[0].0) * q[0], b[1].0 + (b[1].1 - b[1].0) * q[1], problem.horizon * q[2]]
            })
            .collect()
    }

    pub fn draw(problem: &GsbpProblem, n: usize, batch: usize, seed: u64) -> Result<Self, PinnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(CollocationSet {
            interior: Self::interior_sobol(problem, n, rng.random()),
            start: BoundaryBatch::draw(&problem.state_box, &problem.rho0, batch, &mut rng)?,
            end: BoundaryBatch::draw(&problem.state_box, &problem.rho_t, batch, &mut rng)?,
        })
    }

    fn redraw_batches(&mut self, problem: &GsbpProblem, seed: u64) -> Result<(), PinnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.start.proposal.len();
        self.start = BoundaryBatch::draw(&problem.state_box, &problem.rho0, d, &mut rng)?;
        self.end = BoundaryBatch::draw(&problem.state_box, &problem.rho_t, d, &mut rng)?;
        Ok(())
    }
}

/// Loss report and, when requested, the gradient of the weighted total.
pub fn total_loss(
    net: &PinnNet,
    problem: &GsbpProblem,
    colloc: &CollocationSet,
    cfg: &PinnConfig,
    want_grad: bool,
) -> Result<(LossReport, Vec<f64>), PinnError> {
    let w = cfg.weights;
    let iw = InteriorWeights { psi: w.psi, rho: w.rho, u: w.u };
    let inner = interior_loss(net, &problem.dynamics, &colloc.interior, iw, want_grad)?;
    let b0 = boundary_term(net, 0.0, &colloc.start, cfg.eps, cfg.sinkhorn_iters, cfg.debias, want_grad)?;
    let bt = boundary_term(net, problem.horizon, &colloc.end, cfg.eps, cfg.sinkhorn_iters, cfg.debias, want_grad)?;
    let (mut l_mass, mut mass_grads) = (0.0, Vec::new());
    if cfg.mass_grid > 0 {
        for t in [0.0, problem.horizon] {
            let (v, _, g) = mass_term(net, t, &problem.state_box, cfg.mass_grid, want_grad)?;
            l_mass += v;
            mass_grads.push(g);
        }
    }
    let report = LossReport::new(b0.value, bt.value, l_mass, &inner, &w);
    let mut grad = Vec::new();
    if want_grad {
        grad = inner.grad;
        for ((g, a), b) in grad.iter_mut().zip(&b0.grad).zip(&bt.grad) {
            *g += w.rho0 * a + w.rho_t * b;
        }
        for mg in &mass_grads {
            for (g, v) in grad.iter_mut().zip(mg) {
                *g += w.mass * v;
            }
        }
    }
    Ok((report, grad))
}

/// Endpoint losses on fresh batches drawn from `seed`.
pub fn boundary_loss(
    net: &PinnNet,
    problem: &GsbpProblem,
    batch: usize,
    eps: f64,
    iters: usize,
    seed: u64,
) -> Result<(f64, f64), PinnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b0 = BoundaryBatch::draw(&problem.state_box, &problem.rho0, batch, &mut rng)?;
    let bt = BoundaryBatch::draw(&problem.state_box, &problem.rho_t, batch, &mut rng)?;
    Ok((
        boundary_term(net, 0.0, &b0, eps, iters, true, false)?.value,
        boundary_term(net, problem.horizon, &bt, eps, iters, true, false)?.value,
    ))
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub net: PinnNet,
    pub history: Vec<LossReport>,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Adam on the weighted total; interior points are redrawn every
/// [`resample_period`](PinnConfig::resample_period) epochs, endpoint batches
/// every epoch. `observer` sees every epoch's report before the update.
pub fn train(
    problem: &GsbpProblem,
    cfg: &PinnConfig,
    mut observer: Option<&mut dyn FnMut(usize, &PinnNet, &LossReport)>,
) -> Result<TrainResult, PinnError> {
    cfg.validate()?;
    let m = problem.dynamics.control_dim();
    let mut net = PinnNet::new(&cfg.hidden, m, problem.state_box, problem.horizon, cfg.seed)?;
    let mut colloc = CollocationSet::draw(problem, cfg.n_colloc, cfg.boundary_batch, mix(cfg.seed, 1))?;
    let mut adam = Adam::new(net.mlp.num_params(), cfg.lr, cfg.decay);
    if let Some(c) = cfg.clip {
        adam = adam.with_clip(c);
    }
    let period = cfg.resample_period();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if epoch > 0 {
            if epoch % period == 0 {
                colloc.interior =
                    CollocationSet::interior_sobol(problem, cfg.n_colloc, mix(cfg.seed, 2 + epoch as u64));
            }
            colloc.redraw_batches(problem, mix(cfg.seed ^ 0x5bd1_e995, epoch as u64))?;
        }
        let (report, grad) = total_loss(&net, problem, &colloc, cfg, true).map_err(|e| e.at_epoch(epoch))?;
        if !report.total.is_finite() {
            return Err(PinnError::NonFinite { epoch: Some(epoch), component: offending(&report) });
        }
        if let Some(obs) = observer.as_deref_mut() {
            obs(epoch, &net, &report);
        }
        adam.step(&mut net.mlp.theta, &grad).map_err(|e| match e {
            OptimError::NonFinite(_) => PinnError::NonFinite { epoch: Some(epoch), component: "gradient".into() },
            e => e.into(),
        })?;
        adam.decay_epoch();
        history.push(report);
    }
    Ok(TrainResult { net, history })
}

fn offending(r: &LossReport) -> String {
    let mut named =
        vec![("L_rho0", r.l_rho0), ("L_rhoT", r.l_rho_t), ("L_psi", r.l_psi), ("L_rho", r.l_rho), ("L_mass", r.l_mass)];
    let names: Vec<String> = (1..=r.l_u.len()).map(|j| format!("L_u{j}")).collect();
    named.extend(names.iter().map(|s| s.as_str()).zip(r.l_u.iter().copied()));
    named.iter().filter(|(_, v)| !v.is_finite()).map(|(n, _)| n.to_string()).collect::<Vec<_>>().join(", ")
}

pub fn write_history(history: &[LossReport], path: &Path) -> Result<(), PinnError> {
    let mut w = csv::Writer::from_path(path)?;
    let m = history.first().map_or(0, |r| r.l_u.len());
    let mut header = vec!["epoch".to_string(), "L_rho0".into(), "L_rhoT".into(), "L_psi".into(), "L_rho".into()];
    header.extend((1..=m).map(|j| format!("L_u{j}")));
    header.push("L_mass".into());
    header.push("total".into());
    w.write_record(&header)?;
    for (e, r) in history.iter().enumerate() {
        let mut row =
            vec![e.to_string(), r.l_rho0.to_string(), r.l_rho_t.to_string(), r.l_psi.to_string(), r.l_rho.to_string()];
        row.extend(r.l_u.iter().map(|v| v.to_string()));
        row.push(r.l_mass.to_string());
        row.push(r.total.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `(t, x₁, x₂, ψ, ρ, u₁, …)` on `nt × nx × nx` points including the box edges and both endpoint times.
pub fn solution_grid(net: &PinnNet, problem: &GsbpProblem, nt: usize, nx: usize) -> Vec<Vec<f64>> {
    let b = problem.state_box;
    let lin =
        |lo: f64, hi: f64, k: usize, n: usize| if n < 2 { lo } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 };
    let mut rows = Vec::with_capacity(nt * nx * nx);
    for it in 0..nt {
        let t = lin(0.0, problem.horizon, it, nt);
        for i in 0..nx {
            for j in 0..nx {
                let x = [lin(b[0].0, b[0].1, i, nx), lin(b[1].0, b[1].1, j, nx)];
                let (psi, rho, u) = net.eval(t, x);
                let mut row = vec![t, x[0], x[1], psi, rho];
                row.extend(u);
                rows.push(row);
            }
        }
    }
    rows
}

pub fn write_grid(rows: &[Vec<f64>], controls: usize, path: &Path) -> Result<(), PinnError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string(), "x1".into(), "x2".into(), "psi".into(), "rho".into()];
    header.extend((1..=controls).map(|j| format!("u{j}")));
    w.write_record(&header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Trapezoid rule for `∫ρ(t, x) dx` over the state box on a `k × k` grid.
pub fn mass(net: &PinnNet, problem: &GsbpProblem, t: f64, k: usize) -> f64 {
    let b = problem.state_box;
    let (hx, hy) = ((b[0].1 - b[0].0) / (k - 1) as f64, (b[1].1 - b[1].0) / (k - 1) as f64);
    let mut acc = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = if i == 0 || i == k - 1 { 0.5 } else { 1.0 } * if j == 0 || j == k - 1 { 0.5 } else { 1.0 };
            acc += w * net.eval(t, [b[0].0 + hx * i as f64, b[1].0 + hy * j as f64]).1;
        }
    }
    acc * hx * hy
}

/// Fraction of grid points where the (unclamped) policy leaves the control box.
pub fn saturation(net: &PinnNet, problem: &GsbpProblem, nt: usize, nx: usize) -> Option<f64> {
    let cb = problem.control_box.as_ref()?;
    let rows = solution_grid(net, problem, nt, nx);
    let out = rows.iter().filter(|r| r[5..].iter().zip(cb).any(|(u, (lo, hi))| u < lo || u > hi)).count();
    Some(out as f64 / rows.len() as f64)
}
