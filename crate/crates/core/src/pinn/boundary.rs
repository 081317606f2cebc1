//! Endpoint losses: the density head at `t ∈ {0, T}` weights a uniform proposal
//! cloud over the state box; that weighted cloud is compared with a target
//! batch through the unrolled Sinkhorn divergence.

use rand::Rng;

use super::net::PinnNet;
use super::residual::NJ;
use super::PinnError;
use crate::autodiff::Scalar;
use crate::sinkhorn::{divergence_grad, sq_dist, unrolled};

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryBatch {
    pub proposal: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
}

impl BoundaryBatch {
    pub fn draw<R: Rng>(
        state_box: &[(f64, f64)],
        target: &crate::sde::GaussianSampler,
        size: usize,
        rng: &mut R,
    ) -> Result<Self, PinnError> {
        let proposal =
            (0..size).map(|_| state_box.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect()).collect();
        let target = target.sample_n(size, rng)?;
        Ok(BoundaryBatch { proposal, target })
    }
}

#[derive(Clone, Debug)]
pub struct BoundaryTerm {
    pub value: f64,
    /// Self-normalized weights the density head assigned to the proposal points.
    pub weights: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Loss at time `t` and, when requested, its θ-gradient. With `debias` the
/// value is `W(w, b) − ½W(w, w) − ½W(b, b)`, otherwise the cross term alone.
pub fn boundary_term(
    net: &PinnNet,
    t: f64,
    batch: &BoundaryBatch,
    eps: f64,
    iters: usize,
    debias: bool,
    want_grad: bool,
) -> Result<BoundaryTerm, PinnError> {
    let d = batch.proposal.len();
    if d < 2 || batch.target.len() < 2 {
        return Err(PinnError::Config("boundary batches need at least 2 points".into()));
    }
    let mut input = vec![0.0; NJ * d];
    for (p, z) in batch.proposal.iter().enumerate() {
        let xi = net.normalize([z[0], z[1], t]);
        for k in 0..NJ {
            input[k * d + p] = xi[k];
        }
    }
    let pass = net.mlp.forward_batch(0, d, input)?;
    let o1: Vec<f64> = (0..d).map(|p| pass.out(0, 1, p)).collect();
    let rho: Vec<f64> = o1.iter().map(|&v| v.softplus()).collect();
    let mass: f64 = rho.iter().sum();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(PinnError::NonFinite { epoch: None, component: format!("density head at t = {t}") });
    }
    let w: Vec<f64> = rho.iter().map(|r| r / mass).collect();
    let b = vec![1.0 / batch.target.len() as f64; batch.target.len()];
    let (value, gw) = if debias {
        let r = divergence_grad(&batch.proposal, &w, &batch.target, &b, eps, iters, false)?;
        (r.value, r.grad_weights)
    } else {
        let c = sq_dist(&batch.proposal, &batch.target)?;
        let r = unrolled(&w, &b, &c, eps, iters, false)?;
        let gw = r.grad_log_mu1.iter().zip(&w).map(|(g, wi)| if *wi > 0.0 { g / wi } else { 0.0 }).collect();
        (r.value, gw)
    };
    if !value.is_finite() {
        return Err(PinnError::NonFinite { epoch: None, component: format!("Sinkhorn loss at t = {t}") });
    }
    let mut grad = Vec::new();
    if want_grad {
        // w = ρ / Σρ, ρ = softplus(o₁)
        let mean: f64 = gw.iter().zip(&w).map(|(g, wi)| g * wi).sum();
        let mut out_adj = vec![0.0; pass.output().len()];
        for p in 0..d {
            out_adj[d + p] = (gw[p] - mean) / mass * sigmoid(o1[p]);
        }
        grad = vec![0.0; net.mlp.num_params()];
        pass.backward(&out_adj, &mut grad);
    }
    Ok(BoundaryTerm { value, weights: w, grad })
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `(M − 1)²` with `M` the `k × k` midpoint-rule mass of `ρ(t, ·)` over the box.
/// The Sinkhorn terms see only normalized weights, so this pins the scale of `ρ`.
pub fn mass_term(
    net: &PinnNet,
    t: f64,
    state_box: &[(f64, f64); 2],
    k: usize,
    want_grad: bool,
) -> Result<(f64, f64, Vec<f64>), PinnError> {
    let d = k * k;
    let (hx, hy) = ((state_box[0].1 - state_box[0].0) / k as f64, (state_box[1].1 - state_box[1].0) / k as f64);
    let mut input = vec![0.0; NJ * d];
    for i in 0..k {
        for j in 0..k {
            let p = i * k + j;
            let xi = net.normalize([state_box[0].0 + hx * (i as f64 + 0.5), state_box[1].0 + hy * (j as f64 + 0.5), t]);
            for c in 0..NJ {
                input[c * d + p] = xi[c];
            }
        }
    }
    let pass = net.mlp.forward_batch(0, d, input)?;
    let o1: Vec<f64> = (0..d).map(|p| pass.out(0, 1, p)).collect();
    let mass = hx * hy * o1.iter().map(|v| v.softplus()).sum::<f64>();
    if !mass.is_finite() {
        return Err(PinnError::NonFinite { epoch: None, component: format!("density mass at t = {t}") });
    }
    let value = (mass - 1.0) * (mass - 1.0);
    let mut grad = Vec::new();
    if want_grad {
        let mut out_adj = vec![0.0; pass.output().len()];
        for p in 0..d {
            out_adj[d + p] = 2.0 * (mass - 1.0) * hx * hy * sigmoid(o1[p]);
        }
        grad = vec![0.0; net.mlp.num_params()];
        pass.backward(&out_adj, &mut grad);
    }
    Ok((value, mass, grad))
}
