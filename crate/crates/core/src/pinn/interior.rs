//! Batched interior loss `w_ψ L_ψ + w_ρ L_ρ + w_u Σⱼ L_uⱼ` and its θ-gradient.
//!
//! The network's output jets come from one batched pass per chunk; residual
//! assembly for each point runs on a small tape whose leaves are those jet
//! components, and the tape adjoints are pushed back through the batched pass.
//! Learnt dynamics networks get the same treatment: their inputs `(t, x, u(ξ))`
//! are propagated as jets, so derivatives through the policy head are exact.

use rayon::prelude::*;

use super::net::PinnNet;
use super::residual::{analytic_terms, assemble, DynTerms, Heads, Residuals, J, NJ, NX};
use super::PinnError;
use crate::autodiff::{Scalar, Tape, Var};
use crate::nets::{BatchPass, JetLayout};
use crate::sde::Dynamics;
use crate::sde_learn::NeuralSde;

const CHUNK: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct InteriorLoss {
    pub l_psi: f64,
    pub l_rho: f64,
    pub l_u: Vec<f64>,
    /// Gradient of `w_ψ L_ψ + w_ρ L_ρ + w_u Σ L_u`; empty unless requested.
    pub grad: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct InteriorWeights {
    pub psi: f64,
    pub rho: f64,
    pub u: f64,
}

struct ChunkOut {
    sq_psi: f64,
    sq_rho: f64,
    sq_u: Vec<f64>,
    grad: Vec<f64>,
}

/// Points are `(x₁, x₂, t)`.
pub fn interior_loss(
    net: &PinnNet,
    dynamics: &Dynamics,
    points: &[[f64; NJ]],
    w: InteriorWeights,
    want_grad: bool,
) -> Result<InteriorLoss, PinnError> {
    if points.is_empty() {
        return Err(PinnError::Config("no collocation points".into()));
    }
    if dynamics.state_dim() != NX || dynamics.control_dim() != net.controls {
        return Err(PinnError::Config(format!(
            "dynamics has n = {}, m = {}; the solver needs n = {NX} and m = {}",
            dynamics.state_dim(),
            dynamics.control_dim(),
            net.controls
        )));
    }
    let total = points.len() as f64;
    let outs: Vec<Result<ChunkOut, PinnError>> =
        points.par_chunks(CHUNK).map(|c| chunk(net, dynamics, c, total, w, want_grad)).collect();
    let m = net.controls;
    let mut acc = InteriorLoss { l_psi: 0.0, l_rho: 0.0, l_u: vec![0.0; m], grad: Vec::new() };
    if want_grad {
        acc.grad = vec![0.0; net.mlp.num_params()];
    }
    for o in outs {
        let o = o?;
        acc.l_psi += o.sq_psi;
        acc.l_rho += o.sq_rho;
        for j in 0..m {
            acc.l_u[j] += o.sq_u[j];
        }
        for (g, v) in acc.grad.iter_mut().zip(&o.grad) {
            *g += v;
        }
    }
    acc.l_psi /= total;
    acc.l_rho /= total;
    for l in &mut acc.l_u {
        *l /= total;
    }
    Ok(acc)
}

fn seeded_pinn_input(net: &PinnNet, pts: &[[f64; NJ]]) -> Vec<f64> {
    let lay = JetLayout::new(NJ);
    let np = pts.len();
    let mut buf = vec![0.0; lay.len() * NJ * np];
    for (p, xi) in pts.iter().enumerate() {
        let z = net.normalize(*xi);
        for k in 0..NJ {
            buf[k * np + p] = z[k];
            buf[(lay.grad(k) * NJ + k) * np + p] = 1.0 / net.scale[k];
        }
    }
    buf
}

fn leaf_jet<'t>(tape: &'t Tape, lay: &JetLayout, comp: impl Fn(usize) -> f64) -> (J<Var<'t>>, Vec<Var<'t>>) {
    let leaves: Vec<Var<'t>> = (0..lay.len()).map(|c| tape.var(comp(c))).collect();
    let mut j = J::constant(leaves[0]);
    for k in 0..NJ {
        j.grad[k] = leaves[lay.grad(k)];
        for l in k..NJ {
            let h = leaves[lay.hess(k, l)];
            j.hess[k][l] = h;
            j.hess[l][k] = h;
        }
    }
    (j, leaves)
}

fn chunk(
    net: &PinnNet,
    dynamics: &Dynamics,
    pts: &[[f64; NJ]],
    total: f64,
    w: InteriorWeights,
    want_grad: bool,
) -> Result<ChunkOut, PinnError> {
    let lay = JetLayout::new(NJ);
    let np = pts.len();
    let m = net.controls;
    let od = 2 + m;
    let pass = net.mlp.forward_batch(NJ, np, seeded_pinn_input(net, pts))?;
    let neural = match dynamics {
        Dynamics::Neural(s) => Some(NeuralPasses::forward(s, &pass, pts, m)?),
        _ => None,
    };
    let mut out_adj = vec![0.0; if want_grad { pass.output().len() } else { 0 }];
    let mut dyn_adj = neural.as_ref().filter(|_| want_grad).map(|nn| nn.zero_adjoints());
    let mut out = ChunkOut { sq_psi: 0.0, sq_rho: 0.0, sq_u: vec![0.0; m], grad: Vec::new() };
    for p in 0..np {
        let tape = Tape::with_capacity(1024);
        let mut leaves = Vec::with_capacity(od);
        let mut jets = Vec::with_capacity(od);
        for o in 0..od {
            let (j, l) = leaf_jet(&tape, &lay, |c| pass.out(c, o, p));
            jets.push(j);
            leaves.push(l);
        }
        let heads = Heads { psi: jets[0], rho: jets[1].softplus(), u: jets[2..].to_vec() };
        let (terms, dyn_leaves) = match &neural {
            None => {
                let xi = pts[p];
                let c = |v: f64| Var::constant(v);
                let xj = [J::variable(c(xi[0]), 0), J::variable(c(xi[1]), 1), J::variable(c(xi[2]), 2)];
                (analytic_terms(dynamics, &xj, &heads.u), None)
            }
            Some(nn) => {
                let (t, l) = nn.terms(&tape, p);
                (t, Some(l))
            }
        };
        let r: Residuals<Var> = assemble(&heads, &terms);
        check_finite(&r)?;
        out.sq_psi += r.hjb.val().powi(2);
        out.sq_rho += r.fpk.val().powi(2);
        for j in 0..m {
            out.sq_u[j] += r.policy[j].val().powi(2);
        }
        if !want_grad {
            continue;
        }
        let mut seeds = vec![(r.hjb, 2.0 * w.psi * r.hjb.val() / total), (r.fpk, 2.0 * w.rho * r.fpk.val() / total)];
        seeds.extend(r.policy.iter().map(|v| (*v, 2.0 * w.u * v.val() / total)));
        let adj = tape.backward(&seeds)?;
        for o in 0..od {
            for (c, v) in leaves[o].iter().enumerate() {
                out_adj[(c * od + o) * np + p] = adj.wrt(v);
            }
        }
        if let (Some(nn), Some(da), Some(dl)) = (&neural, dyn_adj.as_mut(), dyn_leaves) {
            nn.scatter(&adj, &dl, p, da);
        }
    }
    if want_grad {
        if let (Some(nn), Some(da)) = (&neural, &dyn_adj) {
            nn.backward(da, &mut out_adj, m);
        }
        out.grad = vec![0.0; net.mlp.num_params()];
        pass.backward(&out_adj, &mut out.grad);
    }
    Ok(out)
}

fn check_finite(r: &Residuals<Var>) -> Result<(), PinnError> {
    if !r.hjb.val().is_finite() {
        return Err(PinnError::NonFinite { epoch: None, component: "L_psi".into() });
    }
    if !r.fpk.val().is_finite() {
        return Err(PinnError::NonFinite { epoch: None, component: "L_rho".into() });
    }
    if let Some(j) = r.policy.iter().position(|v| !v.val().is_finite()) {
        return Err(PinnError::NonFinite { epoch: None, component: format!("L_u{}", j + 1) });
    }
    Ok(())
}

// Batched passes of the learnt drift and diffusion at (t, x, u(ξ)): jets in ξ
// for f and g, and first derivatives in u for the policy residual.
struct NeuralPasses<'a> {
    sde: &'a NeuralSde,
    d_in: usize,
    np: usize,
    lay: JetLayout,
    lay_u: JetLayout,
    fj: BatchPass<'a>,
    gj: BatchPass<'a>,
    fu: BatchPass<'a>,
    gu: BatchPass<'a>,
}

struct DynLeaves<'t> {
    f: Vec<Vec<Var<'t>>>,
    g: Vec<Vec<Var<'t>>>,
    f_u: Vec<Vec<Var<'t>>>,
    g_u: Vec<Vec<Var<'t>>>,
}

struct DynAdjoints {
    fj: Vec<f64>,
    gj: Vec<f64>,
    fu: Vec<f64>,
    gu: Vec<f64>,
}

impl<'a> NeuralPasses<'a> {
    fn forward(sde: &'a NeuralSde, pass: &BatchPass, pts: &[[f64; NJ]], m: usize) -> Result<Self, PinnError> {
        let n = sde.n;
        let d_in = 1 + n + sde.m;
        let np = pts.len();
        let lay = JetLayout::new(NJ);
        let lay_u = JetLayout::new(m);
        let mut a = vec![0.0; lay.len() * d_in * np];
        let mut b = vec![0.0; lay_u.len() * d_in * np];
        for (p, xi) in pts.iter().enumerate() {
            let feat = |k: usize, v: f64| (v - sde.shift[k]) / sde.scale[k];
            a[p] = feat(0, xi[NX]);
            b[p] = a[p];
            a[(lay.grad(NX) * d_in) * np + p] = 1.0 / sde.scale[0];
            for i in 0..n {
                a[(1 + i) * np + p] = feat(1 + i, xi[i]);
                b[(1 + i) * np + p] = a[(1 + i) * np + p];
                a[(lay.grad(i) * d_in + 1 + i) * np + p] = 1.0 / sde.scale[1 + i];
            }
            for j in 0..m {
                let k = 1 + n + j;
                for c in 0..lay.len() {
                    let v = pass.out(c, 2 + j, p);
                    a[(c * d_in + k) * np + p] = if c == 0 { feat(k, v) } else { v / sde.scale[k] };
                }
                b[k * np + p] = a[k * np + p];
                b[(lay_u.grad(j) * d_in + k) * np + p] = 1.0 / sde.scale[k];
            }
        }
        Ok(NeuralPasses {
            sde,
            d_in,
            np,
            fj: sde.drift.forward_batch(NJ, np, a.clone())?,
            gj: sde.diffusion.forward_batch(NJ, np, a)?,
            fu: sde.drift.forward_batch(m, np, b.clone())?,
            gu: sde.diffusion.forward_batch(m, np, b)?,
            lay,
            lay_u,
        })
    }

    fn zero_adjoints(&self) -> DynAdjoints {
        DynAdjoints {
            fj: vec![0.0; self.fj.output().len()],
            gj: vec![0.0; self.gj.output().len()],
            fu: vec![0.0; self.fu.output().len()],
            gu: vec![0.0; self.gu.output().len()],
        }
    }

    fn terms<'t>(&self, tape: &'t Tape, p: usize) -> (DynTerms<Var<'t>>, DynLeaves<'t>) {
        let (n, pn, m) = (self.sde.n, self.sde.p, self.lay_u.seeds);
        let (sf, sg) = (self.sde.drift_scale, self.sde.diffusion_scale);
        let mut lv = DynLeaves { f: Vec::new(), g: Vec::new(), f_u: Vec::new(), g_u: Vec::new() };
        let mut f = Vec::with_capacity(n);
        for i in 0..n {
            let (j, l) = leaf_jet(tape, &self.lay, |c| sf * self.fj.out(c, i, p));
            f.push(j);
            lv.f.push(l);
        }
        let mut g = Vec::with_capacity(n * pn);
        for k in 0..n * pn {
            let (j, l) = leaf_jet(tape, &self.lay, |c| sg * self.gj.out(c, k, p));
            g.push(j);
            lv.g.push(l);
        }
        let mut big = vec![J::constant(Var::constant(0.0)); n * n];
        for a in 0..n {
            for b in a..n {
                let prods: Vec<J<Var>> = (0..pn).map(|k| g[a * pn + k] * g[b * pn + k]).collect();
                let v = J::sum(&prods);
                big[a * n + b] = v;
                big[b * n + a] = v;
            }
        }
        let mut f_u = Vec::with_capacity(m);
        let mut g_u = Vec::with_capacity(m);
        for j in 0..m {
            let c = self.lay_u.grad(j);
            let fj: Vec<Var> = (0..n).map(|i| tape.var(sf * self.fu.out(c, i, p))).collect();
            let gr: Vec<Var> = (0..n * pn).map(|k| tape.var(sg * self.gu.out(c, k, p))).collect();
            let mut gt = vec![Var::constant(0.0); n * n];
            for a in 0..n {
                for b in a..n {
                    let terms: Vec<Var> = (0..pn)
                        .flat_map(|k| [gr[a * pn + k] * g[b * pn + k].val, g[a * pn + k].val * gr[b * pn + k]])
                        .collect();
                    let v = Var::sum(&terms);
                    gt[a * n + b] = v;
                    gt[b * n + a] = v;
                }
            }
            f_u.push(fj.clone());
            g_u.push(gt);
            lv.f_u.push(fj);
            lv.g_u.push(gr);
        }
        (DynTerms { f, g: big, f_u, g_u }, lv)
    }

    fn scatter(&self, adj: &crate::autodiff::Adjoints<f64>, lv: &DynLeaves, p: usize, out: &mut DynAdjoints) {
        let (n, pn, np) = (self.sde.n, self.sde.p, self.np);
        let (sf, sg) = (self.sde.drift_scale, self.sde.diffusion_scale);
        for (i, leaves) in lv.f.iter().enumerate() {
            for (c, v) in leaves.iter().enumerate() {
                out.fj[(c * n + i) * np + p] = sf * adj.wrt(v);
            }
        }
        for (k, leaves) in lv.g.iter().enumerate() {
            for (c, v) in leaves.iter().enumerate() {
                out.gj[(c * n * pn + k) * np + p] = sg * adj.wrt(v);
            }
        }
        for j in 0..lv.f_u.len() {
            let c = self.lay_u.grad(j);
            for (i, v) in lv.f_u[j].iter().enumerate() {
                out.fu[(c * n + i) * np + p] = sf * adj.wrt(v);
            }
            for (k, v) in lv.g_u[j].iter().enumerate() {
                out.gu[(c * n * pn + k) * np + p] = sg * adj.wrt(v);
            }
        }
    }

    // Adds the adjoints of the policy-head jets implied by the dynamics terms.
    fn backward(&self, da: &DynAdjoints, out_adj: &mut [f64], m: usize) {
        let (n, d_in, np) = (self.sde.n, self.d_in, self.np);
        let od = 2 + m;
        let mut scratch_f = vec![0.0; self.sde.drift.num_params()];
        let mut scratch_g = vec![0.0; self.sde.diffusion.num_params()];
        let hf = self.fj.backward(&da.fj, &mut scratch_f);
        let hg = self.gj.backward(&da.gj, &mut scratch_g);
        let hfu = self.fu.backward(&da.fu, &mut scratch_f);
        let hgu = self.gu.backward(&da.gu, &mut scratch_g);
        for j in 0..m {
            let k = 1 + n + j;
            let s = 1.0 / self.sde.scale[k];
            for p in 0..np {
                for c in 0..self.lay.len() {
                    let i = (c * d_in + k) * np + p;
                    out_adj[(c * od + 2 + j) * np + p] += s * (hf[i] + hg[i]);
                }
                let i = k * np + p;
                out_adj[(2 + j) * np + p] += s * (hfu[i] + hgu[i]);
            }
        }
    }
}
