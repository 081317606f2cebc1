//! Residuals of the coupled optimality system at a point `ξ = (x₁, x₂, t)`:
//!
//! ```text
//! HJB   ∂ₜψ − ½‖u‖² + ⟨∇ψ, f⟩ + ⟨G, Hess ψ⟩
//! FPK   ∂ₜρ + ∇·(ρ f) − Σᵢⱼ ∂ᵢ∂ⱼ(Gᵢⱼ ρ)
//! u_j   u_j − ∂/∂u_j (⟨∇ψ, f⟩ + ⟨G, Hess ψ⟩)
//! ```
//!
//! with `f`, `G` evaluated at `(t, x, u(ξ))`. Spatial derivatives of `f` and
//! `G` include their dependence on `x` through the policy head.

use crate::autodiff::{Dual, Jet, Scalar};
use crate::sde::Dynamics;

/// State dimension handled by the solver.
pub const NX: usize = 2;
/// Jet seeds: x₁, x₂, t.
pub const NJ: usize = NX + 1;
pub type J<S> = Jet<S, NJ>;

/// Solution heads at a point, as jets in `ξ`.
#[derive(Clone, Debug)]
pub struct Heads<S> {
    pub psi: J<S>,
    pub rho: J<S>,
    pub u: Vec<J<S>>,
}

/// Anything that yields `(ψ, ρ, u)` as a smooth function of `ξ = (x₁, x₂, t)`.
pub trait Field {
    fn controls(&self) -> usize;
    fn heads<S: Scalar>(&self, xi: [J<S>; NJ]) -> Heads<S>;
}

/// Dynamics terms entering the residuals.
#[derive(Clone, Debug)]
pub struct DynTerms<S> {
    /// `f_i` as jets in `ξ`.
    pub f: Vec<J<S>>,
    /// `G_ab`, row-major `n × n`, as jets in `ξ`.
    pub g: Vec<J<S>>,
    /// `∂f_i/∂u_j`, indexed `[j][i]`.
    pub f_u: Vec<Vec<S>>,
    /// `∂G_ab/∂u_j`, indexed `[j][a·n + b]`.
    pub g_u: Vec<Vec<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Residuals<S> {
    pub hjb: S,
    pub fpk: S,
    pub policy: Vec<S>,
}

pub fn xi_jets<S: Scalar>(t: S, x: [S; NX]) -> [J<S>; NJ] {
    [J::variable(x[0], 0), J::variable(x[1], 1), J::variable(t, 2)]
}

/// Evaluates `f`, `G` and their control derivatives generically; used for
/// closed-form dynamics on the tape and by the reference path.
pub fn analytic_terms<S: Scalar>(dynamics: &Dynamics, xi: &[J<S>; NJ], u: &[J<S>]) -> DynTerms<S> {
    let x = [xi[0], xi[1]];
    let t = xi[2];
    let f = dynamics.drift(t, &x, u);
    let g = dynamics.diffusion_tensor(t, &x, u);
    let td = Dual::constant(t.val);
    let xd = [Dual::constant(x[0].val), Dual::constant(x[1].val)];
    let m = u.len();
    let mut f_u = Vec::with_capacity(m);
    let mut g_u = Vec::with_capacity(m);
    for j in 0..m {
        let ud: Vec<Dual<S>> = u
            .iter()
            .enumerate()
            .map(|(k, v)| if k == j { Dual::variable(v.val) } else { Dual::constant(v.val) })
            .collect();
        f_u.push(dynamics.drift(td, &xd, &ud).into_iter().map(|d| d.eps).collect());
        g_u.push(dynamics.diffusion_tensor(td, &xd, &ud).into_iter().map(|d| d.eps).collect());
    }
    DynTerms { f, g, f_u, g_u }
}

/// Residual assembly shared by every evaluation path.
pub fn assemble<S: Scalar>(h: &Heads<S>, d: &DynTerms<S>) -> Residuals<S> {
    let n = NX;
    let psi = &h.psi;
    let rho = &h.rho;
    let mut terms: Vec<S> = Vec::with_capacity(2 + n + n * n + h.u.len());
    terms.push(psi.grad[NX]);
    for u in &h.u {
        terms.push(u.val * u.val * -0.5);
    }
    for i in 0..n {
        terms.push(psi.grad[i] * d.f[i].val);
    }
    for a in 0..n {
        for b in 0..n {
            terms.push(d.g[a * n + b].val * psi.hess[a][b]);
        }
    }
    let hjb = S::sum(&terms);

    terms.clear();
    terms.push(rho.grad[NX]);
    for i in 0..n {
        // ∂ᵢ(ρ fᵢ)
        terms.push(rho.grad[i] * d.f[i].val);
        terms.push(rho.val * d.f[i].grad[i]);
    }
    for a in 0..n {
        for b in 0..n {
            // ∂ₐ∂_b(G_ab ρ)
            let g = &d.g[a * n + b];
            terms.push(-(g.hess[a][b] * rho.val));
            terms.push(-(g.grad[a] * rho.grad[b]));
            terms.push(-(g.grad[b] * rho.grad[a]));
            terms.push(-(g.val * rho.hess[a][b]));
        }
    }
    let fpk = S::sum(&terms);

    let policy = (0..h.u.len())
        .map(|j| {
            terms.clear();
            terms.push(h.u[j].val);
            for i in 0..n {
                terms.push(-(psi.grad[i] * d.f_u[j][i]));
            }
            for a in 0..n {
                for b in 0..n {
                    terms.push(-(psi.hess[a][b] * d.g_u[j][a * n + b]));
                }
            }
            S::sum(&terms)
        })
        .collect();
    Residuals { hjb, fpk, policy }
}

/// All residuals of `field` under `dynamics` at `(t, x)`.
pub fn residuals<F: Field>(field: &F, dynamics: &Dynamics, t: f64, x: [f64; NX]) -> Residuals<f64> {
    let xi = xi_jets(t, x);
    let h = field.heads(xi);
    let d = analytic_terms(dynamics, &xi, &h.u);
    assemble(&h, &d)
}

pub fn hjb_residual<F: Field>(field: &F, dynamics: &Dynamics, t: f64, x: [f64; NX]) -> f64 {
    residuals(field, dynamics, t, x).hjb
}

pub fn fpk_residual<F: Field>(field: &F, dynamics: &Dynamics, t: f64, x: [f64; NX]) -> f64 {
    residuals(field, dynamics, t, x).fpk
}

/// Policy residual for channel `j` (zero-based).
pub fn policy_residual<F: Field>(field: &F, dynamics: &Dynamics, t: f64, x: [f64; NX], j: usize) -> f64 {
    residuals(field, dynamics, t, x).policy[j]
}
