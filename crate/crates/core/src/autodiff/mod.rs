//! Scalar automatic differentiation.
//!
//! A reverse-mode [`Tape`] records arithmetic on [`Var`] handles; [`Dual`] and
//! [`Jet`] are forward-mode numbers. All of them implement [`Scalar`], and the
//! forward types are generic over it, so the modes compose: a reverse sweep over
//! `Dual<f64>` values gives Hessian columns, and `Jet<Var, 3>` carries spatial
//! derivatives of a network whose parameters live on a tape.

mod dual;
mod jet;
mod scalar;
mod tape;

pub use dual::Dual;
pub use jet::Jet;
pub use scalar::Scalar;
pub use tape::{Adjoints, Op, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("non-finite value at tape node {node} ({op})")]
    NonFinite { node: usize, op: Op },
    #[error("hessian asymmetry {asym:e} exceeds tolerance")]
    Asymmetric { asym: f64 },
    #[error("expected {expected} inputs, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// A scalar function written once against [`Scalar`], so it can be evaluated
/// plainly or under any differentiation mode.
pub trait Function {
    fn eval<S: Scalar>(&self, x: &[S]) -> S;
}

impl<F: Function + ?Sized> Function for &F {
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        (**self).eval(x)
    }
}

pub fn value_and_grad<F: Function>(f: &F, x: &[f64]) -> Result<(f64, Vec<f64>), AdError> {
    let tape = Tape::with_capacity(64);
    let vars = tape.vars(x);
    let y = f.eval(&vars);
    if !y.is_finite() {
        tape.check()?;
    }
    let adj = tape.gradient(y)?;
    Ok((y.val(), adj.wrt_all(&vars)))
}

/// Reverse-mode gradient at `x`.
pub fn grad<F: Function>(f: &F, x: &[f64]) -> Result<Vec<f64>, AdError> {
    value_and_grad(f, x).map(|(_, g)| g)
}

/// Gradient with respect to a parameter vector. Identical to [`grad`]; the
/// residual may internally use forward-mode numbers over its own inputs, and
/// the reverse sweep differentiates through them.
pub fn param_grad<F: Function>(residual: &F, theta: &[f64]) -> Result<Vec<f64>, AdError> {
    grad(residual, theta)
}

/// Hessian by forward-over-reverse: one reverse sweep over `Dual<f64>` values
/// per seed direction, each producing a column.
pub fn hessian<F: Function>(f: &F, x: &[f64]) -> Result<Vec<Vec<f64>>, AdError> {
    let n = x.len();
    let mut h = vec![vec![0.0; n]; n];
    let mut tape: Tape<Dual<f64>> = Tape::with_capacity(64);
    for k in 0..n {
        tape.clear();
        let vars: Vec<_> = (0..n).map(|i| tape.var(Dual::new(x[i], if i == k { 1.0 } else { 0.0 }))).collect();
        let y = f.eval(&vars);
        let adj = tape.gradient(y)?;
        for i in 0..n {
            h[i][k] = adj.wrt(&vars[i]).eps;
        }
    }
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in i + 1..n {
            let scale = 1.0 + h[i][j].abs().max(h[j][i].abs());
            asym = asym.max((h[i][j] - h[j][i]).abs() / scale);
        }
    }
    if asym >= 1e-10 {
        return Err(AdError::Asymmetric { asym });
    }
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = m;
            h[j][i] = m;
        }
    }
    Ok(h)
}
