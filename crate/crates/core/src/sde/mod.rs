//! Controlled SDEs `dx = f(t,x,u) dt + √2 g(t,x,u) dw`, their simulation, and
//! synthetic trajectory data.

mod data;
mod sim;
mod synthetic;

pub use data::{generate_dataset, DatasetMeta, RampInput, Record, Trajectory, TrajectoryDataset};
pub(crate) use sim::euler_maruyama_rng;
pub use sim::{euler_maruyama, euler_maruyama_with_noise, latin_hypercube, GaussianSampler, Path, Policy};
pub use synthetic::SyntheticTruth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Scalar;
use crate::sde_learn::NeuralSde;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse: {0}")]
    Parse(String),
}

/// Linear time-invariant dynamics `f = c + A x + B u` with constant `g`.
/// Covers constant drift, Ornstein–Uhlenbeck and generic control-affine tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearDynamics {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub c: Vec<f64>,
    /// n × n, row-major
    pub a: Vec<f64>,
    /// n × m, row-major
    pub b: Vec<f64>,
    /// n × p, row-major
    pub g: Vec<f64>,
}

impl LinearDynamics {
    pub fn zero(n: usize, m: usize, p: usize) -> Self {
        LinearDynamics { n, m, p, c: vec![0.0; n], a: vec![0.0; n * n], b: vec![0.0; n * m], g: vec![0.0; n * p] }
    }

    pub fn ornstein_uhlenbeck(n: usize, rate: f64, g: f64) -> Self {
        let mut d = Self::zero(n, 1, n);
        for i in 0..n {
            d.a[i * n + i] = -rate;
            d.g[i * n + i] = g;
        }
        d
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Dynamics {
    /// `f = u`, `g = I`: the classical Schrödinger bridge.
    ClassicalSbp {
        n: usize,
    },
    /// `f = u`, `g = 0`: optimal mass transport.
    Omt {
        n: usize,
    },
    Linear(LinearDynamics),
    Synthetic(SyntheticTruth),
    Neural(Box<NeuralSde>),
}

impl Dynamics {
    pub fn state_dim(&self) -> usize {
        match self {
            Dynamics::ClassicalSbp { n } | Dynamics::Omt { n } => *n,
            Dynamics::Linear(l) => l.n,
            Dynamics::Synthetic(_) => 2,
            Dynamics::Neural(s) => s.n,
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            Dynamics::ClassicalSbp { n } | Dynamics::Omt { n } => *n,
            Dynamics::Linear(l) => l.m,
            Dynamics::Synthetic(_) => 2,
            Dynamics::Neural(s) => s.m,
        }
    }

    pub fn noise_dim(&self) -> usize {
        match self {
            Dynamics::ClassicalSbp { n } | Dynamics::Omt { n } => *n,
            Dynamics::Linear(l) => l.p,
            Dynamics::Synthetic(_) => 2,
            Dynamics::Neural(s) => s.p,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Dynamics::ClassicalSbp { .. } => "classical-sbp",
            Dynamics::Omt { .. } => "omt",
            Dynamics::Linear(_) => "linear",
            Dynamics::Synthetic(_) => "synthetic-truth",
            Dynamics::Neural(_) => "neural-sde",
        }
    }

    /// Drift `f(t, x, u)`.
    pub fn drift<S: Scalar>(&self, t: S, x: &[S], u: &[S]) -> Vec<S> {
        match self {
            Dynamics::ClassicalSbp { .. } | Dynamics::Omt { .. } => u.to_vec(),
            Dynamics::Linear(l) => (0..l.n)
                .map(|i| {
                    let mut terms: Vec<S> = Vec::with_capacity(l.n + l.m);
                    for k in 0..l.n {
                        let a = l.a[i * l.n + k];
                        if a != 0.0 {
                            terms.push(x[k] * a);
                        }
                    }
                    for k in 0..l.m {
                        let b = l.b[i * l.m + k];
                        if b != 0.0 {
                            terms.push(u[k] * b);
                        }
                    }
                    S::sum(&terms) + l.c[i]
                })
                .collect(),
            Dynamics::Synthetic(s) => s.drift(t, x, u),
            Dynamics::Neural(s) => s.drift(t, x, u),
        }
    }

    /// Diffusion coefficient `g(t, x, u)`, `n × p` row-major.
    pub fn diffusion<S: Scalar>(&self, t: S, x: &[S], u: &[S]) -> Vec<S> {
        match self {
            Dynamics::ClassicalSbp { n } => {
                let mut g = vec![S::zero(); n * n];
                for i in 0..*n {
                    g[i * n + i] = S::one();
                }
                g
            }
            Dynamics::Omt { n } => vec![S::zero(); n * n],
            Dynamics::Linear(l) => l.g.iter().map(|&v| S::from_f64(v)).collect(),
            Dynamics::Synthetic(s) => s.diffusion(t, x, u),
            Dynamics::Neural(s) => s.diffusion(t, x, u),
        }
    }

    /// Diffusion tensor `G = g gᵀ`, `n × n` row-major.
    pub fn diffusion_tensor<S: Scalar>(&self, t: S, x: &[S], u: &[S]) -> Vec<S> {
        let n = self.state_dim();
        let p = self.noise_dim();
        match self {
            Dynamics::ClassicalSbp { .. } => return self.diffusion(t, x, u),
            Dynamics::Omt { .. } => return vec![S::zero(); n * n],
            _ => {}
        }
        let g = self.diffusion(t, x, u);
        let mut big = vec![S::zero(); n * n];
        let mut prods = Vec::with_capacity(p);
        for i in 0..n {
            for j in i..n {
                prods.clear();
                prods.extend((0..p).map(|k| g[i * p + k] * g[j * p + k]));
                let v = S::sum(&prods);
                big[i * n + j] = v;
                big[j * n + i] = v;
            }
        }
        debug_assert!(psd_values(&big, n), "diffusion tensor is not positive semidefinite");
        big
    }
}

// Value-level PSD check used in debug builds: all leading principal minors of
// G + δI are positive for a small δ scaled to the matrix.
fn psd_values<S: Scalar>(g: &[S], n: usize) -> bool {
    let scale = (0..n).map(|i| g[i * n + i].value().abs()).fold(0.0, f64::max);
    let delta = 1e-10 * (1.0 + scale);
    let mut a: Vec<f64> = g.iter().map(|v| v.value()).collect();
    for i in 0..n {
        a[i * n + i] += delta;
    }
    // Cholesky
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_reductions() {
        let u = [0.3, -0.1];
        let x = [0.5, 0.5];
        let sbp = Dynamics::ClassicalSbp { n: 2 };
        assert_eq!(sbp.drift(0.0, &x, &u), u.to_vec());
        assert_eq!(sbp.diffusion_tensor(0.0, &x, &u), vec![1.0, 0.0, 0.0, 1.0]);
        let omt = Dynamics::Omt { n: 2 };
        assert_eq!(omt.diffusion_tensor(0.0, &x, &u), vec![0.0; 4]);
    }

    #[test]
    fn linear_drift() {
        let mut l = LinearDynamics::zero(2, 1, 2);
        l.c = vec![1.0, 0.0];
        l.a = vec![0.0, 1.0, -1.0, 0.0];
        l.b = vec![0.0, 2.0];
        let d = Dynamics::Linear(l);
        assert_eq!(d.drift(0.0, &[3.0, 4.0], &[0.5]), vec![1.0 + 4.0, -3.0 + 1.0]);
    }
}
