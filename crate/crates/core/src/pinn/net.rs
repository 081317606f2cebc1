use serde::{Deserialize, Serialize};

use super::residual::{Field, Heads, J, NJ, NX};
use crate::autodiff::Scalar;
use crate::nets::{Mlp, MlpSpec, NetError};

/// The solution network: `ξ = (x₁, x₂, t) ↦ (ψ, ρ, u₁..u_m)` with `ρ = softplus(o₁)`.
/// Inputs are mapped affinely to `[−1, 1]` per coordinate before the MLP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinnNet {
    pub mlp: Mlp,
    pub controls: usize,
    pub shift: [f64; NJ],
    pub scale: [f64; NJ],
}

impl PinnNet {
    pub fn new(
        hidden: &[usize],
        controls: usize,
        state_box: [(f64, f64); NX],
        horizon: f64,
        seed: u64,
    ) -> Result<Self, NetError> {
        let mlp = Mlp::init(MlpSpec::new(NJ, hidden, 2 + controls), seed)?;
        let mut shift = [0.0; NJ];
        let mut scale = [1.0; NJ];
        for (i, (lo, hi)) in state_box.iter().enumerate() {
            shift[i] = 0.5 * (lo + hi);
            scale[i] = 0.5 * (hi - lo);
        }
        shift[NX] = 0.5 * horizon;
        scale[NX] = 0.5 * horizon;
        Ok(PinnNet { mlp, controls, shift, scale })
    }

    pub fn normalize(&self, xi: [f64; NJ]) -> [f64; NJ] {
        let mut z = [0.0; NJ];
        for k in 0..NJ {
            z[k] = (xi[k] - self.shift[k]) / self.scale[k];
        }
        z
    }

    /// `(ψ, ρ, u)` values at `(t, x)`.
    pub fn eval(&self, t: f64, x: [f64; NX]) -> (f64, f64, Vec<f64>) {
        let o = self.mlp.forward(&self.normalize([x[0], x[1], t])).expect("fixed input width");
        (o[0], o[1].softplus(), o[2..].to_vec())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), NetError> {
        crate::nets::save_json(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, NetError> {
        crate::nets::load_json(path)
    }

    /// Policy head only.
    pub fn control(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.eval(t, [x[0], x[1]]).2
    }

    /// Heads with externally supplied parameters (reference path).
    pub fn heads_theta<S: Scalar>(&self, theta: &[S], xi: [J<S>; NJ]) -> Heads<S> {
        let z: Vec<J<S>> = (0..NJ).map(|k| (xi[k] - self.shift[k]) / self.scale[k]).collect();
        let th: Vec<J<S>> = theta.iter().map(|&v| J::constant(v)).collect();
        let o = self.mlp.forward_theta(&th, &z).expect("fixed input width");
        Heads { psi: o[0], rho: o[1].softplus(), u: o[2..].to_vec() }
    }
}

impl Field for PinnNet {
    fn controls(&self) -> usize {
        self.controls
    }

    fn heads<S: Scalar>(&self, xi: [J<S>; NJ]) -> Heads<S> {
        let z: Vec<J<S>> = (0..NJ).map(|k| (xi[k] - self.shift[k]) / self.scale[k]).collect();
        let o = self.mlp.forward(&z).expect("fixed input width");
        Heads { psi: o[0], rho: o[1].softplus(), u: o[2..].to_vec() }
    }
}

impl crate::sde::Policy for PinnNet {
    fn control(&self, t: f64, x: &[f64]) -> Vec<f64> {
        PinnNet::control(self, t, x)
    }
}
