use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;

/// Analytic stand-in for the self-assembly process: two coupled order-parameter
/// coordinates in double wells, driven by two ramped inputs.
///
/// ```text
/// V(z)    = (z − a)²(z − b)²                        wells at a, b
/// k_i     = κ (1 + ω sin(2πt/P)) (1 + ½ tanh(2u_i − 1))
/// f_i     = −k_i V′(x_i) + τ tanh(3(u_j − ½)) + λ (x_j − x_i),   j = 3 − i
/// g       = σ₀ exp(−0.8 u₁) [[1, 0], [ρ, 1]]
/// ```
///
/// Nonlinear in x, non-affine in u, explicitly time dependent; noise shrinks
/// as u₁ grows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub well_a: f64,
    pub well_b: f64,
    pub kappa: f64,
    pub omega: f64,
    pub period: f64,
    pub tilt: f64,
    pub coupling: f64,
    pub sigma0: f64,
    pub rho: f64,
    /// Scales the diffusion; 0 gives noiseless data.
    pub noise_scale: f64,
}

impl Default for SyntheticTruth {
    fn default() -> Self {
        SyntheticTruth {
            well_a: 0.2,
            well_b: 0.7,
            kappa: 0.5,
            omega: 0.25,
            period: 200.0,
            tilt: 0.03,
            coupling: 0.05,
            sigma0: 0.02,
            rho: 0.3,
            noise_scale: 1.0,
        }
    }
}

impl SyntheticTruth {
    pub fn noiseless() -> Self {
        SyntheticTruth { noise_scale: 0.0, ..Self::default() }
    }

    /// Input box the ramp designs must stay in: `[−0.5, 1.5]²`.
    pub const INPUT_BOX: [(f64, f64); 2] = [(-0.5, 1.5), (-0.5, 1.5)];
    /// Ramp intercept for both channels.
    pub const INTERCEPT: f64 = 0.5;
    pub const STATE_BOX: [(f64, f64); 2] = [(0.0, 1.0), (0.0, 1.0)];

    fn dv<S: Scalar>(&self, z: S) -> S {
        let (a, b) = (self.well_a, self.well_b);
        (z - a) * (z - b) * (z * 2.0 - (a + b)) * 2.0
    }

    pub fn drift<S: Scalar>(&self, t: S, x: &[S], u: &[S]) -> Vec<S> {
        let season = (t * (2.0 * std::f64::consts::PI / self.period)).sin() * self.omega + 1.0;
        (0..2)
            .map(|i| {
                let j = 1 - i;
                let k = season * ((u[i] * 2.0 - 1.0).tanh() * 0.5 + 1.0) * self.kappa;
                -(k * self.dv(x[i])) + ((u[j] - 0.5) * 3.0).tanh() * self.tilt + (x[j] - x[i]) * self.coupling
            })
            .collect()
    }

    pub fn diffusion<S: Scalar>(&self, _t: S, _x: &[S], u: &[S]) -> Vec<S> {
        let s = (u[0] * -0.8).exp() * (self.sigma0 * self.noise_scale);
        vec![s, S::zero(), s * self.rho, s]
    }
}
