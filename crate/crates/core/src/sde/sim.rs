use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dynamics, SdeError};

/// Feedback law `u = π(t, x)`.
pub trait Policy: Sync {
    fn control(&self, t: f64, x: &[f64]) -> Vec<f64>;
}

impl<F: Fn(f64, &[f64]) -> Vec<f64> + Sync> Policy for F {
    fn control(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self(t, x)
    }
}

/// A simulated path: `steps + 1` states and the control applied from each.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

impl Path {
    pub fn last(&self) -> &[f64] {
        self.x.last().expect("path has at least one state")
    }
}

/// Euler–Maruyama with standard-normal increments drawn from `seed`.
pub fn euler_maruyama(
    dynamics: &Dynamics,
    x0: &[f64],
    policy: &dyn Policy,
    t_end: f64,
    steps: usize,
    seed: u64,
) -> Result<Path, SdeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    euler_maruyama_rng(dynamics, x0, policy, t_end, steps, &mut rng)
}

pub(crate) fn euler_maruyama_rng(
    dynamics: &Dynamics,
    x0: &[f64],
    policy: &dyn Policy,
    t_end: f64,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Path, SdeError> {
    let p = dynamics.noise_dim();
    let noise: Vec<Vec<f64>> = (0..steps).map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect()).collect();
    euler_maruyama_with_noise(dynamics, x0, policy, t_end, &noise)
}

/// `x_{k+1} = x_k + f Δt + √2 g √Δt z_k` for the given standard-normal `z_k`;
/// the step count is `noise.len()`.
pub fn euler_maruyama_with_noise(
    dynamics: &Dynamics,
    x0: &[f64],
    policy: &dyn Policy,
    t_end: f64,
    noise: &[Vec<f64>],
) -> Result<Path, SdeError> {
    let steps = noise.len();
    if steps == 0 {
        return Err(SdeError::Config("steps must be >= 1".into()));
    }
    let n = dynamics.state_dim();
    let p = dynamics.noise_dim();
    if x0.len() != n {
        return Err(SdeError::Config(format!("initial state has dimension {}, dynamics {}", x0.len(), n)));
    }
    let dt = t_end / steps as f64;
    let sdt = (2.0 * dt).sqrt();
    let mut path =
        Path { t: Vec::with_capacity(steps + 1), x: Vec::with_capacity(steps + 1), u: Vec::with_capacity(steps + 1) };
    let mut x = x0.to_vec();
    for (k, z) in noise.iter().enumerate() {
        let t = k as f64 * dt;
        let u = policy.control(t, &x);
        let f = dynamics.drift(t, &x, &u);
        let g = dynamics.diffusion(t, &x, &u);
        let mut next = x.clone();
        for i in 0..n {
            let mut dw = 0.0;
            for j in 0..p {
                dw += g[i * p + j] * z[j];
            }
            next[i] += f[i] * dt + sdt * dw;
        }
        path.t.push(t);
        path.x.push(std::mem::replace(&mut x, next));
        path.u.push(u);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::NonFinite { step: k + 1 });
        }
    }
    path.u.push(policy.control(t_end, &x));
    path.t.push(t_end);
    path.x.push(x);
    Ok(path)
}

/// Gaussian `N(mean, cov)`, optionally truncated to a box by rejection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSampler {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub bounds: Option<Vec<(f64, f64)>>,
    #[serde(skip)]
    chol: Vec<f64>,
}

impl GaussianSampler {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>, bounds: Option<Vec<(f64, f64)>>) -> Result<Self, SdeError> {
        let n = mean.len();
        if cov.len() != n * n {
            return Err(SdeError::Config(format!("covariance must be {n}x{n}")));
        }
        let chol = cholesky(&cov, n).ok_or_else(|| SdeError::Config("covariance is not positive definite".into()))?;
        Ok(GaussianSampler { mean, cov, bounds, chol })
    }

    pub fn isotropic(mean: Vec<f64>, var: f64, bounds: Option<Vec<(f64, f64)>>) -> Result<Self, SdeError> {
        let n = mean.len();
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            cov[i * n + i] = var;
        }
        Self::new(mean, cov, bounds)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn ensure_chol(&self) -> std::borrow::Cow<'_, [f64]> {
        if self.chol.is_empty() {
            std::borrow::Cow::Owned(cholesky(&self.cov, self.mean.len()).expect("validated covariance"))
        } else {
            std::borrow::Cow::Borrowed(&self.chol)
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Vec<f64>, SdeError> {
        let n = self.dim();
        let l = self.ensure_chol();
        for _ in 0..100_000 {
            let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let x: Vec<f64> =
                (0..n).map(|i| self.mean[i] + (0..=i).map(|k| l[i * n + k] * z[k]).sum::<f64>()).collect();
            match &self.bounds {
                Some(b) if !x.iter().zip(b).all(|(v, (lo, hi))| v >= lo && v <= hi) => continue,
                _ => return Ok(x),
            }
        }
        Err(SdeError::Config("truncation box has negligible probability".into()))
    }

    pub fn sample_n<R: Rng>(&self, count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, SdeError> {
        (0..count).map(|_| self.sample(rng)).collect()
    }

    /// Density of the untruncated Gaussian.
    pub fn pdf(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let l = self.ensure_chol();
        // solve L y = x − m
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = x[i] - self.mean[i];
            for k in 0..i {
                s -= l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        let logdet: f64 = (0..n).map(|i| l[i * n + i].ln()).sum();
        let q: f64 = y.iter().map(|v| v * v).sum();
        (-0.5 * q - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()).exp()
    }
}

fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Some(l)
}

/// Latin hypercube design: in every dimension each stratum `[i/N, (i+1)/N)`
/// holds exactly one point before scaling to `bounds`.
pub fn latin_hypercube(count: usize, bounds: &[(f64, f64)], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = bounds.len();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dims);
    for &(lo, hi) in bounds {
        let mut strata: Vec<usize> = (0..count).collect();
        strata.shuffle(&mut rng);
        cols.push(
            strata
                .iter()
                .map(|&s| {
                    let unit = (s as f64 + rng.random::<f64>()) / count as f64;
                    lo + (hi - lo) * unit
                })
                .collect(),
        );
    }
    (0..count).map(|i| (0..dims).map(|d| cols[d][i]).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::LinearDynamics;

    fn zero_policy(_: f64, _: &[f64]) -> Vec<f64> {
        vec![0.0]
    }

    #[test]
    fn deterministic_cases() {
        let still = Dynamics::Linear(LinearDynamics::zero(2, 1, 2));
        let p = euler_maruyama(&still, &[0.3, 0.4], &zero_policy, 1.0, 10, 1).unwrap();
        assert_eq!(p.x.len(), 11);
        assert!(p.x.iter().all(|x| x == &vec![0.3, 0.4]));

        let mut l = LinearDynamics::zero(1, 1, 1);
        l.c = vec![0.75];
        let drift = Dynamics::Linear(l);
        let p = euler_maruyama(&drift, &[1.0], &zero_policy, 4.0, 7, 1).unwrap();
        assert!((p.last()[0] - (1.0 + 0.75 * 4.0)).abs() < 1e-14);
        assert_eq!(p.t.len(), 8);
        assert_eq!(*p.t.last().unwrap(), 4.0);
    }

    #[test]
    fn seed_determines_path() {
        let ou = Dynamics::Linear(LinearDynamics::ornstein_uhlenbeck(2, 1.0, 0.5));
        let a = euler_maruyama(&ou, &[0.0, 1.0], &zero_policy, 1.0, 50, 9).unwrap();
        let b = euler_maruyama(&ou, &[0.0, 1.0], &zero_policy, 1.0, 50, 9).unwrap();
        let c = euler_maruyama(&ou, &[0.0, 1.0], &zero_policy, 1.0, 50, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn blow_up_names_the_step() {
        let mut l = LinearDynamics::zero(1, 1, 1);
        l.a = vec![1e200];
        let d = Dynamics::Linear(l);
        let err = euler_maruyama(&d, &[1.0], &zero_policy, 1.0, 10, 0).unwrap_err();
        assert!(matches!(err, SdeError::NonFinite { step: 2 }), "{err:?}");
    }

    #[test]
    fn latin_hypercube_strata() {
        for (n, seed) in [(1, 0), (10, 3), (200, 4)] {
            let pts = latin_hypercube(n, &[(0.0, 1.0), (-0.005, 0.005)], seed);
            assert_eq!(pts.len(), n);
            let mut hits = vec![vec![0; n]; 2];
            for p in &pts {
                hits[0][((p[0] * n as f64).floor() as usize).min(n - 1)] += 1;
                hits[1][(((p[1] + 0.005) / 0.01 * n as f64).floor() as usize).min(n - 1)] += 1;
                assert!(p[1] >= -0.005 && p[1] <= 0.005);
            }
            assert!(hits.iter().flatten().all(|&h| h == 1));
        }
    }

    #[test]
    fn truncated_gaussian_respects_box() {
        let s = GaussianSampler::isotropic(vec![0.2, 0.2], 0.1, Some(vec![(0.0, 1.0); 2])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for x in s.sample_n(500, &mut rng).unwrap() {
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!((s.pdf(&[0.2, 0.2]) - 1.0 / (2.0 * std::f64::consts::PI * 0.1)).abs() < 1e-12);
    }
}
