//! Tanh multilayer perceptrons with a flat parameter vector.
//!
//! Two evaluation paths exist. [`Mlp::forward`] and [`Mlp::forward_theta`] are
//! generic over [`Scalar`] and serve as the reference. [`Mlp::forward_batch`]
//! is a hand-written batched pass that propagates value, gradient and Hessian
//! with respect to a few seed directions through the layers in f64 and can
//! back-propagate adjoints of all of them into θ; training loops use it.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Scalar;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid architecture: {0}")]
    Spec(String),
    #[error("input has {got} features, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("parameter vector has length {got}, architecture needs {expected}")]
    ParamLen { expected: usize, got: usize },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        MlpSpec { input_dim, hidden: hidden.to_vec(), output_dim }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&w| w == 0) {
            return Err(NetError::Spec(format!("all widths must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Layer widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn num_params(&self) -> usize {
        self.widths().windows(2).map(|p| (p[0] + 1) * p[1]).sum()
    }

    /// (weight offset, bias offset, fan_in, fan_out) per layer. Weights are
    /// stored row-major as `out × in`, followed by the `out` biases.
    pub fn layout(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut off = 0;
        self.widths()
            .windows(2)
            .map(|p| {
                let (i, o) = (p[0], p[1]);
                let l = (off, off + i * o, i, o);
                off += (i + 1) * o;
                l
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub theta: Vec<f64>,
}

impl Mlp {
    /// Glorot-uniform weights and zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self, NetError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; spec.num_params()];
        for (w0, b0, fi, fo) in spec.layout() {
            let a = (6.0 / (fi + fo) as f64).sqrt();
            for w in &mut theta[w0..b0] {
                *w = rng.random_range(-a..a);
            }
        }
        Ok(Mlp { spec, theta })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self, NetError> {
        spec.validate()?;
        let d = spec.num_params();
        Ok(Mlp { spec, theta: vec![0.0; d] })
    }

    pub fn from_theta(spec: MlpSpec, theta: Vec<f64>) -> Result<Self, NetError> {
        spec.validate()?;
        if theta.len() != spec.num_params() {
            return Err(NetError::ParamLen { expected: spec.num_params(), got: theta.len() });
        }
        Ok(Mlp { spec, theta })
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    /// Evaluates with the stored f64 parameters.
    pub fn forward<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>, NetError> {
        self.check_input(x.len())?;
        let layout = self.spec.layout();
        let last = layout.len() - 1;
        let mut h = x.to_vec();
        let mut prods = Vec::new();
        for (l, &(w0, b0, fi, fo)) in layout.iter().enumerate() {
            let mut z = Vec::with_capacity(fo);
            for o in 0..fo {
                prods.clear();
                let row = &self.theta[w0 + o * fi..w0 + (o + 1) * fi];
                prods.extend(h.iter().zip(row).filter(|(_, &w)| w != 0.0).map(|(&hi, &w)| hi * w));
                let zo = S::sum(&prods) + self.theta[b0 + o];
                z.push(if l < last { zo.tanh() } else { zo });
            }
            h = z;
        }
        Ok(h)
    }

    /// Evaluates with externally supplied parameters, so θ can live on a tape.
    pub fn forward_theta<S: Scalar>(&self, theta: &[S], x: &[S]) -> Result<Vec<S>, NetError> {
        self.check_input(x.len())?;
        if theta.len() != self.theta.len() {
            return Err(NetError::ParamLen { expected: self.theta.len(), got: theta.len() });
        }
        let layout = self.spec.layout();
        let last = layout.len() - 1;
        let mut h = x.to_vec();
        let mut prods = Vec::new();
        for (l, &(w0, b0, fi, fo)) in layout.iter().enumerate() {
            let mut z = Vec::with_capacity(fo);
            for o in 0..fo {
                prods.clear();
                prods.extend((0..fi).map(|i| h[i] * theta[w0 + o * fi + i]));
                prods.push(theta[b0 + o]);
                let zo = S::sum(&prods);
                z.push(if l < last { zo.tanh() } else { zo });
            }
            h = z;
        }
        Ok(h)
    }

    fn check_input(&self, got: usize) -> Result<(), NetError> {
        if got != self.spec.input_dim {
            return Err(NetError::Dimension { expected: self.spec.input_dim, got });
        }
        Ok(())
    }

    /// Upper bound on the Lipschitz constant of the network in the Euclidean
    /// norm: product over layers of min(Frobenius norm, sqrt(‖W‖₁‖W‖∞)).
    /// Tanh is 1-Lipschitz, so the bound holds for every input pair.
    pub fn lipschitz_bound(&self) -> f64 {
        self.spec
            .layout()
            .iter()
            .map(|&(w0, _, fi, fo)| {
                let w = &self.theta[w0..w0 + fi * fo];
                let fro = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                let row_max =
                    (0..fo).map(|o| w[o * fi..(o + 1) * fi].iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
                let col_max = (0..fi).map(|i| (0..fo).map(|o| w[o * fi + i].abs()).sum::<f64>()).fold(0.0, f64::max);
                fro.min((row_max * col_max).sqrt())
            })
            .product()
    }

    /// Batched forward pass carrying second-order jets in `seeds` directions.
    ///
    /// `input` is laid out `[component][feature][point]` with
    /// `JetLayout::new(seeds).len()` components; with `seeds = 0` it is just the
    /// feature values.
    pub fn forward_batch(&self, seeds: usize, points: usize, input: Vec<f64>) -> Result<BatchPass<'_>, NetError> {
        let lay = JetLayout::new(seeds);
        let nc = lay.len();
        if input.len() != nc * self.spec.input_dim * points {
            return Err(NetError::Dimension { expected: nc * self.spec.input_dim * points, got: input.len() });
        }
        let layout = self.spec.layout();
        let last = layout.len() - 1;
        let mut inputs = Vec::with_capacity(layout.len());
        let mut slopes = Vec::with_capacity(layout.len());
        let mut pre = Vec::with_capacity(layout.len());
        let mut h = input;
        for (l, &(w0, b0, fi, fo)) in layout.iter().enumerate() {
            let w = &self.theta[w0..b0];
            let b = &self.theta[b0..b0 + fo];
            let mut z = vec![0.0; nc * fo * points];
            for o in 0..fo {
                z[o * points..(o + 1) * points].fill(b[o]);
            }
            for c in 0..nc {
                let blk = c * fo * points;
                gemm(fo, fi, points, (w, fi, 1), (&h[c * fi * points..], points, 1), (&mut z[blk..], points), 1.0);
            }
            inputs.push(h);
            if l == last {
                slopes.push(Vec::new());
                pre.push(Vec::new());
                h = z;
            } else {
                let (a, s) = tanh_jet(&lay, fo, points, &z);
                slopes.push(s);
                pre.push(z);
                h = a;
            }
        }
        Ok(BatchPass { net: self, lay, points, inputs, pre, slopes, output: h })
    }
}

/// Component indexing for a second-order jet over `seeds` directions:
/// 0 is the value, 1..=seeds the gradient, then the upper-triangle Hessian.
#[derive(Clone, Debug)]
pub struct JetLayout {
    pub seeds: usize,
    pairs: Vec<(usize, usize)>,
}

impl JetLayout {
    pub fn new(seeds: usize) -> Self {
        let mut pairs = Vec::new();
        for k in 0..seeds {
            for l in k..seeds {
                pairs.push((k, l));
            }
        }
        if seeds == 0 {
            pairs.clear();
        }
        JetLayout { seeds, pairs }
    }

    pub fn len(&self) -> usize {
        1 + self.seeds + self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn grad(&self, k: usize) -> usize {
        1 + k
    }

    pub fn hess(&self, k: usize, l: usize) -> usize {
        let (k, l) = if k <= l { (k, l) } else { (l, k) };
        1 + self.seeds + self.pairs.iter().position(|&p| p == (k, l)).expect("pair in range")
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

// Returns the activation jets and the per-unit (s, s', s'') needed for the
// reverse pass, stored as [3][unit][point].
fn tanh_jet(lay: &JetLayout, fo: usize, points: usize, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nc = lay.len();
    let mut a = vec![0.0; z.len()];
    let mut s = vec![0.0; 3 * fo * points];
    let blk = fo * points;
    for o in 0..fo {
        for p in 0..points {
            let u = o * points + p;
            let t = z[u].tanh();
            let d1 = 1.0 - t * t;
            let d2 = -2.0 * t * d1;
            s[u] = t;
            s[blk + u] = d1;
            s[2 * blk + u] = d2;
            a[u] = t;
            for k in 0..lay.seeds {
                let c = lay.grad(k);
                a[c * blk + u] = d1 * z[c * blk + u];
            }
            for (q, &(k, l)) in lay.pairs.iter().enumerate() {
                let c = 1 + lay.seeds + q;
                a[c * blk + u] = d1 * z[c * blk + u] + d2 * z[lay.grad(k) * blk + u] * z[lay.grad(l) * blk + u];
            }
        }
    }
    debug_assert_eq!(a.len(), nc * blk);
    (a, s)
}

/// Cached batched forward pass; see [`Mlp::forward_batch`].
pub struct BatchPass<'a> {
    net: &'a Mlp,
    lay: JetLayout,
    points: usize,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl BatchPass<'_> {
    pub fn layout(&self) -> &JetLayout {
        &self.lay
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// Output jets, `[component][output][point]`.
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn out(&self, comp: usize, unit: usize, point: usize) -> f64 {
        let od = self.net.spec.output_dim;
        self.output[(comp * od + unit) * self.points + point]
    }

    /// Reverse pass. `out_adj` matches the layout of [`output`](Self::output).
    /// Accumulates into `theta_grad` and returns the input adjoints.
    pub fn backward(&self, out_adj: &[f64], theta_grad: &mut [f64]) -> Vec<f64> {
        let net = self.net;
        let nc = self.lay.len();
        let np = self.points;
        let layout = net.spec.layout();
        assert_eq!(out_adj.len(), self.output.len());
        assert_eq!(theta_grad.len(), net.theta.len());
        let mut zbar = out_adj.to_vec();
        for l in (0..layout.len()).rev() {
            let (w0, b0, fi, fo) = layout[l];
            let w = &net.theta[w0..b0];
            let h = &self.inputs[l];
            for o in 0..fo {
                theta_grad[b0 + o] += zbar[o * np..(o + 1) * np].iter().sum::<f64>();
            }
            let mut hbar = vec![0.0; nc * fi * np];
            for c in 0..nc {
                let zc = &zbar[c * fo * np..(c + 1) * fo * np];
                let hc = &h[c * fi * np..(c + 1) * fi * np];
                gemm(fo, np, fi, (zc, np, 1), (hc, 1, np), (&mut theta_grad[w0..b0], fi), 1.0);
                gemm(fi, fo, np, (w, 1, fi), (zc, np, 1), (&mut hbar[c * fi * np..], np), 0.0);
            }
            if l == 0 {
                return hbar;
            }
            zbar = self.tanh_backward(l - 1, &hbar);
        }
        unreachable!("network has at least one layer")
    }

    // Adjoint of the pre-activation jets of hidden layer `l` given adjoints of its outputs.
    fn tanh_backward(&self, l: usize, abar: &[f64]) -> Vec<f64> {
        let lay = &self.lay;
        let z = &self.pre[l];
        let s = &self.slopes[l];
        let blk = z.len() / lay.len();
        let mut zb = vec![0.0; z.len()];
        for u in 0..blk {
            let t = s[u];
            let d1 = s[blk + u];
            let d2 = s[2 * blk + u];
            let d3 = -2.0 * d1 * d1 + 4.0 * t * t * d1;
            // adjoints of d1 and d2 as functions of the value
            let mut bd1 = 0.0;
            let mut bd2 = 0.0;
            for k in 0..lay.seeds {
                let c = lay.grad(k) * blk + u;
                zb[c] += abar[c] * d1;
                bd1 += abar[c] * z[c];
            }
            for (q, &(k, m)) in lay.pairs.iter().enumerate() {
                let c = (1 + lay.seeds + q) * blk + u;
                let ck = lay.grad(k) * blk + u;
                let cm = lay.grad(m) * blk + u;
                zb[c] += abar[c] * d1;
                bd1 += abar[c] * z[c];
                bd2 += abar[c] * z[ck] * z[cm];
                zb[ck] += abar[c] * d2 * z[cm];
                zb[cm] += abar[c] * d2 * z[ck];
            }
            zb[u] = abar[u] * d1 + bd1 * d2 + bd2 * d3;
        }
        zb
    }
}

// C (m×n, row stride rsc) = A (m×k) · B (k×n) + beta·C, with (slice, row stride, col stride) operands.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], usize, usize),
    b: (&[f64], usize, usize),
    c: (&mut [f64], usize),
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    let need = |rs: usize, cs: usize, r: usize, cl: usize| {
        if r == 0 || cl == 0 {
            0
        } else {
            (r - 1) * rs + (cl - 1) * cs + 1
        }
    };
    assert!(a.0.len() >= need(a.1, a.2, m, k) && b.0.len() >= need(b.1, b.2, k, n) && c.0.len() >= need(c.1, 1, m, n));
    // SAFETY: the assertion above keeps every strided access inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.0.as_mut_ptr(),
            c.1 as isize,
            1,
        );
    }
}

/// Builds the `[component][feature][point]` input block for seeds placed on the
/// first `seeds` features, from row-major point features.
pub fn seeded_input(features: &[Vec<f64>], dim: usize, seeds: usize) -> Vec<f64> {
    let lay = JetLayout::new(seeds);
    let np = features.len();
    let mut buf = vec![0.0; lay.len() * dim * np];
    for (p, f) in features.iter().enumerate() {
        debug_assert_eq!(f.len(), dim);
        for i in 0..dim {
            buf[i * np + p] = f[i];
        }
        for k in 0..seeds {
            buf[(lay.grad(k) * dim + k) * np + p] = 1.0;
        }
    }
    buf
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<(), NetError> {
    let s = serde_json::to_string_pretty(value)?;
    std::fs::write(path, s)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, NetError> {
    let s = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}
