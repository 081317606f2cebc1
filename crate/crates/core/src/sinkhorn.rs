//! Entropic optimal transport between weighted point clouds.
//!
//! The regularized problem is `min_M ⟨C, M⟩ + ε⟨M, log M⟩` over couplings with
//! marginals μ₁, μ₂ and squared Euclidean cost. Its minimizer is
//! `M = diag(v₁) Γ diag(v₂)` with kernel `Γ = exp(−C/ε)`; the solver iterates
//! on `log v₁`, `log v₂` with log-sum-exp reductions.
//!
//! [`unrolled`] runs a fixed number of iterations and differentiates the
//! resulting loss exactly (reverse pass through every iteration), with respect
//! to both log-weights and the cost matrix.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SinkhornError {
    #[error("point dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("invalid measure: {0}")]
    Measure(String),
    #[error("cost matrix is {rows}x{cols}, marginals have lengths {a} and {b}")]
    Shape { rows: usize, cols: usize, a: usize, b: usize },
    #[error("regularization must be positive, got {0}")]
    Epsilon(f64),
    #[error("non-finite value in sinkhorn iterations")]
    NonFinite,
}

/// Weighted point cloud. Weights are non-negative and sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self, SinkhornError> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(SinkhornError::Measure(format!("{} points, {} weights", points.len(), weights.len())));
        }
        let dim = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(SinkhornError::Dimension(dim, p.len()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(SinkhornError::Measure("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(SinkhornError::Measure(format!("weights sum to {total}")));
        }
        Ok(DiscreteMeasure { points, weights })
    }

    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self, SinkhornError> {
        let n = points.len();
        Self::new(points, vec![1.0 / n.max(1) as f64; n])
    }

    /// Normalizes arbitrary non-negative masses into a probability vector.
    pub fn from_masses(points: Vec<Vec<f64>>, masses: &[f64]) -> Result<Self, SinkhornError> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(SinkhornError::Measure(format!("total mass {total}")));
        }
        let mut w: Vec<f64> = masses.iter().map(|m| m / total).collect();
        // absorb the rounding residue so the sum is 1 to the last bit we can
        let s: f64 = w.iter().sum();
        if let Some(k) = (0..w.len()).max_by(|&i, &j| w[i].total_cmp(&w[j])) {
            w[k] += 1.0 - s;
        }
        Self::new(points, w)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

/// Dense row-major cost matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        CostMatrix { rows, cols, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    fn select(&self, rows: &[usize], cols: &[usize]) -> CostMatrix {
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            data.extend(cols.iter().map(|&j| self.data[i * self.cols + j]));
        }
        CostMatrix { rows: rows.len(), cols: cols.len(), data }
    }
}

/// `C_ij = ‖a_i − b_j‖²`.
pub fn cost_matrix(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<CostMatrix, SinkhornError> {
    sq_dist(&a.points, &b.points)
}

pub fn sq_dist(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<CostMatrix, SinkhornError> {
    let (da, db) = (a[0].len(), b[0].len());
    if da != db {
        return Err(SinkhornError::Dimension(da, db));
    }
    let mut data = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            data.push(x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum());
        }
    }
    Ok(CostMatrix { rows: a.len(), cols: b.len(), data })
}

#[derive(Clone, Debug)]
pub struct SinkhornResult {
    /// Coupling over the full supports (zero rows/columns for dropped atoms).
    pub coupling: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    /// Dual log-scalings; `-inf` on dropped atoms.
    pub log_v1: Vec<f64>,
    pub log_v2: Vec<f64>,
    pub eps: f64,
    pub iterations: usize,
    /// L¹ violation of the row marginal (columns are exact after the final update).
    pub marginal_err: f64,
    pub converged: bool,
    /// Row-marginal violation after each iteration.
    pub history: Vec<f64>,
}

impl SinkhornResult {
    pub fn m(&self, i: usize, j: usize) -> f64 {
        self.coupling[i * self.cols + j]
    }

    /// `⟨C, M⟩`.
    pub fn transport_cost(&self, c: &CostMatrix) -> f64 {
        self.coupling.iter().zip(&c.data).map(|(m, c)| m * c).sum()
    }

    /// `⟨C + ε log M, M⟩`, with `0 log 0 = 0`.
    pub fn loss(&self, c: &CostMatrix) -> f64 {
        self.coupling.iter().zip(&c.data).map(|(&m, &c)| if m > 0.0 { m * (c + self.eps * m.ln()) } else { 0.0 }).sum()
    }
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 5000;
pub const DEFAULT_UNROLL: usize = 100;

fn lse(vals: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &v in vals {
        if v > m {
            m = v;
        }
    }
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut s = 0.0;
    for &v in vals {
        s += (v - m).exp();
    }
    m + s.ln()
}

struct Problem {
    la: Vec<f64>,
    lb: Vec<f64>,
    // C/ε, row-major and transposed
    ce: Vec<f64>,
    cet: Vec<f64>,
    n: usize,
    m: usize,
}

impl Problem {
    fn new(la: Vec<f64>, lb: Vec<f64>, c: &CostMatrix, eps: f64) -> Self {
        let (n, m) = (c.rows, c.cols);
        let ce: Vec<f64> = c.data.iter().map(|v| v / eps).collect();
        let mut cet = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                cet[j * n + i] = ce[i * m + j];
            }
        }
        Problem { la, lb, ce, cet, n, m }
    }

    fn update_alpha(&self, beta: &[f64], alpha: &mut [f64], buf: &mut Vec<f64>) {
        for i in 0..self.n {
            let row = &self.ce[i * self.m..(i + 1) * self.m];
            buf.clear();
            buf.extend(beta.iter().zip(row).map(|(b, c)| b - c));
            alpha[i] = self.la[i] - lse(buf);
        }
    }

    fn update_beta(&self, alpha: &[f64], beta: &mut [f64], buf: &mut Vec<f64>) {
        for j in 0..self.m {
            let col = &self.cet[j * self.n..(j + 1) * self.n];
            buf.clear();
            buf.extend(alpha.iter().zip(col).map(|(a, c)| a - c));
            beta[j] = self.lb[j] - lse(buf);
        }
    }
}

fn validate(mu1: &[f64], mu2: &[f64], c: &CostMatrix, eps: f64) -> Result<(), SinkhornError> {
    if c.rows != mu1.len() || c.cols != mu2.len() {
        return Err(SinkhornError::Shape { rows: c.rows, cols: c.cols, a: mu1.len(), b: mu2.len() });
    }
    if !(eps > 0.0) {
        return Err(SinkhornError::Epsilon(eps));
    }
    for w in mu1.iter().chain(mu2) {
        if !(*w >= 0.0) || !w.is_finite() {
            return Err(SinkhornError::Measure(format!("bad weight {w}")));
        }
    }
    if !mu1.iter().any(|&w| w > 0.0) || !mu2.iter().any(|&w| w > 0.0) {
        return Err(SinkhornError::Measure("no positive weight".into()));
    }
    Ok(())
}

fn support(w: &[f64]) -> Vec<usize> {
    (0..w.len()).filter(|&i| w[i] > 0.0).collect()
}

/// Log-domain Sinkhorn iterations until the row marginal is within `tol` (L¹)
/// or `max_iter` iterations have run. Zero-weight atoms are removed first.
pub fn sinkhorn(
    mu1: &[f64],
    mu2: &[f64],
    c: &CostMatrix,
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SinkhornResult, SinkhornError> {
    validate(mu1, mu2, c, eps)?;
    let si = support(mu1);
    let sj = support(mu2);
    let cs = c.select(&si, &sj);
    let la: Vec<f64> = si.iter().map(|&i| mu1[i].ln()).collect();
    let lb: Vec<f64> = sj.iter().map(|&j| mu2[j].ln()).collect();
    let a: Vec<f64> = si.iter().map(|&i| mu1[i]).collect();
    let pb = Problem::new(la, lb, &cs, eps);
    let (n, m) = (pb.n, pb.m);
    let mut buf = Vec::with_capacity(n.max(m));
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; m];
    let mut next = vec![0.0; n];
    pb.update_alpha(&beta, &mut alpha, &mut buf);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    let max_iter = max_iter.max(1);
    while iterations < max_iter {
        pb.update_beta(&alpha, &mut beta, &mut buf);
        iterations += 1;
        // The next α-update reveals the current row sums: r_i = a_i exp(α_i − α'_i).
        pb.update_alpha(&beta, &mut next, &mut buf);
        err = alpha.iter().zip(&next).zip(&a).map(|((x, y), w)| w * ((x - y).exp() - 1.0).abs()).sum();
        if !err.is_finite() {
            return Err(SinkhornError::NonFinite);
        }
        history.push(err);
        if err <= tol {
            break;
        }
        if iterations < max_iter {
            std::mem::swap(&mut alpha, &mut next);
        }
    }
    let mut coupling = vec![0.0; c.rows * c.cols];
    let mut log_v1 = vec![f64::NEG_INFINITY; c.rows];
    let mut log_v2 = vec![f64::NEG_INFINITY; c.cols];
    for (ii, &i) in si.iter().enumerate() {
        log_v1[i] = alpha[ii];
        for (jj, &j) in sj.iter().enumerate() {
            coupling[i * c.cols + j] = (alpha[ii] + beta[jj] - pb.ce[ii * m + jj]).exp();
        }
    }
    for (jj, &j) in sj.iter().enumerate() {
        log_v2[j] = beta[jj];
    }
    Ok(SinkhornResult {
        coupling,
        rows: c.rows,
        cols: c.cols,
        log_v1,
        log_v2,
        eps,
        iterations,
        marginal_err: err,
        converged: err <= tol,
        history,
    })
}

/// `⟨C + ε log M, M⟩` at the converged coupling between two clouds.
pub fn sinkhorn_loss(a: &DiscreteMeasure, b: &DiscreteMeasure, eps: f64) -> Result<f64, SinkhornError> {
    let c = cost_matrix(a, b)?;
    let r = sinkhorn(&a.weights, &b.weights, &c, eps, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    Ok(r.loss(&c))
}

/// Debiased loss `W(a,b) − ½W(a,a) − ½W(b,b)`; non-negative and zero at `a = b`.
pub fn sinkhorn_divergence(a: &DiscreteMeasure, b: &DiscreteMeasure, eps: f64) -> Result<f64, SinkhornError> {
    Ok(sinkhorn_loss(a, b, eps)? - 0.5 * sinkhorn_loss(a, a, eps)? - 0.5 * sinkhorn_loss(b, b, eps)?)
}

/// Loss of a K-iteration Sinkhorn run and its exact derivatives.
#[derive(Clone, Debug)]
pub struct Unrolled {
    pub value: f64,
    /// ∂value/∂log μ₁ and ∂value/∂log μ₂ (zero on dropped atoms).
    pub grad_log_mu1: Vec<f64>,
    pub grad_log_mu2: Vec<f64>,
    /// ∂value/∂C, row-major; empty unless requested.
    pub grad_cost: Vec<f64>,
}

/// Runs exactly `k` iterations from `log v₂ = 0` (each an α- then β-update),
/// evaluates `⟨C + ε log M, M⟩` at the final iterate, and back-propagates
/// through all of them.
pub fn unrolled(
    mu1: &[f64],
    mu2: &[f64],
    c: &CostMatrix,
    eps: f64,
    k: usize,
    want_cost_grad: bool,
) -> Result<Unrolled, SinkhornError> {
    validate(mu1, mu2, c, eps)?;
    let si = support(mu1);
    let sj = support(mu2);
    let dense = si.len() == mu1.len() && sj.len() == mu2.len();
    let cs = if dense { c.clone() } else { c.select(&si, &sj) };
    let la: Vec<f64> = si.iter().map(|&i| mu1[i].ln()).collect();
    let lb: Vec<f64> = sj.iter().map(|&j| mu2[j].ln()).collect();
    let k = k.max(1);
    let max_ce = cs.data.iter().fold(0.0_f64, |m, &v| m.max(v)) / eps;
    let r = if max_ce < 500.0 {
        match unrolled_kernel(&la, &lb, &cs, eps, k, want_cost_grad) {
            Some(r) => r,
            None => unrolled_log(&la, &lb, &cs, eps, k, want_cost_grad),
        }
    } else {
        unrolled_log(&la, &lb, &cs, eps, k, want_cost_grad)
    };
    if !r.value.is_finite() {
        return Err(SinkhornError::NonFinite);
    }
    if dense {
        return Ok(r);
    }
    let mut g1 = vec![0.0; mu1.len()];
    let mut g2 = vec![0.0; mu2.len()];
    for (ii, &i) in si.iter().enumerate() {
        g1[i] = r.grad_log_mu1[ii];
    }
    for (jj, &j) in sj.iter().enumerate() {
        g2[j] = r.grad_log_mu2[jj];
    }
    let mut gc = Vec::new();
    if want_cost_grad {
        gc = vec![0.0; c.rows * c.cols];
        for (ii, &i) in si.iter().enumerate() {
            for (jj, &j) in sj.iter().enumerate() {
                gc[i * c.cols + j] = r.grad_cost[ii * sj.len() + jj];
            }
        }
    }
    Ok(Unrolled { value: r.value, grad_log_mu1: g1, grad_log_mu2: g2, grad_cost: gc })
}

// Terminal loss and its adjoints at iterate (α, β): returns (value, ᾱ, β̄, C̄).
fn terminal(
    pb: &Problem,
    c: &CostMatrix,
    eps: f64,
    alpha: &[f64],
    beta: &[f64],
    want_c: bool,
) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, m) = (pb.n, pb.m);
    let mut value = 0.0;
    let mut abar = vec![0.0; n];
    let mut bbar = vec![0.0; m];
    let mut cbar = if want_c { vec![0.0; n * m] } else { Vec::new() };
    for i in 0..n {
        for j in 0..m {
            let l = alpha[i] + beta[j] - pb.ce[i * m + j];
            let mij = l.exp();
            let cij = c.data[i * m + j];
            value += mij * (cij + eps * l);
            let d = mij * (cij + eps * l + eps);
            abar[i] += d;
            bbar[j] += d;
            if want_c {
                cbar[i * m + j] = mij - d / eps;
            }
        }
    }
    (value, abar, bbar, cbar)
}

fn unrolled_log(la: &[f64], lb: &[f64], c: &CostMatrix, eps: f64, k: usize, want_c: bool) -> Unrolled {
    let pb = Problem::new(la.to_vec(), lb.to_vec(), c, eps);
    let (n, m) = (pb.n, pb.m);
    let mut buf = Vec::with_capacity(n.max(m));
    let mut alphas = vec![vec![0.0; n]; k + 1];
    let mut betas = vec![vec![0.0; m]; k + 1];
    for it in 1..=k {
        let (prev, cur) = betas.split_at_mut(it);
        pb.update_alpha(&prev[it - 1], &mut alphas[it], &mut buf);
        pb.update_beta(&alphas[it], &mut cur[0], &mut buf);
    }
    let (value, mut abar, mut bbar, mut cbar) = terminal(&pb, c, eps, &alphas[k], &betas[k], want_c);
    let mut gla = vec![0.0; n];
    let mut glb = vec![0.0; m];
    for it in (1..=k).rev() {
        let (al, be, bp) = (&alphas[it], &betas[it], &betas[it - 1]);
        // β^(it) = lb − LSE_i(α^(it) − C/ε)
        for j in 0..m {
            glb[j] += bbar[j];
        }
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..m {
                let q = (al[i] - pb.ce[i * m + j] + be[j] - pb.lb[j]).exp();
                s += bbar[j] * q;
                if want_c {
                    cbar[i * m + j] += bbar[j] * q / eps;
                }
            }
            abar[i] -= s;
        }
        // α^(it) = la − LSE_j(β^(it−1) − C/ε)
        let mut nb = vec![0.0; m];
        for i in 0..n {
            gla[i] += abar[i];
            for j in 0..m {
                let p = (bp[j] - pb.ce[i * m + j] + al[i] - pb.la[i]).exp();
                nb[j] -= abar[i] * p;
                if want_c {
                    cbar[i * m + j] += abar[i] * p / eps;
                }
            }
        }
        abar.iter_mut().for_each(|v| *v = 0.0);
        bbar = nb;
    }
    Unrolled { value, grad_log_mu1: gla, grad_log_mu2: glb, grad_cost: cbar }
}

// Same iteration in scaling form u = e^α, v = e^β with a precomputed kernel.
// Identical in exact arithmetic; returns None if anything leaves the f64 range.
fn unrolled_kernel(la: &[f64], lb: &[f64], c: &CostMatrix, eps: f64, k: usize, want_c: bool) -> Option<Unrolled> {
    let (n, m) = (c.rows, c.cols);
    let kern: Vec<f64> = c.data.iter().map(|v| (-v / eps).exp()).collect();
    let a: Vec<f64> = la.iter().map(|v| v.exp()).collect();
    let b: Vec<f64> = lb.iter().map(|v| v.exp()).collect();
    let mut us = vec![vec![0.0; n]; k + 1];
    let mut vs = vec![vec![1.0; m]; k + 1];
    let mut kv = vec![0.0; n];
    let mut ktu = vec![0.0; m];
    for it in 1..=k {
        matvec(&kern, n, m, &vs[it - 1], &mut kv);
        for i in 0..n {
            us[it][i] = a[i] / kv[i];
        }
        matvec_t(&kern, n, m, &us[it], &mut ktu);
        for j in 0..m {
            vs[it][j] = b[j] / ktu[j];
        }
    }
    let fin = |x: &[f64]| x.iter().all(|v| v.is_finite() && *v > 0.0);
    if !fin(&us[k]) || !fin(&vs[k]) {
        return None;
    }
    let alpha: Vec<f64> = us[k].iter().map(|v| v.ln()).collect();
    let beta: Vec<f64> = vs[k].iter().map(|v| v.ln()).collect();
    let pb = Problem {
        la: la.to_vec(),
        lb: lb.to_vec(),
        ce: c.data.iter().map(|v| v / eps).collect(),
        cet: Vec::new(),
        n,
        m,
    };
    let (value, mut abar, mut bbar, mut cbar) = terminal(&pb, c, eps, &alpha, &beta, want_c);
    let mut gla = vec![0.0; n];
    let mut glb = vec![0.0; m];
    let mut tmp_m = vec![0.0; m];
    let mut tmp_n = vec![0.0; n];
    for it in (1..=k).rev() {
        let (u, v, vp) = (&us[it], &vs[it], &vs[it - 1]);
        // Q_ij = u_i K_ij v_j / b_j
        for j in 0..m {
            glb[j] += bbar[j];
            tmp_m[j] = bbar[j] * v[j] / b[j];
        }
        matvec(&kern, n, m, &tmp_m, &mut kv);
        for i in 0..n {
            abar[i] -= u[i] * kv[i];
        }
        if want_c {
            for i in 0..n {
                let row = &kern[i * m..(i + 1) * m];
                let dst = &mut cbar[i * m..(i + 1) * m];
                let s = u[i] / eps;
                for j in 0..m {
                    dst[j] += s * row[j] * tmp_m[j];
                }
            }
        }
        // P_ij = u_i K_ij v^(it−1)_j / a_i
        for i in 0..n {
            gla[i] += abar[i];
            tmp_n[i] = abar[i] * u[i] / a[i];
        }
        matvec_t(&kern, n, m, &tmp_n, &mut ktu);
        for j in 0..m {
            bbar[j] = -vp[j] * ktu[j];
        }
        if want_c {
            for i in 0..n {
                let row = &kern[i * m..(i + 1) * m];
                let dst = &mut cbar[i * m..(i + 1) * m];
                let s = tmp_n[i] / eps;
                for j in 0..m {
                    dst[j] += s * row[j] * vp[j];
                }
            }
        }
        abar.iter_mut().for_each(|x| *x = 0.0);
    }
    let ok = value.is_finite() && gla.iter().chain(&glb).all(|g| g.is_finite());
    ok.then_some(Unrolled { value, grad_log_mu1: gla, grad_log_mu2: glb, grad_cost: cbar })
}

fn matvec(k: &[f64], n: usize, m: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let row = &k[i * m..(i + 1) * m];
        out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

fn matvec_t(k: &[f64], n: usize, m: usize, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        let row = &k[i * m..(i + 1) * m];
        let xi = x[i];
        for (o, r) in out.iter_mut().zip(row) {
            *o += xi * r;
        }
    }
}

/// Chain rule from a cost-matrix adjoint to the two point sets of a squared
/// Euclidean cost.
pub fn cost_grad_to_points(cbar: &[f64], x: &[Vec<f64>], y: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (n, m, d) = (x.len(), y.len(), x[0].len());
    let mut gx = vec![vec![0.0; d]; n];
    let mut gy = vec![vec![0.0; d]; m];
    for i in 0..n {
        for j in 0..m {
            let w = cbar[i * m + j];
            if w == 0.0 {
                continue;
            }
            for k in 0..d {
                let g = 2.0 * w * (x[i][k] - y[j][k]);
                gx[i][k] += g;
                gy[j][k] -= g;
            }
        }
    }
    (gx, gy)
}

/// Gradient of the K-iteration loss `W(a, b)` with respect to the points of
/// `a`, with `b` fixed. Returns (value, ∂/∂a.points).
pub fn sinkhorn_loss_grad(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    eps: f64,
    k: usize,
) -> Result<(f64, Vec<Vec<f64>>), SinkhornError> {
    let c = cost_matrix(a, b)?;
    let r = unrolled(&a.weights, &b.weights, &c, eps, k, true)?;
    let (gx, _) = cost_grad_to_points(&r.grad_cost, &a.points, &b.points);
    Ok((r.value, gx))
}

/// K-iteration debiased divergence between `(x, w)` and a fixed target
/// `(y, b)`, differentiated with respect to the candidate weights `w` and,
/// optionally, the candidate points.
#[derive(Clone, Debug)]
pub struct DivergenceGrad {
    pub value: f64,
    pub cross: f64,
    pub self_a: f64,
    pub self_b: f64,
    pub grad_weights: Vec<f64>,
    pub grad_points: Vec<Vec<f64>>,
}

pub fn divergence_grad(
    x: &[Vec<f64>],
    w: &[f64],
    y: &[Vec<f64>],
    b: &[f64],
    eps: f64,
    k: usize,
    want_points: bool,
) -> Result<DivergenceGrad, SinkhornError> {
    let cxy = sq_dist(x, y)?;
    let cxx = sq_dist(x, x)?;
    let cyy = sq_dist(y, y)?;
    let ab = unrolled(w, b, &cxy, eps, k, want_points)?;
    let aa = unrolled(w, w, &cxx, eps, k, want_points)?;
    let bb = unrolled(b, b, &cyy, eps, k, false)?;
    let value = ab.value - 0.5 * aa.value - 0.5 * bb.value;
    let grad_weights = (0..w.len())
        .map(|i| {
            if w[i] > 0.0 {
                (ab.grad_log_mu1[i] - 0.5 * (aa.grad_log_mu1[i] + aa.grad_log_mu2[i])) / w[i]
            } else {
                0.0
            }
        })
        .collect();
    let mut grad_points = Vec::new();
    if want_points {
        let (g1, _) = cost_grad_to_points(&ab.grad_cost, x, y);
        let (g2, g3) = cost_grad_to_points(&aa.grad_cost, x, x);
        grad_points =
            (0..x.len()).map(|i| (0..x[0].len()).map(|d| g1[i][d] - 0.5 * (g2[i][d] + g3[i][d])).collect()).collect();
    }
    Ok(DivergenceGrad { value, cross: ab.value, self_a: aa.value, self_b: bb.value, grad_weights, grad_points })
}
