//! Tabulated feedback policy: the policy head sampled on a `(t, x)` grid,
//! indexed by a k-d tree, and closed-loop rollouts under nearest-neighbor lookup.

use std::io::Write;
use std::path::Path as FsPath;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sde::{Dynamics, GaussianSampler, Path, Policy, SdeError};
use crate::sinkhorn::{sinkhorn_divergence, DiscreteMeasure, SinkhornError};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("policy is not finite at t = {t}, x = {x:?}")]
    NonFinite { t: f64, x: Vec<f64> },
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Sinkhorn(#[from] SinkhornError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub const LEAF_SIZE: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Exact nearest-neighbor index over points in `k` dimensions.
/// Ties are resolved to the lowest point index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdTree {
    k: usize,
    coords: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: &[Vec<f64>]) -> Self {
        let k = points.first().map_or(0, Vec::len);
        let coords: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        let mut tree = KdTree { k, coords, order: (0..points.len()).collect(), nodes: Vec::new() };
        if !points.is_empty() {
            let mut order = std::mem::take(&mut tree.order);
            tree.split(&mut order, 0);
            tree.order = order;
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn at(&self, i: usize, a: usize) -> f64 {
        self.coords[i * self.k + a]
    }

    fn split(&mut self, idx: &mut [usize], offset: usize) -> usize {
        let id = self.nodes.len();
        if idx.len() <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start: offset, end: offset + idx.len() });
            return id;
        }
        // widest axis
        let axis = (0..self.k)
            .map(|a| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = self.at(i, a);
                    (lo.min(v), hi.max(v))
                });
                (a, hi - lo)
            })
            .fold((0, -1.0), |best, c| if c.1 > best.1 { c } else { best })
            .0;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&i, &j| self.at(i, axis).total_cmp(&self.at(j, axis)).then(i.cmp(&j)));
        let value = self.at(idx[mid], axis);
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let (l, r) = idx.split_at_mut(mid);
        let left = self.split(l, offset);
        let right = self.split(r, offset + mid);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    fn dist2(&self, i: usize, q: &[f64]) -> f64 {
        let mut s = 0.0;
        for a in 0..self.k {
            let d = self.at(i, a) - q[a];
            s += d * d;
        }
        s
    }

    /// Index of the nearest point and its squared distance.
    pub fn nearest(&self, q: &[f64]) -> Option<(usize, f64)> {
        if self.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.descend(0, q, &mut best);
        Some(best)
    }

    fn descend(&self, node: usize, q: &[f64], best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = self.dist2(i, q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.descend(near, q, best);
                if diff * diff <= best.1 {
                    self.descend(far, q, best);
                }
            }
        }
    }

    /// Brute-force reference with the same metric and tie rule.
    pub fn linear_scan(&self, q: &[f64]) -> Option<(usize, f64)> {
        (0..self.len()).map(|i| (i, self.dist2(i, q))).fold(None, |best, c| match best {
            Some(b) if b.1 <= c.1 => Some(b),
            _ => Some(c),
        })
    }
}

/// Axis-aligned `(t, x)` grid over `[0, T] × box`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub horizon: f64,
    pub state_box: Vec<(f64, f64)>,
    /// Points per axis, time first.
    pub resolution: Vec<usize>,
}

impl GridSpec {
    pub fn new(horizon: f64, state_box: Vec<(f64, f64)>, resolution: Vec<usize>) -> Result<Self, PolicyError> {
        if resolution.len() != state_box.len() + 1 {
            return Err(PolicyError::Config(format!(
                "need {} resolutions (t and each state), got {}",
                state_box.len() + 1,
                resolution.len()
            )));
        }
        if resolution.iter().any(|&r| r < 2) {
            return Err(PolicyError::Config("every grid axis needs at least 2 points".into()));
        }
        if !(horizon > 0.0) || state_box.iter().any(|(lo, hi)| !(hi > lo)) {
            return Err(PolicyError::Config("grid extents must be non-empty".into()));
        }
        Ok(GridSpec { horizon, state_box, resolution })
    }

    /// 50 points on every axis.
    pub fn uniform(horizon: f64, state_box: Vec<(f64, f64)>) -> Result<Self, PolicyError> {
        let r = vec![50; state_box.len() + 1];
        Self::new(horizon, state_box, r)
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        std::iter::once((0.0, self.horizon)).chain(self.state_box.iter().copied()).collect()
    }

    /// All grid points `(t, x₁, …)`, last axis fastest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let b = self.bounds();
        let total: usize = self.resolution.iter().product();
        (0..total)
            .map(|mut flat| {
                let mut p = vec![0.0; b.len()];
                for a in (0..b.len()).rev() {
                    let r = self.resolution[a];
                    let k = flat % r;
                    flat /= r;
                    p[a] = b[a].0 + (b[a].1 - b[a].0) * k as f64 / (r - 1) as f64;
                }
                p
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    /// Raw `(t, x)` of each entry.
    pub points: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// Per-axis `(lo, hi)` used to map coordinates to `[0, 1]`.
    pub bounds: Vec<(f64, f64)>,
    pub grid: Option<GridSpec>,
    pub source: Option<String>,
    tree: KdTree,
}

impl PolicyTable {
    /// Dense evaluation of `policy` on the grid.
    pub fn build(policy: &dyn Policy, grid: &GridSpec, source: Option<String>) -> Result<Self, PolicyError> {
        let t0 = Instant::now();
        let points = grid.points();
        let controls: Vec<Vec<f64>> = points.par_iter().map(|p| policy.control(p[0], &p[1..])).collect();
        let mut table = Self::from_entries(points, controls, grid.bounds())?;
        table.grid = Some(grid.clone());
        table.source = source;
        log::info!("policy table: {} entries built in {:.3} s", table.len(), t0.elapsed().as_secs_f64());
        Ok(table)
    }

    /// Table over arbitrary scattered entries.
    pub fn from_entries(
        points: Vec<Vec<f64>>,
        controls: Vec<Vec<f64>>,
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self, PolicyError> {
        if points.is_empty() || points.len() != controls.len() {
            return Err(PolicyError::Config("need one control per point and at least one point".into()));
        }
        if points.iter().any(|p| p.len() != bounds.len()) {
            return Err(PolicyError::Config("point dimension does not match bounds".into()));
        }
        if let Some((p, _)) =
            points.iter().zip(&controls).find(|(p, u)| !u.iter().chain(p.iter()).all(|v| v.is_finite()))
        {
            return Err(PolicyError::NonFinite { t: p[0], x: p[1..].to_vec() });
        }
        let scaled: Vec<Vec<f64>> = points.iter().map(|p| scale(&bounds, p)).collect();
        let tree = KdTree::build(&scaled);
        Ok(PolicyTable { points, controls, bounds, grid: None, source: None, tree })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn nearest_index(&self, t: f64, x: &[f64]) -> usize {
        let q = self.query_point(t, x);
        self.tree.nearest(&q).expect("table is non-empty").0
    }

    /// Same answer as [`nearest_index`](Self::nearest_index) by exhaustive search.
    pub fn linear_index(&self, t: f64, x: &[f64]) -> usize {
        let q = self.query_point(t, x);
        self.tree.linear_scan(&q).expect("table is non-empty").0
    }

    pub fn query(&self, t: f64, x: &[f64]) -> &[f64] {
        &self.controls[self.nearest_index(t, x)]
    }

    fn query_point(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut p = Vec::with_capacity(x.len() + 1);
        p.push(t);
        p.extend_from_slice(x);
        scale(&self.bounds, &p)
    }

    pub fn save(&self, path: &FsPath) -> Result<(), PolicyError> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &FsPath) -> Result<Self, PolicyError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

fn scale(bounds: &[(f64, f64)], p: &[f64]) -> Vec<f64> {
    p.iter().zip(bounds).map(|(v, (lo, hi))| (v - lo) / (hi - lo)).collect()
}

impl Policy for PolicyTable {
    fn control(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.query(t, x).to_vec()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointStats {
    pub mean: Vec<f64>,
    /// Row-major sample covariance (divisor `N − 1`).
    pub covariance: Vec<f64>,
    /// Debiased Sinkhorn divergence between the endpoints and the target batch.
    pub sinkhorn: f64,
    pub eps: f64,
    pub target_size: usize,
}

#[derive(Clone, Debug)]
pub struct ClosedLoop {
    pub paths: Vec<Path>,
    pub stats: EndpointStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub paths: usize,
    pub steps: usize,
    pub horizon: f64,
    pub seed: u64,
    pub eps: f64,
    pub target_size: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig { paths: 150, steps: 500, horizon: 1.0, seed: 0, eps: 0.1, target_size: 256 }
    }
}

/// Euler–Maruyama rollouts from `ρ₀` under `policy`, one RNG stream per path,
/// compared with a batch drawn from `ρ_T` on a separate stream.
pub fn closed_loop(
    policy: &dyn Policy,
    dynamics: &Dynamics,
    rho0: &GaussianSampler,
    rho_t: &GaussianSampler,
    cfg: &RolloutConfig,
) -> Result<ClosedLoop, PolicyError> {
    if cfg.paths < 2 || cfg.steps == 0 || cfg.target_size < 1 {
        return Err(PolicyError::Config("need ≥ 2 paths, ≥ 1 step and a non-empty target batch".into()));
    }
    if rho0.dim() != dynamics.state_dim() || rho_t.dim() != dynamics.state_dim() {
        return Err(PolicyError::Config("endpoint samplers do not match the state dimension".into()));
    }
    let t0 = Instant::now();
    let paths = (0..cfg.paths)
        .into_par_iter()
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(id as u64);
            let x0 = rho0.sample(&mut rng)?;
            crate::sde::euler_maruyama_rng(dynamics, &x0, policy, cfg.horizon, cfg.steps, &mut rng)
        })
        .collect::<Result<Vec<_>, SdeError>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let target = rho_t.sample_n(cfg.target_size, &mut rng)?;
    let ends: Vec<Vec<f64>> = paths.iter().map(|p| p.last().to_vec()).collect();
    let (mean, covariance) = moments(&ends);
    let sinkhorn = sinkhorn_divergence(&DiscreteMeasure::uniform(ends)?, &DiscreteMeasure::uniform(target)?, cfg.eps)?;
    log::info!("{} rollouts of {} steps in {:.3} s", cfg.paths, cfg.steps, t0.elapsed().as_secs_f64());
    Ok(ClosedLoop {
        paths,
        stats: EndpointStats { mean, covariance, sinkhorn, eps: cfg.eps, target_size: cfg.target_size },
    })
}

pub fn moments(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = x[0].len();
    let k = x.len() as f64;
    let mut mean = vec![0.0; n];
    for p in x {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / k;
        }
    }
    let mut cov = vec![0.0; n * n];
    for p in x {
        for a in 0..n {
            for b in 0..n {
                cov[a * n + b] += (p[a] - mean[a]) * (p[b] - mean[b]) / (k - 1.0);
            }
        }
    }
    (mean, cov)
}

/// `path_id,t,x1..xn,u1..um`, one row per stored state.
pub fn write_rollouts<W: Write>(paths: &[Path], w: W) -> Result<(), PolicyError> {
    let mut w = csv::Writer::from_writer(w);
    let (n, m) = paths.first().map_or((0, 0), |p| (p.x[0].len(), p.u[0].len()));
    let mut header = vec!["path_id".to_string(), "t".into()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|j| format!("u{j}")));
    w.write_record(&header)?;
    for (id, p) in paths.iter().enumerate() {
        for k in 0..p.t.len() {
            let mut row = vec![id.to_string(), p.t[k].to_string()];
            row.extend(p.x[k].iter().chain(&p.u[k]).map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
