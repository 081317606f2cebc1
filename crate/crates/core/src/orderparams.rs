//! Steinhardt bond order parameters from periodic particle configurations.
//!
//! `C_l(i) = ( 4π/(2l+1) Σ_m |ν(i)⁻¹ Σ_j Y_lm(r̂_ij)|² )^½`, averaged over
//! particles for `⟨C_l⟩`. Neighbors are all particles within a cutoff under the
//! minimum-image convention.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_L: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum OrderError {
    #[error("argument {0} outside [-1, 1]")]
    Domain(f64),
    #[error("degree/order out of range: l = {l}, m = {m} (need |m| ≤ l ≤ {MAX_L})")]
    Index { l: usize, m: i64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("particles without neighbors: {0:?}")]
    Isolated(Vec<usize>),
}

/// `P_l^m(x)` with the Condon–Shortley phase, `0 ≤ m ≤ l ≤ 12`.
pub fn assoc_legendre(l: usize, m: usize, x: f64) -> Result<f64, OrderError> {
    if m > l || l > MAX_L {
        return Err(OrderError::Index { l, m: m as i64 });
    }
    if !(x.abs() <= 1.0) {
        return Err(OrderError::Domain(x));
    }
    Ok(legendre(l, m, x))
}

fn legendre(l: usize, m: usize, x: f64) -> f64 {
    // P_m^m = (−1)^m (2m−1)!! (1−x²)^{m/2}
    let s = ((1.0 - x) * (1.0 + x)).sqrt();
    let mut pmm = 1.0;
    for k in 0..m {
        pmm *= -((2 * k + 1) as f64) * s;
    }
    if l == m {
        return pmm;
    }
    let mut prev = pmm;
    let mut cur = x * (2 * m + 1) as f64 * pmm;
    for ll in m + 2..=l {
        let next = (x * (2 * ll - 1) as f64 * cur - (ll + m - 1) as f64 * prev) / (ll - m) as f64;
        prev = cur;
        cur = next;
    }
    cur
}

fn norm(l: usize, m: usize) -> f64 {
    // (l−m)!/(l+m)! as a product, exact enough for l ≤ 12
    let ratio: f64 = (l - m + 1..=l + m).map(|k| 1.0 / k as f64).product();
    ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt()
}

/// `Y_lm(θ, φ)` with polar angle `θ` and azimuth `φ`; negative `m` via
/// `Y_{l,−m} = (−1)^m conj(Y_lm)`.
pub fn spherical_harmonic(l: usize, m: i64, theta: f64, phi: f64) -> Result<Complex64, OrderError> {
    if l > MAX_L || m.unsigned_abs() as usize > l {
        return Err(OrderError::Index { l, m });
    }
    let ma = m.unsigned_abs() as usize;
    let y = Complex64::from_polar(norm(l, ma) * legendre(l, ma, theta.cos().clamp(-1.0, 1.0)), ma as f64 * phi);
    Ok(if m >= 0 {
        y
    } else if ma % 2 == 0 {
        y.conj()
    } else {
        -y.conj()
    })
}

/// `Y_lm` for all `m ∈ [−l, l]` (index `m + l`) at a unit direction.
fn harmonics_row(l: usize, r: [f64; 3]) -> Vec<Complex64> {
    let z = r[2].clamp(-1.0, 1.0);
    let phi = r[1].atan2(r[0]);
    let mut row = vec![Complex64::new(0.0, 0.0); 2 * l + 1];
    for m in 0..=l {
        let y = Complex64::from_polar(norm(l, m) * legendre(l, m, z), m as f64 * phi);
        row[l + m] = y;
        if m > 0 {
            row[l - m] = if m % 2 == 0 { y.conj() } else { -y.conj() };
        }
    }
    row
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleConfiguration {
    pub positions: Vec<[f64; 3]>,
    /// Periodic cell extents.
    pub cell: [f64; 3],
    pub cutoff: f64,
}

impl ParticleConfiguration {
    pub fn new(positions: Vec<[f64; 3]>, cell: [f64; 3], cutoff: f64) -> Result<Self, OrderError> {
        if positions.len() < 2 {
            return Err(OrderError::Config("need at least 2 particles".into()));
        }
        if !(cutoff > 0.0) {
            return Err(OrderError::Config("cutoff must be positive".into()));
        }
        if cell.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(OrderError::Config("cell extents must be positive".into()));
        }
        if cell.iter().any(|&l| cutoff > 0.5 * l) {
            return Err(OrderError::Config(format!("cutoff {cutoff} exceeds half the cell {cell:?}")));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().zip(&cell).any(|(x, l)| !(*x >= 0.0 && x < l))) {
            return Err(OrderError::Config(format!("particle {i} lies outside the cell")));
        }
        Ok(ParticleConfiguration { positions, cell, cutoff })
    }

    /// Minimum-image displacement from particle `i` to particle `j`.
    pub fn displacement(&self, i: usize, j: usize) -> [f64; 3] {
        let mut d = [0.0; 3];
        for a in 0..3 {
            let l = self.cell[a];
            let v = self.positions[j][a] - self.positions[i][a];
            d[a] = v - l * (v / l).round();
        }
        d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborList {
    pub neighbors: Vec<Vec<usize>>,
    /// `r_ij`, from `i` to `j`.
    pub bonds: Vec<Vec<[f64; 3]>>,
}

impl NeighborList {
    pub fn build(cfg: &ParticleConfiguration) -> Self {
        let rc2 = cfg.cutoff * cfg.cutoff;
        let n = cfg.positions.len();
        let (neighbors, bonds) = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut nb = Vec::new();
                let mut bd = Vec::new();
                for j in (0..n).filter(|&j| j != i) {
                    let d = cfg.displacement(i, j);
                    if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= rc2 {
                        nb.push(j);
                        bd.push(d);
                    }
                }
                (nb, bd)
            })
            .unzip();
        NeighborList { neighbors, bonds }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Steinhardt {
    pub l: usize,
    pub per_particle: Vec<f64>,
    pub mean: f64,
}

/// Per-particle `C_l(i)` and the ensemble mean `⟨C_l⟩`.
pub fn steinhardt(cfg: &ParticleConfiguration, l: usize) -> Result<Steinhardt, OrderError> {
    if l > MAX_L {
        return Err(OrderError::Index { l, m: 0 });
    }
    let nl = NeighborList::build(cfg);
    let isolated: Vec<usize> = (0..nl.neighbors.len()).filter(|&i| nl.neighbors[i].is_empty()).collect();
    if !isolated.is_empty() {
        return Err(OrderError::Isolated(isolated));
    }
    let per_particle: Vec<f64> = nl.bonds.par_iter().map(|b| bond_order(l, b)).collect();
    let mean = per_particle.iter().sum::<f64>() / per_particle.len() as f64;
    Ok(Steinhardt { l, per_particle, mean })
}

/// `C_l` of a single particle from its bond vectors (need not be unit length).
pub fn bond_order(l: usize, bonds: &[[f64; 3]]) -> f64 {
    let mut q = vec![Complex64::new(0.0, 0.0); 2 * l + 1];
    for r in bonds {
        let len = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        let row = harmonics_row(l, [r[0] / len, r[1] / len, r[2] / len]);
        for (a, y) in q.iter_mut().zip(row) {
            *a += y;
        }
    }
    let k = bonds.len() as f64;
    let s: f64 = q.iter().map(|a| (a / k).norm_sqr()).sum();
    (4.0 * PI / (2 * l + 1) as f64 * s).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_order_legendre() {
        for x in [-1.0, -0.4, 0.0, 0.3, 1.0] {
            assert_eq!(assoc_legendre(0, 0, x).unwrap(), 1.0);
            assert_eq!(assoc_legendre(1, 0, x).unwrap(), x);
            // P_1^1 = −√(1−x²), P_2^2 = 3(1−x²)
            assert!((assoc_legendre(1, 1, x).unwrap() + (1.0 - x * x).sqrt()).abs() < 1e-15);
            assert!((assoc_legendre(2, 2, x).unwrap() - 3.0 * (1.0 - x * x)).abs() < 1e-14);
        }
        assert_eq!(assoc_legendre(2, 1, 1.5), Err(OrderError::Domain(1.5)));
        assert!(assoc_legendre(13, 0, 0.0).is_err());
        assert!(assoc_legendre(2, 3, 0.0).is_err());
    }

    #[test]
    fn y00_and_conjugation() {
        let y = spherical_harmonic(0, 0, 1.1, -2.0).unwrap();
        assert!((y.re - 0.5 / PI.sqrt()).abs() < 1e-15 && y.im == 0.0);
        for (l, m) in [(3, 2), (5, 5), (12, 7)] {
            let a = spherical_harmonic(l, m, 0.7, 2.3).unwrap();
            let b = spherical_harmonic(l, -m, 0.7, 2.3).unwrap();
            let s = if m % 2 == 0 { 1.0 } else { -1.0 };
            assert!((b - a.conj() * s).norm() < 1e-15);
        }
    }

    #[test]
    fn isolated_and_bad_inputs() {
        let cfg =
            ParticleConfiguration::new(vec![[0.1, 0.1, 0.1], [0.2, 0.1, 0.1], [3.0, 3.0, 3.0]], [6.0; 3], 0.5).unwrap();
        assert_eq!(steinhardt(&cfg, 4), Err(OrderError::Isolated(vec![2])));
        assert!(ParticleConfiguration::new(vec![[0.0; 3]], [1.0; 3], 0.1).is_err());
        assert!(ParticleConfiguration::new(vec![[0.0; 3], [1.5, 0.0, 0.0]], [1.0; 3], 0.1).is_err());
        assert!(ParticleConfiguration::new(vec![[0.0; 3], [0.5, 0.0, 0.0]], [1.0; 3], 0.6).is_err());
    }

    #[test]
    fn neighbors_wrap_and_antisymmetric() {
        let cfg = ParticleConfiguration::new(vec![[0.05, 0.5, 0.5], [0.95, 0.5, 0.5]], [1.0; 3], 0.2).unwrap();
        let nl = NeighborList::build(&cfg);
        assert_eq!(nl.neighbors, vec![vec![1], vec![0]]);
        for a in 0..3 {
            assert!((nl.bonds[0][0][a] + nl.bonds[1][0][a]).abs() < 1e-15);
        }
        assert!((nl.bonds[0][0][0] + 0.1).abs() < 1e-12);
    }
}
