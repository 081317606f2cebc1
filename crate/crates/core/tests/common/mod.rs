//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use gsbp::autodiff::{Jet, Scalar};
use gsbp::pinn::residual::NJ;
use gsbp::pinn::{Field, Heads};
use num_complex::Complex64;

pub fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

/// `P_l^m` from the explicit coefficients of `P_l` differentiated `m` times.
pub fn legendre_series(l: usize, m: usize, x: f64) -> f64 {
    // P_l(x) = 2^-l Σ_k (−1)^k C(l,k) C(2l−2k, l) x^(l−2k)
    let mut coeff = vec![0.0; l + 1];
    for k in 0..=l / 2 {
        let s = if k % 2 == 0 { 1.0 } else { -1.0 };
        coeff[l - 2 * k] = s * binom(l, k) * binom(2 * l - 2 * k, l) / 2f64.powi(l as i32);
    }
    for _ in 0..m {
        coeff = (1..coeff.len()).map(|p| coeff[p] * p as f64).collect();
        if coeff.is_empty() {
            return 0.0;
        }
    }
    let d: f64 = coeff.iter().enumerate().map(|(p, c)| c * x.powi(p as i32)).sum();
    let cs = if m % 2 == 0 { 1.0 } else { -1.0 };
    cs * (1.0 - x * x).powf(m as f64 / 2.0) * d
}

pub fn ylm_series(l: usize, m: i64, theta: f64, phi: f64) -> Complex64 {
    let ma = m.unsigned_abs() as usize;
    let n = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - ma) / factorial(l + ma)).sqrt();
    let y = Complex64::from_polar(n * legendre_series(l, ma, theta.cos()), ma as f64 * phi);
    if m >= 0 {
        y
    } else {
        y.conj() * if ma % 2 == 0 { 1.0 } else { -1.0 }
    }
}

/// Direct double loop over all pairs; no neighbor list, no shared code.
pub fn brute_force(pos: &[[f64; 3]], cell: [f64; 3], rc: f64, l: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..pos.len() {
        let mut q = vec![Complex64::new(0.0, 0.0); 2 * l + 1];
        let mut count = 0.0;
        for j in 0..pos.len() {
            if i == j {
                continue;
            }
            let mut d = [0.0; 3];
            for a in 0..3 {
                let mut v = pos[j][a] - pos[i][a];
                while v > 0.5 * cell[a] {
                    v -= cell[a];
                }
                while v < -0.5 * cell[a] {
                    v += cell[a];
                }
                d[a] = v;
            }
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if r <= rc {
                count += 1.0;
                let theta = (d[2] / r).acos();
                let phi = d[1].atan2(d[0]);
                for (k, m) in (-(l as i64)..=l as i64).enumerate() {
                    q[k] += ylm_series(l, m, theta, phi);
                }
            }
        }
        let s: f64 = q.iter().map(|v| (v / count).norm_sqr()).sum();
        out.push((4.0 * PI / (2 * l + 1) as f64 * s).sqrt());
    }
    out
}

pub fn bcc(cells: usize, a: f64) -> (Vec<[f64; 3]>, [f64; 3]) {
    let mut p = Vec::new();
    for i in 0..cells {
        for j in 0..cells {
            for k in 0..cells {
                let o = [i as f64 * a, j as f64 * a, k as f64 * a];
                p.push(o);
                p.push([o[0] + 0.5 * a, o[1] + 0.5 * a, o[2] + 0.5 * a]);
            }
        }
    }
    let l = cells as f64 * a;
    (p, [l; 3])
}

pub fn rotation(a: f64, b: f64, c: f64) -> [[f64; 3]; 3] {
    let (sa, ca, sb, cb, sc, cc) = (a.sin(), a.cos(), b.sin(), b.cos(), c.sin(), c.cos());
    let rz = |s: f64, c: f64| [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
    let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    let mul = |x: [[f64; 3]; 3], y: [[f64; 3]; 3]| {
        let mut z = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                z[i][j] = (0..3).map(|k| x[i][k] * y[k][j]).sum();
            }
        }
        z
    };
    mul(mul(rz(sa, ca), ry), rz(sc, cc))
}

pub type J<S> = Jet<S, NJ>;

pub fn grid20() -> impl Iterator<Item = (f64, [f64; 2])> {
    (0..20).flat_map(|i| {
        (0..20).flat_map(move |j| {
            (0..20).map(move |k| (0.05 * i as f64 + 0.01, [0.05 * j as f64 + 0.02, 0.05 * k as f64 + 0.03]))
        })
    })
}

pub struct PlaneWave {
    pub a: [f64; 2],
}

impl Field for PlaneWave {
    fn controls(&self) -> usize {
        2
    }
    fn heads<S: Scalar>(&self, xi: [J<S>; NJ]) -> Heads<S> {
        let n2 = self.a[0] * self.a[0] + self.a[1] * self.a[1];
        Heads {
            psi: xi[0] * self.a[0] + xi[1] * self.a[1] - xi[2] * (0.5 * n2),
            rho: J::constant(S::one()),
            u: vec![J::constant(S::from_f64(self.a[0])), J::constant(S::from_f64(self.a[1]))],
        }
    }
}

pub struct HeatKernel {
    pub s0: f64,
}

impl Field for HeatKernel {
    fn controls(&self) -> usize {
        2
    }
    fn heads<S: Scalar>(&self, xi: [J<S>; NJ]) -> Heads<S> {
        let s = xi[2] * 2.0 + self.s0;
        let r2 = xi[0] * xi[0] + xi[1] * xi[1];
        let rho = (-(r2 / (s * 2.0))).exp() / (s * (2.0 * std::f64::consts::PI));
        Heads { psi: J::constant(S::zero()), rho, u: vec![J::constant(S::zero()); 2] }
    }
}

/// A generic smooth field that exercises every term.
pub struct Smooth;

impl Field for Smooth {
    fn controls(&self) -> usize {
        2
    }
    fn heads<S: Scalar>(&self, xi: [J<S>; NJ]) -> Heads<S> {
        let [x, y, t] = xi;
        let psi = (x * 1.3 - y * 0.4).sin() * (t * 0.7 + 1.0) + x * y * 0.5;
        let rho = (-(x - 0.4).square() * 2.0 - (y - 0.6).square() * 3.0 + t * 0.3).exp() + 0.1;
        let u = vec![(x * 0.8 + t).cos() * 0.6 + y * 0.2, (x * y + t * 0.5).tanh() + 0.3];
        Heads { psi, rho, u }
    }
}

/// Jet seeds `(x₁, x₂, t)` for evaluating a field's heads with derivatives.
pub fn seeded(t: f64, x: [f64; 2]) -> [J<f64>; NJ] {
    [J::variable(x[0], 0), J::variable(x[1], 1), J::variable(t, 2)]
}
