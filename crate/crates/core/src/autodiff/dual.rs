use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

/// First-order forward-mode number `re + eps·ε` with `ε² = 0`.
///
/// Generic over the component type, so `Dual<Var>` gives directional
/// derivatives that remain differentiable on a reverse tape, and a
/// `Tape<Dual<f64>>` reverse sweep yields Hessian-vector products.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<S> {
    pub re: S,
    pub eps: S,
}

impl<S: Scalar> Dual<S> {
    pub fn new(re: S, eps: S) -> Self {
        Dual { re, eps }
    }

    pub fn constant(re: S) -> Self {
        Dual { re, eps: S::zero() }
    }

    /// Seeds a unit tangent.
    pub fn variable(re: S) -> Self {
        Dual { re, eps: S::one() }
    }

    #[inline]
    fn chain(self, f: S, df: S) -> Self {
        Dual { re: f, eps: df * self.eps }
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, r: Self) -> Self {
        Dual { re: self.re + r.re, eps: self.eps + r.eps }
    }
}

impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, r: Self) -> Self {
        Dual { re: self.re - r.re, eps: self.eps - r.eps }
    }
}

impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, r: Self) -> Self {
        Dual { re: self.re * r.re, eps: self.re * r.eps + self.eps * r.re }
    }
}

impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, r: Self) -> Self {
        let q = self.re / r.re;
        Dual { re: q, eps: (self.eps - q * r.eps) / r.re }
    }
}

impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual { re: -self.re, eps: -self.eps }
    }
}

impl<S: Scalar> Add<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, r: f64) -> Self {
        Dual { re: self.re + r, eps: self.eps }
    }
}

impl<S: Scalar> Sub<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, r: f64) -> Self {
        Dual { re: self.re - r, eps: self.eps }
    }
}

impl<S: Scalar> Mul<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, r: f64) -> Self {
        Dual { re: self.re * r, eps: self.eps * r }
    }
}

impl<S: Scalar> Div<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, r: f64) -> Self {
        Dual { re: self.re / r, eps: self.eps / r }
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    fn from_f64(v: f64) -> Self {
        Dual::constant(S::from_f64(v))
    }

    fn value(&self) -> f64 {
        self.re.value()
    }

    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }

    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.eps.is_zero()
    }

    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, -(t * t) + 1.0)
    }

    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }

    fn ln(self) -> Self {
        self.chain(self.re.ln(), S::one() / self.re)
    }

    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::one(),
            1 => self,
            _ => {
                let lower = self.re.powi(n - 1);
                self.chain(lower * self.re, lower * n as f64)
            }
        }
    }

    fn powf(self, p: f64) -> Self {
        let lower = self.re.powf(p - 1.0);
        self.chain(lower * self.re, lower * p)
    }

    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }

    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }

    fn max(self, other: Self) -> Self {
        if other.re.value() > self.re.value() {
            other
        } else {
            self
        }
    }

    fn sum(xs: &[Self]) -> Self {
        let re: Vec<S> = xs.iter().map(|d| d.re).collect();
        let eps: Vec<S> = xs.iter().map(|d| d.eps).collect();
        Dual { re: S::sum(&re), eps: S::sum(&eps) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_tangent_follows_chain_rule() {
        let a = Dual::new(0.7_f64, 2.0);
        let t = a.tanh();
        assert_eq!(t.re, 0.7_f64.tanh());
        assert!((t.eps - (1.0 - 0.7_f64.tanh().powi(2)) * 2.0).abs() < 1e-15);
    }

    #[test]
    fn quotient_and_powers() {
        let x = Dual::variable(1.5_f64);
        let y = (x * x) / (x + 1.0);
        // d/dx x^2/(x+1) = (x^2 + 2x)/(x+1)^2
        let expect = (1.5 * 1.5 + 3.0) / (2.5 * 2.5);
        assert!((y.eps - expect).abs() < 1e-14);
        assert!((x.powi(3).eps - 3.0 * 1.5 * 1.5).abs() < 1e-14);
        assert!((x.powf(0.5).eps - 0.5 / 1.5_f64.sqrt()).abs() < 1e-14);
        assert!((x.ln().eps - 1.0 / 1.5).abs() < 1e-15);
    }
}
