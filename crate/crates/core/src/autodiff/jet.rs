use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

/// Second-order forward-mode number over `N` seed directions: value, gradient
/// and (symmetric) Hessian with respect to the seeds.
///
/// Only the upper triangle of `hess` is computed; the lower triangle is mirrored.
/// With `S = Var` the jet components are themselves tape nodes, which is how
/// spatial derivatives of a network end up differentiable in its parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<S, const N: usize> {
    pub val: S,
    pub grad: [S; N],
    pub hess: [[S; N]; N],
}

impl<S: Scalar, const N: usize> Jet<S, N> {
    pub fn constant(val: S) -> Self {
        Jet { val, grad: [S::zero(); N], hess: [[S::zero(); N]; N] }
    }

    /// The `k`-th seed variable with value `val`.
    pub fn variable(val: S, k: usize) -> Self {
        let mut j = Self::constant(val);
        j.grad[k] = S::one();
        j
    }

    /// Applies a scalar function given its value and first two derivatives at `self.val`.
    #[inline]
    pub fn chain(self, f: S, df: S, d2f: S) -> Self {
        let mut out = Jet::constant(f);
        for i in 0..N {
            out.grad[i] = df * self.grad[i];
        }
        for i in 0..N {
            for j in i..N {
                let h = df * self.hess[i][j] + d2f * (self.grad[i] * self.grad[j]);
                out.hess[i][j] = h;
                out.hess[j][i] = h;
            }
        }
        out
    }

    pub fn recip(self) -> Self {
        let r = S::one() / self.val;
        let r2 = r * r;
        self.chain(r, -r2, r2 * r * 2.0)
    }

    /// Laplacian over the first `k` seed directions.
    pub fn laplacian(&self, k: usize) -> S {
        let diag: Vec<S> = (0..k).map(|i| self.hess[i][i]).collect();
        S::sum(&diag)
    }

    fn map2(self, r: Self, f: impl Fn(S, S) -> S) -> Self {
        let mut out = Jet::constant(f(self.val, r.val));
        for i in 0..N {
            out.grad[i] = f(self.grad[i], r.grad[i]);
            for j in 0..N {
                out.hess[i][j] = f(self.hess[i][j], r.hess[i][j]);
            }
        }
        out
    }

    fn map(self, f: impl Fn(S) -> S) -> Self {
        let mut out = Jet::constant(f(self.val));
        for i in 0..N {
            out.grad[i] = f(self.grad[i]);
            for j in 0..N {
                out.hess[i][j] = f(self.hess[i][j]);
            }
        }
        out
    }
}

impl<S: Scalar, const N: usize> Add for Jet<S, N> {
    type Output = Self;
    #[inline]
    fn add(self, r: Self) -> Self {
        self.map2(r, |a, b| a + b)
    }
}

impl<S: Scalar, const N: usize> Sub for Jet<S, N> {
    type Output = Self;
    #[inline]
    fn sub(self, r: Self) -> Self {
        self.map2(r, |a, b| a - b)
    }
}

impl<S: Scalar, const N: usize> Mul for Jet<S, N> {
    type Output = Self;
    fn mul(self, r: Self) -> Self {
        let mut out = Jet::constant(self.val * r.val);
        for i in 0..N {
            out.grad[i] = self.val * r.grad[i] + r.val * self.grad[i];
        }
        for i in 0..N {
            for j in i..N {
                let h = self.val * r.hess[i][j]
                    + r.val * self.hess[i][j]
                    + self.grad[i] * r.grad[j]
                    + self.grad[j] * r.grad[i];
                out.hess[i][j] = h;
                out.hess[j][i] = h;
            }
        }
        out
    }
}

impl<S: Scalar, const N: usize> Div for Jet<S, N> {
    type Output = Self;
    #[inline]
    fn div(self, r: Self) -> Self {
        self * r.recip()
    }
}

impl<S: Scalar, const N: usize> Neg for Jet<S, N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.map(|a| -a)
    }
}

impl<S: Scalar, const N: usize> Add<f64> for Jet<S, N> {
    type Output = Self;
    #[inline]
    fn add(mut self, r: f64) -> Self {
        self.val = self.val + r;
        self
    }
}

impl<S: Scalar, const N: usize> Sub<f64> for Jet<S, N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, r: f64) -> Self {
        self.val = self.val - r;
        self
    }
}

impl<S: Scalar, const N: usize> Mul<f64> for Jet<S, N> {
    type Output = Self;
    #[inline]
    fn mul(self, r: f64) -> Self {
        self.map(|a| a * r)
    }
}

impl<S: Scalar, const N: usize> Div<f64> for Jet<S, N> {
    type Output = Self;
    #[inline]
    fn div(self, r: f64) -> Self {
        self.map(|a| a / r)
    }
}

impl<S: Scalar, const N: usize> Scalar for Jet<S, N> {
    fn from_f64(v: f64) -> Self {
        Jet::constant(S::from_f64(v))
    }

    fn value(&self) -> f64 {
        self.val.value()
    }

    fn is_finite(&self) -> bool {
        self.val.is_finite()
            && self.grad.iter().all(|g| g.is_finite())
            && self.hess.iter().flatten().all(|h| h.is_finite())
    }

    fn is_zero(&self) -> bool {
        self.val.is_zero() && self.grad.iter().all(|g| g.is_zero()) && self.hess.iter().flatten().all(|h| h.is_zero())
    }

    fn tanh(self) -> Self {
        let t = self.val.tanh();
        let d = -(t * t) + 1.0;
        self.chain(t, d, t * d * -2.0)
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.chain(e, e, e)
    }

    fn ln(self) -> Self {
        let r = S::one() / self.val;
        self.chain(self.val.ln(), r, -(r * r))
    }

    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::one(),
            1 => self,
            2 => self * self,
            _ => {
                let lower2 = self.val.powi(n - 2);
                let lower = lower2 * self.val;
                self.chain(lower * self.val, lower * n as f64, lower2 * (n * (n - 1)) as f64)
            }
        }
    }

    fn powf(self, p: f64) -> Self {
        let lower2 = self.val.powf(p - 2.0);
        let lower = lower2 * self.val;
        self.chain(lower * self.val, lower * p, lower2 * (p * (p - 1.0)))
    }

    fn sin(self) -> Self {
        let (s, c) = (self.val.sin(), self.val.cos());
        self.chain(s, c, -s)
    }

    fn cos(self) -> Self {
        let (s, c) = (self.val.sin(), self.val.cos());
        self.chain(c, -s, -c)
    }

    fn max(self, other: Self) -> Self {
        if other.val.value() > self.val.value() {
            other
        } else {
            self
        }
    }

    fn sum(xs: &[Self]) -> Self {
        let mut out = Jet::constant(S::zero());
        let mut buf: Vec<S> = Vec::with_capacity(xs.len());
        let mut reduce = |pick: &dyn Fn(&Self) -> S| {
            buf.clear();
            buf.extend(xs.iter().map(pick));
            S::sum(&buf)
        };
        out.val = reduce(&|j| j.val);
        for i in 0..N {
            out.grad[i] = reduce(&|j| j.grad[i]);
            for k in i..N {
                let h = reduce(&|j| j.hess[i][k]);
                out.hess[i][k] = h;
                out.hess[k][i] = h;
            }
        }
        out
    }
}
