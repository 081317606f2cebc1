use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Numeric type that every differentiable computation in the crate is written against.
///
/// Implemented by `f64` (plain evaluation), [`Var`](super::Var) (reverse-mode tape
/// handles), [`Dual`](super::Dual) (first-order forward mode) and
/// [`Jet`](super::Jet) (second-order forward mode). The forward-mode types are
/// generic over an inner `Scalar`, so they nest: `Jet<Var<'_>, 3>` records input
/// derivatives of a network onto a parameter tape.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// A constant carrying no derivative information.
    fn from_f64(v: f64) -> Self;

    /// Primal value of the innermost real.
    fn value(&self) -> f64;

    /// True when every component (primal and derivative parts) is finite.
    fn is_finite(&self) -> bool;

    /// True when every component is exactly zero. Used to skip work in sweeps.
    fn is_zero(&self) -> bool;

    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn powf(self, p: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    /// Pointwise maximum; at a tie the left operand wins.
    fn max(self, other: Self) -> Self;

    fn sqrt(self) -> Self {
        self.powf(0.5)
    }

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn square(self) -> Self {
        self * self
    }

    /// `ln(1 + e^x)`, evaluated without overflow for large `x`.
    fn softplus(self) -> Self {
        // ln(1 + y) = y to within y^2/2 < 1e-26 in both tails.
        let v = self.value();
        if v > 30.0 {
            self + (-self).exp()
        } else if v < -30.0 {
            self.exp()
        } else {
            (self.exp() + 1.0).ln()
        }
    }

    /// Sum of a slice. Tape types override this with a single n-ary node.
    fn sum(xs: &[Self]) -> Self {
        let mut it = xs.iter();
        match it.next() {
            None => Self::zero(),
            Some(&first) => it.fold(first, |acc, &x| acc + x),
        }
    }

    /// Inner product of two equally long slices.
    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        let prods: Vec<Self> = a.iter().zip(b).map(|(&x, &y)| x * y).collect();
        Self::sum(&prods)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    #[inline]
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sum(xs: &[Self]) -> Self {
        xs.iter().sum()
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}
