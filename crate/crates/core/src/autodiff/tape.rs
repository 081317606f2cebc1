use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{AdError, Scalar};

/// Primitive recorded on a tape. Kept only for diagnostics; the sweep itself
/// works from the stored local partials.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    Tanh,
    Exp,
    Log,
    Pow,
    Sin,
    Cos,
    Sum,
    Max,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Op::Input => "input",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale => "scale",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Pow => "pow",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Sum => "sum",
            Op::Max => "max",
        };
        f.write_str(s)
    }
}

struct Inner<S> {
    ops: Vec<Op>,
    // node i owns edges[ends[i-1]..ends[i]] as (parent, ∂node/∂parent)
    ends: Vec<u32>,
    edges: Vec<(u32, S)>,
    first_bad: Option<(usize, Op)>,
}

/// Reverse-mode record. Nodes are appended in evaluation order, so the
/// topological order invariant holds by construction.
pub struct Tape<S = f64> {
    inner: RefCell<Inner<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { inner: RefCell::new(Inner { ops: Vec::new(), ends: Vec::new(), edges: Vec::new(), first_bad: None }) }
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            inner: RefCell::new(Inner {
                ops: Vec::with_capacity(nodes),
                ends: Vec::with_capacity(nodes),
                edges: Vec::with_capacity(2 * nodes),
                first_bad: None,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node while keeping the allocations. Outstanding `Var`s
    /// become dangling and must not be used afterwards.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.ops.clear();
        inner.ends.clear();
        inner.edges.clear();
        inner.first_bad = None;
    }

    pub fn var(&self, value: S) -> Var<'_, S> {
        let idx = self.push(Op::Input, value, &[]);
        Var { tape: Some(self), idx, val: value }
    }

    pub fn vars(&self, values: &[S]) -> Vec<Var<'_, S>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    fn push(&self, op: Op, value: S, parents: &[(u32, S)]) -> u32 {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.ops.len();
        inner.ops.push(op);
        inner.edges.extend_from_slice(parents);
        let end = inner.edges.len() as u32;
        inner.ends.push(end);
        if inner.first_bad.is_none() && !value.is_finite() {
            inner.first_bad = Some((idx, op));
        }
        idx as u32
    }

    /// First node whose value was non-finite, if any.
    pub fn check(&self) -> Result<(), AdError> {
        match self.inner.borrow().first_bad {
            Some((node, op)) => Err(AdError::NonFinite { node, op }),
            None => Ok(()),
        }
    }

    /// Reverse sweep from `output`, returning the adjoint of every node.
    pub fn gradient(&self, output: Var<'_, S>) -> Result<Adjoints<S>, AdError> {
        self.backward(&[(output, S::one())])
    }

    /// Reverse sweep seeded with the given output adjoints. Seeds on constants
    /// are ignored.
    pub fn backward(&self, seeds: &[(Var<'_, S>, S)]) -> Result<Adjoints<S>, AdError> {
        self.check()?;
        let inner = self.inner.borrow();
        let n = inner.ops.len();
        let mut adj = vec![S::zero(); n];
        let mut top = 0usize;
        for &(v, s) in seeds {
            if let Some(t) = v.tape {
                debug_assert!(std::ptr::eq(t, self), "seed from another tape");
                let i = v.idx as usize;
                adj[i] = adj[i] + s;
                top = top.max(i + 1);
            }
        }
        for i in (0..top).rev() {
            let a = adj[i];
            if a.is_zero() {
                continue;
            }
            let start = if i == 0 { 0 } else { inner.ends[i - 1] as usize };
            let end = inner.ends[i] as usize;
            for &(p, d) in &inner.edges[start..end] {
                let p = p as usize;
                adj[p] = adj[p] + a * d;
            }
        }
        for (i, a) in adj.iter().enumerate() {
            if !a.is_finite() {
                return Err(AdError::NonFinite { node: i, op: inner.ops[i] });
            }
        }
        Ok(Adjoints { adj })
    }
}

/// Adjoint values produced by a reverse sweep.
#[derive(Clone, Debug)]
pub struct Adjoints<S> {
    adj: Vec<S>,
}

impl<S: Scalar> Adjoints<S> {
    /// ∂output/∂v. Constants have zero adjoint.
    pub fn wrt(&self, v: &Var<'_, S>) -> S {
        match v.tape {
            Some(_) => self.adj[v.idx as usize],
            None => S::zero(),
        }
    }

    pub fn wrt_all(&self, vs: &[Var<'_, S>]) -> Vec<S> {
        vs.iter().map(|v| self.wrt(v)).collect()
    }
}

/// Handle to a tape node, or a free constant when `tape` is `None`.
#[derive(Clone, Copy)]
pub struct Var<'t, S = f64> {
    tape: Option<&'t Tape<S>>,
    idx: u32,
    val: S,
}

impl<S: Scalar> fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tape {
            Some(_) => write!(f, "Var#{}({:?})", self.idx, self.val),
            None => write!(f, "Const({:?})", self.val),
        }
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn constant(val: S) -> Self {
        Var { tape: None, idx: u32::MAX, val }
    }

    pub fn val(&self) -> S {
        self.val
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    #[inline]
    fn unary(self, op: Op, val: S, d: S) -> Self {
        match self.tape {
            None => Var::constant(val),
            Some(t) => Var { tape: Some(t), idx: t.push(op, val, &[(self.idx, d)]), val },
        }
    }

    #[inline]
    fn binary(self, rhs: Self, op: Op, val: S, da: S, db: S) -> Self {
        match (self.tape, rhs.tape) {
            (None, None) => Var::constant(val),
            (Some(t), None) => Var { tape: Some(t), idx: t.push(op, val, &[(self.idx, da)]), val },
            (None, Some(t)) => Var { tape: Some(t), idx: t.push(op, val, &[(rhs.idx, db)]), val },
            (Some(t), Some(_)) => Var { tape: Some(t), idx: t.push(op, val, &[(self.idx, da), (rhs.idx, db)]), val },
        }
    }

    fn is_const_zero(&self) -> bool {
        self.tape.is_none() && self.val.is_zero()
    }

    fn is_const_one(&self) -> bool {
        self.tape.is_none() && (self.val - 1.0).is_zero()
    }
}

impl<'t, S: Scalar> Add for Var<'t, S> {
    type Output = Self;
    #[inline]
    fn add(self, r: Self) -> Self {
        if r.is_const_zero() {
            return self;
        }
        if self.is_const_zero() {
            return r;
        }
        self.binary(r, Op::Add, self.val + r.val, S::one(), S::one())
    }
}

impl<'t, S: Scalar> Sub for Var<'t, S> {
    type Output = Self;
    #[inline]
    fn sub(self, r: Self) -> Self {
        if r.is_const_zero() {
            return self;
        }
        if self.is_const_zero() {
            return -r;
        }
        self.binary(r, Op::Sub, self.val - r.val, S::one(), -S::one())
    }
}

impl<'t, S: Scalar> Mul for Var<'t, S> {
    type Output = Self;
    #[inline]
    fn mul(self, r: Self) -> Self {
        if self.is_const_zero() || r.is_const_zero() {
            return Var::constant(S::zero());
        }
        if r.is_const_one() {
            return self;
        }
        if self.is_const_one() {
            return r;
        }
        self.binary(r, Op::Mul, self.val * r.val, r.val, self.val)
    }
}

impl<'t, S: Scalar> Div for Var<'t, S> {
    type Output = Self;
    #[inline]
    fn div(self, r: Self) -> Self {
        if r.is_const_one() {
            return self;
        }
        let q = self.val / r.val;
        let inv = S::one() / r.val;
        self.binary(r, Op::Div, q, inv, -(q * inv))
    }
}

impl<'t, S: Scalar> Neg for Var<'t, S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.unary(Op::Neg, -self.val, -S::one())
    }
}

impl<'t, S: Scalar> Add<f64> for Var<'t, S> {
    type Output = Self;
    #[inline]
    fn add(self, r: f64) -> Self {
        if r == 0.0 {
            return self;
        }
        self.unary(Op::Add, self.val + r, S::one())
    }
}

impl<'t, S: Scalar> Sub<f64> for Var<'t, S> {
    type Output = Self;
    #[inline]
    fn sub(self, r: f64) -> Self {
        if r == 0.0 {
            return self;
        }
        self.unary(Op::Sub, self.val - r, S::one())
    }
}

impl<'t, S: Scalar> Mul<f64> for Var<'t, S> {
    type Output = Self;
    #[inline]
    fn mul(self, r: f64) -> Self {
        if r == 1.0 {
            return self;
        }
        if r == 0.0 && self.val.is_finite() {
            return Var::constant(S::zero());
        }
        self.unary(Op::Scale, self.val * r, S::from_f64(r))
    }
}

impl<'t, S: Scalar> Div<f64> for Var<'t, S> {
    type Output = Self;
    #[inline]
    fn div(self, r: f64) -> Self {
        if r == 1.0 {
            return self;
        }
        self.unary(Op::Scale, self.val / r, S::from_f64(1.0 / r))
    }
}

impl<'t, S: Scalar> Scalar for Var<'t, S> {
    fn from_f64(v: f64) -> Self {
        Var::constant(S::from_f64(v))
    }

    fn value(&self) -> f64 {
        self.val.value()
    }

    fn is_finite(&self) -> bool {
        self.val.is_finite()
    }

    fn is_zero(&self) -> bool {
        self.is_const_zero()
    }

    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary(Op::Tanh, t, -(t * t) + 1.0)
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(Op::Exp, e, e)
    }

    fn ln(self) -> Self {
        self.unary(Op::Log, self.val.ln(), S::one() / self.val)
    }

    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::one(),
            1 => self,
            _ => {
                let lower = self.val.powi(n - 1);
                self.unary(Op::Pow, lower * self.val, lower * n as f64)
            }
        }
    }

    fn powf(self, p: f64) -> Self {
        if p == 1.0 {
            return self;
        }
        let lower = self.val.powf(p - 1.0);
        self.unary(Op::Pow, lower * self.val, lower * p)
    }

    fn sin(self) -> Self {
        self.unary(Op::Sin, self.val.sin(), self.val.cos())
    }

    fn cos(self) -> Self {
        self.unary(Op::Cos, self.val.cos(), -self.val.sin())
    }

    fn max(self, other: Self) -> Self {
        if other.val.value() > self.val.value() {
            other.unary(Op::Max, other.val, S::one())
        } else {
            self.unary(Op::Max, self.val, S::one())
        }
    }

    fn sum(xs: &[Self]) -> Self {
        let tape = xs.iter().find_map(|v| v.tape);
        let vals: Vec<S> = xs.iter().map(|v| v.val).collect();
        let val = S::sum(&vals);
        match tape {
            None => Var::constant(val),
            Some(t) => {
                let parents: Vec<(u32, S)> =
                    xs.iter().filter(|v| v.tape.is_some()).map(|v| (v.idx, S::one())).collect();
                if parents.len() == 1 && xs.len() == 1 {
                    return xs[0];
                }
                Var { tape: Some(t), idx: t.push(Op::Sum, val, &parents), val }
            }
        }
    }
}
