//! Reverse-mode automatic differentiation over scalars.
//!
//! Every arithmetic operation on a [`Var`] appends one node to its [`Tape`],
//! storing the parent indices and the local partial derivatives evaluated at
//! the primal point. [`Tape::backward`] then sweeps the nodes in decreasing
//! index order, accumulating adjoints by the chain rule.
//!
//! Operators never return `Result`. A domain violation (`ln` of a
//! non-positive number, division by zero, ...) or a non-finite result is
//! recorded as a sticky fault on the tape; [`Tape::check`] and
//! [`Tape::backward`] surface the first such fault.
//!
//! Constants (from [`Tape::constant`] or [`Var::lift`]) carry no node;
//! operations whose inputs are all constant are folded instead of recorded.
//!
//! Comparisons are done on primal values (`Var::value`) and record nothing,
//! so branchy code differentiates through whichever branch was taken.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{input, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Abs,
    Powi,
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Sqrt => "sqrt",
            Op::Tanh => "tanh",
            Op::Abs => "abs",
            Op::Powi => "powi",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
    arity: u8,
}

/// Append-only record of scalar operations.
///
/// A tape is single-threaded (`!Sync`); run one tape per concurrent replicate.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    fault: Cell<Option<(Op, f64, bool)>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

const CONST: u32 = u32::MAX;

/// Handle to a node on a [`Tape`] together with its primal value.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.index, self.value)
    }
}

/// Adjoints of every node, produced by a backward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    /// Adjoint of `v`; zero for constants.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        if v.is_constant() {
            0.0
        } else {
            self.adjoints[v.index as usize]
        }
    }

    pub fn adjoints(&self) -> &[f64] {
        &self.adjoints
    }

    pub fn len(&self) -> usize {
        self.adjoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjoints.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(nodes)),
            fault: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Creates an independent input variable.
    pub fn leaf(&self, value: f64) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(input(format!("leaf value must be finite, got {value}")));
        }
        Ok(self.push(Op::Leaf, [0, 0], [0.0, 0.0], 0, value))
    }

    /// A constant bound to this tape. Constants occupy no node; arithmetic
    /// between constants is folded and never recorded.
    pub fn constant(&self, value: f64) -> Var<'_> {
        if !value.is_finite() {
            self.fault_once(Op::Leaf, value, false);
        }
        Var {
            tape: self,
            index: CONST,
            value,
        }
    }

    /// Drops every node past `len`. Borrowing `&mut self` guarantees no
    /// [`Var`] referring to the dropped nodes is still alive.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.get_mut().truncate(len);
        self.fault.set(None);
    }

    pub fn clear(&mut self) {
        self.truncate(0);
    }

    /// Returns the first domain or non-finite fault recorded, if any.
    pub fn check(&self) -> Result<()> {
        match self.fault.get() {
            None => Ok(()),
            Some((op, value, true)) => Err(Error::Domain {
                op: op.name(),
                value,
            }),
            Some((op, _, false)) => Err(Error::NonFinite { op: op.name() }),
        }
    }

    /// Adjoints of every node with respect to `output`.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(self, output.tape) {
            return Err(Error::ForeignTape);
        }
        self.check()?;
        let nodes = self.nodes.borrow();
        let mut adjoints = vec![0.0; nodes.len()];
        if output.is_constant() {
            return Ok(Gradients { adjoints });
        }
        let out = output.index as usize;
        adjoints[out] = 1.0;
        for k in (0..=out).rev() {
            let adj = adjoints[k];
            if adj == 0.0 {
                continue;
            }
            let node = &nodes[k];
            for p in 0..node.arity as usize {
                adjoints[node.parents[p] as usize] += adj * node.partials[p];
            }
        }
        Ok(Gradients { adjoints })
    }

    fn push(&self, op: Op, parents: [u32; 2], partials: [f64; 2], arity: u8, value: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = u32::try_from(nodes.len())
            .ok()
            .filter(|&i| i != CONST)
            .expect("tape exceeds u32::MAX - 1 nodes");
        nodes.push(Node {
            parents,
            partials,
            arity,
        });
        drop(nodes);
        if !value.is_finite() {
            self.fault_once(op, value, false);
        }
        Var {
            tape: self,
            index,
            value,
        }
    }

    fn fault_once(&self, op: Op, value: f64, domain: bool) {
        if self.fault.get().is_none() {
            self.fault.set(Some((op, value, domain)));
        }
    }

    #[cfg(test)]
    pub(crate) fn parents_of(&self, index: usize) -> Vec<usize> {
        let nodes = self.nodes.borrow();
        let n = &nodes[index];
        n.parents[..n.arity as usize].iter().map(|&p| p as usize).collect()
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    /// Node index; `None` for constants.
    pub fn index(&self) -> Option<usize> {
        (!self.is_constant()).then_some(self.index as usize)
    }

    pub fn is_constant(&self) -> bool {
        self.index == CONST
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// A constant on the same tape.
    pub fn lift(&self, value: f64) -> Var<'t> {
        self.tape.constant(value)
    }

    fn unary(self, op: Op, value: f64, partial: f64) -> Var<'t> {
        if self.is_constant() {
            if !value.is_finite() {
                self.tape.fault_once(op, value, false);
            }
            return Var { value, ..self };
        }
        self.tape.push(op, [self.index, 0], [partial, 0.0], 1, value)
    }

    fn binary(self, other: Var<'t>, op: Op, value: f64, da: f64, db: f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        match (self.is_constant(), other.is_constant()) {
            (_, true) => self.unary(op, value, da),
            (true, false) => other.unary(op, value, db),
            (false, false) => self
                .tape
                .push(op, [self.index, other.index], [da, db], 2, value),
        }
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.value.exp();
        self.unary(Op::Exp, e, e)
    }

    pub fn ln(self) -> Var<'t> {
        if self.value <= 0.0 {
            self.tape.fault_once(Op::Ln, self.value, true);
        }
        self.unary(Op::Ln, self.value.ln(), 1.0 / self.value)
    }

    pub fn sqrt(self) -> Var<'t> {
        if self.value < 0.0 {
            self.tape.fault_once(Op::Sqrt, self.value, true);
        }
        let s = self.value.sqrt();
        self.unary(Op::Sqrt, s, 0.5 / s)
    }

    pub fn tanh(self) -> Var<'t> {
        let t = self.value.tanh();
        self.unary(Op::Tanh, t, 1.0 - t * t)
    }

    /// Derivative at zero is taken as zero.
    pub fn abs(self) -> Var<'t> {
        let sign = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(Op::Abs, self.value.abs(), sign)
    }

    pub fn powi(self, n: i32) -> Var<'t> {
        let d = if n == 0 {
            0.0
        } else {
            n as f64 * self.value.powi(n - 1)
        };
        self.unary(Op::Powi, self.value.powi(n), d)
    }

    pub fn square(self) -> Var<'t> {
        self.powi(2)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        if rhs.value == 0.0 {
            self.tape.fault_once(Op::Div, rhs.value, true);
        }
        let q = self.value / rhs.value;
        self.binary(rhs, Op::Div, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary(Op::Add, self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.unary(Op::Sub, self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.unary(Op::Mul, self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        if rhs == 0.0 {
            self.tape.fault_once(Op::Div, rhs, true);
        }
        self.unary(Op::Div, self.value / rhs, 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(Op::Sub, self - rhs.value, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        if rhs.value == 0.0 {
            rhs.tape.fault_once(Op::Div, rhs.value, true);
        }
        let q = self / rhs.value;
        rhs.unary(Op::Div, q, -q / rhs.value)
    }
}

/// Scalars the models can be evaluated on: plain `f64` for simulation and
/// oracles, [`Var`] when gradients are needed.
pub trait Real:
    Copy
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
    fn value(&self) -> f64;
    /// A constant of the same kind (on the same tape, for [`Var`]).
    fn lift(&self, value: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn powi(self, n: i32) -> Self;
}

impl Real for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn lift(&self, value: f64) -> Self {
        value
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

impl<'t> Real for Var<'t> {
    fn value(&self) -> f64 {
        self.value
    }
    fn lift(&self, value: f64) -> Self {
        Var::lift(self, value)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn sqrt(self) -> Self {
        Var::sqrt(self)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn powi(self, n: i32) -> Self {
        Var::powi(self, n)
    }
}

/// `ln Σ exp(xᵢ)` with max-subtraction. The maximum is taken on primal
/// values and treated as a constant, so the gradient is exactly `softmax(xs)`.
pub fn logsumexp<S: Real>(xs: &[S]) -> Result<S> {
    let first = *xs.first().ok_or_else(|| input("logsumexp of an empty sequence"))?;
    let max = xs.iter().map(Real::value).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite { op: "logsumexp" });
    }
    let mut sum = (first - max).exp();
    for &x in &xs[1..] {
        sum = sum + (x - max).exp();
    }
    Ok(sum.ln() + max)
}

/// Plain-float counterpart of [`logsumexp`].
pub fn logsumexp_f64(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Central-difference comparison for one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdResult {
    /// `|fd − grad| / max(1, |grad|)`.
    pub rel_error: f64,
    pub central: f64,
    /// One-sided slopes disagree by far more than curvature explains; the
    /// comparison is meaningless at this point.
    pub kink: bool,
}

/// Compares `grad` against central finite differences of `f` at `theta`.
///
/// `f` must be deterministic: any randomness has to be frozen by the caller.
pub fn finite_diff_check<F>(mut f: F, theta: &[f64], grad: &[f64], h: f64) -> Vec<FdResult>
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(theta.len(), grad.len(), "theta and grad lengths differ");
    let f0 = f(theta);
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + h;
            let fp = f(&probe);
            probe[i] = theta[i] - h;
            let fm = f(&probe);
            probe[i] = theta[i];
            let central = (fp - fm) / (2.0 * h);
            let forward = (fp - f0) / h;
            let backward = (f0 - fm) / h;
            let scale = central.abs().max(1.0);
            FdResult {
                rel_error: (central - grad[i]).abs() / grad[i].abs().max(1.0),
                central,
                kink: (forward - backward).abs() > h.sqrt() * scale,
            }
        })
        .collect()
}
