//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every elementary operation performed on [`Var`]s as a
//! node with at most two parents and the local partial derivatives towards
//! them. A reverse sweep over the nodes then accumulates adjoints.
//!
//! Loss code is written once against the [`Real`] trait and runs either on
//! plain `f64` (value only) or on `Var` (recorded for differentiation).
//!
//! ```
//! use sfm_core::autodiff::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = x * x;
//! let grad = tape.gradient(y);
//! assert_eq!(grad[x.index()], 6.0);
//! ```

use alloc::vec::Vec;
use core::cell::RefCell;
use core::ops::{Add, Div, Mul, Neg, Sub};

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Operation recorder for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(capacity)),
        }
    }

    /// Registers an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [NONE, NONE],
            partials: [0.0, 0.0],
        });
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node while keeping the allocation.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(node);
        idx
    }

    /// Adjoints of `output` with respect to every node on the tape.
    ///
    /// A constant output (not recorded on this tape) yields all zeros.
    pub fn gradient(&self, output: Var<'_>) -> Vec<f64> {
        let mut adj = alloc::vec![0.0; self.len()];
        if output.tape.is_some() && output.idx != NONE {
            adj[output.idx as usize] = 1.0;
        }
        self.backprop(&mut adj);
        adj
    }

    /// Reverse sweep with caller-seeded adjoints. `adj` must cover every node.
    pub fn backprop(&self, adj: &mut [f64]) {
        let nodes = self.nodes.borrow();
        assert!(adj.len() >= nodes.len(), "adjoint buffer too short");
        for i in (0..nodes.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NONE {
                    adj[p as usize] += node.partials[k] * a;
                }
            }
        }
    }
}

/// A scalar that is either recorded on a tape or a constant.
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl<'t> Var<'t> {
    pub fn constant(val: f64) -> Self {
        Var {
            tape: None,
            idx: NONE,
            val,
        }
    }

    pub fn value(&self) -> f64 {
        self.val
    }

    /// Node index on the tape; `usize::MAX` for constants.
    pub fn index(&self) -> usize {
        if self.tape.is_some() {
            self.idx as usize
        } else {
            usize::MAX
        }
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    fn unary(self, val: f64, d: f64) -> Self {
        match self.tape {
            None => Var::constant(val),
            Some(t) => Var {
                tape: Some(t),
                idx: t.push(Node {
                    parents: [self.idx, NONE],
                    partials: [d, 0.0],
                }),
                val,
            },
        }
    }

    fn binary(self, other: Self, val: f64, da: f64, db: f64) -> Self {
        match (self.tape, other.tape) {
            (None, None) => Var::constant(val),
            (Some(_), None) => self.unary(val, da),
            (None, Some(_)) => other.unary(val, db),
            (Some(t), Some(_)) => Var {
                tape: Some(t),
                idx: t.push(Node {
                    parents: [self.idx, other.idx],
                    partials: [da, db],
                }),
                val,
            },
        }
    }
}

/// Arithmetic needed by the differentiable loss code.
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
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powf(self, p: f64) -> Self;
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sqrt(self) -> Self {
        libm::sqrt(self)
    }
    fn exp(self) -> Self {
        libm::exp(self)
    }
    fn ln(self) -> Self {
        libm::log(self)
    }
    fn powf(self, p: f64) -> Self {
        libm::pow(self, p)
    }
}

impl<'t> Real for Var<'t> {
    fn cst(v: f64) -> Self {
        Var::constant(v)
    }
    fn value(&self) -> f64 {
        self.val
    }
    fn sqrt(self) -> Self {
        let s = libm::sqrt(self.val);
        self.unary(s, 0.5 / s)
    }
    fn exp(self) -> Self {
        let e = libm::exp(self.val);
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(libm::log(self.val), 1.0 / self.val)
    }
    fn powf(self, p: f64) -> Self {
        let v = libm::pow(self.val, p);
        self.unary(v, p * libm::pow(self.val, p - 1.0))
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        self.binary(o, self.val + o.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self.binary(o, self.val - o.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.binary(o, self.val * o.val, o.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.val;
        let v = self.val * inv;
        self.binary(o, v, inv, -v * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, o: f64) -> Self {
        self.unary(self.val + o, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, o: f64) -> Self {
        self.unary(self.val - o, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        self.unary(self.val * o, o)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        self.unary(self.val / o, 1.0 / o)
    }
}

/// Routes adjoints from a short-lived inner tape back onto an outer tape.
///
/// Loss terms are evaluated one at a time on a small scratch tape whose leaves
/// mirror nodes of the outer tape. After each term the scratch tape is swept
/// and the leaf adjoints are added into the outer adjoint buffer, which keeps
/// memory bounded by the size of a single term.
pub struct Subtape<'o> {
    inner: Tape,
    links: RefCell<Vec<(u32, u32)>>,
    scratch: RefCell<Vec<f64>>,
    _outer: core::marker::PhantomData<&'o Tape>,
}

impl<'o> Default for Subtape<'o> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'o> Subtape<'o> {
    pub fn new() -> Self {
        Subtape {
            inner: Tape::with_capacity(512),
            links: RefCell::new(Vec::with_capacity(64)),
            scratch: RefCell::new(Vec::with_capacity(512)),
            _outer: core::marker::PhantomData,
        }
    }

    /// Starts a new term. Variables from the previous term must not be reused.
    pub fn reset(&self) {
        self.inner.clear();
        self.links.borrow_mut().clear();
    }

    /// Mirrors an outer variable as a leaf of the current term.
    pub fn import(&self, v: Var<'o>) -> Var<'_> {
        if v.is_constant() {
            return Var::constant(v.val);
        }
        let idx = self.inner.push(Node {
            parents: [NONE, NONE],
            partials: [0.0, 0.0],
        });
        self.links.borrow_mut().push((idx, v.idx));
        Var {
            tape: Some(&self.inner),
            idx,
            val: v.val,
        }
    }

    pub fn tape(&self) -> &Tape {
        &self.inner
    }

    /// Sweeps the term recorded since the last reset, scaling the output
    /// adjoint by `seed`, and accumulates into `outer_adj`.
    pub fn accumulate(&self, output: Var<'_>, seed: f64, outer_adj: &mut [f64]) {
        if output.is_constant() {
            return;
        }
        let n = self.inner.len();
        let mut scratch = self.scratch.borrow_mut();
        scratch.clear();
        scratch.resize(n, 0.0);
        scratch[output.idx as usize] = seed;
        self.inner.backprop(&mut scratch);
        for &(leaf, outer) in self.links.borrow().iter() {
            outer_adj[outer as usize] += scratch[leaf as usize];
        }
    }
}
