//! Second-order spatial jets composed with a reverse-mode tape over parameters.
//!
//! Spatial derivatives (two inputs, up to second order) are carried forward in
//! [`Jet2`]. Every component of a jet is a [`Real`], which is either a plain
//! `f64` (inference) or a [`Var`] recorded on a [`Tape`] (training). One
//! reverse sweep over the tape then yields the gradient of any scalar loss built
//! from those jets with respect to every parameter leaf.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Scalar arithmetic shared by plain floats and taped variables.
///
/// The n-ary [`Real::fused`] and [`Real::affine`] primitives exist so that the
/// tape records one node per jet component instead of one node per binary op.
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    fn constant(c: f64) -> Self;

    fn value(self) -> f64;

    /// A node with value `val` and local partials `d val / d parent`.
    fn fused(val: f64, parents: &[(Self, f64)]) -> Self;

    /// `bias + sum_i a[i] * b[i]`.
    fn affine(bias: Self, a: &[Self], b: &[Self]) -> Self;

    fn dot(a: &[Self], b: &[Self]) -> Self {
        Self::affine(Self::constant(0.0), a, b)
    }

    fn scale(self, c: f64) -> Self {
        Self::fused(self.value() * c, &[(self, c)])
    }

    fn offset(self, c: f64) -> Self {
        Self::fused(self.value() + c, &[(self, 1.0)])
    }

    fn square(self) -> Self {
        let v = self.value();
        Self::fused(v * v, &[(self, 2.0 * v)])
    }

    fn sqrt(self) -> Self {
        let r = self.value().sqrt();
        Self::fused(r, &[(self, 0.5 / r)])
    }

    fn recip(self) -> Self {
        let v = self.value();
        Self::fused(1.0 / v, &[(self, -1.0 / (v * v))])
    }

    fn sum(xs: &[Self]) -> Self {
        let ones: Vec<Self> = xs.iter().map(|_| Self::constant(1.0)).collect();
        Self::dot(&ones, xs)
    }
}

impl Real for f64 {
    #[inline]
    fn constant(c: f64) -> Self {
        c
    }

    #[inline]
    fn value(self) -> f64 {
        self
    }

    #[inline]
    fn fused(val: f64, _parents: &[(Self, f64)]) -> Self {
        val
    }

    #[inline]
    fn affine(bias: Self, a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).fold(bias, |acc, (x, y)| acc + x * y)
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        self * c
    }

    #[inline]
    fn offset(self, c: f64) -> Self {
        self + c
    }

    #[inline]
    fn square(self) -> Self {
        self * self
    }

    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    #[inline]
    fn recip(self) -> Self {
        1.0 / self
    }

    fn sum(xs: &[Self]) -> Self {
        xs.iter().sum()
    }
}

const CONST: u32 = u32::MAX;

#[derive(Default)]
struct TapeData {
    // Edges of node i live in offsets[i]..offsets[i + 1].
    offsets: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    adjoint: Vec<f64>,
}

impl TapeData {
    fn clear(&mut self) {
        self.offsets.clear();
        self.offsets.push(0);
        self.parents.clear();
        self.partials.clear();
    }

    #[inline]
    fn push_edge(&mut self, parent: u32, partial: f64) {
        if parent != CONST && partial != 0.0 {
            self.parents.push(parent);
            self.partials.push(partial);
        }
    }

    #[inline]
    fn close_node(&mut self) -> u32 {
        let id = self.offsets.len() - 1;
        self.offsets.push(self.parents.len() as u32);
        id as u32
    }
}

/// A Wengert list of scalar nodes with their local partial derivatives.
pub struct Tape {
    data: RefCell<TapeData>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        let mut data = TapeData::default();
        data.clear();
        Tape {
            data: RefCell::new(data),
        }
    }

    pub fn clear(&self) {
        self.data.borrow_mut().clear();
    }

    pub fn len(&self) -> usize {
        self.data.borrow().offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn edge_count(&self) -> usize {
        self.data.borrow().parents.len()
    }

    /// Registers an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.data.borrow_mut().close_node();
        Var {
            val: value,
            idx,
            tape: Some(self),
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// Reverse sweep from `output`; adds `seed * d output / d leaf` for every
    /// leaf in `leaves` into `grad`.
    pub fn accumulate_gradient(&self, output: Var<'_>, leaves: &[Var<'_>], seed: f64, grad: &mut [f64]) {
        debug_assert_eq!(leaves.len(), grad.len());
        if output.idx == CONST {
            return;
        }
        let mut data = self.data.borrow_mut();
        let data = &mut *data;
        let n = output.idx as usize + 1;
        data.adjoint.clear();
        data.adjoint.resize(n, 0.0);
        data.adjoint[n - 1] = seed;
        for node in (0..n).rev() {
            let a = data.adjoint[node];
            if a == 0.0 {
                continue;
            }
            let lo = data.offsets[node] as usize;
            let hi = data.offsets[node + 1] as usize;
            for e in lo..hi {
                let p = data.parents[e] as usize;
                data.adjoint[p] += data.partials[e] * a;
            }
        }
        for (g, leaf) in grad.iter_mut().zip(leaves) {
            if leaf.idx != CONST && (leaf.idx as usize) < n {
                *g += data.adjoint[leaf.idx as usize];
            }
        }
    }

    pub fn gradient(&self, output: Var<'_>, leaves: &[Var<'_>]) -> Vec<f64> {
        let mut grad = vec![0.0; leaves.len()];
        self.accumulate_gradient(output, leaves, 1.0, &mut grad);
        grad
    }
}

thread_local! {
    static TAPE_POOL: RefCell<Option<Tape>> = const { RefCell::new(None) };
}

/// Runs `f` on a cleared tape that is reused across calls on the same thread.
pub fn with_tape<R>(f: impl FnOnce(&Tape) -> R) -> R {
    let tape = TAPE_POOL.with(|cell| cell.borrow_mut().take()).unwrap_or_default();
    tape.clear();
    let out = f(&tape);
    tape.clear();
    TAPE_POOL.with(|cell| *cell.borrow_mut() = Some(tape));
    out
}

/// Value and parameter gradient of a scalar loss.
///
/// `build` receives the parameters as tape leaves and returns the loss node.
/// The tape is discarded after the reverse sweep.
pub fn loss_gradient<F>(theta: &[f64], build: F) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    with_tape(|tape| {
        let leaves = tape.vars(theta);
        let loss = build(tape, &leaves);
        if !loss.val.is_finite() {
            return Err(Error::NumericFailure {
                context: format!("loss evaluated to {} on a {}-node tape", loss.val, tape.len()),
            });
        }
        let grad = tape.gradient(loss, &leaves);
        Ok((loss.val, grad))
    })
}

/// A scalar recorded on a tape, or a constant when `tape` is `None`.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    val: f64,
    idx: u32,
    tape: Option<&'t Tape>,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.idx == CONST {
            write!(f, "Var({} const)", self.val)
        } else {
            write!(f, "Var({} #{})", self.val, self.idx)
        }
    }
}

impl<'t> Var<'t> {
    pub fn val(&self) -> f64 {
        self.val
    }

    pub fn is_constant(&self) -> bool {
        self.idx == CONST
    }

    #[inline]
    fn binary(a: Self, b: Self, val: f64, da: f64, db: f64) -> Self {
        match a.tape.or(b.tape) {
            None => Var::constant(val),
            Some(tape) => {
                let mut data = tape.data.borrow_mut();
                data.push_edge(a.idx, da);
                data.push_edge(b.idx, db);
                let idx = data.close_node();
                Var {
                    val,
                    idx,
                    tape: Some(tape),
                }
            }
        }
    }
}

impl<'t> Real for Var<'t> {
    #[inline]
    fn constant(c: f64) -> Self {
        Var {
            val: c,
            idx: CONST,
            tape: None,
        }
    }

    #[inline]
    fn value(self) -> f64 {
        self.val
    }

    fn fused(val: f64, parents: &[(Self, f64)]) -> Self {
        let Some(tape) = parents.iter().find_map(|(p, _)| p.tape) else {
            return Var::constant(val);
        };
        let mut data = tape.data.borrow_mut();
        for &(p, d) in parents {
            data.push_edge(p.idx, d);
        }
        let idx = data.close_node();
        Var {
            val,
            idx,
            tape: Some(tape),
        }
    }

    fn affine(bias: Self, a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        let val = a.iter().zip(b).fold(bias.val, |acc, (x, y)| acc + x.val * y.val);
        let tape = bias
            .tape
            .or_else(|| a.iter().find_map(|x| x.tape))
            .or_else(|| b.iter().find_map(|x| x.tape));
        let Some(tape) = tape else {
            return Var::constant(val);
        };
        let mut data = tape.data.borrow_mut();
        data.push_edge(bias.idx, 1.0);
        for (x, y) in a.iter().zip(b) {
            data.push_edge(x.idx, y.val);
            data.push_edge(y.idx, x.val);
        }
        let idx = data.close_node();
        Var {
            val,
            idx,
            tape: Some(tape),
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Var::binary(self, rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Var::binary(self, rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Var::binary(self, rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

/// Value, gradient and Hessian of a scalar field at one point in the plane.
///
/// `d2` holds the symmetric Hessian packed as (11, 12, 22).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2<T> {
    pub value: T,
    pub d1: [T; 2],
    pub d2: [T; 3],
}

/// Packed index of the Hessian entry (k, l).
#[inline]
pub const fn packed(k: usize, l: usize) -> usize {
    k + l
}

impl<T: Real> Jet2<T> {
    pub fn constant(c: f64) -> Self {
        let z = T::constant(0.0);
        Jet2 {
            value: T::constant(c),
            d1: [z; 2],
            d2: [z; 3],
        }
    }

    /// The coordinate function `x_k` evaluated at `value`.
    pub fn coordinate(value: f64, k: usize) -> Self {
        let mut jet = Self::constant(value);
        jet.d1[k] = T::constant(1.0);
        jet
    }

    /// Promotes a plain jet to one whose entries are constants.
    pub fn lift_constant(jet: &Jet2<f64>) -> Self {
        Jet2 {
            value: T::constant(jet.value),
            d1: jet.d1.map(T::constant),
            d2: jet.d2.map(T::constant),
        }
    }

    pub fn values(&self) -> Jet2<f64> {
        Jet2 {
            value: self.value.value(),
            d1: self.d1.map(Real::value),
            d2: self.d2.map(Real::value),
        }
    }

    /// `f(self)` given `f` and its first three derivatives at `self.value`.
    ///
    /// The third derivative only enters the tape partials of the Hessian.
    pub fn compose(&self, f0: f64, f1: f64, f2: f64, f3: f64) -> Self {
        let z = &self.values();
        let value = T::fused(f0, &[(self.value, f1)]);
        let d1 = [0, 1].map(|k| T::fused(f1 * z.d1[k], &[(self.value, f2 * z.d1[k]), (self.d1[k], f1)]));
        let d2 = [(0, 0), (0, 1), (1, 1)].map(|(k, l)| {
            let p = packed(k, l);
            T::fused(
                f1 * z.d2[p] + f2 * z.d1[k] * z.d1[l],
                &[
                    (self.value, f2 * z.d2[p] + f3 * z.d1[k] * z.d1[l]),
                    (self.d2[p], f1),
                    (self.d1[k], f2 * z.d1[l]),
                    (self.d1[l], f2 * z.d1[k]),
                ],
            )
        });
        Jet2 { value, d1, d2 }
    }

    pub fn tanh(&self) -> Self {
        let t = self.value.value().tanh();
        let s = 1.0 - t * t;
        self.compose(t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0))
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.value.value().sin_cos();
        self.compose(s, c, -s, -c)
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.value.value().sin_cos();
        self.compose(c, -s, -c, s)
    }

    pub fn scale(&self, c: f64) -> Self {
        Jet2 {
            value: self.value.scale(c),
            d1: self.d1.map(|d| d.scale(c)),
            d2: self.d2.map(|d| d.scale(c)),
        }
    }
}

impl<T: Real> Add for Jet2<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Jet2 {
            value: self.value + rhs.value,
            d1: [self.d1[0] + rhs.d1[0], self.d1[1] + rhs.d1[1]],
            d2: [
                self.d2[0] + rhs.d2[0],
                self.d2[1] + rhs.d2[1],
                self.d2[2] + rhs.d2[2],
            ],
        }
    }
}

impl<T: Real> Sub for Jet2<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl<T: Real> Neg for Jet2<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<T: Real> Mul for Jet2<T> {
    type Output = Self;
    /// Leibniz rule truncated at second order.
    fn mul(self, rhs: Self) -> Self {
        let (a, b) = (&self, &rhs);
        let value = a.value * b.value;
        let d1 = [0, 1].map(|k| T::dot(&[a.value, a.d1[k]], &[b.d1[k], b.value]));
        let d2 = [(0, 0), (0, 1), (1, 1)].map(|(k, l)| {
            let p = packed(k, l);
            T::dot(
                &[a.value, a.d1[k], a.d1[l], a.d2[p]],
                &[b.d2[p], b.d1[l], b.d1[k], b.value],
            )
        });
        Jet2 { value, d1, d2 }
    }
}

/// Jets of the two coordinate functions at `x`.
pub fn seed_input<T: Real>(x: [f64; 2]) -> [Jet2<T>; 2] {
    [Jet2::coordinate(x[0], 0), Jet2::coordinate(x[1], 1)]
}
