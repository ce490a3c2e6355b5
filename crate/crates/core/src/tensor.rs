//! Dense `N×C×H×W` tensors with tape-free reverse-mode differentiation.
//!
//! Every tensor produced by an operation keeps a reference to its inputs and
//! a [`Backward`] rule. Calling [`Tensor::backward`] on a scalar walks that
//! graph in reverse topological order and accumulates gradients into the
//! leaves created with [`Tensor::parameter`]. Intermediate gradients are
//! transient; only leaves retain them.
//!
//! Gradient accumulation is additive: calling `backward` twice without
//! [`Tensor::zero_grad`] doubles the stored gradients.

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

/// On-disk element type code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating-point element type. Implemented for `f32` (the default working
/// precision) and `f64` (used by the gradient-check suites).
pub trait Element:
    num_traits::Float
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const DTYPE: DType;

    /// Converts a literal or accumulator value into this precision.
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Tensor extent in `N×C×H×W` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}×{}×{}", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

/// Reverse rule of one operation.
///
/// `grads[i]` must be filled for every input `i` whose `requires_grad()` is
/// true; entries for other inputs are ignored.
pub trait Backward<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, out_grad: &[T], inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]);
}

struct Node<T: Element> {
    shape: Shape,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    inputs: Vec<Tensor<T>>,
    rule: Option<Box<dyn Backward<T>>>,
}

/// Reference-counted, immutable tensor value. Cloning is cheap.
pub struct Tensor<T: Element> {
    node: Arc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { node: Arc::clone(&self.node) }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &self.node.rule.as_ref().map(|r| r.name()))
            .finish()
    }
}

thread_local! {
    static GRAD_DISABLED: Cell<bool> = const { Cell::new(false) };
    static FAULT: Cell<Option<&'static str>> = const { Cell::new(None) };
    static BRANCHES: std::cell::RefCell<Option<BranchMode>> = const { std::cell::RefCell::new(None) };
}

/// While alive, operations on this thread record no graph.
pub struct NoGradGuard {
    previous: bool,
}

pub fn no_grad() -> NoGradGuard {
    let previous = GRAD_DISABLED.with(|g| g.replace(true));
    NoGradGuard { previous }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_DISABLED.with(|g| g.set(self.previous));
    }
}

fn grad_enabled() -> bool {
    !GRAD_DISABLED.with(|g| g.get())
}

/// Corrupts the backward rule named `op` on the current thread (gradients it
/// produces are scaled by 1.5). Used as a negative control by the
/// gradient-check suite. `None` clears the fault.
pub fn inject_backward_fault(op: Option<&'static str>) {
    FAULT.with(|f| f.set(op));
}

fn active_fault() -> Option<&'static str> {
    FAULT.with(|f| f.get())
}

/// Branch decisions of piecewise-linear ops (one `Vec<bool>` per prelu
/// call, `true` where the input was non-negative), in call order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BranchPattern(Vec<Vec<bool>>);

enum BranchMode {
    Record(Vec<Vec<bool>>),
    Replay(std::rc::Rc<BranchPattern>, usize),
}

/// Runs `f`, recording every prelu branch decision it takes.
pub fn record_branches<R>(f: impl FnOnce() -> R) -> (R, BranchPattern) {
    let previous = BRANCHES.with(|b| b.replace(Some(BranchMode::Record(Vec::new()))));
    let r = f();
    let mode = BRANCHES.with(|b| b.replace(previous));
    match mode {
        Some(BranchMode::Record(v)) => (r, BranchPattern(v)),
        _ => unreachable!("branch mode restored out of order"),
    }
}

/// Runs `f` with prelu branches forced to `pattern` instead of the sign of
/// their inputs, so that `f` becomes the smooth extension of the linear
/// piece `pattern` was recorded on. `f` must issue the same prelu calls in
/// the same order as the recording.
pub fn replay_branches<R>(pattern: &BranchPattern, f: impl FnOnce() -> R) -> R {
    let rc = std::rc::Rc::new(pattern.clone());
    let previous = BRANCHES.with(|b| b.replace(Some(BranchMode::Replay(rc, 0))));
    let r = f();
    BRANCHES.with(|b| b.replace(previous));
    r
}

/// Branch decisions for one prelu call: recorded or replayed when a mode is
/// active, `None` otherwise.
pub(crate) fn branch_decisions<T: Element>(input: &[T]) -> Option<Vec<bool>> {
    BRANCHES.with(|b| {
        let mut mode = b.borrow_mut();
        match mode.as_mut()? {
            BranchMode::Record(calls) => {
                let d: Vec<bool> = input.iter().map(|&x| x >= T::zero()).collect();
                calls.push(d.clone());
                Some(d)
            }
            BranchMode::Replay(pattern, next) => {
                let d = pattern.0.get(*next).filter(|d| d.len() == input.len()).cloned();
                *next += 1;
                Some(d.expect("replayed forward pass diverged from the recorded one"))
            }
        }
    })
}

impl<T: Element> Tensor<T> {
    fn from_node(node: Node<T>) -> Self {
        Tensor { node: Arc::new(node) }
    }

    /// Constant (non-differentiable) tensor.
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != data.len() {
            return Err(Error::dim(
                "from_vec",
                format!("shape {shape} needs {} elements, got {}", shape.numel(), data.len()),
            ));
        }
        Ok(Self::leaf(shape, data, false))
    }

    /// Differentiable leaf; gradients accumulate into it during `backward`.
    pub fn parameter(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != data.len() {
            return Err(Error::dim(
                "parameter",
                format!("shape {shape} needs {} elements, got {}", shape.numel(), data.len()),
            ));
        }
        Ok(Self::leaf(shape, data, true))
    }

    fn leaf(shape: Shape, data: Vec<T>, requires_grad: bool) -> Self {
        Self::from_node(Node { shape, data, requires_grad, grad: Mutex::new(None), inputs: Vec::new(), rule: None })
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        Self::leaf(shape, vec![value; shape.numel()], false)
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::scalar(), value)
    }

    /// Result of an operation. Records the graph edge only when gradient
    /// recording is enabled and some input requires a gradient.
    pub fn from_op(shape: Shape, data: Vec<T>, inputs: Vec<Tensor<T>>, rule: impl Backward<T> + 'static) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        let requires_grad = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if requires_grad {
            Self::from_node(Node {
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                inputs,
                rule: Some(Box::new(rule)),
            })
        } else {
            Self::leaf(shape, data, false)
        }
    }

    pub fn shape(&self) -> Shape {
        self.node.shape
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.rule.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.node.rule.as_ref().map(|r| r.name())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!("item() needs a single-element tensor, got {}", self.shape())));
        }
        Ok(self.node.data[0])
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::leaf(self.shape(), self.to_vec(), false)
    }

    /// Accumulated gradient, `None` if nothing has been accumulated since the
    /// last reset.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().expect("grad lock").clone()
    }

    /// Accumulated gradient, zeros when absent.
    pub fn grad_or_zeros(&self) -> Vec<T> {
        self.grad().unwrap_or_else(|| vec![T::zero(); self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock") = None;
    }

    /// Overwrites the gradient accumulator. Shape is checked.
    pub fn set_grad(&self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.numel() {
            return Err(Error::dim(
                "set_grad",
                format!("tensor has {} elements, gradient {}", self.numel(), grad.len()),
            ));
        }
        *self.node.grad.lock().expect("grad lock") = Some(grad);
        Ok(())
    }

    fn accumulate(&self, g: &[T]) {
        let mut slot = self.node.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    fn key(&self) -> usize {
        Arc::as_ptr(&self.node) as usize
    }

    /// Reverse-mode sweep from this scalar. Gradients accumulate into every
    /// reachable differentiable leaf.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!("backward() needs a scalar loss, got shape {}", self.shape())));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topological_order();
        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.key(), vec![T::one()]);

        let fault = active_fault();
        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.key()) else {
                continue;
            };
            let Some(rule) = node.node.rule.as_ref() else {
                node.accumulate(&grad);
                continue;
            };
            let inputs = &node.node.inputs;
            let mut input_grads: Vec<Option<Vec<T>>> = vec![None; inputs.len()];
            rule.backward(&grad, inputs, &mut input_grads);
            let corrupt = fault == Some(rule.name());
            for (input, g) in inputs.iter().zip(input_grads) {
                let Some(mut g) = g else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(g.len(), input.numel(), "{} gradient size", rule.name());
                if corrupt {
                    let k = T::lit(1.5);
                    g.iter_mut().for_each(|v| *v *= k);
                }
                match pending.get_mut(&input.key()) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => {
                        pending.insert(input.key(), g);
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the differentiable part of the graph.
    fn topological_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            for input in t.node.inputs.iter().rev() {
                if input.requires_grad() && !visited.contains(&input.key()) {
                    stack.push((input.clone(), false));
                }
            }
        }
        order
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|v| U::lit(v.as_f64())).collect();
        Tensor::leaf(self.shape(), data, false)
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }
}

pub(crate) fn ensure_same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{} vs {}", a.shape(), b.shape())));
    }
    Ok(())
}
