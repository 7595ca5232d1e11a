use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use super::ops::OpKind;
use super::{Result, Tensor, TensorError};

pub type NodeId = usize;

pub(crate) struct Node {
    pub(crate) op: OpKind,
    pub(crate) parents: Vec<NodeId>,
    pub(crate) value: Tensor,
    pub(crate) trainable: bool,
    pub(crate) detached: bool,
}

/// Append-only record of a computation.
///
/// Parents always have smaller ids than their children. `reset` drops every
/// node and invalidates outstanding [`Var`]s.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
    generation: Cell<u64>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("generation", &self.generation.get())
            .finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: NodeId,
    generation: u64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all nodes. Vars created before the reset become stale.
    pub fn reset(&self) {
        self.nodes.borrow_mut().clear();
        self.generation.set(self.generation.get() + 1);
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
            generation: self.generation.get(),
        }
    }

    fn leaf(&self, value: Tensor, trainable: bool) -> Var<'_> {
        self.push(Node {
            op: OpKind::Leaf,
            parents: Vec::new(),
            value,
            trainable,
            detached: false,
        })
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Non-trainable leaf. Gradients can still be requested for it explicitly.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Record `op` applied to `inputs`.
    pub fn record<'t>(&'t self, op: OpKind, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        for v in inputs {
            self.check(*v)?;
        }
        let value = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&Tensor> = inputs.iter().map(|v| &nodes[v.id].value).collect();
            op.forward(&vals)?
        };
        Ok(self.push(Node {
            op,
            parents: inputs.iter().map(|v| v.id).collect(),
            value,
            trainable: false,
            detached: false,
        }))
    }

    pub(crate) fn check(&self, v: Var<'_>) -> Result<()> {
        if !std::ptr::eq(v.tape, self) {
            return Err(TensorError::ForeignTape);
        }
        if v.generation != self.generation.get() || v.id >= self.len() {
            return Err(TensorError::StaleTape);
        }
        Ok(())
    }

    /// Block gradient flow into and through `v` for subsequent backward passes.
    pub fn detach(&self, v: Var<'_>) -> Result<()> {
        self.set_detached(v, true)
    }

    pub fn reattach(&self, v: Var<'_>) -> Result<()> {
        self.set_detached(v, false)
    }

    fn set_detached(&self, v: Var<'_>, flag: bool) -> Result<()> {
        self.check(v)?;
        self.nodes.borrow_mut()[v.id].detached = flag;
        Ok(())
    }

    /// All trainable leaves currently on the tape, in creation order.
    pub fn trainable(&self) -> Vec<Var<'_>> {
        let generation = self.generation.get();
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .filter(|(_, n)| n.trainable)
            .map(|(id, _)| Var {
                tape: self,
                id,
                generation,
            })
            .collect()
    }

    pub(crate) fn truncate(&self, len: usize) {
        self.nodes.borrow_mut().truncate(len);
    }

    pub(crate) fn var_at(&self, id: NodeId) -> Var<'_> {
        Var {
            tape: self,
            id,
            generation: self.generation.get(),
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrow the node's value. Panics if the var is stale.
    pub fn value(&self) -> Ref<'t, Tensor> {
        self.tape.check(*self).expect("value() on a stale variable");
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().dims2()
    }

    fn unary(self, op: OpKind) -> Result<Var<'t>> {
        self.tape.record(op, &[self])
    }

    fn binary(self, op: OpKind, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(op, &[self, rhs])
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(OpKind::Add, rhs)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(OpKind::Sub, rhs)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(OpKind::Mul, rhs)
    }

    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(OpKind::Div, rhs)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(OpKind::MatMul, rhs)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.unary(OpKind::Neg)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary(OpKind::Scale(c))
    }

    pub fn shift(self, c: f64) -> Result<Var<'t>> {
        self.unary(OpKind::Shift(c))
    }

    pub fn t(self) -> Result<Var<'t>> {
        self.unary(OpKind::Transpose)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(OpKind::Sigmoid)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary(OpKind::Tanh)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(OpKind::Relu)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(OpKind::Exp)
    }

    pub fn ln(self) -> Result<Var<'t>> {
        self.unary(OpKind::Log)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary(OpKind::Sqrt)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.unary(OpKind::Square)
    }

    pub fn abs(self) -> Result<Var<'t>> {
        self.unary(OpKind::Abs)
    }

    pub fn softplus(self) -> Result<Var<'t>> {
        self.unary(OpKind::Softplus)
    }

    pub fn softmax(self) -> Result<Var<'t>> {
        self.unary(OpKind::Softmax)
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.unary(OpKind::SumAll)
    }

    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        self.unary(OpKind::SumAxis(axis))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.value().len() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Mean over `axis`, keeping rank 2.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        let n = if axis == 0 { r } else { c };
        self.sum_axis(axis)?.scale(1.0 / n as f64)
    }

    pub fn expand(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        self.unary(OpKind::Expand { rows, cols })
    }

    /// `Σ|x|`
    pub fn l1_norm(self) -> Result<Var<'t>> {
        self.abs()?.sum()
    }

    /// `Σx²`
    pub fn sq_norm(self) -> Result<Var<'t>> {
        self.square()?.sum()
    }

    pub fn slice(self, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Var<'t>> {
        self.unary(OpKind::Slice { r0, c0, rows, cols })
    }

    pub fn row(self, r: usize) -> Result<Var<'t>> {
        let (_, c) = self.shape();
        self.slice(r, 0, 1, c)
    }

    pub fn col(self, c: usize) -> Result<Var<'t>> {
        let (r, _) = self.shape();
        self.slice(0, c, r, 1)
    }

    pub fn pad(self, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Var<'t>> {
        self.unary(OpKind::Pad { r0, c0, rows, cols })
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or(TensorError::Arity {
            op: "concat",
            expected: 1,
            got: 0,
        })?;
        first.tape.record(OpKind::Concat(axis), parts)
    }

    /// Mean softmax cross-entropy of row logits against class indices.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let labels: Rc<[usize]> = labels.into();
        self.unary(OpKind::SoftmaxCrossEntropy(labels))
    }
}
