//! Dense row-major `f64` tensors with reverse-mode automatic differentiation.
//!
//! Every operation that has at least one parent with `requires_grad` set
//! records a [`Node`] holding its parents and a backward closure. Nodes are
//! identified by a process-wide, strictly increasing id, so sorting reachable
//! nodes by descending id is a valid reverse topological order.
//!
//! Tensor values are immutable once built; only the accumulated gradient is
//! interior-mutable. Optimizers replace parameters with fresh leaves rather
//! than writing through shared storage, which keeps any live graph valid.

mod gradcheck;
mod io;
mod ops;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use gradcheck::{
    central_differences, compare_gradients, finite_diff_check, finite_diff_check_many, GradCheckReport,
};
pub use io::{read_tensor, write_tensor, TENSOR_FORMAT_VERSION, TENSOR_MAGIC};
pub use ops::BCE_EPS;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Gradients of an op with respect to each parent, `None` where a parent
/// does not need one.
type ParentGrads = Vec<Option<Vec<f64>>>;

/// `(upstream gradient, op output values, parents) -> parent gradients`.
type BackwardFn = dyn Fn(&[f64], &[f64], &[Tensor]) -> ParentGrads + Send + Sync;

pub(crate) struct Node {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: Box<BackwardFn>,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// Shared handle to an immutable array plus its gradient slot.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.node.as_ref().map(|n| n.op))
            .finish()
    }
}

impl Tensor {
    /// Builds a constant (non-differentiable) tensor.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("Tensor::new", shape, &[data.len()]));
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// Builds a differentiable leaf, e.g. a model parameter.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(Self::leaf(t.0.shape.clone(), t.0.data.clone(), true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::leaf(shape.to_vec(), vec![0.0; numel], false)
    }

    pub fn scalar(value: f64) -> Self {
        Self::leaf(vec![1], vec![value], false)
    }

    /// Vector of shape `[len]`.
    pub fn vector(data: Vec<f64>) -> Self {
        Self::leaf(vec![data.len()], data, false)
    }

    /// Matrix from rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == m), "ragged rows");
        let data = rows.iter().flatten().copied().collect();
        Self::leaf(vec![n, m], data, false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        Tensor(Arc::new(Inner {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node: None,
        }))
    }

    /// Result of an op. A node is recorded only when some parent needs a
    /// gradient.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: Box<BackwardFn>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let node = requires_grad.then(|| Node { op, parents, backward });
        Tensor(Arc::new(Inner {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Op tag of the node that produced this tensor, if any.
    pub fn op(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Row/column dimensions of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.0.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::shape(op, other, &[0, 0])),
        }
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Constant copy cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), false)
    }

    /// Fresh differentiable leaf with the same values.
    pub fn detach_param(&self) -> Tensor {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), true)
    }

    /// Fresh leaf with the same shape and `requires_grad` but new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Tensor> {
        if data.len() != self.numel() {
            return Err(Error::shape("with_data", self.shape(), &[data.len()]));
        }
        Ok(Self::leaf(self.0.shape.clone(), data, self.0.requires_grad))
    }

    /// Reverse-mode sweep from a scalar. Gradients are added to whatever is
    /// already stored on each reachable tensor.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let mut seen = HashSet::new();
        let mut order = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if let Some(node) = &t.0.node {
                stack.extend(node.parents.iter().filter(|p| p.requires_grad()).cloned());
            }
            order.push(t);
        }
        order.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for t in order {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            if let Some(node) = &t.0.node {
                let parent_grads = (node.backward)(&g, &t.0.data, &node.parents);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (p, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !p.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.numel(), "grad shape from {}", node.op);
                    match pending.get_mut(&p.id()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(p.id(), pg);
                        }
                    }
                }
            }
            t.accumulate_grad(&g);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_square_sum() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = x.sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.scale(2.0);
        assert!(matches!(y.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_subexpression_gets_both_paths() {
        // f = sum(x*y + x) with y = 2x  ->  df/dx = 4x + 1
        let x = Tensor::param(&[2], vec![1.5, -2.0]).unwrap();
        let y = x.scale(2.0);
        let f = x.mul(&y).unwrap().add(&x).unwrap().sum();
        f.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0, -7.0]);
    }

    #[test]
    fn constants_record_no_node() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = a.scale(3.0);
        assert!(b.op().is_none());
        assert!(!b.requires_grad());
    }

    #[test]
    fn parents_precede_children() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.scale(2.0);
        let z = y.sum();
        assert!(x.id() < y.id() && y.id() < z.id());
    }
}
