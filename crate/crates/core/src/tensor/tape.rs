use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Computes input gradients from the output gradient. The mask tells which
/// parents need one; entries for the others may be `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T> {
    op: &'static str,
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Append-only record of operations. Node ids increase in recording order,
/// so the reverse of recording order is a valid reverse topological order.
///
/// A tape is single-threaded; parallel batch items each get their own.
pub struct Tape<T: Scalar = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    leaf_grads: RefCell<HashMap<usize, Tensor<T>>>,
    params: RefCell<HashMap<*const Tensor<T>, Var>>,
    track_params: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            leaf_grads: RefCell::new(HashMap::new()),
            params: RefCell::new(HashMap::new()),
            track_params: true,
        }
    }

    /// A tape whose parameters never require gradients, so no backward
    /// closures are kept. Used for inference.
    pub fn inference() -> Self {
        Self {
            track_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf value.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: "leaf",
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf bound to a model parameter. Binding the same tensor twice returns
    /// the same variable, so parameters shared between branches accumulate
    /// into a single gradient.
    pub fn param(&self, tensor: &Tensor<T>) -> Var {
        let key = tensor as *const Tensor<T>;
        if let Some(&v) = self.params.borrow().get(&key) {
            return v;
        }
        let mut value = tensor.clone();
        value.zero_grad();
        let v = self.leaf(value, self.track_params && tensor.requires_grad());
        self.params.borrow_mut().insert(key, v);
        v
    }

    /// Gradient accumulated for a parameter bound with [`Tape::param`].
    pub fn param_grad(&self, tensor: &Tensor<T>) -> Option<Tensor<T>> {
        let v = *self.params.borrow().get(&(tensor as *const Tensor<T>))?;
        self.grad(v)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes.borrow()[v.0].op
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Records the result of an operation. Fails with a numeric error naming
    /// `op` when the value contains NaN or Inf.
    pub(crate) fn record(
        &self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[Var],
        backward: BackwardFn<T>,
    ) -> Result<Var> {
        value.check_finite(op)?;
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.0].requires_grad);
        nodes.push(Node {
            op,
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    /// Reverse pass from a scalar `loss`. Gradients of leaves accumulate
    /// across calls until [`Tape::zero_grad`].
    pub fn backward(&self, loss: Var) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        if !nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut pending: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), T::one()));
        let mut leaf_grads = self.leaf_grads.borrow_mut();

        for id in (0..=loss.0).rev() {
            let Some(grad) = pending[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                if node.requires_grad {
                    match leaf_grads.get_mut(&id) {
                        Some(acc) => add_into(acc, &grad),
                        None => {
                            leaf_grads.insert(id, grad);
                        }
                    }
                }
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&grad, &needs)?;
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, g), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let (Some(g), true) = (g, need) else { continue };
                match &mut pending[p] {
                    Some(acc) => add_into(acc, &g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.leaf_grads.borrow().get(&v.0).cloned()
    }

    pub fn zero_grad(&self) {
        self.leaf_grads.borrow_mut().clear();
    }
}

fn add_into<T: Scalar>(acc: &mut Tensor<T>, g: &Tensor<T>) {
    debug_assert_eq!(acc.shape(), g.shape());
    acc.data_mut()
        .iter_mut()
        .zip(g.data())
        .for_each(|(a, &b)| *a += b);
}
