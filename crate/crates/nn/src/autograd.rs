//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Var`] is an immutable node in a dynamically built graph. Nodes are
//! created in strictly increasing id order, so a reverse sort by id is a valid
//! topological order for the backward sweep.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::Tensor;

static NEXT_NODE_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Var(Rc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?}, grad={})", self.0.id, self.0.value, self.0.requires_grad)
    }
}

fn next_id() -> u64 {
    NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed)
}

impl Var {
    /// A value that never receives a gradient.
    pub fn constant(value: Tensor) -> Self {
        Var(Rc::new(Node { id: next_id(), value, requires_grad: false, parents: Vec::new(), backward: None }))
    }

    /// A leaf whose gradient is reported by [`Var::backward`].
    pub fn leaf(value: Tensor) -> Self {
        Var(Rc::new(Node { id: next_id(), value, requires_grad: true, parents: Vec::new(), backward: None }))
    }

    pub(crate) fn from_op(value: Tensor, parents: Vec<Var>, backward: BackwardFn) -> Self {
        let requires_grad = parents.iter().any(Var::requires_grad);
        if !requires_grad {
            return Var::constant(value);
        }
        Var(Rc::new(Node { id: next_id(), value, requires_grad, parents, backward: Some(backward) }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    /// Scalar value of a single-element variable.
    pub fn item(&self) -> f32 {
        assert_eq!(self.0.value.numel(), 1, "item() on non-scalar {:?}", self.shape());
        self.0.value.data()[0]
    }

    /// Backpropagates from this node, seeding it with ones.
    ///
    /// Gradients of intermediate nodes are released as soon as they have been
    /// propagated; leaves keep theirs in the returned map.
    pub fn backward(&self) -> Gradients {
        let mut grads = HashMap::new();
        if !self.requires_grad() {
            return Gradients { grads };
        }
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !seen.insert(v.id()) {
                continue;
            }
            for p in &v.0.parents {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push(p.clone());
                }
            }
            order.push(v);
        }
        order.sort_by(|a, b| b.id().cmp(&a.id()));

        grads.insert(self.id(), Tensor::ones(self.shape()));
        for node in &order {
            let Some(backward) = &node.0.backward else { continue };
            let Some(grad) = grads.remove(&node.id()) else { continue };
            let input_grads = backward(&grad);
            debug_assert_eq!(input_grads.len(), node.0.parents.len());
            for (parent, g) in node.0.parents.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(g.shape(), parent.shape(), "gradient shape for parent");
                match grads.get_mut(&parent.id()) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        grads.insert(parent.id(), g);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

/// Leaf gradients produced by one backward sweep.
#[derive(Default)]
pub struct Gradients {
    grads: HashMap<u64, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        self.grads.get(&var.id())
    }

    pub fn take(&mut self, var: &Var) -> Option<Tensor> {
        self.grads.remove(&var.id())
    }
}
