//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only tape. Every op pushes one node holding its
//! output value and, when any input requires a gradient, a [`Backward`]
//! implementation with whatever it saved during the forward pass. Node
//! indices are a topological order by construction, so the backward sweep is
//! a single reverse scan of the tape.

mod gradcheck;
mod ops;

pub use gradcheck::{finite_diff_gradcheck, relative_error, GradcheckReport, DEFAULT_STEP};
pub use ops::{sigmoid, Activation, Binary};
pub(crate) use ops::resample_bilinear;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded op.
pub trait Backward {
    /// Gradients for each input, given the cotangent of the output.
    ///
    /// `needs[i]` is false when input `i` does not require a gradient; the
    /// implementation may return `None` for it.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;

    /// Which piece of a piecewise-smooth op is active: relu signs, max-pool
    /// argmax. `None` for smooth ops. Two evaluations with different branches
    /// have a kink between them.
    fn branch(&self, _inputs: &[&Tensor]) -> Option<Vec<usize>> {
        None
    }
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward>>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_ran: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Node { value, requires_grad: false, inputs: Vec::new(), op: None })
    }

    /// Leaf whose gradient is accumulated by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(Node { value, requires_grad: true, inputs: Vec::new(), op: None })
    }

    /// Record the result of an op. The backward closure is kept only when some
    /// input requires a gradient.
    pub fn record<B: Backward + 'static>(&mut self, value: Tensor, inputs: &[Var], op: B) -> Var {
        debug_assert!(inputs.iter().all(|v| v.0 < self.nodes.len()));
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let node = if requires_grad {
            Node { value, requires_grad, inputs: inputs.to_vec(), op: Some(Box::new(op)) }
        } else {
            Node { value, requires_grad, inputs: Vec::new(), op: None }
        };
        self.push(node)
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Accumulated gradient of the last backward root with respect to `var`.
    pub fn grad(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Active branch of every recorded piecewise op, by node index.
    pub fn branches(&self) -> Vec<(usize, Vec<usize>)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(idx, node)| {
                let op = node.op.as_ref()?;
                let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                op.branch(&inputs).map(|b| (idx, b))
            })
            .collect()
    }

    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_ran = false;
    }

    /// Populate gradients of the scalar `root` for every node that requires one.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.nodes[root.0].value.shape();
        if !shape.is_scalar() {
            return Err(Error::NonScalarRoot(shape));
        }
        if self.backward_ran {
            return Err(Error::BackwardAlreadyRan);
        }
        self.backward_ran = true;
        self.grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(grad_out) = self.grads[idx].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let input_grads = op.backward(&inputs, &node.value, &grad_out, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            self.grads[idx] = Some(grad_out);

            for ((&var, grad), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let Some(grad) = grad.filter(|_| need) else { continue };
                debug_assert_eq!(grad.shape(), self.nodes[var.0].value.shape());
                match &mut self.grads[var.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .for_each(|(a, g)| *a += g),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(())
    }
}
