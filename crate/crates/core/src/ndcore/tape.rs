use super::{NdError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Local derivative rule of a recorded operation.
///
/// Given the gradient flowing into the output, return one gradient per
/// input (in input order); `None` means the input receives nothing.
pub trait Backward: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        grad_out: &Tensor,
        inputs: &[&Tensor],
        output: &Tensor,
    ) -> Result<Vec<Option<Tensor>>, NdError>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward>>,
    requires_grad: bool,
}

/// Append-only record of one forward evaluation.
///
/// Node ids follow evaluation order, so every node's inputs precede it and
/// a reverse sweep over ids is a valid reverse topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf value.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records the result of an operation together with its derivative rule.
    pub fn push_op(&mut self, value: Tensor, inputs: &[Var], op: Box<dyn Backward>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            op: requires_grad.then_some(op),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, NdError> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(NdError::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::ones(root_value.shape()));

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(grad_out) = grads[id].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = op.backward(&grad_out, &inputs, &node.value)?;
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
            for (input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                if g.shape() != self.nodes[input.0].value.shape() {
                    return Err(NdError::Contract(format!(
                        "{} produced gradient of shape {:?} for input of shape {:?}",
                        op.name(),
                        g.shape(),
                        self.nodes[input.0].value.shape()
                    )));
                }
                accumulate(&mut grads[input.0], g);
            }
            grads[id] = Some(grad_out);
        }

        // keep gradients only where they are meaningful
        for (id, g) in grads.iter_mut().enumerate() {
            if !self.nodes[id].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    *slot = Some(match slot.take() {
        None => g,
        Some(prev) => {
            let mut data = prev.into_data();
            for (d, v) in data.iter_mut().zip(g.data()) {
                *d += v;
            }
            Tensor::new(g.shape(), data).expect("same shape")
        }
    });
}

/// Result of [`Tape::backward`]: one gradient per node that requires one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}
