//! Reverse-mode automatic differentiation over `ndarray` tensors.
//!
//! Every backward rule is itself written in terms of differentiable
//! operations, so gradients can be differentiated again. The gradient
//! penalty of the critic needs this: its value depends on an input
//! gradient, and its parameter gradient is a second derivative.
//!
//! Graphs are reference counted and single threaded. A [`Var`] keeps its
//! whole history alive until it is dropped.

mod conv;
mod ops;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};

pub use conv::{conv2d, conv2d_input_grad, conv2d_weight_grad, conv_out_dim, ConvGeometry};
pub use ops::{concat_channels, max_pool2d};

/// Dense real tensor used for all values and gradients.
pub type Tensor = ArrayD<f64>;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

struct GradModeGuard(bool);

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.0));
    }
}

fn set_grad_mode(enabled: bool) -> GradModeGuard {
    let prev = GRAD_ENABLED.with(|c| c.replace(enabled));
    GradModeGuard(prev)
}

/// Runs `f` without recording any operations.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = set_grad_mode(false);
    f()
}

/// Backward rule of a recorded operation.
pub(crate) trait Backward {
    fn name(&self) -> &'static str;

    /// Gradients for each parent given the gradient of the output.
    /// `None` means the parent receives no gradient from this path.
    fn backward(&self, out: &Var, parents: &[Var], grad: &Var) -> Vec<Option<Var>>;
}

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    op: Option<Box<dyn Backward>>,
    parents: Vec<Var>,
}

/// A node in the computation graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.op.as_ref().map(|o| o.name()))
            .finish()
    }
}

impl Var {
    /// A value that never receives gradients.
    pub fn constant(value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: false,
            op: None,
            parents: Vec::new(),
        }))
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn leaf(value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            op: None,
            parents: Vec::new(),
        }))
    }

    pub fn scalar(v: f64) -> Var {
        Var::constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub(crate) fn from_op(value: Tensor, op: impl Backward + 'static, parents: Vec<Var>) -> Var {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Var(Rc::new(Node {
                id: next_id(),
                value,
                requires_grad: true,
                op: Some(Box::new(op)),
                parents,
            }))
        } else {
            Var::constant(value)
        }
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

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Copy of the value cut off from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    /// Value of a zero-dimensional (or single element) tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.0.value.len(), 1);
        self.0.value.iter().next().copied().unwrap_or(f64::NAN)
    }
}

fn topo_order(root: &Var) -> Vec<Var> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    // (node, children expanded)
    let mut stack = vec![(root.clone(), false)];
    while let Some((v, expanded)) = stack.pop() {
        if expanded {
            order.push(v);
            continue;
        }
        if !v.requires_grad() || !visited.insert(v.id()) {
            continue;
        }
        stack.push((v.clone(), true));
        for p in &v.0.parents {
            if p.requires_grad() && !visited.contains(&p.id()) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

/// Gradients of `output` (summed over its elements) with respect to `inputs`.
///
/// With `create_graph` the returned gradients are themselves part of the
/// graph and can be differentiated further. Inputs that `output` does not
/// depend on receive zeros.
pub fn grad(output: &Var, inputs: &[&Var], create_graph: bool) -> Vec<Var> {
    let seed = Var::constant(ArrayD::ones(IxDyn(output.shape())));
    grad_with(output, seed, inputs, create_graph)
}

/// Vector-Jacobian product of `output` with `seed`.
pub fn grad_with(output: &Var, seed: Var, inputs: &[&Var], create_graph: bool) -> Vec<Var> {
    let _guard = set_grad_mode(create_graph);
    let mut grads: HashMap<u64, Var> = HashMap::new();
    if output.requires_grad() {
        grads.insert(output.id(), seed);
        let order = topo_order(output);
        for node in order.iter().rev() {
            let Some(op) = node.0.op.as_ref() else {
                continue;
            };
            let Some(g) = grads.get(&node.id()).cloned() else {
                continue;
            };
            let parent_grads = op.backward(node, &node.0.parents, &g);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len());
            for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.shape(), parent.shape(), "gradient shape for {}", op.name());
                let acc = match grads.remove(&parent.id()) {
                    Some(prev) => prev.add(&pg),
                    None => pg,
                };
                grads.insert(parent.id(), acc);
            }
        }
    }
    inputs
        .iter()
        .map(|v| {
            grads
                .get(&v.id())
                .cloned()
                .unwrap_or_else(|| Var::constant(ArrayD::zeros(IxDyn(v.shape()))))
        })
        .collect()
}
