use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{Result, TensorError};
use crate::ops::Op;

thread_local! {
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

/// While alive, operations on the current thread do not record graph nodes.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    pub fn new() -> Self {
        let prev = NO_GRAD.with(|c| c.replace(true));
        NoGradGuard { prev }
    }
}

impl Default for NoGradGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        NO_GRAD.with(|c| c.set(self.prev));
    }
}

pub(crate) fn grad_enabled() -> bool {
    !NO_GRAD.with(|c| c.get())
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) parents: Vec<Tensor>,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    node: Mutex<Option<Node>>,
}

/// Dense row-major `f64` array with an optional link into the computation
/// graph that produced it.
///
/// Cloning is cheap and shares storage; the data itself is never mutated
/// after construction. Gradients accumulate in place across `backward` calls
/// until [`Tensor::zero_grad`] is called.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("data", &preview)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn check_shape(op: &'static str, shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(TensorError::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "dimensions must be positive".into(),
        });
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(TensorError::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: format!("expected {numel} elements, got {len}"),
        });
    }
    Ok(())
}

impl Tensor {
    fn from_parts(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        Tensor(Arc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node: Mutex::new(node),
        }))
    }

    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_shape("new", shape, data.len())?;
        Ok(Self::from_parts(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that collects gradients.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_shape("param", shape, data.len())?;
        Ok(Self::from_parts(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(vec![0.0; n], shape).expect("zeros: positive shape")
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::new(vec![value; n], shape).expect("full: positive shape")
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value], false, None)
    }

    /// Row-major 2-D tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::InvalidShape {
                op: "from_rows",
                shape: vec![rows.len(), cols],
                reason: "ragged rows".into(),
            });
        }
        Self::new(rows.concat(), &[rows.len(), cols])
    }

    /// Result of an operation: links to `parents` when any of them needs a
    /// gradient and recording is enabled.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op, parents: Vec<Tensor>) -> Self {
        let requires_grad = grad_enabled() && parents.iter().any(Tensor::requires_grad);
        let node = requires_grad.then(|| Node { op, parents });
        Self::from_parts(shape, data, requires_grad, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = *self.0.shape.last().expect("rank >= 1");
        &self.0.data[r * cols..(r + 1) * cols]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    /// Copy of the data with no graph link and no gradient requirement.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Fresh leaf with the same data that collects gradients.
    pub fn detach_param(&self) -> Tensor {
        Self::from_parts(self.0.shape.clone(), self.0.data.clone(), true, None)
    }

    pub fn has_graph(&self) -> bool {
        self.0.node.lock().expect("node lock").is_some()
    }

    fn key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    fn accumulate_grad(&self, g: Vec<f64>) {
        let mut slot = self.0.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Populates `grad` on every reachable tensor that requires one and frees
    /// the graph behind `self`. Gradients add onto whatever was stored before.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape().to_vec(),
            });
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
        pending.insert(self.key(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.key()) else {
                continue;
            };
            let node = t.0.node.lock().expect("node lock").take();
            if let Some(node) = node {
                let parent_grads = node.op.vjp(&node.parents, t, &g);
                for (p, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !p.requires_grad() {
                        continue;
                    }
                    match pending.get_mut(&p.key()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(p.key(), pg);
                        }
                    }
                }
            }
            t.accumulate_grad(g);
        }
        Ok(())
    }

    /// Parents before children; every tensor appears once.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.0.node.lock().expect("node lock").as_ref() {
                for p in &node.parents {
                    if p.requires_grad() && !seen.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl Drop for Inner {
    // Unlink long parent chains iteratively so deep graphs do not overflow
    // the stack through recursive Arc drops.
    fn drop(&mut self) {
        let mut stack: Vec<Tensor> = match self.node.get_mut().ok().and_then(Option::take) {
            Some(node) => node.parents,
            None => return,
        };
        while let Some(t) = stack.pop() {
            if let Ok(mut inner) = Arc::try_unwrap(t.0) {
                if let Some(node) = inner.node.get_mut().ok().and_then(Option::take) {
                    stack.extend(node.parents);
                }
            }
        }
    }
}
