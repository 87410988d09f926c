use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{invalid, Error, Result};
use crate::Shape;

/// Backward rule of one recorded op. Receives the node's gradient and output
/// data; writes into the parents' accumulators. Must never borrow the node it
/// belongs to (the engine holds that borrow while calling).
pub(crate) type BackwardFn = Box<dyn Fn(&[f32], &[f32])>;

pub(crate) struct Node {
    pub(crate) data: Vec<f32>,
    pub(crate) shape: Shape,
    pub(crate) grad: Option<Vec<f32>>,
    pub(crate) requires_grad: bool,
    pub(crate) parents: Vec<Tensor>,
    pub(crate) backward: Option<BackwardFn>,
}

/// Rank-4 dense f32 array with an optional gradient accumulator. Cloning is
/// cheap: clones share the same storage and graph node.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) node: Rc<RefCell<Node>>,
}

impl Tensor {
    pub fn from_vec(data: Vec<f32>, shape: Shape) -> Result<Tensor> {
        if data.len() != shape.numel() {
            return Err(invalid(
                "from_vec",
                format!("data length {} does not match shape {}", data.len(), shape),
            ));
        }
        Ok(Tensor::leaf(data, shape, false))
    }

    pub fn zeros(shape: Shape) -> Tensor {
        Tensor::leaf(vec![0.0; shape.numel()], shape, false)
    }

    pub fn full(shape: Shape, value: f32) -> Tensor {
        Tensor::leaf(vec![value; shape.numel()], shape, false)
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::leaf(vec![value], Shape::scalar(), false)
    }

    pub(crate) fn leaf(data: Vec<f32>, shape: Shape, requires_grad: bool) -> Tensor {
        Tensor {
            node: Rc::new(RefCell::new(Node {
                data,
                shape,
                grad: None,
                requires_grad,
                parents: Vec::new(),
                backward: None,
            })),
        }
    }

    /// Records the result of an op. The node requires grad iff any parent
    /// does; otherwise the backward rule and parent links are dropped so
    /// inference carries no graph.
    pub(crate) fn from_op(
        data: Vec<f32>,
        shape: Shape,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        debug_assert_eq!(data.len(), shape.numel());
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let (parents, backward) = if requires_grad {
            (parents, Some(backward))
        } else {
            (Vec::new(), None)
        };
        Tensor {
            node: Rc::new(RefCell::new(Node {
                data,
                shape,
                grad: None,
                requires_grad,
                parents,
                backward,
            })),
        }
    }

    pub fn shape(&self) -> Shape {
        self.node.borrow().shape
    }

    pub fn numel(&self) -> usize {
        self.node.borrow().shape.numel()
    }

    pub fn data(&self) -> Ref<'_, [f32]> {
        Ref::map(self.node.borrow(), |n| n.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.node.borrow().data.clone()
    }

    /// Scalar value of a 1x1x1x1 tensor.
    pub fn item(&self) -> f32 {
        let n = self.node.borrow();
        debug_assert!(n.shape.is_scalar());
        n.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, flag: bool) {
        self.node.borrow_mut().requires_grad = flag;
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.node.borrow().grad.clone()
    }

    pub fn has_grad(&self) -> bool {
        self.node.borrow().grad.is_some()
    }

    pub fn clear_grad(&self) {
        self.node.borrow_mut().grad = None;
    }

    /// Overwrites the stored values in place. The tensor keeps its identity in
    /// any graph built afterwards; callers must not mutate mid-graph.
    pub fn set_data(&self, data: &[f32]) {
        let mut n = self.node.borrow_mut();
        assert_eq!(data.len(), n.data.len(), "set_data: length mismatch");
        n.data.copy_from_slice(data);
    }

    pub fn add_to_data(&self, delta: &[f32]) {
        let mut n = self.node.borrow_mut();
        assert_eq!(delta.len(), n.data.len());
        for (d, x) in n.data.iter_mut().zip(delta) {
            *d += x;
        }
    }

    /// New leaf sharing no graph history with this tensor (data copied).
    pub fn detach(&self) -> Tensor {
        let n = self.node.borrow();
        Tensor::leaf(n.data.clone(), n.shape, false)
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f32]) {
        let mut n = self.node.borrow_mut();
        if !n.requires_grad {
            return;
        }
        debug_assert_eq!(delta.len(), n.data.len());
        match n.grad {
            Some(ref mut g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => n.grad = Some(delta.to_vec()),
        }
    }

    /// Like `accumulate_grad` but takes ownership, avoiding a copy when the
    /// accumulator is empty.
    pub(crate) fn accumulate_grad_owned(&self, delta: Vec<f32>) {
        let mut n = self.node.borrow_mut();
        if !n.requires_grad {
            return;
        }
        debug_assert_eq!(delta.len(), n.data.len());
        match n.grad {
            Some(ref mut g) => {
                for (gi, di) in g.iter_mut().zip(&delta) {
                    *gi += di;
                }
            }
            None => n.grad = Some(delta),
        }
    }

    fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.node) as usize
    }

    /// Reverse-mode pass from a scalar loss. Populates `grad` on every
    /// requires-grad tensor reachable through the graph; fan-out contributions
    /// accumulate additively.
    pub fn backward(&self) -> Result<()> {
        if !self.node.borrow().shape.is_scalar() {
            return Err(Error::NonScalarLoss(self.node.borrow().shape.to_string()));
        }
        self.backward_seeded(&[1.0])
    }

    /// Reverse-mode pass seeded with an explicit output gradient (same length
    /// as this tensor). Verification harnesses use it to probe arbitrary
    /// output shapes.
    pub fn backward_seeded(&self, seed: &[f32]) -> Result<()> {
        {
            let n = self.node.borrow();
            if seed.len() != n.shape.numel() {
                return Err(invalid(
                    "backward",
                    format!("seed length {} vs shape {}", seed.len(), n.shape),
                ));
            }
            if !n.requires_grad {
                return Err(invalid(
                    "backward",
                    "loss does not depend on any requires-grad tensor",
                ));
            }
        }

        // Iterative postorder DFS; only descends into requires-grad parents.
        let mut topo: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.ptr_id());
        while let Some((t, child_idx)) = stack.pop() {
            let next = {
                let n = t.node.borrow();
                n.parents
                    .iter()
                    .skip(child_idx)
                    .enumerate()
                    .find(|(_, p)| p.requires_grad() && !visited.contains(&p.ptr_id()))
                    .map(|(off, p)| (child_idx + off, p.clone()))
            };
            match next {
                Some((idx, parent)) => {
                    visited.insert(parent.ptr_id());
                    stack.push((t, idx + 1));
                    stack.push((parent, 0));
                }
                None => topo.push(t),
            }
        }

        self.node.borrow_mut().grad = Some(seed.to_vec());

        for t in topo.iter().rev() {
            let n = t.node.borrow();
            if let (Some(bw), Some(g)) = (n.backward.as_ref(), n.grad.as_ref()) {
                bw(g, &n.data);
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.node.borrow();
        write!(
            f,
            "Tensor({}, requires_grad={}, grad={})",
            n.shape,
            n.requires_grad,
            if n.grad.is_some() { "set" } else { "none" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::from_vec(vec![1.0; 5], Shape::new(1, 1, 2, 2)).is_err());
    }

    #[test]
    fn detach_breaks_history() {
        let x = Tensor::from_vec(vec![1.0, 2.0], Shape::new(1, 1, 1, 2)).unwrap();
        x.set_requires_grad(true);
        let y = crate::ops::mul(&x, &x).unwrap();
        let d = y.detach();
        assert!(!d.requires_grad());
        assert_eq!(d.to_vec(), vec![1.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::from_vec(vec![1.0, 2.0], Shape::new(1, 1, 1, 2)).unwrap();
        x.set_requires_grad(true);
        let y = crate::ops::mul(&x, &x).unwrap();
        assert!(matches!(y.backward(), Err(Error::NonScalarLoss(_))));
    }
}
