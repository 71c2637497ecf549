//! Reverse sweep over the recorded graph.
//!
//! Ops are recorded implicitly: every tensor produced by a tracked op keeps
//! its inputs and a backward closure. [`Tape::record`] flattens the part of
//! that graph reachable from a root into execution order, which is simply
//! creation order since ids are handed out monotonically.

use std::collections::{HashMap, HashSet};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Ordered record of the tracked tensors reachable from one root.
pub struct Tape<E: Element> {
    nodes: Vec<Tensor<E>>,
}

impl<E: Element> Tape<E> {
    pub fn record(root: &Tensor<E>) -> Self {
        let mut seen = HashSet::new();
        let mut stack = vec![root.clone()];
        let mut nodes = Vec::new();
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(node) = t.node() {
                stack.extend(node.inputs.iter().cloned());
            }
            nodes.push(t);
        }
        nodes.sort_by_key(Tensor::id);
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Op names in execution order; leaves appear as `"leaf"`.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(Tensor::op_name).collect()
    }

    /// True when every op's inputs appear before the op itself.
    pub fn is_topological(&self) -> bool {
        let position: HashMap<u64, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id(), i))
            .collect();
        self.nodes.iter().enumerate().all(|(i, t)| {
            t.node().is_none_or(|n| {
                n.inputs
                    .iter()
                    .filter(|inp| inp.requires_grad())
                    .all(|inp| position.get(&inp.id()).is_some_and(|&p| p < i))
            })
        })
    }

    fn backward_from(&self, root: &Tensor<E>) {
        let mut pending: HashMap<u64, Vec<E>> = HashMap::new();
        pending.insert(root.id(), vec![E::one()]);
        for t in self.nodes.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            let Some(node) = t.node() else {
                t.accumulate_grad(&g);
                continue;
            };
            let input_grads = {
                let out = t.data();
                (node.backward)(&g, &node.inputs, &out)
            };
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.name);
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(ig.len(), input.numel(), "{} grad size", node.name);
                match pending.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a = *a + b),
                    None => {
                        pending.insert(input.id(), ig);
                    }
                }
            }
        }
    }
}

impl<E: Element> Tensor<E> {
    /// Accumulates `d self / d leaf` into every gradient-tracking leaf.
    ///
    /// Gradients add across calls; clear them with [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        Tape::record(self).backward_from(self);
        Ok(())
    }
}
