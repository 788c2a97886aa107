use std::collections::{HashMap, HashSet};

use super::{Scalar, Tensor};

/// Topologically ordered view of the operations reachable from a root.
///
/// Inputs always precede the tensors computed from them, so walking the
/// order backwards visits each node after all of its consumers.
pub struct Graph<T: Scalar> {
    order: Vec<Tensor<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn build(root: &Tensor<T>) -> Self {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        // Iterative post-order DFS: (tensor, children pushed?)
        let mut stack = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for input in node.inputs.iter().rev() {
                    if input.requires_grad() && !seen.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        Graph { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Tensor ids in topological order (inputs first).
    pub fn ids(&self) -> Vec<usize> {
        self.order.iter().map(|t| t.id()).collect()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.order.iter().filter(|t| t.is_leaf())
    }

    /// Seeds the root gradient with one and replays every backward rule.
    /// Returns the ids in the order they were visited.
    pub(crate) fn run_backward(&self, root: &Tensor<T>) -> Vec<usize> {
        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(root.id(), vec![T::one(); root.len()]);
        let mut visited = Vec::with_capacity(self.order.len());
        for t in self.order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            visited.push(t.id());
            match &t.0.node {
                None => t.accumulate_grad(&g),
                Some(node) => {
                    let grads = (node.backward)(&g);
                    debug_assert_eq!(grads.len(), node.inputs.len(), "backward arity of {}", node.op);
                    for (input, grad) in node.inputs.iter().zip(grads) {
                        let Some(grad) = grad else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(grad.len(), input.len(), "gradient size from {}", node.op);
                        match pending.get_mut(&input.id()) {
                            Some(acc) => {
                                for (a, v) in acc.iter_mut().zip(grad) {
                                    *a += v;
                                }
                            }
                            None => {
                                pending.insert(input.id(), grad);
                            }
                        }
                    }
                }
            }
        }
        visited
    }
}
