//! Reverse-mode autodiff tape.
//!
//! Operations append nodes in execution order, which is automatically
//! topological, so one reverse sweep visits every node exactly once and sums
//! gradients at fan-out points. A tape is a single-threaded unit of work;
//! create one per training step and drop it afterwards.

use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{NodeRef, Scalar, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Per-node backward rule: maps the output gradient to one optional gradient
/// per recorded input (None where no gradient flows).
type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Scalar> {
    inputs: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    /// Set on leaf nodes: where the final gradient is deposited.
    leaf: Option<Tensor<T>>,
    numel: usize,
}

pub struct Tape<T: Scalar> {
    id: u64,
    nodes: RefCell<Vec<Node<T>>>,
    enabled: bool,
    consumed: Cell<bool>,
    flops: Cell<u64>,
}

impl<T: Scalar> Tape<T> {
    /// A recording tape for training/backward passes.
    pub fn new() -> Self {
        Self::with_enabled(true)
    }

    /// A non-recording tape: ops run forward only and intermediate buffers are
    /// freed as soon as they go out of scope. Used for inference and
    /// finite-difference evaluations. FLOP counting still works.
    pub fn no_grad() -> Self {
        Self::with_enabled(false)
    }

    fn with_enabled(enabled: bool) -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            enabled,
            consumed: Cell::new(false),
            flops: Cell::new(0),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiply-accumulate-derived FLOPs recorded by conv/matmul/attention ops.
    pub fn flops(&self) -> u64 {
        self.flops.get()
    }

    pub(crate) fn add_flops(&self, n: u64) {
        self.flops.set(self.flops.get() + n);
    }

    /// Node index of `t` on this tape, registering it as a leaf if it is a
    /// `requires_grad` tensor seen for the first time. Returns None for
    /// constants (no gradient tracking needed).
    pub(crate) fn node_of(&self, t: &Tensor<T>) -> Option<usize> {
        if let Some(node) = t.node() {
            if node.tape_id == self.id {
                return Some(node.index);
            }
        }
        if t.requires_grad() {
            let index = self.push_node(Node {
                inputs: Vec::new(),
                backward: None,
                leaf: Some(t.clone()),
                numel: t.numel(),
            });
            t.set_node(Some(NodeRef { tape_id: self.id, index }));
            return Some(index);
        }
        None
    }

    /// Record one operation. `inputs` pairs each differentiable input with its
    /// node index (as returned by `node_of`); the backward fn receives the
    /// output gradient and must return one gradient slot per input, in order.
    /// No-op (and no tracking on the output) when the tape is not recording or
    /// no input is tracked.
    pub(crate) fn record(
        &self,
        output: &Tensor<T>,
        input_nodes: Vec<Option<usize>>,
        backward: BackwardFn<T>,
    ) {
        if !self.enabled || input_nodes.iter().all(Option::is_none) {
            return;
        }
        // Untracked slots stay in the node (usize::MAX) so the backward fn's
        // return layout matches positionally.
        let inputs: Vec<usize> = input_nodes.iter().map(|n| n.unwrap_or(usize::MAX)).collect();
        let index = self.push_node(Node {
            inputs,
            backward: Some(backward),
            leaf: None,
            numel: output.numel(),
        });
        output.set_node(Some(NodeRef { tape_id: self.id, index }));
    }

    fn push_node(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Run the reverse sweep from a scalar loss, depositing ∂loss/∂p into the
    /// grad slot of every reachable `requires_grad` leaf. Consumes the tape:
    /// a second backward on the same tape is an error.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<()> {
        if self.consumed.get() {
            return Err(Error::Autodiff("tape already consumed by a previous backward".into()));
        }
        if loss.numel() != 1 {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let root = match loss.node() {
            Some(node) if node.tape_id == self.id => node.index,
            Some(_) => return Err(Error::Autodiff("loss was recorded on a different tape".into())),
            None => return Err(Error::Autodiff("loss is not on the tape".into())),
        };
        self.consumed.set(true);

        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[root] = Some(vec![T::ONE]);

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            debug_assert_eq!(g.len(), nodes[i].numel);
            let node = &nodes[i];
            if let Some(leaf) = &node.leaf {
                leaf.accumulate_grad(&g);
            }
            if let Some(backward) = &node.backward {
                let input_grads = backward(&g);
                debug_assert_eq!(input_grads.len(), node.inputs.len());
                for (&slot, ig) in node.inputs.iter().zip(input_grads) {
                    let Some(ig) = ig else { continue };
                    if slot == usize::MAX {
                        continue;
                    }
                    match &mut grads[slot] {
                        Some(acc) => {
                            debug_assert_eq!(acc.len(), ig.len());
                            for (a, v) in acc.iter_mut().zip(ig) {
                                *a += v;
                            }
                        }
                        empty => *empty = Some(ig),
                    }
                }
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}
