use crate::diff::{Binding, ExprGraph, NodeId, Tensor};
use crate::error::{Error, Result};

/// A container of trainable tensors with a fixed visit order.
///
/// The order is shared by graph leaves, optimizer state and checkpoints.
pub trait Parameterized {
    fn tensors(&self) -> Vec<&Tensor>;

    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    /// Names matching [`Parameterized::tensors`], prefixed with `prefix`.
    fn tensor_names(&self, prefix: &str) -> Vec<String>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Adds one free leaf per tensor to `graph`.
    fn declare(&self, graph: &mut ExprGraph) -> Vec<NodeId> {
        self.tensors().iter().map(|t| graph.input(t.shape())).collect()
    }

    fn bind(&self, binding: &mut Binding, leaves: &[NodeId]) {
        for (id, t) in leaves.iter().zip(self.tensors()) {
            binding.bind(*id, t.clone());
        }
    }

    /// Replaces every tensor, checking shapes.
    fn assign(&mut self, values: &[Tensor]) -> Result<()> {
        let mut slots = self.tensors_mut();
        if slots.len() != values.len() {
            return Err(Error::shape(format!(
                "expected {} tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::shape(format!(
                    "parameter shape {} cannot take {}",
                    slot.shape(),
                    v.shape()
                )));
            }
        }
        for (slot, v) in slots.into_iter().zip(values) {
            slot.clone_from(v);
        }
        Ok(())
    }
}

/// Sequential reader over a slice of leaf ids.
pub(crate) struct LeafCursor<'a> {
    leaves: &'a [NodeId],
    pos: usize,
}

impl<'a> LeafCursor<'a> {
    pub(crate) fn new(leaves: &'a [NodeId]) -> Self {
        LeafCursor { leaves, pos: 0 }
    }

    pub(crate) fn next(&mut self) -> Result<NodeId> {
        let id = self
            .leaves
            .get(self.pos)
            .copied()
            .ok_or_else(|| Error::contract("fewer parameter leaves than tensors"))?;
        self.pos += 1;
        Ok(id)
    }
}
