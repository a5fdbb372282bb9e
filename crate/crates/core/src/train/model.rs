use std::fmt;
use std::str::FromStr;

use crate::diff::{ExprGraph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::nn::{LeafCursor, MlpParams, Parameterized};
use crate::stable::{BatchField, StableDynamicsModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Stable,
    Naive,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Stable => "stable",
            ModelKind::Naive => "naive",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stable" => Ok(ModelKind::Stable),
            "naive" => Ok(ModelKind::Naive),
            other => Err(Error::contract(format!("unknown model kind '{other}'"))),
        }
    }
}

/// A learned vector field: either the projected stable model or the bare
/// nominal network used as a baseline.
#[derive(Clone, Debug, PartialEq)]
pub enum DynamicsModel {
    Stable(StableDynamicsModel),
    Naive(MlpParams),
}

impl DynamicsModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            DynamicsModel::Stable(_) => ModelKind::Stable,
            DynamicsModel::Naive(_) => ModelKind::Naive,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            DynamicsModel::Stable(m) => m.state_dim(),
            DynamicsModel::Naive(m) => m.input_dim(),
        }
    }

    pub fn as_stable(&self) -> Option<&StableDynamicsModel> {
        match self {
            DynamicsModel::Stable(m) => Some(m),
            DynamicsModel::Naive(_) => None,
        }
    }

    /// Adds the vector field for the `batch × n` node `x`. The second value
    /// is the projection argument for stable models.
    pub(crate) fn build(
        &self,
        graph: &mut ExprGraph,
        leaves: &[NodeId],
        x: NodeId,
    ) -> Result<(NodeId, Option<NodeId>)> {
        match self {
            DynamicsModel::Stable(m) => {
                let nodes = m.build(graph, leaves, x)?;
                Ok((nodes.f, Some(nodes.proj_arg)))
            }
            DynamicsModel::Naive(m) => Ok((m.build(graph, &mut LeafCursor::new(leaves), x)?, None)),
        }
    }

    pub fn compile(&self, rows: usize) -> Result<BatchField> {
        match self {
            DynamicsModel::Stable(m) => m.compile(rows),
            DynamicsModel::Naive(m) => BatchField::naive(m, rows),
        }
    }

    pub fn f_batch(&self, xs: &Tensor) -> Result<Tensor> {
        if xs.cols() != self.state_dim() {
            return Err(Error::shape(format!(
                "model state dim {}, got {}",
                self.state_dim(),
                xs.cols()
            )));
        }
        self.compile(xs.rows())?.eval(xs)
    }

    pub fn f(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.f_batch(&Tensor::row(x))?.into_vec())
    }
}

impl Parameterized for DynamicsModel {
    fn tensors(&self) -> Vec<&Tensor> {
        match self {
            DynamicsModel::Stable(m) => m.tensors(),
            DynamicsModel::Naive(m) => m.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            DynamicsModel::Stable(m) => m.tensors_mut(),
            DynamicsModel::Naive(m) => m.tensors_mut(),
        }
    }

    fn tensor_names(&self, prefix: &str) -> Vec<String> {
        match self {
            DynamicsModel::Stable(m) => m.tensor_names(prefix),
            DynamicsModel::Naive(m) => m.tensor_names(&format!("{prefix}fhat.")),
        }
    }
}
