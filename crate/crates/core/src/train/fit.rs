use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::model::{DynamicsModel, ModelKind};
use crate::diff::{Binding, ExprGraph, NodeId, Shape, Tensor};
use crate::error::{Error, Result};
use crate::nn::Parameterized;
use crate::pendulum::StatePairs;
use crate::stable::{StableDynamicsModel, StableModelSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub fhat_hidden: Vec<usize>,
    pub icnn_hidden: Vec<usize>,
    pub alpha: f64,
    pub epsilon: f64,
    pub smooth_d: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::Stable,
            fhat_hidden: vec![100, 100],
            icnn_hidden: vec![60, 60],
            alpha: 0.1,
            epsilon: 1e-3,
            smooth_d: 0.1,
            lr: 1e-3,
            batch_size: 256,
            epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lr", self.lr), ("epsilon", self.epsilon), ("smooth-d", self.smooth_d)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::contract(format!(
                "alpha must be nonnegative, got {}",
                self.alpha
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::contract("batch size and epochs must be at least 1"));
        }
        if self.fhat_hidden.contains(&0) || self.icnn_hidden.contains(&0) {
            return Err(Error::contract("layer widths must be at least 1"));
        }
        Ok(())
    }

    pub fn model_spec(&self, state_dim: usize) -> StableModelSpec {
        StableModelSpec {
            state_dim,
            fhat_hidden: self.fhat_hidden.clone(),
            icnn_hidden: self.icnn_hidden.clone(),
            alpha: self.alpha,
            epsilon: self.epsilon,
            smooth_d: self.smooth_d,
        }
    }

    /// Freshly initialised model; both kinds draw `f̂` from the same stream,
    /// so a naive and a stable model with one seed share their nominal network.
    pub fn init_model(&self, state_dim: usize, rng: &mut ChaCha8Rng) -> Result<DynamicsModel> {
        self.validate()?;
        let spec = self.model_spec(state_dim);
        let stable = StableDynamicsModel::random(&spec, rng)?;
        Ok(match self.kind {
            ModelKind::Stable => DynamicsModel::Stable(stable),
            ModelKind::Naive => DynamicsModel::Naive(stable.fhat),
        })
    }
}

/// Mean-squared-error training graph for one batch size.
pub(crate) struct LossGraph {
    graph: ExprGraph,
    leaves: Vec<NodeId>,
    x: NodeId,
    target: NodeId,
    loss: NodeId,
}

impl LossGraph {
    pub(crate) fn new(model: &DynamicsModel, rows: usize) -> Result<Self> {
        if rows == 0 {
            return Err(Error::contract("loss needs a non-empty batch"));
        }
        let n = model.state_dim();
        let mut graph = ExprGraph::new();
        let leaves = model.declare(&mut graph);
        let x = graph.input(Shape::new(rows, n));
        let target = graph.input(Shape::new(rows, n));
        let (f, _) = model.build(&mut graph, &leaves, x)?;
        let residual = graph.sub(f, target)?;
        let sq = graph.sum_sq(residual)?;
        let loss = graph.scale(sq, 1.0 / rows as f64)?;
        graph.mark_output(loss);
        Ok(LossGraph {
            graph,
            leaves,
            x,
            target,
            loss,
        })
    }

    fn binding(&self, model: &DynamicsModel, states: &Tensor, derivs: &Tensor) -> Binding {
        let mut b = Binding::new();
        model.bind(&mut b, &self.leaves);
        b.bind(self.x, states.clone());
        b.bind(self.target, derivs.clone());
        b
    }

    pub(crate) fn value_and_grad(
        &self,
        model: &DynamicsModel,
        states: &Tensor,
        derivs: &Tensor,
    ) -> Result<(f64, Vec<Tensor>)> {
        let b = self.binding(model, states, derivs);
        self.graph.value_and_grad(&b, self.loss, &self.leaves)
    }

    #[cfg(test)]
    fn parts(&self) -> (&ExprGraph, &[NodeId], NodeId) {
        (&self.graph, &self.leaves, self.loss)
    }

    #[cfg(test)]
    fn bind_all(&self, model: &DynamicsModel, states: &Tensor, derivs: &Tensor) -> Binding {
        self.binding(model, states, derivs)
    }
}

fn check_batch(model: &DynamicsModel, states: &Tensor, derivs: &Tensor) -> Result<()> {
    if states.rows() == 0 {
        return Err(Error::contract("loss needs a non-empty batch"));
    }
    if states.shape() != derivs.shape() || states.cols() != model.state_dim() {
        return Err(Error::shape(format!(
            "model dim {}, states {}, targets {}",
            model.state_dim(),
            states.shape(),
            derivs.shape()
        )));
    }
    Ok(())
}

/// Mean over the batch of `‖f(x) − ẋ‖²`.
pub fn mse_loss(model: &DynamicsModel, states: &Tensor, derivs: &Tensor) -> Result<f64> {
    mse_loss_and_grad(model, states, derivs).map(|(l, _)| l)
}

/// [`mse_loss`] and its gradient for every model tensor.
pub fn mse_loss_and_grad(model: &DynamicsModel, states: &Tensor, derivs: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    check_batch(model, states, derivs)?;
    LossGraph::new(model, states.rows())?.value_and_grad(model, states, derivs)
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: DynamicsModel,
    /// Mean training loss of each completed epoch.
    pub history: Vec<f64>,
    /// Set when a non-finite loss or gradient stopped training; `model` is then
    /// the last parameters that produced finite values.
    pub aborted_at_epoch: Option<usize>,
}

fn gather_rows(src: &Tensor, idx: &[usize]) -> Tensor {
    let cols = src.cols();
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        data.extend_from_slice(src.row_slice(i));
    }
    Tensor::from_vec(idx.len(), cols, data).expect("consistent sizes")
}

/// Trains a freshly initialised model on `data`.
pub fn fit(config: &TrainConfig, data: &StatePairs) -> Result<FitOutcome> {
    fit_with(config, data, |_, _, _| {})
}

/// [`fit`] with an observer called after every epoch with
/// `(epoch, model, mean loss)`.
pub fn fit_with<F>(config: &TrainConfig, data: &StatePairs, observer: F) -> Result<FitOutcome>
where
    F: FnMut(usize, &DynamicsModel, f64),
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = config.init_model(data.state_dim(), &mut rng)?;
    train_model(
        model,
        config,
        data.states.clone(),
        data.derivs.clone(),
        &mut rng,
        observer,
    )
}

/// Shuffled mini-batch Adam on `(states, derivs)` rows, starting from `model`.
pub fn train_model<F>(
    mut model: DynamicsModel,
    config: &TrainConfig,
    states: Tensor,
    derivs: Tensor,
    rng: &mut ChaCha8Rng,
    mut observer: F,
) -> Result<FitOutcome>
where
    F: FnMut(usize, &DynamicsModel, f64),
{
    config.validate()?;
    check_batch(&model, &states, &derivs)?;
    let count = states.rows();
    let mut graphs: HashMap<usize, LossGraph> = HashMap::new();
    let mut opt = AdamState::new(&model.tensors());
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..count).collect();
    let mut last_good = model.clone();

    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let xs = gather_rows(&states, chunk);
            let ys = gather_rows(&derivs, chunk);
            let lg = match graphs.entry(chunk.len()) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(LossGraph::new(&model, chunk.len())?),
            };
            let (loss, grads) = lg.value_and_grad(&model, &xs, &ys)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Ok(FitOutcome {
                    model: last_good,
                    history,
                    aborted_at_epoch: Some(epoch),
                });
            }
            total += loss * chunk.len() as f64;
            opt.adam_step(model.tensors_mut(), &grads, config.lr)?;
        }
        let mean = total / count as f64;
        history.push(mean);
        last_good = model.clone();
        observer(epoch, &model, mean);
    }
    Ok(FitOutcome {
        model,
        history,
        aborted_at_epoch: None,
    })
}
