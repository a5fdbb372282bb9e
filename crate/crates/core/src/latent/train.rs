use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::synth::FrameSequence;
use super::vae::{LatentLossGraph, VaeParams};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::nn::Parameterized;
use crate::ode::DIVERGENCE_NORM;
use crate::train::{AdamState, DynamicsModel, ModelKind, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrainConfig {
    pub kind: ModelKind,
    pub latent_dim: usize,
    pub vae_hidden: Vec<usize>,
    pub fhat_hidden: Vec<usize>,
    pub icnn_hidden: Vec<usize>,
    pub alpha: f64,
    pub epsilon: f64,
    pub smooth_d: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Latent update is `z + step · f(z)`.
    pub step: f64,
    pub seed: u64,
}

impl Default for LatentTrainConfig {
    fn default() -> Self {
        LatentTrainConfig {
            kind: ModelKind::Stable,
            latent_dim: 8,
            vae_hidden: vec![64],
            fhat_hidden: vec![64, 64],
            icnn_hidden: vec![64, 64],
            alpha: 0.1,
            epsilon: 1e-3,
            smooth_d: 0.1,
            lr: 1e-3,
            batch_size: 32,
            epochs: 100,
            step: 1.0,
            seed: 0,
        }
    }
}

impl LatentTrainConfig {
    /// Settings of the latent dynamics network, as a supervised-training config.
    pub fn dynamics_config(&self) -> TrainConfig {
        TrainConfig {
            kind: self.kind,
            fhat_hidden: self.fhat_hidden.clone(),
            icnn_hidden: self.icnn_hidden.clone(),
            alpha: self.alpha,
            epsilon: self.epsilon,
            smooth_d: self.smooth_d,
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dynamics_config().validate()?;
        if self.latent_dim == 0 || self.vae_hidden.contains(&0) {
            return Err(Error::contract("latent dim and autoencoder widths must be at least 1"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::contract(format!(
                "latent step must be positive, got {}",
                self.step
            )));
        }
        Ok(())
    }

    /// Autoencoder and dynamics drawn in that order from one stream.
    pub fn init_model(&self, width: usize, height: usize, rng: &mut ChaCha8Rng) -> Result<LatentModel> {
        self.validate()?;
        let vae = VaeParams::random(width, height, self.latent_dim, &self.vae_hidden, rng)?;
        let dynamics = self.dynamics_config().init_model(self.latent_dim, rng)?;
        Ok(LatentModel { vae, dynamics })
    }
}

/// Autoencoder plus the dynamics that act on its latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentModel {
    pub vae: VaeParams,
    pub dynamics: DynamicsModel,
}

impl Parameterized for LatentModel {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = self.vae.tensors();
        out.extend(self.dynamics.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.vae.tensors_mut();
        out.extend(self.dynamics.tensors_mut());
        out
    }

    fn tensor_names(&self, prefix: &str) -> Vec<String> {
        let mut out = self.vae.tensor_names(&format!("{prefix}vae."));
        out.extend(self.dynamics.tensor_names(&format!("{prefix}dyn.")));
        out
    }
}

/// Consecutive frame pairs `(y_t, y_{t+1})` pooled over sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePairs {
    pub now: Tensor,
    pub next: Tensor,
    pub width: usize,
    pub height: usize,
}

impl FramePairs {
    pub fn from_sequences(seqs: &[FrameSequence]) -> Result<Self> {
        let first = seqs.first().ok_or_else(|| Error::contract("no sequences given"))?;
        let (width, height) = (first.width, first.height);
        let mut now = Vec::new();
        let mut next = Vec::new();
        for s in seqs {
            if (s.width, s.height) != (width, height) {
                return Err(Error::shape(format!(
                    "mixed frame shapes {width}×{height} and {}×{}",
                    s.width, s.height
                )));
            }
            for t in 0..s.len().saturating_sub(1) {
                now.push(s.frame(t));
                next.push(s.frame(t + 1));
            }
        }
        if now.is_empty() {
            return Err(Error::contract("sequences hold no consecutive frames"));
        }
        Ok(FramePairs {
            now: Tensor::from_rows(&now)?,
            next: Tensor::from_rows(&next)?,
            width,
            height,
        })
    }

    pub fn len(&self) -> usize {
        self.now.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.now.rows() == 0
    }
}

fn gather_rows(src: &Tensor, idx: &[usize]) -> Tensor {
    let mut rows = Vec::with_capacity(idx.len());
    for &i in idx {
        rows.push(src.row_slice(i));
    }
    Tensor::from_rows(&rows).expect("consistent sizes")
}

fn normal_noise(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_vec(rows, cols, data).expect("consistent sizes")
}

fn check_pairs(model: &LatentModel, pairs: &FramePairs) -> Result<()> {
    if pairs.now.cols() != model.vae.pixels() {
        return Err(Error::shape(format!(
            "model expects {} pixels, frames have {}",
            model.vae.pixels(),
            pairs.now.cols()
        )));
    }
    Ok(())
}

/// Batch-mean joint loss for the given noise draw.
pub fn latent_loss(model: &LatentModel, pairs: &FramePairs, noise: &Tensor, step: f64) -> Result<f64> {
    check_pairs(model, pairs)?;
    let lg = LatentLossGraph::new(&model.vae, &model.dynamics, pairs.len(), step)?;
    let b = lg.binding(&model.vae, &model.dynamics, &pairs.now, &pairs.next, noise);
    lg.graph.eval(&b, lg.loss)?.item()
}

#[derive(Clone, Debug)]
pub struct LatentFitOutcome {
    pub model: LatentModel,
    /// Mean training loss of each completed epoch.
    pub history: Vec<f64>,
    /// Full-dataset loss before training, under a fixed noise draw.
    pub initial_loss: f64,
    /// Full-dataset loss after training, under the same noise draw.
    pub final_loss: f64,
    pub aborted_at_epoch: Option<usize>,
}

/// Trains a fresh model on consecutive frame pairs with one noise sample
/// per pair per step.
pub fn fit_latent<F>(config: &LatentTrainConfig, pairs: &FramePairs, mut observer: F) -> Result<LatentFitOutcome>
where
    F: FnMut(usize, f64),
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = config.init_model(pairs.width, pairs.height, &mut rng)?;
    let eval_noise = normal_noise(
        pairs.len(),
        config.latent_dim,
        &mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed),
    );
    let initial_loss = latent_loss(&model, pairs, &eval_noise, config.step)?;

    let mut graphs: HashMap<usize, LatentLossGraph> = HashMap::new();
    let mut opt = AdamState::new(&model.tensors());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut last_good = model.clone();
    let mut aborted_at_epoch = None;

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let now = gather_rows(&pairs.now, chunk);
            let next = gather_rows(&pairs.next, chunk);
            let noise = normal_noise(chunk.len(), config.latent_dim, &mut rng);
            let lg = match graphs.entry(chunk.len()) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(LatentLossGraph::new(
                    &model.vae,
                    &model.dynamics,
                    chunk.len(),
                    config.step,
                )?),
            };
            let b = lg.binding(&model.vae, &model.dynamics, &now, &next, &noise);
            let (loss, grads) = lg.graph.value_and_grad(&b, lg.loss, &lg.leaves)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                aborted_at_epoch = Some(epoch);
                model = last_good.clone();
                break 'epochs;
            }
            total += loss * chunk.len() as f64;
            opt.adam_step(model.tensors_mut(), &grads, config.lr)?;
        }
        let mean = total / pairs.len() as f64;
        history.push(mean);
        last_good = model.clone();
        observer(epoch, mean);
    }
    let final_loss = latent_loss(&model, pairs, &eval_noise, config.step)?;
    Ok(LatentFitOutcome {
        model,
        history,
        initial_loss,
        final_loss,
        aborted_at_epoch,
    })
}

/// Latent rollout seeded from one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    /// Decoded frames `d(z_0), d(z_1), …`.
    pub frames: FrameSequence,
    /// `(steps + 1) × n` latent states, truncated at divergence.
    pub latents: Tensor,
    pub norms: Vec<f64>,
    /// Step whose latent left the finite region or the divergence guard.
    pub diverged_at: Option<usize>,
}

impl Texture {
    pub fn max_norm(&self) -> f64 {
        self.norms.iter().copied().fold(0.0, f64::max)
    }
}

/// `z₀ = μ(e(y₀))`, then `z ← z + step · f(z)` for `steps` steps, decoding
/// each latent. Stops early if the latent norm exceeds the divergence guard.
pub fn generate_texture(model: &LatentModel, y0: &[f64], steps: usize, step: f64) -> Result<Texture> {
    if steps == 0 {
        return Err(Error::contract("generation needs at least one step"));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::contract(format!("latent step must be positive, got {step}")));
    }
    if model.dynamics.state_dim() != model.vae.latent_dim() {
        return Err(Error::shape("dynamics and latent dimensions differ"));
    }
    let z0 = model.vae.encode_mean(&Tensor::row(y0))?.into_vec();
    let mut field = model.dynamics.compile(1)?;
    let norm = |z: &[f64]| z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut norms = vec![norm(&z0)];
    let mut latents = vec![z0];
    let mut diverged_at = None;
    for t in 1..=steps {
        let z = latents.last().expect("seeded");
        let f = field.eval(&Tensor::row(z))?;
        let next: Vec<f64> = z.iter().zip(f.as_slice()).map(|(a, b)| a + step * b).collect();
        let n = norm(&next);
        if !n.is_finite() || n > DIVERGENCE_NORM {
            diverged_at = Some(t);
            break;
        }
        norms.push(n);
        latents.push(next);
    }
    let latents = Tensor::from_rows(&latents)?;
    let decoded = model.vae.decode(&latents)?;
    let frames = FrameSequence::new(decoded, model.vae.width, model.vae.height, Vec::new())?;
    Ok(Texture {
        frames,
        latents,
        norms,
        diverged_at,
    })
}
