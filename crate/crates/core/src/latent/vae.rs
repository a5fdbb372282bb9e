use rand::Rng;

use crate::diff::{Binding, ExprGraph, NodeId, Shape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{Activation, LeafCursor, MlpParams, Parameterized};
use crate::train::DynamicsModel;

/// Fully connected variational autoencoder over flattened frames.
///
/// The encoder maps a frame to `(μ, log σ²)` stacked in one `2n` vector; the
/// decoder maps a latent to pixel logits that are squashed by a sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub width: usize,
    pub height: usize,
}

/// Per-frame result of [`vae_forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct VaeOutput {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Vec<f64>,
    pub recon: Vec<f64>,
}

impl VaeParams {
    pub fn new(encoder: MlpParams, decoder: MlpParams, width: usize, height: usize) -> Result<Self> {
        let pixels = width * height;
        let n = decoder.input_dim();
        if encoder.input_dim() != pixels || decoder.output_dim() != pixels {
            return Err(Error::shape(format!(
                "encoder takes {} and decoder emits {} values for {width}×{height} frames",
                encoder.input_dim(),
                decoder.output_dim()
            )));
        }
        if encoder.output_dim() != 2 * n {
            return Err(Error::shape(format!(
                "encoder emits {} values for latent dim {n}; expected {}",
                encoder.output_dim(),
                2 * n
            )));
        }
        Ok(VaeParams {
            encoder,
            decoder,
            width,
            height,
        })
    }

    /// Encoder `P → hidden… → 2n`, decoder `n → reversed hidden… → P`.
    pub fn random<R: Rng + ?Sized>(
        width: usize,
        height: usize,
        latent_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let pixels = width * height;
        let mut enc = vec![pixels];
        enc.extend_from_slice(hidden);
        enc.push(2 * latent_dim);
        let mut dec = vec![latent_dim];
        dec.extend(hidden.iter().rev());
        dec.push(pixels);
        VaeParams::new(
            MlpParams::random(&enc, Activation::Relu, rng)?,
            MlpParams::random(&dec, Activation::Relu, rng)?,
            width,
            height,
        )
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    fn split_leaves<'a>(&self, leaves: &'a [NodeId]) -> (&'a [NodeId], &'a [NodeId]) {
        leaves.split_at(self.encoder.tensors().len())
    }

    /// `(μ, log σ²)` nodes for a `batch × P` frame node.
    pub(crate) fn build_encoder(
        &self,
        graph: &mut ExprGraph,
        leaves: &[NodeId],
        y: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let (enc, _) = self.split_leaves(leaves);
        let out = self.encoder.build(graph, &mut LeafCursor::new(enc), y)?;
        let n = self.latent_dim();
        let mut pick_mu = Tensor::zeros(Shape::new(2 * n, n));
        let mut pick_lv = Tensor::zeros(Shape::new(2 * n, n));
        for i in 0..n {
            pick_mu.set(i, i, 1.0);
            pick_lv.set(n + i, i, 1.0);
        }
        let pick_mu = graph.constant(pick_mu);
        let pick_lv = graph.constant(pick_lv);
        Ok((graph.matmul(out, pick_mu)?, graph.matmul(out, pick_lv)?))
    }

    /// Squashed reconstruction for a `batch × n` latent node.
    pub(crate) fn build_decoder(&self, graph: &mut ExprGraph, leaves: &[NodeId], z: NodeId) -> Result<NodeId> {
        let (_, dec) = self.split_leaves(leaves);
        let logits = self.decoder.build(graph, &mut LeafCursor::new(dec), z)?;
        graph.sigmoid(logits)
    }

    fn check_frames(&self, ys: &Tensor) -> Result<()> {
        if ys.cols() != self.pixels() {
            return Err(Error::shape(format!(
                "expected {} pixels per frame, got {}",
                self.pixels(),
                ys.cols()
            )));
        }
        Ok(())
    }

    /// Encoder means for each frame row.
    pub fn encode_mean(&self, ys: &Tensor) -> Result<Tensor> {
        self.check_frames(ys)?;
        let mut g = ExprGraph::new();
        let leaves = self.declare(&mut g);
        let y = g.input(ys.shape());
        let (mu, _) = self.build_encoder(&mut g, &leaves, y)?;
        let mut b = Binding::new();
        self.bind(&mut b, &leaves);
        b.bind(y, ys.clone());
        g.eval(&b, mu)
    }

    /// Decoded frames for each latent row.
    pub fn decode(&self, zs: &Tensor) -> Result<Tensor> {
        if zs.cols() != self.latent_dim() {
            return Err(Error::shape(format!(
                "expected latent dim {}, got {}",
                self.latent_dim(),
                zs.cols()
            )));
        }
        let mut g = ExprGraph::new();
        let leaves = self.declare(&mut g);
        let z = g.input(zs.shape());
        let out = self.build_decoder(&mut g, &leaves, z)?;
        let mut b = Binding::new();
        self.bind(&mut b, &leaves);
        b.bind(z, zs.clone());
        g.eval(&b, out)
    }
}

impl Parameterized for VaeParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = self.encoder.tensors();
        out.extend(self.decoder.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.decoder.tensors_mut());
        out
    }

    fn tensor_names(&self, prefix: &str) -> Vec<String> {
        let mut out = self.encoder.tensor_names(&format!("{prefix}encoder."));
        out.extend(self.decoder.tensor_names(&format!("{prefix}decoder.")));
        out
    }
}

/// `KL(N(μ, diag σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − log σ² − 1)`.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(Error::shape(format!(
            "{} means for {} log-variances",
            mu.len(),
            logvar.len()
        )));
    }
    Ok(0.5
        * mu.iter()
            .zip(logvar)
            .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
            .sum::<f64>())
}

/// Encodes `y`, draws `z = μ + exp(½ log σ²) ⊙ noise` and decodes it.
pub fn vae_forward(params: &VaeParams, y: &[f64], noise: &[f64]) -> Result<VaeOutput> {
    let n = params.latent_dim();
    if y.len() != params.pixels() || noise.len() != n {
        return Err(Error::shape(format!(
            "expected a {}-pixel frame and {n} noise values, got {} and {}",
            params.pixels(),
            y.len(),
            noise.len()
        )));
    }
    let mut g = ExprGraph::new();
    let leaves = params.declare(&mut g);
    let yi = g.input(Shape::new(1, y.len()));
    let ni = g.input(Shape::new(1, n));
    let (mu, logvar) = params.build_encoder(&mut g, &leaves, yi)?;
    let z = sample_latent(&mut g, mu, logvar, ni)?;
    let recon = params.build_decoder(&mut g, &leaves, z)?;
    let mut b = Binding::new();
    params.bind(&mut b, &leaves);
    b.bind(yi, Tensor::row(y));
    b.bind(ni, Tensor::row(noise));
    let vals = g.eval_many(&b, &[mu, logvar, z, recon])?;
    let mut it = vals.into_iter().map(Tensor::into_vec);
    Ok(VaeOutput {
        mu: it.next().expect("four outputs"),
        logvar: it.next().expect("four outputs"),
        z: it.next().expect("four outputs"),
        recon: it.next().expect("four outputs"),
    })
}

fn sample_latent(g: &mut ExprGraph, mu: NodeId, logvar: NodeId, noise: NodeId) -> Result<NodeId> {
    let half = g.scale(logvar, 0.5)?;
    let std = g.exp(half)?;
    let jitter = g.mul(std, noise)?;
    g.add(mu, jitter)
}

/// Joint VAE + latent-dynamics objective over a batch of consecutive frame
/// pairs, averaged over the batch.
pub(crate) struct LatentLossGraph {
    pub graph: ExprGraph,
    pub leaves: Vec<NodeId>,
    pub y_now: NodeId,
    pub y_next: NodeId,
    pub noise: NodeId,
    pub loss: NodeId,
    vae_count: usize,
}

impl LatentLossGraph {
    pub(crate) fn new(vae: &VaeParams, dynamics: &DynamicsModel, rows: usize, step: f64) -> Result<Self> {
        if rows == 0 {
            return Err(Error::contract("loss needs a non-empty batch"));
        }
        if dynamics.state_dim() != vae.latent_dim() {
            return Err(Error::shape(format!(
                "dynamics dim {} does not match latent dim {}",
                dynamics.state_dim(),
                vae.latent_dim()
            )));
        }
        let n = vae.latent_dim();
        let p = vae.pixels();
        let mut g = ExprGraph::new();
        let mut leaves = vae.declare(&mut g);
        let vae_count = leaves.len();
        leaves.extend(dynamics.declare(&mut g));
        let (vae_leaves, dyn_leaves) = leaves.split_at(vae_count);

        let y_now = g.input(Shape::new(rows, p));
        let y_next = g.input(Shape::new(rows, p));
        let noise = g.input(Shape::new(rows, n));
        let (mu, logvar) = vae.build_encoder(&mut g, vae_leaves, y_now)?;
        let z = sample_latent(&mut g, mu, logvar, noise)?;

        let mu_sq = g.square(mu)?;
        let var = g.exp(logvar)?;
        let kl_a = g.add(mu_sq, var)?;
        let kl_b = g.sub(kl_a, logvar)?;
        let kl_c = g.offset(kl_b, -1.0)?;
        let kl_sum = g.sum(kl_c)?;
        let kl = g.scale(kl_sum, 0.5)?;

        let recon_now = vae.build_decoder(&mut g, vae_leaves, z)?;
        let err_now = g.sub(recon_now, y_now)?;
        let rec_now = g.sum_sq(err_now)?;

        let (f, _) = dynamics.build(&mut g, dyn_leaves, z)?;
        let stepped = g.scale(f, step)?;
        let z_next = g.add(z, stepped)?;
        let recon_next = vae.build_decoder(&mut g, vae_leaves, z_next)?;
        let err_next = g.sub(recon_next, y_next)?;
        let rec_next = g.sum_sq(err_next)?;

        let rec = g.add(rec_now, rec_next)?;
        let total = g.add(kl, rec)?;
        let loss = g.scale(total, 1.0 / rows as f64)?;
        g.mark_output(loss);
        Ok(LatentLossGraph {
            graph: g,
            leaves,
            y_now,
            y_next,
            noise,
            loss,
            vae_count,
        })
    }

    pub(crate) fn binding(
        &self,
        vae: &VaeParams,
        dynamics: &DynamicsModel,
        y_now: &Tensor,
        y_next: &Tensor,
        noise: &Tensor,
    ) -> Binding {
        let mut b = Binding::new();
        vae.bind(&mut b, &self.leaves[..self.vae_count]);
        dynamics.bind(&mut b, &self.leaves[self.vae_count..]);
        b.bind(self.y_now, y_now.clone());
        b.bind(self.y_next, y_next.clone());
        b.bind(self.noise, noise.clone());
        b
    }
}

/// KL term plus the two reconstruction errors of [`LatentLossGraph`] for a
/// single pair of consecutive frames, with latent update `z + step·f(z)`.
pub fn vae_dyn_loss(
    vae: &VaeParams,
    dynamics: &DynamicsModel,
    y_now: &[f64],
    y_next: &[f64],
    noise: &[f64],
    step: f64,
) -> Result<f64> {
    let p = vae.pixels();
    if y_now.len() != p || y_next.len() != p || noise.len() != vae.latent_dim() {
        return Err(Error::shape(format!(
            "expected two {p}-pixel frames and {} noise values",
            vae.latent_dim()
        )));
    }
    let lg = LatentLossGraph::new(vae, dynamics, 1, step)?;
    let b = lg.binding(
        vae,
        dynamics,
        &Tensor::row(y_now),
        &Tensor::row(y_next),
        &Tensor::row(noise),
    );
    lg.graph.eval(&b, lg.loss)?.item()
}
