use rand::Rng;

use super::activation::{check_width, Activation};
use super::init::{kaiming_bias, kaiming_uniform};
use super::params::{LeafCursor, Parameterized};
use crate::diff::{Binding, ExprGraph, NodeId, Shape, Tensor};
use crate::error::{Error, Result};

/// Affine layer `y = x Wᵀ + b` on row-vector batches.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub weight: Tensor,
    /// `1 × out`
    pub bias: Tensor,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.rows() {
            return Err(Error::shape(format!(
                "bias {} does not match weight {}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(Linear { weight, bias })
    }

    pub fn random<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Result<Self> {
        let weight = kaiming_uniform(fan_in, fan_out, rng)?;
        let bias = kaiming_bias(fan_in, fan_out, rng)?;
        Ok(Linear { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Fully connected network; every layer but the last is followed by the
/// hidden activation.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl MlpParams {
    pub fn new(layers: Vec<Linear>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer output {} feeds layer input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        if let Activation::Smooth(d) = activation {
            check_width(d)?;
        }
        Ok(MlpParams { layers, activation })
    }

    /// Randomly initialised network with layer widths `dims` (input first).
    pub fn random<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::contract("network needs input and output widths"));
        }
        let layers = dims
            .windows(2)
            .map(|w| Linear::random(w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        MlpParams::new(layers, activation)
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        let layers = dims
            .windows(2)
            .map(|w| Linear {
                weight: Tensor::zeros(Shape::new(w[1], w[0])),
                bias: Tensor::zeros(Shape::new(1, w[1])),
            })
            .collect();
        MlpParams::new(layers, activation)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Linear::out_dim))
            .collect()
    }

    /// Adds the forward pass for a `batch × input_dim` node to `graph`.
    pub(crate) fn build(&self, graph: &mut ExprGraph, leaves: &mut LeafCursor<'_>, x: NodeId) -> Result<NodeId> {
        let sx = graph.shape(x);
        if sx.cols != self.input_dim() {
            return Err(Error::shape(format!(
                "network expects {} inputs, got {sx}",
                self.input_dim()
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for i in 0..self.layers.len() {
            let w = leaves.next()?;
            let b = leaves.next()?;
            let lin = graph.matmul_t(h, w)?;
            h = graph.add(lin, b)?;
            if i < last {
                h = match self.activation {
                    Activation::Relu => graph.relu(h)?,
                    Activation::Smooth(d) => graph.smooth_relu(h, d)?,
                };
            }
        }
        Ok(h)
    }

    /// Batched forward pass: one input per row.
    pub fn forward_batch(&self, xs: &Tensor) -> Result<Tensor> {
        let mut g = ExprGraph::new();
        let leaves = self.declare(&mut g);
        let x = g.input(xs.shape());
        let out = self.build(&mut g, &mut LeafCursor::new(&leaves), x)?;
        let mut b = Binding::new();
        self.bind(&mut b, &leaves);
        b.bind(x, xs.clone());
        g.eval(&b, out)
    }
}

impl Parameterized for MlpParams {
    fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn tensor_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}{i}.weight"), format!("{prefix}{i}.bias")])
            .collect()
    }
}

/// Output of the network for a single input vector.
pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.input_dim() {
        return Err(Error::shape(format!(
            "network expects {} inputs, got {}",
            params.input_dim(),
            x.len()
        )));
    }
    Ok(params.forward_batch(&Tensor::row(x))?.into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::check_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_final_bias() {
        let mut p = MlpParams::zeros(&[3, 4, 2], Activation::Relu).unwrap();
        p.layers[1].bias = Tensor::row(&[0.5, -1.5]);
        assert_eq!(mlp_forward(&p, &[1.0, 2.0, 3.0]).unwrap(), vec![0.5, -1.5]);
    }

    #[test]
    fn identity_layer_is_identity() {
        let w = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = MlpParams::new(
            vec![Linear::new(w, Tensor::row(&[0.0, 0.0])).unwrap()],
            Activation::Relu,
        )
        .unwrap();
        assert_eq!(mlp_forward(&p, &[-0.25, 7.0]).unwrap(), vec![-0.25, 7.0]);
    }

    #[test]
    fn matches_hand_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::random(&[2, 3, 2], Activation::Relu, &mut rng).unwrap();
        let x = [0.7, -1.3];
        let (l0, l1) = (&p.layers[0], &p.layers[1]);
        let mut hidden = [0.0; 3];
        for (i, h) in hidden.iter_mut().enumerate() {
            let a = l0.weight.get(i, 0) * x[0] + l0.weight.get(i, 1) * x[1] + l0.bias.get(0, i);
            *h = a.max(0.0);
        }
        let expect: Vec<f64> = (0..2)
            .map(|o| (0..3).map(|i| l1.weight.get(o, i) * hidden[i]).sum::<f64>() + l1.bias.get(0, o))
            .collect();
        let got = mlp_forward(&p, &x).unwrap();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let p = MlpParams::zeros(&[3, 2], Activation::Relu).unwrap();
        assert!(matches!(mlp_forward(&p, &[1.0]), Err(Error::Shape(_))));
        let l = Linear::new(Tensor::zeros(Shape::new(2, 3)), Tensor::zeros(Shape::new(1, 2))).unwrap();
        let bad = Linear::new(Tensor::zeros(Shape::new(2, 4)), Tensor::zeros(Shape::new(1, 2))).unwrap();
        assert!(MlpParams::new(vec![l, bad], Activation::Relu).is_err());
    }

    #[test]
    fn parameter_gradients_pass_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = MlpParams::random(&[3, 8, 2], Activation::Smooth(0.1), &mut rng).unwrap();
        let mut g = ExprGraph::new();
        let leaves = p.declare(&mut g);
        let x = g.constant(Tensor::from_vec(2, 3, vec![0.3, -0.2, 1.1, -0.8, 0.4, 0.05]).unwrap());
        let y = p.build(&mut g, &mut LeafCursor::new(&leaves), x).unwrap();
        let out = g.sum_sq(y).unwrap();
        let mut b = Binding::new();
        p.bind(&mut b, &leaves);
        for leaf in &leaves {
            assert!(check_grad(&g, &b, out, *leaf, 1e-6).unwrap() < 1e-5);
        }
    }
}
