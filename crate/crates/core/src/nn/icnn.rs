use rand::Rng;

use super::activation::check_width;
use super::init::{kaiming_bias, kaiming_uniform};
use super::params::{LeafCursor, Parameterized};
use crate::diff::{softplus, Binding, ExprGraph, NodeId, Shape, Tensor};
use crate::error::{Error, Result};

/// Input-convex network `g: ℝⁿ → ℝ`.
///
/// ```text
/// z₁     = σ(W₀ x + b₀)
/// zᵢ₊₁   = σ(Uᵢ zᵢ + Wᵢ x + bᵢ)      i = 1 … k−1
/// g(x)   = z_k
/// ```
///
/// `Uᵢ = softplus(Uᵢ_raw) / √hᵢ₋₁` keeps the layer-to-layer weights positive
/// at a width-independent scale, and
/// σ is the smoothed ReLU with width `d`, which is convex and
/// non-decreasing; together these make `g` convex in `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct IcnnParams {
    /// `Wᵢ`, each `hᵢ × n`.
    pub input_weights: Vec<Tensor>,
    /// `Uᵢ_raw` for `i = 1 … k−1`, each `hᵢ × hᵢ₋₁`.
    pub hidden_raw: Vec<Tensor>,
    /// `bᵢ`, each `1 × hᵢ`.
    pub biases: Vec<Tensor>,
    pub d: f64,
}

/// Nodes produced when an ICNN is added to a graph.
pub(crate) struct IcnnNodes {
    pub output: NodeId,
    preacts: Vec<NodeId>,
    hidden: Vec<NodeId>,
    input_weights: Vec<NodeId>,
    d: f64,
}

impl IcnnParams {
    pub fn new(input_weights: Vec<Tensor>, hidden_raw: Vec<Tensor>, biases: Vec<Tensor>, d: f64) -> Result<Self> {
        check_width(d)?;
        let k = input_weights.len();
        if k == 0 || biases.len() != k || hidden_raw.len() + 1 != k {
            return Err(Error::shape(format!(
                "{k} input weights, {} hidden weights, {} biases",
                hidden_raw.len(),
                biases.len()
            )));
        }
        let n = input_weights[0].cols();
        for i in 0..k {
            let h = input_weights[i].rows();
            if input_weights[i].cols() != n || biases[i].rows() != 1 || biases[i].cols() != h {
                return Err(Error::shape(format!("layer {i} weights/bias disagree")));
            }
            if i > 0 {
                let u = &hidden_raw[i - 1];
                if u.rows() != h || u.cols() != input_weights[i - 1].rows() {
                    return Err(Error::shape(format!("hidden weight {i} has shape {}", u.shape())));
                }
            }
        }
        if input_weights[k - 1].rows() != 1 {
            return Err(Error::shape("last layer must have width 1"));
        }
        Ok(IcnnParams {
            input_weights,
            hidden_raw,
            biases,
            d,
        })
    }

    /// Random network on `input_dim` inputs with layer widths `widths`
    /// (the last one must be 1).
    pub fn random<R: Rng + ?Sized>(input_dim: usize, widths: &[usize], d: f64, rng: &mut R) -> Result<Self> {
        let mut w = Vec::with_capacity(widths.len());
        let mut u = Vec::with_capacity(widths.len().saturating_sub(1));
        let mut b = Vec::with_capacity(widths.len());
        for (i, &h) in widths.iter().enumerate() {
            if i > 0 {
                u.push(kaiming_uniform(widths[i - 1], h, rng)?);
            }
            w.push(kaiming_uniform(input_dim, h, rng)?);
            b.push(kaiming_bias(input_dim, h, rng)?);
        }
        IcnnParams::new(w, u, b, d)
    }

    pub fn input_dim(&self) -> usize {
        self.input_weights[0].cols()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.input_weights.iter().map(Tensor::rows).collect()
    }

    /// Effective layer-to-layer weights `softplus(Uᵢ_raw) / √hᵢ₋₁`.
    pub fn hidden_weights(&self) -> Vec<Tensor> {
        self.hidden_raw
            .iter()
            .map(|u| {
                let scale = (u.cols() as f64).sqrt();
                u.map(|v| softplus(v) / scale)
            })
            .collect()
    }

    pub(crate) fn build(&self, graph: &mut ExprGraph, leaves: &mut LeafCursor<'_>, x: NodeId) -> Result<IcnnNodes> {
        let sx = graph.shape(x);
        if sx.cols != self.input_dim() {
            return Err(Error::shape(format!(
                "ICNN expects {} inputs, got {sx}",
                self.input_dim()
            )));
        }
        let k = self.input_weights.len();
        let mut preacts = Vec::with_capacity(k);
        let mut hidden = Vec::with_capacity(k - 1);
        let mut input_weights = Vec::with_capacity(k);
        let mut z = None;
        for i in 0..k {
            let u = if i > 0 { Some(leaves.next()?) } else { None };
            let w = leaves.next()?;
            let b = leaves.next()?;
            input_weights.push(w);
            let wx = graph.matmul_t(x, w)?;
            let mut a = graph.add(wx, b)?;
            if let (Some(u_raw), Some(prev)) = (u, z) {
                let fan_in = graph.shape(u_raw).cols as f64;
                let soft = graph.softplus(u_raw)?;
                let u_pos = graph.scale(soft, 1.0 / fan_in.sqrt())?;
                hidden.push(u_pos);
                let uz = graph.matmul_t(prev, u_pos)?;
                a = graph.add(a, uz)?;
            }
            preacts.push(a);
            z = Some(graph.smooth_relu(a, self.d)?);
        }
        Ok(IcnnNodes {
            output: z.expect("at least one layer"),
            preacts,
            hidden,
            input_weights,
            d: self.d,
        })
    }

    /// Like [`build`](Self::build) but with `output = g(x) − g(0)`, propagated
    /// layer by layer as differences from the origin pass so that terms which
    /// cancel analytically (biases on linear branches) cancel exactly.
    pub(crate) fn build_relative(&self, graph: &mut ExprGraph, leaves: &[NodeId], x: NodeId) -> Result<IcnnNodes> {
        let n = self.input_dim();
        let origin = graph.constant(Tensor::zeros(Shape::new(1, n)));
        let base = self.build(graph, &mut LeafCursor::new(leaves), origin)?;
        let sx = graph.shape(x);
        if sx.cols != n {
            return Err(Error::shape(format!("ICNN expects {n} inputs, got {sx}")));
        }
        let mut preacts = Vec::with_capacity(base.preacts.len());
        let mut diff: Option<NodeId> = None;
        for (i, (&a0, &w)) in base.preacts.iter().zip(&base.input_weights).enumerate() {
            let mut da = graph.matmul_t(x, w)?;
            if let Some(prev) = diff {
                let uz = graph.matmul_t(prev, base.hidden[i - 1])?;
                da = graph.add(da, uz)?;
            }
            preacts.push(graph.add(a0, da)?);
            diff = Some(graph.smooth_relu_diff(a0, da, self.d)?);
        }
        Ok(IcnnNodes {
            output: diff.expect("at least one layer"),
            preacts,
            hidden: base.hidden,
            input_weights: base.input_weights,
            d: self.d,
        })
    }

    /// `g` for each row of `xs`, as a column.
    pub fn forward_batch(&self, xs: &Tensor) -> Result<Tensor> {
        let mut g = ExprGraph::new();
        let leaves = self.declare(&mut g);
        let x = g.input(xs.shape());
        let nodes = self.build(&mut g, &mut LeafCursor::new(&leaves), x)?;
        let mut b = Binding::new();
        self.bind(&mut b, &leaves);
        b.bind(x, xs.clone());
        g.eval(&b, nodes.output)
    }
}

impl IcnnNodes {
    /// `∇ₓ g` for every row, built from first-order primitives (σ′ included)
    /// so that it stays differentiable with respect to the parameters.
    pub(crate) fn input_gradient(&self, graph: &mut ExprGraph) -> Result<NodeId> {
        let k = self.preacts.len();
        let mut delta = graph.smooth_relu_prime(self.preacts[k - 1], self.d)?;
        let mut grad = graph.matmul(delta, self.input_weights[k - 1])?;
        for i in (1..k).rev() {
            let back = graph.matmul(delta, self.hidden[i - 1])?;
            let slope = graph.smooth_relu_prime(self.preacts[i - 1], self.d)?;
            delta = graph.mul(back, slope)?;
            let term = graph.matmul(delta, self.input_weights[i - 1])?;
            grad = graph.add(grad, term)?;
        }
        Ok(grad)
    }
}

impl Parameterized for IcnnParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.input_weights[0], &self.biases[0]];
        for i in 1..self.input_weights.len() {
            out.extend([&self.hidden_raw[i - 1], &self.input_weights[i], &self.biases[i]]);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        let mut u = self.hidden_raw.iter_mut();
        for (i, (w, b)) in self.input_weights.iter_mut().zip(self.biases.iter_mut()).enumerate() {
            if i > 0 {
                out.push(u.next().expect("k-1 hidden weights"));
            }
            out.push(w);
            out.push(b);
        }
        out
    }

    fn tensor_names(&self, prefix: &str) -> Vec<String> {
        let mut out = vec![format!("{prefix}w0"), format!("{prefix}b0")];
        for i in 1..self.input_weights.len() {
            out.extend([
                format!("{prefix}u{i}_raw"),
                format!("{prefix}w{i}"),
                format!("{prefix}b{i}"),
            ]);
        }
        out
    }
}

/// `g(x)` for a single input vector.
pub fn icnn_forward(params: &IcnnParams, x: &[f64]) -> Result<f64> {
    if x.len() != params.input_dim() {
        return Err(Error::shape(format!(
            "ICNN expects {} inputs, got {}",
            params.input_dim(),
            x.len()
        )));
    }
    params.forward_batch(&Tensor::row(x))?.item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{check_grad, Shape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_layer(w: f64, b: f64, d: f64) -> IcnnParams {
        IcnnParams::new(vec![Tensor::scalar(w)], vec![], vec![Tensor::scalar(b)], d).unwrap()
    }

    #[test]
    fn single_layer_is_one_activation() {
        let p = single_layer(1.0, 0.0, 0.1);
        assert!((icnn_forward(&p, &[0.05]).unwrap() - 0.0125).abs() < 1e-15);
    }

    #[test]
    fn zero_input_weights_give_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = IcnnParams::random(3, &[5, 4, 1], 0.1, &mut rng).unwrap();
        for w in &mut p.input_weights {
            *w = Tensor::zeros(w.shape());
        }
        for b in &mut p.biases {
            *b = Tensor::zeros(b.shape());
        }
        let a = icnn_forward(&p, &[1.0, 2.0, 3.0]).unwrap();
        let c = icnn_forward(&p, &[-4.0, 0.5, 9.0]).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn effective_hidden_weights_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = IcnnParams::random(2, &[6, 6, 1], 0.1, &mut rng).unwrap();
        p.hidden_raw[0] = Tensor::filled(p.hidden_raw[0].shape(), -40.0);
        for u in p.hidden_weights() {
            assert!(u.as_slice().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn midpoint_convex_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = IcnnParams::random(3, &[20, 20, 1], 0.1, &mut rng).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut mids = Vec::new();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            mids.push(x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect::<Vec<_>>());
            xs.push(x);
            ys.push(y);
        }
        let gx = p.forward_batch(&Tensor::from_rows(&xs).unwrap()).unwrap();
        let gy = p.forward_batch(&Tensor::from_rows(&ys).unwrap()).unwrap();
        let gm = p.forward_batch(&Tensor::from_rows(&mids).unwrap()).unwrap();
        for i in 0..1000 {
            let avg = 0.5 * (gx.as_slice()[i] + gy.as_slice()[i]);
            assert!(gm.as_slice()[i] <= avg + 1e-9);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = IcnnParams::random(4, &[10, 10, 1], 0.1, &mut rng).unwrap();
        let mut g = ExprGraph::new();
        let leaves = p.declare(&mut g);
        let x = g.input(Shape::new(1, 4));
        let nodes = p.build(&mut g, &mut LeafCursor::new(&leaves), x).unwrap();
        let grad = nodes.input_gradient(&mut g).unwrap();
        let out = g.sum(nodes.output).unwrap();
        let mut b = Binding::new();
        p.bind(&mut b, &leaves);
        for _ in 0..20 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            b.bind(x, Tensor::row(&v));
            let analytic = g.eval(&b, grad).unwrap();
            let reverse = g.backward(&b, out, &[x]).unwrap();
            for (a, r) in analytic.as_slice().iter().zip(reverse[0].as_slice()) {
                assert!((a - r).abs() <= 1e-12 * (1.0 + r.abs()));
            }
            assert!(check_grad(&g, &b, out, x, 1e-6).unwrap() < 1e-5);
        }
    }

    #[test]
    fn rejects_non_scalar_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(IcnnParams::random(2, &[4, 3], 0.1, &mut rng).is_err());
        assert!(IcnnParams::random(2, &[4, 1], 0.0, &mut rng).is_err());
    }
}
