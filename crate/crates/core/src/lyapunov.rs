//! Candidate Lyapunov function
//!
//! ```text
//! V(x) = σ(g(x) − g(0)) + ε‖x‖²
//! ```
//!
//! with `g` an input-convex network and σ the smoothed ReLU. `V(0) = 0`,
//! `V(x) ≥ ε‖x‖²`, and `V` is ε-strongly convex, so its only stationary
//! point is the origin.

use rand::Rng;

use crate::diff::{Binding, ExprGraph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::nn::{check_width, IcnnParams, Parameterized};

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovParams {
    pub icnn: IcnnParams,
    /// Weight of the quadratic term.
    pub epsilon: f64,
    /// Smoothing width of the outer activation.
    pub d: f64,
}

pub(crate) struct LyapunovNodes {
    /// `V` per row (`batch × 1`).
    pub value: NodeId,
    /// `∇V` per row (`batch × n`).
    pub grad: NodeId,
}

impl LyapunovParams {
    pub fn new(icnn: IcnnParams, epsilon: f64, d: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::contract(format!("epsilon must be positive, got {epsilon}")));
        }
        check_width(d)?;
        Ok(LyapunovParams { icnn, epsilon, d })
    }

    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        widths: &[usize],
        epsilon: f64,
        d: f64,
        rng: &mut R,
    ) -> Result<Self> {
        LyapunovParams::new(IcnnParams::random(input_dim, widths, d, rng)?, epsilon, d)
    }

    pub fn input_dim(&self) -> usize {
        self.icnn.input_dim()
    }

    pub(crate) fn build(&self, graph: &mut ExprGraph, leaves: &[NodeId], x: NodeId) -> Result<LyapunovNodes> {
        let icnn = self.icnn.build_relative(graph, leaves, x)?;
        let shift = icnn.output;

        let convex_part = graph.smooth_relu(shift, self.d)?;
        let sq = graph.square(x)?;
        let norm_sq = graph.row_sum(sq)?;
        let quad = graph.scale(norm_sq, self.epsilon)?;
        let value = graph.add(convex_part, quad)?;

        let grad_g = icnn.input_gradient(graph)?;
        let slope = graph.smooth_relu_prime(shift, self.d)?;
        let outer = graph.mul(slope, grad_g)?;
        let lin = graph.scale(x, 2.0 * self.epsilon)?;
        let grad = graph.add(outer, lin)?;
        Ok(LyapunovNodes { value, grad })
    }

    /// `(V, ∇V)` for each row of `xs`.
    pub fn value_and_grad_batch(&self, xs: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_cols(xs.cols())?;
        let mut g = ExprGraph::new();
        let leaves = self.declare(&mut g);
        let x = g.input(xs.shape());
        let nodes = self.build(&mut g, &leaves, x)?;
        let mut b = Binding::new();
        self.bind(&mut b, &leaves);
        b.bind(x, xs.clone());
        let mut out = g.eval_many(&b, &[nodes.value, nodes.grad])?;
        let grad = out.pop().expect("two outputs");
        let value = out.pop().expect("two outputs");
        Ok((value, grad))
    }

    /// `V` for each row of `xs`.
    pub fn value_batch(&self, xs: &Tensor) -> Result<Tensor> {
        self.value_and_grad_batch(xs).map(|(v, _)| v)
    }

    fn check_cols(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::shape(format!(
                "Lyapunov function expects {} inputs, got {cols}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Sampled estimate of `M = sup V(x)/‖x‖²` over `‖x‖ ≤ radius`.
    ///
    /// Directions are uniform on the sphere; radii are log-spaced down to
    /// `1e-6 · radius` because the ratio peaks near the origin, where `V`
    /// is quadratic.
    pub fn estimate_quadratic_bound<R: Rng + ?Sized>(
        &self,
        radius: f64,
        directions: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let n = self.input_dim();
        let radii: Vec<f64> = (0..=24).map(|k| radius * 10f64.powf(-(k as f64) / 4.0)).collect();
        let mut rows = Vec::with_capacity(directions * radii.len());
        for _ in 0..directions {
            let dir = random_unit(n, rng);
            for r in &radii {
                rows.push(dir.iter().map(|v| v * r).collect::<Vec<f64>>());
            }
        }
        let xs = Tensor::from_rows(&rows)?;
        let v = self.value_batch(&xs)?;
        let mut m = self.epsilon;
        for (i, row) in rows.iter().enumerate() {
            let nsq: f64 = row.iter().map(|a| a * a).sum();
            m = m.max(v.as_slice()[i] / nsq);
        }
        Ok(m)
    }
}

pub(crate) fn random_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

impl Parameterized for LyapunovParams {
    fn tensors(&self) -> Vec<&Tensor> {
        self.icnn.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.icnn.tensors_mut()
    }

    fn tensor_names(&self, prefix: &str) -> Vec<String> {
        self.icnn.tensor_names(prefix)
    }
}

pub fn lyapunov_value(params: &LyapunovParams, x: &[f64]) -> Result<f64> {
    params.check_cols(x.len())?;
    params.value_batch(&Tensor::row(x))?.item()
}

/// `∇V(x) = σ′(g(x) − g(0)) ∇g(x) + 2εx`.
pub fn lyapunov_grad(params: &LyapunovParams, x: &[f64]) -> Result<Vec<f64>> {
    params.check_cols(x.len())?;
    Ok(params.value_and_grad_batch(&Tensor::row(x))?.1.into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::check_grad_fn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(seed: u64, n: usize) -> LyapunovParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LyapunovParams::random(n, &[16, 16, 1], 1e-3, 0.1, &mut rng).unwrap()
    }

    #[test]
    fn zero_at_origin_with_zero_gradient() {
        let p = random_params(1, 3);
        assert_eq!(lyapunov_value(&p, &[0.0; 3]).unwrap(), 0.0);
        assert_eq!(lyapunov_grad(&p, &[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn quadratic_only_where_g_does_not_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(2, 2);
        let g0 = crate::nn::icnn_forward(&p.icnn, &[0.0, 0.0]).unwrap();
        let mut seen = 0;
        for _ in 0..2000 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            if crate::nn::icnn_forward(&p.icnn, &x).unwrap() <= g0 {
                let v = lyapunov_value(&p, &x).unwrap();
                assert_eq!(v, p.epsilon * (x[0] * x[0] + x[1] * x[1]));
                seen += 1;
            }
        }
        assert!(seen > 0, "no sample landed below g(0)");
    }

    #[test]
    fn constant_g_gives_linear_gradient() {
        let mut p = random_params(3, 3);
        for w in &mut p.icnn.input_weights {
            *w = Tensor::zeros(w.shape());
        }
        let x = [0.4, -1.2, 2.0];
        let grad = lyapunov_grad(&p, &x).unwrap();
        for (g, xi) in grad.iter().zip(x) {
            assert!((g - 2.0 * p.epsilon * xi).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_params(4, 4);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let err = check_grad_fn(|x| Ok((lyapunov_value(&p, x)?, lyapunov_grad(&p, x)?)), &x, 1e-6).unwrap();
            assert!(err < 1e-5, "relative error {err} at {x:?}");
        }
    }

    #[test]
    fn lower_bound_and_sampled_upper_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_params(5, 3);
        let m = p.estimate_quadratic_bound(4.0, 64, &mut rng).unwrap();
        for _ in 0..500 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let nsq: f64 = x.iter().map(|a| a * a).sum();
            let v = lyapunov_value(&p, &x).unwrap();
            assert!(v >= p.epsilon * nsq);
            assert!(v > 0.0);
            assert!(v <= m * nsq * (1.0 + 1e-2), "V={v} above M‖x‖²={}", m * nsq);
        }
    }

    #[test]
    fn gradient_norm_dominates_quadratic_term_near_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = random_params(7, 3);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1e-3..1e-3)).collect();
            let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            let g = lyapunov_grad(&p, &x).unwrap();
            let gnorm = g.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(gnorm >= 2.0 * p.epsilon * norm - 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = random_params(1, 3);
        assert!(matches!(lyapunov_value(&p, &[1.0]), Err(Error::Shape(_))));
        assert!(matches!(lyapunov_grad(&p, &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let p = random_params(1, 2);
        assert!(LyapunovParams::new(p.icnn.clone(), 0.0, 0.1).is_err());
        assert!(LyapunovParams::new(p.icnn, 1e-3, -1.0).is_err());
    }
}
