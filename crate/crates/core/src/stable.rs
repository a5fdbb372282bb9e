//! Stable dynamics by projection.
//!
//! Given nominal dynamics `f̂` and a Lyapunov function `V`, the model's
//! vector field is the Euclidean projection of `f̂(x)` onto the halfspace
//! `{f : ∇V(x)ᵀ f ≤ −αV(x)}`:
//!
//! ```text
//! f(x) = f̂(x) − ∇V(x) · ReLU(∇V(x)ᵀ f̂(x) + αV(x)) / ‖∇V(x)‖²
//! ```
//!
//! The decrease condition therefore holds for every parameter value, trained
//! or not.

use rand::Rng;

use crate::diff::{Binding, ExprGraph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::lyapunov::{LyapunovNodes, LyapunovParams};
use crate::nn::{Activation, LeafCursor, MlpParams, Parameterized};

/// Lower clamp on `‖∇V‖²` inside the graph.
pub const GRAD_NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct StableDynamicsModel {
    pub fhat: MlpParams,
    pub lyap: LyapunovParams,
    pub alpha: f64,
}

/// Architecture and hyperparameters for a freshly initialised model.
#[derive(Clone, Debug, PartialEq)]
pub struct StableModelSpec {
    pub state_dim: usize,
    pub fhat_hidden: Vec<usize>,
    pub icnn_hidden: Vec<usize>,
    pub alpha: f64,
    pub epsilon: f64,
    pub smooth_d: f64,
}

impl StableModelSpec {
    pub fn new(state_dim: usize) -> Self {
        StableModelSpec {
            state_dim,
            fhat_hidden: vec![100, 100],
            icnn_hidden: vec![60, 60],
            alpha: 0.1,
            epsilon: 1e-3,
            smooth_d: 0.1,
        }
    }

    pub fn fhat_dims(&self) -> Vec<usize> {
        let n = self.state_dim;
        std::iter::once(n)
            .chain(self.fhat_hidden.iter().copied())
            .chain(std::iter::once(n))
            .collect()
    }

    pub fn icnn_widths(&self) -> Vec<usize> {
        self.icnn_hidden.iter().copied().chain(std::iter::once(1)).collect()
    }
}

pub(crate) struct StableNodes {
    pub f: NodeId,
    pub fhat: NodeId,
    /// `∇Vᵀ f̂ + αV` per row; the projection is active where this is positive.
    pub proj_arg: NodeId,
    pub lyap: LyapunovNodes,
}

impl StableDynamicsModel {
    pub fn new(fhat: MlpParams, lyap: LyapunovParams, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::contract(format!("alpha must be nonnegative, got {alpha}")));
        }
        let n = lyap.input_dim();
        if fhat.input_dim() != n || fhat.output_dim() != n {
            return Err(Error::shape(format!(
                "nominal network maps {} -> {}, Lyapunov function takes {n}",
                fhat.input_dim(),
                fhat.output_dim()
            )));
        }
        Ok(StableDynamicsModel { fhat, lyap, alpha })
    }

    pub fn random<R: Rng + ?Sized>(spec: &StableModelSpec, rng: &mut R) -> Result<Self> {
        let fhat = MlpParams::random(&spec.fhat_dims(), Activation::Relu, rng)?;
        let lyap = LyapunovParams::random(spec.state_dim, &spec.icnn_widths(), spec.epsilon, spec.smooth_d, rng)?;
        StableDynamicsModel::new(fhat, lyap, spec.alpha)
    }

    pub fn state_dim(&self) -> usize {
        self.lyap.input_dim()
    }

    pub(crate) fn build(&self, graph: &mut ExprGraph, leaves: &[NodeId], x: NodeId) -> Result<StableNodes> {
        let n_fhat = self.fhat.tensors().len();
        let (fhat_leaves, lyap_leaves) = leaves.split_at(n_fhat);
        let fhat = self.fhat.build(graph, &mut LeafCursor::new(fhat_leaves), x)?;
        let lyap = self.lyap.build(graph, lyap_leaves, x)?;

        let along = graph.mul(lyap.grad, fhat)?;
        let along = graph.row_sum(along)?;
        let decay = graph.scale(lyap.value, self.alpha)?;
        let proj_arg = graph.add(along, decay)?;

        let gsq = graph.square(lyap.grad)?;
        let gsq = graph.row_sum(gsq)?;
        let denom = graph.clamp_min(gsq, GRAD_NORM_FLOOR)?;
        let active = graph.relu(proj_arg)?;
        let coef = graph.div(active, denom)?;
        let correction = graph.mul(lyap.grad, coef)?;
        let projected = graph.sub(fhat, correction)?;

        // f(0) = 0 by convention
        let mask = graph.row_nonzero_mask(x)?;
        let f = graph.mul(projected, mask)?;
        Ok(StableNodes {
            f,
            fhat,
            proj_arg,
            lyap,
        })
    }

    /// Reusable evaluator of `f` for batches of exactly `rows` states.
    pub fn compile(&self, rows: usize) -> Result<BatchField> {
        let mut g = ExprGraph::new();
        let leaves = self.declare(&mut g);
        let x = g.input(crate::diff::Shape::new(rows, self.state_dim()));
        let nodes = self.build(&mut g, &leaves, x)?;
        let mut binding = Binding::new();
        self.bind(&mut binding, &leaves);
        Ok(BatchField {
            graph: g,
            input: x,
            output: nodes.f,
            binding,
        })
    }

    /// `f` for each row of `xs`.
    pub fn f_batch(&self, xs: &Tensor) -> Result<Tensor> {
        self.check_cols(xs.cols())?;
        self.compile(xs.rows())?.eval(xs)
    }

    /// Per-row `(f̂, f, V, ∇V)` from one forward pass.
    pub fn diagnostics_batch(&self, xs: &Tensor) -> Result<StableEval> {
        self.check_cols(xs.cols())?;
        let mut g = ExprGraph::new();
        let leaves = self.declare(&mut g);
        let x = g.input(xs.shape());
        let nodes = self.build(&mut g, &leaves, x)?;
        let mut b = Binding::new();
        self.bind(&mut b, &leaves);
        b.bind(x, xs.clone());
        let mut out = g
            .eval_many(
                &b,
                &[nodes.fhat, nodes.f, nodes.lyap.value, nodes.lyap.grad, nodes.proj_arg],
            )?
            .into_iter();
        let mut next = || out.next().expect("five outputs");
        Ok(StableEval {
            fhat: next(),
            f: next(),
            value: next(),
            grad: next(),
            proj_arg: next(),
        })
    }

    /// `∇V(x)ᵀ f(x) + αV(x)` per row; nonpositive wherever the model is
    /// well defined.
    pub fn decrease_margin(&self, xs: &Tensor) -> Result<Vec<f64>> {
        let d = self.diagnostics_batch(xs)?;
        Ok((0..xs.rows())
            .map(|r| {
                let dot: f64 = d
                    .grad
                    .row_slice(r)
                    .iter()
                    .zip(d.f.row_slice(r))
                    .map(|(a, b)| a * b)
                    .sum();
                dot + self.alpha * d.value.as_slice()[r]
            })
            .collect())
    }

    fn check_cols(&self, cols: usize) -> Result<()> {
        if cols != self.state_dim() {
            return Err(Error::shape(format!(
                "model state dim {}, got {cols}",
                self.state_dim()
            )));
        }
        Ok(())
    }
}

impl Parameterized for StableDynamicsModel {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.fhat.tensors();
        t.extend(self.lyap.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.fhat.tensors_mut();
        t.extend(self.lyap.tensors_mut());
        t
    }

    fn tensor_names(&self, prefix: &str) -> Vec<String> {
        let mut t = self.fhat.tensor_names(&format!("{prefix}fhat."));
        t.extend(self.lyap.tensor_names(&format!("{prefix}lyap.")));
        t
    }
}

/// Forward quantities of a stable model, one row per state.
#[derive(Clone, Debug)]
pub struct StableEval {
    pub fhat: Tensor,
    pub f: Tensor,
    pub value: Tensor,
    pub grad: Tensor,
    pub proj_arg: Tensor,
}

/// A vector field compiled for a fixed batch size.
#[derive(Clone, Debug)]
pub struct BatchField {
    graph: ExprGraph,
    input: NodeId,
    output: NodeId,
    binding: Binding,
}

impl BatchField {
    pub fn rows(&self) -> usize {
        self.graph.shape(self.input).rows
    }

    pub fn eval(&mut self, xs: &Tensor) -> Result<Tensor> {
        self.binding.bind(self.input, xs.clone());
        self.graph.eval(&self.binding, self.output)
    }

    pub(crate) fn naive(model: &MlpParams, rows: usize) -> Result<Self> {
        let mut g = ExprGraph::new();
        let leaves = model.declare(&mut g);
        let x = g.input(crate::diff::Shape::new(rows, model.input_dim()));
        let out = model.build(&mut g, &mut LeafCursor::new(&leaves), x)?;
        let mut binding = Binding::new();
        model.bind(&mut binding, &leaves);
        Ok(BatchField {
            graph: g,
            input: x,
            output: out,
            binding,
        })
    }
}

/// Euclidean projection of `fhat_x` onto `{f : gradVᵀ f ≤ −αV}`.
///
/// Inputs already inside the halfspace are returned unchanged.
pub fn project_halfspace(fhat_x: &[f64], grad_v: &[f64], v: f64, alpha: f64) -> Result<Vec<f64>> {
    if fhat_x.len() != grad_v.len() {
        return Err(Error::shape(format!(
            "vector of length {} vs gradient of length {}",
            fhat_x.len(),
            grad_v.len()
        )));
    }
    if !(v >= 0.0) {
        return Err(Error::contract(format!("V must be nonnegative, got {v}")));
    }
    let arg: f64 = grad_v.iter().zip(fhat_x).map(|(g, f)| g * f).sum::<f64>() + alpha * v;
    if arg <= 0.0 {
        return Ok(fhat_x.to_vec());
    }
    let norm_sq: f64 = grad_v.iter().map(|g| g * g).sum();
    if norm_sq < GRAD_NORM_FLOOR {
        return Err(Error::DegenerateGradient { norm_sq });
    }
    let coef = arg / norm_sq;
    Ok(fhat_x.iter().zip(grad_v).map(|(f, g)| f - g * coef).collect())
}

/// The model's vector field at a single state.
pub fn stable_f(model: &StableDynamicsModel, x: &[f64]) -> Result<Vec<f64>> {
    model.check_cols(x.len())?;
    Ok(model.f_batch(&Tensor::row(x))?.into_vec())
}

/// The unconstrained baseline: the nominal network used directly as dynamics.
pub fn naive_f(model: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    crate::nn::mlp_forward(model, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec(n: usize) -> StableModelSpec {
        StableModelSpec {
            fhat_hidden: vec![16, 16],
            icnn_hidden: vec![12, 12],
            ..StableModelSpec::new(n)
        }
    }

    #[test]
    fn already_feasible_input_unchanged() {
        let out = project_halfspace(&[1.0, -1.0], &[0.0, 1.0], 1.0, 0.5).unwrap();
        assert_eq!(out, vec![1.0, -1.0]);
    }

    #[test]
    fn infeasible_input_lands_on_boundary() {
        let out = project_halfspace(&[1.0, 1.0], &[0.0, 1.0], 1.0, 1.0).unwrap();
        assert_eq!(out, vec![1.0, -1.0]);
    }

    #[test]
    fn degenerate_gradient_signalled() {
        let err = project_halfspace(&[1.0, 1.0], &[0.0, 0.0], 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateGradient { .. }));
        // zero gradient is fine when no correction is needed
        assert!(project_halfspace(&[1.0, 1.0], &[0.0, 0.0], 0.0, 1.0).is_ok());
    }

    #[test]
    fn projection_contract_errors() {
        assert!(matches!(
            project_halfspace(&[1.0], &[1.0, 2.0], 1.0, 1.0),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            project_halfspace(&[1.0], &[1.0], -1.0, 1.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn origin_maps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = StableDynamicsModel::random(&small_spec(3), &mut rng).unwrap();
        assert_eq!(stable_f(&m, &[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn random_model_satisfies_decrease() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [2, 3, 5] {
            let m = StableDynamicsModel::random(&small_spec(n), &mut rng).unwrap();
            let rows: Vec<Vec<f64>> = (0..500)
                .map(|_| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            for margin in m.decrease_margin(&Tensor::from_rows(&rows).unwrap()).unwrap() {
                assert!(margin <= 1e-9, "margin {margin}");
            }
        }
    }

    #[test]
    fn feasible_nominal_output_passes_through_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = StableDynamicsModel::random(&small_spec(2), &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let d = m.diagnostics_batch(&Tensor::from_rows(&rows).unwrap()).unwrap();
        let mut seen = 0;
        for r in 0..rows.len() {
            if d.proj_arg.as_slice()[r] <= 0.0 {
                seen += 1;
                let (a, b) = (d.f.row_slice(r), d.fhat.row_slice(r));
                assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn naive_baseline_equals_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = MlpParams::random(&[2, 8, 2], Activation::Relu, &mut rng).unwrap();
        let x = [0.3, -0.9];
        assert_eq!(naive_f(&net, &x).unwrap(), crate::nn::mlp_forward(&net, &x).unwrap());
        let zero = MlpParams::zeros(&[2, 8, 2], Activation::Relu).unwrap();
        assert_eq!(naive_f(&zero, &x).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn naive_baseline_can_violate_decrease() {
        // V = ε‖x‖² (ICNN inactive) and f̂ pointing along +x
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = StableDynamicsModel::random(&small_spec(2), &mut rng).unwrap();
        for w in &mut m.lyap.icnn.input_weights {
            *w = Tensor::zeros(w.shape());
        }
        let mut net = MlpParams::zeros(&[2, 16, 16, 2], Activation::Relu).unwrap();
        net.layers[2].bias = Tensor::row(&[1.0, 0.0]);
        let x = [1.0, 0.0];
        let fhat = naive_f(&net, &x).unwrap();
        let v = crate::lyapunov::lyapunov_value(&m.lyap, &x).unwrap();
        let g = crate::lyapunov::lyapunov_grad(&m.lyap, &x).unwrap();
        let margin = g[0] * fhat[0] + g[1] * fhat[1] + m.alpha * v;
        assert!(margin > 0.0);
        m.fhat = net;
        let f = stable_f(&m, &x).unwrap();
        assert!(g[0] * f[0] + g[1] * f[1] + m.alpha * v <= 1e-12);
    }

    #[test]
    fn compiled_field_matches_one_shot() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = StableDynamicsModel::random(&small_spec(4), &mut rng).unwrap();
        let xs = Tensor::from_rows(&[vec![0.1, 0.2, -0.3, 0.4], vec![1.0, -1.0, 0.5, 0.0]]).unwrap();
        let mut field = m.compile(2).unwrap();
        assert_eq!(field.eval(&xs).unwrap(), m.f_batch(&xs).unwrap());
    }
}
