use super::graph::{Binding, ExprGraph, NodeId};
use crate::error::{Error, Result};

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Worst coordinate-wise relative error between the reverse-mode gradient of
/// the scalar `output` with respect to the leaf `wrt` and central finite
/// differences with the given `step`. The current binding of `wrt` is the
/// evaluation point.
pub fn check_grad(graph: &ExprGraph, bindings: &Binding, output: NodeId, wrt: NodeId, step: f64) -> Result<f64> {
    let len = graph.shape(wrt).len();
    check_grad_coords(graph, bindings, output, wrt, step, 0..len)
}

/// [`check_grad`] restricted to selected flat coordinates of `wrt`.
pub fn check_grad_coords(
    graph: &ExprGraph,
    bindings: &Binding,
    output: NodeId,
    wrt: NodeId,
    step: f64,
    coords: impl IntoIterator<Item = usize>,
) -> Result<f64> {
    if step <= 0.0 || step.is_nan() {
        return Err(Error::contract(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let (value, grads) = graph.value_and_grad(bindings, output, &[wrt])?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("function value {value} at the check point")));
    }
    let analytic = &grads[0];
    let mut probe = bindings.clone();
    let mut worst = 0.0f64;
    for k in coords {
        let base = bindings.get(wrt).ok_or(Error::MissingBinding(wrt.index()))?.as_slice()[k];
        let mut eval_at = |v: f64| -> Result<f64> {
            probe.get_mut(wrt).expect("bound above").as_mut_slice()[k] = v;
            let f = graph.eval(&probe, output)?.item()?;
            if !f.is_finite() {
                return Err(Error::Numeric(format!("function value {f} near the check point")));
            }
            Ok(f)
        };
        let plus = eval_at(base + step)?;
        let minus = eval_at(base - step)?;
        eval_at(base)?;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(analytic.as_slice()[k], numeric));
    }
    Ok(worst)
}

/// Gradient check for a plain function that reports its own gradient, e.g.
/// a model-level value/gradient pair evaluated through separate graphs.
pub fn check_grad_fn<F>(f: F, point: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if step <= 0.0 || step.is_nan() {
        return Err(Error::contract(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let (value, analytic) = f(point)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("function value {value} at the check point")));
    }
    if analytic.len() != point.len() {
        return Err(Error::shape(format!(
            "gradient has {} entries for a {}-dimensional point",
            analytic.len(),
            point.len()
        )));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for k in 0..point.len() {
        x[k] = point[k] + step;
        let plus = f(&x)?.0;
        x[k] = point[k] - step;
        let minus = f(&x)?.0;
        x[k] = point[k];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric("function value near the check point".into()));
        }
        worst = worst.max(relative_error(analytic[k], (plus - minus) / (2.0 * step)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{Shape, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn squared_norm_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = ExprGraph::new();
        let x = g.input(Shape::new(5, 1));
        let out = g.sum_sq(x).unwrap();
        for _ in 0..20 {
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut b = Binding::new();
            b.bind(x, Tensor::column(&v));
            assert!(check_grad(&g, &b, out, x, 1e-4).unwrap() < 1e-6);
        }
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut g = ExprGraph::new();
        let x = g.input(Shape::new(3, 1));
        let c = g.scalar(4.2);
        let zero = g.scale(x, 0.0).unwrap();
        let s = g.sum(zero).unwrap();
        let out = g.add(s, c).unwrap();
        let mut b = Binding::new();
        b.bind(x, Tensor::column(&[1.0, -2.0, 3.0]));
        assert_eq!(check_grad(&g, &b, out, x, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_value_is_a_numeric_error() {
        let mut g = ExprGraph::new();
        let x = g.input(Shape::SCALAR);
        let out = g.log(x).unwrap();
        let mut b = Binding::new();
        b.bind(x, Tensor::scalar(-1.0));
        assert!(matches!(check_grad(&g, &b, out, x, 1e-4), Err(Error::Numeric(_))));
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(check_grad_fn(|x| Ok((x[0], vec![1.0])), &[0.0], 0.0).is_err());
    }
}
