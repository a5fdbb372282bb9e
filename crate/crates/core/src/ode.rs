//! Fixed-step classical Runge–Kutta integration.

use crate::error::{Error, Result};

/// Rollouts stop once any state norm exceeds this.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// States sampled every `dt` seconds starting at `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

fn checked<F>(field: &mut F, x: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let v = field(x)?;
    if v.len() != x.len() {
        return Err(Error::shape(format!(
            "field returned {} values for a {}-state",
            v.len(),
            x.len()
        )));
    }
    if v.iter().any(|a| !a.is_finite()) {
        return Err(Error::Divergence {
            step: 0,
            state: x.to_vec(),
        });
    }
    Ok(v)
}

/// One classical RK4 step of `ẋ = field(x)`.
pub fn rk4_step<F>(mut field: F, x: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::contract(format!("step size must be positive, got {dt}")));
    }
    let k1 = checked(&mut field, x)?;
    let k2 = checked(&mut field, &axpy(x, 0.5 * dt, &k1))?;
    let k3 = checked(&mut field, &axpy(x, 0.5 * dt, &k2))?;
    let k4 = checked(&mut field, &axpy(x, dt, &k3))?;
    let out: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if out.iter().any(|a| !a.is_finite()) {
        return Err(Error::Divergence {
            step: 0,
            state: x.to_vec(),
        });
    }
    Ok(out)
}

/// `steps` RK4 steps from `x0`; the trajectory holds `steps + 1` states.
///
/// Fails with [`Error::Divergence`] (carrying the step index and the last
/// finite state) if the field turns non-finite or the state norm exceeds
/// [`DIVERGENCE_NORM`].
pub fn rollout<F>(mut field: F, x0: &[f64], dt: f64, steps: usize) -> Result<Trajectory>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if steps == 0 {
        return Err(Error::contract("rollout needs at least one step"));
    }
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.to_vec());
    for step in 1..=steps {
        let prev = states.last().expect("non-empty");
        let next = match rk4_step(&mut field, prev, dt) {
            Ok(x) => x,
            Err(Error::Divergence { state, .. }) => return Err(Error::Divergence { step, state }),
            Err(e) => return Err(e),
        };
        let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > DIVERGENCE_NORM {
            return Err(Error::Divergence { step, state: next });
        }
        states.push(next);
    }
    Ok(Trajectory { dt, states })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_is_stationary() {
        let x = [1.5, -2.0];
        assert_eq!(rk4_step(|x| Ok(vec![0.0; x.len()]), &x, 0.1).unwrap(), x.to_vec());
    }

    #[test]
    fn exponential_decay_one_step() {
        let x = rk4_step(|x| Ok(vec![-x[0]]), &[1.0], 0.1).unwrap();
        assert!((x[0] - 0.904_837_418).abs() < 1e-7);
    }

    #[test]
    fn linear_spiral_against_matrix_exponential() {
        // A = [[-a, w], [-w, -a]]; exp(At) = e^{-at} R(wt)
        let (a, w) = (0.3, 2.0);
        let field = |x: &[f64]| Ok(vec![-a * x[0] + w * x[1], -w * x[0] - a * x[1]]);
        let x0 = [1.0, 0.5];
        let norm_a = (a * a + w * w).sqrt();
        for dt in [0.1, 0.05, 0.01] {
            let got = rk4_step(field, &x0, dt).unwrap();
            let (c, s, e) = ((w * dt).cos(), (w * dt).sin(), (-a * dt).exp());
            let exact = [e * (c * x0[0] + s * x0[1]), e * (-s * x0[0] + c * x0[1])];
            let err = ((got[0] - exact[0]).powi(2) + (got[1] - exact[1]).powi(2)).sqrt();
            let xnorm = (x0[0] * x0[0] + x0[1] * x0[1]).sqrt();
            // local error of RK4 is (‖A‖dt)^5/120 ‖x‖ plus higher order terms
            assert!(err < (norm_a * dt).powi(5) * xnorm / 60.0, "dt {dt}: {err}");
        }
    }

    #[test]
    fn halving_step_shrinks_error_by_at_least_eight() {
        let field = |x: &[f64]| Ok(vec![x[1], -x[0].sin()]);
        // reference from many small steps
        let reference = |h: f64| {
            let mut x = vec![1.0, 0.0];
            let n = (h / 1e-5).round() as usize;
            for _ in 0..n {
                x = rk4_step(field, &x, 1e-5).unwrap();
            }
            x
        };
        let err = |h: f64| {
            let got = rk4_step(field, &[1.0, 0.0], h).unwrap();
            let r = reference(h);
            ((got[0] - r[0]).powi(2) + (got[1] - r[1]).powi(2)).sqrt()
        };
        let (e1, e2) = (err(0.2), err(0.1));
        assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn rollout_length_and_first_step() {
        let field = |x: &[f64]| Ok(vec![-x[0]]);
        let t = rollout(field, &[1.0], 0.01, 1).unwrap();
        assert_eq!(t.states, vec![vec![1.0], rk4_step(field, &[1.0], 0.01).unwrap()]);
        let t = rollout(field, &[1.0], 0.01, 999).unwrap();
        assert_eq!(t.len(), 1000);
        assert_eq!(t.time(999), 999.0 * 0.01);
    }

    #[test]
    fn divergence_guard_reports_step() {
        let err = rollout(|x: &[f64]| Ok(vec![10.0 * x[0]]), &[1.0], 0.1, 1000).unwrap_err();
        match err {
            Error::Divergence { step, .. } => assert!(step > 1 && step < 1000),
            e => panic!("unexpected {e}"),
        }
        let err = rk4_step(|_: &[f64]| Ok(vec![f64::NAN]), &[1.0], 0.1).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(rk4_step(|x: &[f64]| Ok(x.to_vec()), &[1.0], 0.0).is_err());
        assert!(rollout(|x: &[f64]| Ok(x.to_vec()), &[1.0], 0.1, 0).is_err());
    }
}
