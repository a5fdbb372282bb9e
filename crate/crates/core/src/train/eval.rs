use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::DynamicsModel;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::ode::{rk4_step, DIVERGENCE_NORM};
use crate::pendulum::{dynamics, sample_state, PendulumParams};

/// Per-step error values are clamped here once a rollout blows up.
pub const ERROR_CLAMP: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Number of recorded states per trajectory, including the initial one.
    pub horizon: usize,
    pub ensemble: usize,
    pub dt: f64,
    pub seed: u64,
    pub theta_range: f64,
    pub omega_range: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            horizon: 999,
            ensemble: 500,
            dt: 0.01,
            seed: 0,
            theta_range: std::f64::consts::FRAC_PI_2,
            omega_range: 1.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.ensemble == 0 {
            return Err(Error::contract("horizon and ensemble must be at least 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::contract(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// Ensemble rollout error of a learned model against the true pendulum.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSeries {
    pub dt: f64,
    pub ensemble: usize,
    /// Mean over the ensemble of the per-coordinate squared state error, one
    /// entry per recorded step.
    pub mean_error: Vec<f64>,
    /// Number of model rollouts that have diverged by each step.
    pub diverged_count: Vec<usize>,
    /// Largest model state norm seen along each trajectory (infinite once diverged).
    pub max_norm: Vec<f64>,
    /// Step at which each model rollout diverged, if it did.
    pub divergence_step: Vec<Option<usize>>,
}

impl EvalSeries {
    pub fn horizon(&self) -> usize {
        self.mean_error.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn any_diverged(&self) -> bool {
        self.divergence_step.iter().any(Option::is_some)
    }

    /// Mean of the last `k` entries (all entries if fewer).
    pub fn tail_mean(&self, k: usize) -> f64 {
        let tail = &self.mean_error[self.mean_error.len().saturating_sub(k)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.mean_error.iter().copied().fold(0.0, f64::max)
    }
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One RK4 step of a batched field; rows already marked dead are held at zero.
fn batch_rk4<F>(field: &mut F, x: &Tensor, dt: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    let k1 = field(x)?;
    let stage = |k: &Tensor, h: f64| x.zip_map(k, |a, b| a + h * b);
    let k2 = field(&stage(&k1, 0.5 * dt))?;
    let k3 = field(&stage(&k2, 0.5 * dt))?;
    let k4 = field(&stage(&k3, dt))?;
    let mut out = x.clone();
    let (o, a, b, c, d) = (
        out.as_mut_slice(),
        k1.as_slice(),
        k2.as_slice(),
        k3.as_slice(),
        k4.as_slice(),
    );
    for i in 0..o.len() {
        o[i] += dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]);
    }
    Ok(out)
}

/// Initial states of the evaluation ensemble.
pub fn eval_initial_states(links: usize, config: &EvalConfig) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rows: Vec<Vec<f64>> = (0..config.ensemble)
        .map(|_| sample_state(links, config.theta_range, config.omega_range, &mut rng))
        .collect();
    Tensor::from_rows(&rows)
}

/// Rolls out `model` and the true pendulum from shared initial states and
/// records the per-step error.
pub fn eval_rollout_error(model: &DynamicsModel, truth: &PendulumParams, config: &EvalConfig) -> Result<EvalSeries> {
    config.validate()?;
    if model.state_dim() != truth.state_dim() {
        return Err(Error::shape(format!(
            "model dim {} does not match pendulum state dim {}",
            model.state_dim(),
            truth.state_dim()
        )));
    }
    let mut field = model.compile(config.ensemble)?;
    eval_with_field(|xs: &Tensor| field.eval(xs), truth, config)
}

/// [`eval_rollout_error`] for an arbitrary batched field.
pub fn eval_with_field<F>(mut field: F, truth: &PendulumParams, config: &EvalConfig) -> Result<EvalSeries>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    config.validate()?;
    let n = truth.state_dim();
    let m = config.ensemble;
    let x0 = eval_initial_states(truth.links(), config)?;
    let mut truth_states: Vec<Vec<f64>> = (0..m).map(|i| x0.row_slice(i).to_vec()).collect();
    let mut model = x0;

    let mut mean_error = Vec::with_capacity(config.horizon);
    let mut diverged_count = Vec::with_capacity(config.horizon);
    let mut max_norm: Vec<f64> = (0..m).map(|i| row_norm(model.row_slice(i))).collect();
    let mut divergence_step: Vec<Option<usize>> = vec![None; m];
    mean_error.push(0.0);
    diverged_count.push(0);

    for step in 1..config.horizon {
        for x in truth_states.iter_mut() {
            *x = rk4_step(|s: &[f64]| dynamics(truth, s), x, config.dt)?;
        }
        let mut next = batch_rk4(&mut field, &model, config.dt)?;
        let mut total = 0.0;
        let mut dead = 0;
        for i in 0..m {
            if divergence_step[i].is_none() {
                let row = next.row_slice(i);
                let norm = row_norm(row);
                if !norm.is_finite() || norm > DIVERGENCE_NORM {
                    divergence_step[i] = Some(step);
                    max_norm[i] = f64::INFINITY;
                } else {
                    max_norm[i] = max_norm[i].max(norm);
                }
            }
            if divergence_step[i].is_some() {
                next.row_slice_mut(i).fill(0.0);
                total += ERROR_CLAMP;
                dead += 1;
            } else {
                let err = next
                    .row_slice(i)
                    .iter()
                    .zip(&truth_states[i])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / n as f64;
                total += err.min(ERROR_CLAMP);
            }
        }
        model = next;
        mean_error.push(total / m as f64);
        diverged_count.push(dead);
    }
    Ok(EvalSeries {
        dt: config.dt,
        ensemble: m,
        mean_error,
        diverged_count,
        max_norm,
        divergence_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{ModelKind, TrainConfig};

    fn small_eval() -> EvalConfig {
        EvalConfig {
            horizon: 40,
            ensemble: 6,
            dt: 0.01,
            seed: 2,
            ..EvalConfig::default()
        }
    }

    #[test]
    fn exact_field_gives_zero_series() {
        let p = PendulumParams::uniform(2, 0.1).unwrap();
        let cfg = small_eval();
        let truth_field = |xs: &Tensor| {
            let rows: Vec<Vec<f64>> = (0..xs.rows()).map(|i| dynamics(&p, xs.row_slice(i)).unwrap()).collect();
            Tensor::from_rows(&rows)
        };
        let s = eval_with_field(truth_field, &p, &cfg).unwrap();
        assert_eq!(s.horizon(), 40);
        assert!(s.mean_error.iter().all(|&e| e == 0.0));
        assert!(!s.any_diverged());
    }

    #[test]
    fn learned_model_series_shape() {
        let p = PendulumParams::uniform(1, 0.1).unwrap();
        let tc = TrainConfig {
            kind: ModelKind::Stable,
            fhat_hidden: vec![8],
            icnn_hidden: vec![8],
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = tc.init_model(2, &mut rng).unwrap();
        let s = eval_rollout_error(&model, &p, &small_eval()).unwrap();
        assert_eq!(s.mean_error.len(), 40);
        assert_eq!(s.mean_error[0], 0.0);
        assert!(s.mean_error.iter().all(|&e| e >= 0.0 && e.is_finite()));
        assert_eq!(s.diverged_count.iter().sum::<usize>(), 0);
    }

    #[test]
    fn blow_up_is_clamped_and_counted() {
        let p = PendulumParams::uniform(1, 0.1).unwrap();
        let cfg = small_eval();
        let s = eval_with_field(|xs: &Tensor| Ok(xs.map(|v| 1e4 * v * v * v.signum() + v)), &p, &cfg).unwrap();
        assert!(s.any_diverged());
        assert!(s.mean_error.iter().all(|e| e.is_finite() && *e <= ERROR_CLAMP));
        assert_eq!(*s.diverged_count.last().unwrap(), 6);
        assert!(s.diverged_count.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = PendulumParams::uniform(2, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = TrainConfig::default().init_model(2, &mut rng).unwrap();
        assert!(eval_rollout_error(&model, &p, &small_eval()).is_err());
        let bad = EvalConfig {
            horizon: 0,
            ..small_eval()
        };
        assert!(bad.validate().is_err());
    }
}
