//! Damped n-link pendulum with point masses at the link ends.
//!
//! Angles are absolute, measured from the downward vertical, so the state
//! `x = (θ₁…θₙ, θ̇₁…θ̇ₙ)` is zero at the stable equilibrium. With
//! `c_ij = Σ_{k ≥ max(i,j)} m_k` the Lagrangian equations are
//!
//! ```text
//! Σⱼ c_ij lᵢ lⱼ cos(θᵢ−θⱼ) θ̈ⱼ = −Σⱼ c_ij lᵢ lⱼ sin(θᵢ−θⱼ) θ̇ⱼ² − g c_ii lᵢ sin θᵢ − b θ̇ᵢ
//! ```

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PendulumParams {
    pub masses: Vec<f64>,
    pub lengths: Vec<f64>,
    pub gravity: f64,
    pub damping: f64,
}

impl PendulumParams {
    pub fn new(masses: Vec<f64>, lengths: Vec<f64>, gravity: f64, damping: f64) -> Result<Self> {
        if masses.is_empty() || masses.len() != lengths.len() {
            return Err(Error::contract(format!(
                "{} masses and {} lengths",
                masses.len(),
                lengths.len()
            )));
        }
        if masses.iter().chain(&lengths).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::contract("masses and lengths must be positive"));
        }
        if !(gravity > 0.0 && gravity.is_finite()) || !(damping >= 0.0 && damping.is_finite()) {
            return Err(Error::contract("gravity must be positive and damping nonnegative"));
        }
        Ok(PendulumParams {
            masses,
            lengths,
            gravity,
            damping,
        })
    }

    /// `n` unit masses on unit links, `g = 9.81`, damping `b`.
    pub fn uniform(n: usize, damping: f64) -> Result<Self> {
        PendulumParams::new(vec![1.0; n], vec![1.0; n], 9.81, damping)
    }

    pub fn links(&self) -> usize {
        self.masses.len()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.links()
    }

    /// `c_i = Σ_{k ≥ i} m_k`, so `c_ij = c_{max(i,j)}`.
    fn tail_masses(&self) -> Vec<f64> {
        let mut out = self.masses.clone();
        for i in (0..out.len().saturating_sub(1)).rev() {
            out[i] += out[i + 1];
        }
        out
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::shape(format!(
                "{}-link state has {} entries, got {}",
                self.links(),
                self.state_dim(),
                x.len()
            )));
        }
        Ok(())
    }
}

/// Mass matrix `M(θ)ᵢⱼ = c_ij lᵢ lⱼ cos(θᵢ − θⱼ)`.
pub fn mass_matrix(params: &PendulumParams, theta: &[f64]) -> Result<DMatrix<f64>> {
    let n = params.links();
    if theta.len() != n {
        return Err(Error::shape(format!("{n} links, {} angles", theta.len())));
    }
    let c = params.tail_masses();
    let l = &params.lengths;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        c[i.max(j)] * (l[i] * l[j]) * (theta[i] - theta[j]).cos()
    }))
}

/// `ẋ = (θ̇, θ̈)`.
pub fn dynamics(params: &PendulumParams, x: &[f64]) -> Result<Vec<f64>> {
    params.check_state(x)?;
    let n = params.links();
    let (theta, omega) = x.split_at(n);
    let c = params.tail_masses();
    let l = &params.lengths;
    let m = mass_matrix(params, theta)?;
    let rhs = DVector::from_fn(n, |i, _| {
        let coriolis: f64 = (0..n)
            .map(|j| c[i.max(j)] * l[i] * l[j] * (theta[i] - theta[j]).sin() * omega[j] * omega[j])
            .sum();
        -coriolis - params.gravity * c[i] * l[i] * theta[i].sin() - params.damping * omega[i]
    });
    let accel = m.cholesky().ok_or(Error::Singular)?.solve(&rhs);
    let mut out = Vec::with_capacity(2 * n);
    out.extend_from_slice(omega);
    out.extend(accel.iter());
    Ok(out)
}

/// Total mechanical energy, shifted so that the resting state has energy 0.
pub fn energy(params: &PendulumParams, x: &[f64]) -> Result<f64> {
    params.check_state(x)?;
    let n = params.links();
    let (theta, omega) = x.split_at(n);
    let c = params.tail_masses();
    let l = &params.lengths;
    let mut kinetic = 0.0;
    for i in 0..n {
        for j in 0..n {
            kinetic += c[i.max(j)] * l[i] * l[j] * (theta[i] - theta[j]).cos() * omega[i] * omega[j];
        }
    }
    let potential: f64 = (0..n)
        .map(|i| params.gravity * c[i] * l[i] * (1.0 - theta[i].cos()))
        .sum();
    Ok(0.5 * kinetic + potential)
}

/// Sampling ranges and seed a dataset was generated with.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub seed: u64,
    pub theta_range: f64,
    pub omega_range: f64,
}

/// Supervised `(x, ẋ)` pairs, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePairs {
    pub states: Tensor,
    pub derivs: Tensor,
    pub meta: DatasetMeta,
}

impl StatePairs {
    pub fn new(states: Tensor, derivs: Tensor, meta: DatasetMeta) -> Result<Self> {
        if states.shape() != derivs.shape() {
            return Err(Error::shape(format!(
                "states {} vs derivatives {}",
                states.shape(),
                derivs.shape()
            )));
        }
        Ok(StatePairs { states, derivs, meta })
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.cols()
    }
}

/// Uniform draw from `[−θ_range, θ_range]ⁿ × [−ω_range, ω_range]ⁿ`.
pub fn sample_state<R: Rng + ?Sized>(n: usize, theta_range: f64, omega_range: f64, rng: &mut R) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 * n);
    x.extend((0..n).map(|_| rng.random_range(-theta_range..=theta_range)));
    x.extend((0..n).map(|_| rng.random_range(-omega_range..=omega_range)));
    x
}

pub fn gen_dataset(
    params: &PendulumParams,
    count: usize,
    theta_range: f64,
    omega_range: f64,
    seed: u64,
) -> Result<StatePairs> {
    if count == 0 {
        return Err(Error::contract("dataset needs at least one pair"));
    }
    if !(theta_range > 0.0) || !(omega_range > 0.0) {
        return Err(Error::contract("sampling ranges must be positive"));
    }
    let n = params.links();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(count * 2 * n);
    let mut derivs = Vec::with_capacity(count * 2 * n);
    for _ in 0..count {
        let x = sample_state(n, theta_range, omega_range, &mut rng);
        derivs.extend(dynamics(params, &x)?);
        states.extend(x);
    }
    StatePairs::new(
        Tensor::from_vec(count, 2 * n, states)?,
        Tensor::from_vec(count, 2 * n, derivs)?,
        DatasetMeta {
            seed,
            theta_range,
            omega_range,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::rollout;
    use std::f64::consts::FRAC_PI_2;

    /// Standard closed form for an undamped double pendulum.
    fn double_pendulum(m1: f64, m2: f64, l1: f64, l2: f64, g: f64, x: &[f64]) -> [f64; 2] {
        let (t1, t2, w1, w2) = (x[0], x[1], x[2], x[3]);
        let den = 2.0 * m1 + m2 - m2 * (2.0 * t1 - 2.0 * t2).cos();
        let a1 = (-g * (2.0 * m1 + m2) * t1.sin()
            - m2 * g * (t1 - 2.0 * t2).sin()
            - 2.0 * (t1 - t2).sin() * m2 * (w2 * w2 * l2 + w1 * w1 * l1 * (t1 - t2).cos()))
            / (l1 * den);
        let a2 = 2.0
            * (t1 - t2).sin()
            * (w1 * w1 * l1 * (m1 + m2) + g * (m1 + m2) * t1.cos() + w2 * w2 * l2 * m2 * (t1 - t2).cos())
            / (l2 * den);
        [a1, a2]
    }

    #[test]
    fn mass_matrix_small_cases() {
        let p1 = PendulumParams::uniform(1, 0.0).unwrap();
        assert_eq!(mass_matrix(&p1, &[0.3]).unwrap()[(0, 0)], 1.0);
        let p2 = PendulumParams::uniform(2, 0.0).unwrap();
        let m = mass_matrix(&p2, &[0.4, 0.4]).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]));
    }

    #[test]
    fn mass_matrix_symmetric_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=8 {
            let masses = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
            let lengths = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
            let p = PendulumParams::new(masses, lengths, 9.81, 0.1).unwrap();
            for _ in 0..125 {
                let theta: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
                let m = mass_matrix(&p, &theta).unwrap();
                assert_eq!(m, m.transpose());
                let min_eig = m.symmetric_eigenvalues().min();
                assert!(min_eig > 0.0, "n={n}: min eigenvalue {min_eig}");
            }
        }
    }

    #[test]
    fn single_link_analytic() {
        let p = PendulumParams::new(vec![1.0], vec![1.0], 9.81, 0.1).unwrap();
        let xd = dynamics(&p, &[FRAC_PI_2, 0.0]).unwrap();
        assert!((xd[1] + 9.81).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = PendulumParams::new(vec![1.7], vec![0.6], 9.81, 0.3).unwrap();
        for _ in 0..100 {
            let x: [f64; 2] = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let expect = -(9.81 / 0.6) * x[0].sin() - 0.3 * x[1] / (1.7 * 0.6 * 0.6);
            assert!((dynamics(&p, &x).unwrap()[1] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn equilibrium_at_origin() {
        let p = PendulumParams::uniform(4, 0.1).unwrap();
        assert_eq!(dynamics(&p, &[0.0; 8]).unwrap(), vec![0.0; 8]);
        assert_eq!(energy(&p, &[0.0; 8]).unwrap(), 0.0);
    }

    #[test]
    fn double_pendulum_matches_textbook() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PendulumParams::new(vec![1.3, 0.7], vec![0.9, 1.4], 9.81, 0.0).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let got = dynamics(&p, &x).unwrap();
            let want = double_pendulum(1.3, 0.7, 0.9, 1.4, 9.81, &x);
            assert!((got[2] - want[0]).abs() < 1e-9);
            assert!((got[3] - want[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn undamped_energy_conserved() {
        for n in [1, 2, 4] {
            let p = PendulumParams::uniform(n, 0.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let x0 = sample_state(n, FRAC_PI_2, 1.0, &mut rng);
            let e0 = energy(&p, &x0).unwrap();
            let traj = rollout(|x| dynamics(&p, x), &x0, 1e-3, 10_000).unwrap();
            for x in &traj.states {
                let drift = (energy(&p, x).unwrap() - e0).abs() / e0;
                assert!(drift < 1e-6, "n={n}: drift {drift}");
            }
        }
    }

    #[test]
    fn damped_energy_non_increasing_and_decaying() {
        let p = PendulumParams::uniform(2, 0.5).unwrap();
        let x0 = [1.0, -0.5, 0.3, 0.0];
        let traj = rollout(|x| dynamics(&p, x), &x0, 1e-2, 5000).unwrap();
        let energies: Vec<f64> = traj.states.iter().map(|x| energy(&p, x).unwrap()).collect();
        for w in energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(energies.last().unwrap() < &(1e-3 * energies[0]));
    }

    #[test]
    fn dynamics_consistent_with_position_integration() {
        // central difference of θ along a rollout reproduces θ̇ to O(dt²)
        let p = PendulumParams::uniform(3, 0.1).unwrap();
        let x0 = [0.5, -0.2, 0.8, 0.1, 0.4, -0.3];
        for dt in [1e-2, 5e-3] {
            let traj = rollout(|x| dynamics(&p, x), &x0, dt, 2).unwrap();
            let mid = dynamics(&p, &traj.states[1]).unwrap();
            let err: f64 = (0..3)
                .map(|i| ((traj.states[2][i] - traj.states[0][i]) / (2.0 * dt) - mid[i]).abs())
                .fold(0.0, f64::max);
            assert!(err < 2.0 * dt * dt, "dt {dt}: {err}");
        }
    }

    #[test]
    fn dataset_properties() {
        let p = PendulumParams::uniform(2, 0.1).unwrap();
        let a = gen_dataset(&p, 50, FRAC_PI_2, 1.0, 7).unwrap();
        assert_eq!(a, gen_dataset(&p, 50, FRAC_PI_2, 1.0, 7).unwrap());
        for r in 0..a.len() {
            let x = a.states.row_slice(r);
            let xd = a.derivs.row_slice(r);
            assert_eq!(&xd[..2], &x[2..]);
            assert!(x[..2].iter().all(|t| t.abs() <= FRAC_PI_2));
            assert!(x[2..].iter().all(|w| w.abs() <= 1.0));
            assert_eq!(xd, dynamics(&p, x).unwrap().as_slice());
        }
        assert!(gen_dataset(&p, 0, 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(PendulumParams::new(vec![], vec![], 9.81, 0.1).is_err());
        assert!(PendulumParams::new(vec![1.0], vec![0.0], 9.81, 0.1).is_err());
        assert!(PendulumParams::new(vec![1.0], vec![1.0], 9.81, -0.1).is_err());
        let p = PendulumParams::uniform(2, 0.1).unwrap();
        assert!(matches!(dynamics(&p, &[0.0; 3]), Err(Error::Shape(_))));
    }
}
