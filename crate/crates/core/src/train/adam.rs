use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected adaptive-moment optimiser state.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new(params: &[&Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn adam_step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape(format!(
                    "parameter {} / gradient {} / moment {}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Shape;

    #[test]
    fn zero_gradient_from_zero_state_is_noop() {
        let mut p = Tensor::row(&[1.0, -2.0, 3.0]);
        let before = p.clone();
        let mut opt = AdamState::new(&[&p]);
        opt.adam_step(vec![&mut p], &[Tensor::zeros(Shape::new(1, 3))], 1e-3)
            .unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_each_coordinate_by_lr() {
        let mut p = Tensor::row(&[0.0, 0.0, 0.0]);
        let mut opt = AdamState::new(&[&p]);
        let g = Tensor::row(&[3.0, -0.01, 250.0]);
        opt.adam_step(vec![&mut p], std::slice::from_ref(&g), 0.01).unwrap();
        for (pi, gi) in p.as_slice().iter().zip(g.as_slice()) {
            assert!((pi + 0.01 * gi.signum()).abs() < 1e-7, "{pi}");
        }
    }

    #[test]
    fn descends_a_quadratic() {
        // f(p) = ‖p − c‖²
        let c = [1.5, -0.5];
        let loss = |p: &Tensor| p.as_slice().iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut p = Tensor::row(&[0.0, 0.0]);
        let mut opt = AdamState::new(&[&p]);
        let l0 = loss(&p);
        for _ in 0..2 {
            let g = Tensor::row(&[2.0 * (p.as_slice()[0] - c[0]), 2.0 * (p.as_slice()[1] - c[1])]);
            opt.adam_step(vec![&mut p], &[g], 0.1).unwrap();
        }
        assert!(loss(&p) < l0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::row(&[0.0, 0.0]);
        let mut opt = AdamState::new(&[&p]);
        assert!(opt.adam_step(vec![&mut p], &[Tensor::row(&[1.0])], 0.1).is_err());
        assert!(opt.adam_step(vec![], &[], 0.1).is_err());
    }
}
