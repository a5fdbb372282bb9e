use crate::diff;
use crate::error::{Error, Result};

/// Hidden-layer activation of a fully connected network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// Smoothed ReLU with quadratic region width `d`.
    Smooth(f64),
}

/// `σ(x; d)`: zero for `x ≤ 0`, `x²/2d` on `(0, d)`, `x − d/2` beyond.
/// Continuously differentiable with `σ(0) = 0`.
pub fn smoothed_relu(x: f64, d: f64) -> Result<f64> {
    check_width(d)?;
    Ok(diff::smooth_relu(x, d))
}

/// Derivative of [`smoothed_relu`]; always in `[0, 1]`.
pub fn smoothed_relu_prime(x: f64, d: f64) -> Result<f64> {
    check_width(d)?;
    Ok(diff::smooth_relu_prime(x, d))
}

pub(crate) fn check_width(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!("smoothing width must be positive, got {d}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn branch_values() {
        assert_eq!(smoothed_relu(-1.0, 0.1).unwrap(), 0.0);
        assert_eq!(smoothed_relu(0.0, 0.1).unwrap(), 0.0);
        assert!((smoothed_relu(0.1, 0.1).unwrap() - 0.05).abs() < 1e-15);
        assert!((smoothed_relu(0.3, 0.1).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_width() {
        assert!(smoothed_relu(1.0, 0.0).is_err());
        assert!(smoothed_relu(1.0, -0.5).is_err());
        assert!(smoothed_relu(1.0, f64::NAN).is_err());
    }

    #[test]
    fn continuous_with_continuous_slope_at_seams() {
        let d = 0.1;
        for seam in [0.0, d] {
            let at = smoothed_relu(seam, d).unwrap();
            for off in [1e-9, -1e-9] {
                assert!((smoothed_relu(seam + off, d).unwrap() - at).abs() < 1e-8);
            }
            let h = 1e-7;
            let left = (at - smoothed_relu(seam - h, d).unwrap()) / h;
            let right = (smoothed_relu(seam + h, d).unwrap() - at) / h;
            assert!((left - right).abs() < 1e-6, "seam {seam}: {left} vs {right}");
        }
    }

    proptest! {
        #[test]
        fn slope_in_unit_interval_and_monotone(a in -2.0f64..2.0, b in -2.0f64..2.0, d in 0.01f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (pl, ph) = (smoothed_relu_prime(lo, d).unwrap(), smoothed_relu_prime(hi, d).unwrap());
            prop_assert!((0.0..=1.0).contains(&pl));
            prop_assert!(pl <= ph);
            prop_assert!(smoothed_relu(lo, d).unwrap() <= smoothed_relu(hi, d).unwrap());
        }

        #[test]
        fn midpoint_convex(a in -2.0f64..2.0, b in -2.0f64..2.0, d in 0.01f64..1.0) {
            let mid = smoothed_relu(0.5 * (a + b), d).unwrap();
            let avg = 0.5 * (smoothed_relu(a, d).unwrap() + smoothed_relu(b, d).unwrap());
            prop_assert!(mid <= avg + 1e-15);
        }
    }
}
