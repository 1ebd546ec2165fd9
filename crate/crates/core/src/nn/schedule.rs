//! Learning-rate schedule.

use crate::scalar::Scalar;

/// Cosine decay: lr0 * 0.5 * (1 + cos(pi * step / total_steps)).
///
/// lr(0) = lr0, lr(total_steps) = 0, monotone non-increasing in between.
/// Steps past the horizon stay at zero; a zero-length schedule is already
/// finished.
pub fn cosine_lr<S: Scalar>(lr0: S, step: u64, total_steps: u64) -> S {
    if total_steps == 0 || step >= total_steps {
        return S::zero();
    }
    let frac = step as f64 / total_steps as f64;
    lr0 * S::c(0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(cosine_lr(2e-4f64, 0, 100), 2e-4);
        assert_eq!(cosine_lr(2e-4f64, 100, 100), 0.0);
        assert!((cosine_lr(2e-4f64, 50, 100) - 1e-4).abs() < 1e-18);
        assert_eq!(cosine_lr(2e-4f64, 150, 100), 0.0, "past horizon stays zero");
        assert_eq!(cosine_lr(2e-4f64, 0, 0), 0.0, "empty schedule");
    }

    #[test]
    fn monotone_non_increasing() {
        let mut prev = f64::INFINITY;
        for step in 0..=1000 {
            let lr = cosine_lr(2e-4f64, step, 1000);
            assert!(lr <= prev + 1e-18, "increase at step {step}");
            prev = lr;
        }
    }
}
