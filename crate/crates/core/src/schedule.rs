//! Linear warm-up followed by cosine decay.

use crate::error::{Error, Result};

/// Learning rate for optimizer step `step` (0-based) of `steps`.
///
/// Ramps linearly from 0 to `peak` over `warmup` steps, then follows
/// `peak * (1 + cos(pi * progress)) / 2` down to 0 at `steps`.
pub fn cosine_lr(step: usize, steps: usize, warmup: usize, peak: f64) -> Result<f64> {
    if step > steps {
        return Err(Error::Config(format!("step {step} is past the end of a {steps}-step schedule")));
    }
    if warmup > steps {
        return Err(Error::Config(format!("warm-up of {warmup} steps exceeds {steps} steps")));
    }
    if step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    let span = steps - warmup;
    if span == 0 {
        return Ok(peak);
    }
    let progress = (step - warmup) as f64 / span as f64;
    Ok(peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn junctions() {
        let (steps, warm, lr) = (800, 80, 5e-6);
        assert_eq!(cosine_lr(0, steps, warm, lr).unwrap(), 0.0);
        assert_eq!(cosine_lr(warm, steps, warm, lr).unwrap(), lr);
        assert!(cosine_lr(steps, steps, warm, lr).unwrap().abs() < 1e-20);
        let mid = warm + (steps - warm) / 2;
        assert!((cosine_lr(mid, steps, warm, lr).unwrap() - lr / 2.0).abs() < 1e-18);
        assert!((cosine_lr(40, steps, warm, lr).unwrap() - lr / 2.0).abs() < 1e-18);
    }

    #[test]
    fn out_of_range() {
        assert!(cosine_lr(801, 800, 80, 1.0).is_err());
        assert!(cosine_lr(0, 10, 11, 1.0).is_err());
    }

    #[test]
    fn monotone_after_warmup() {
        let lrs: Vec<f64> = (80..=800).map(|s| cosine_lr(s, 800, 80, 1.0).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
