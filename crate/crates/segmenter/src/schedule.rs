use crate::error::{Result, SegError};

/// `base_lr * (1 - iter / max_iters)^power`.
pub fn poly_lr(iter: usize, base_lr: f64, max_iters: usize, power: f64) -> Result<f64> {
    if max_iters == 0 {
        return Err(SegError::Schedule("max_iters must be positive".into()));
    }
    if iter > max_iters {
        return Err(SegError::Schedule(format!("iteration {iter} beyond max_iters {max_iters}")));
    }
    Ok(base_lr * (1.0 - iter as f64 / max_iters as f64).powf(power))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(poly_lr(0, 0.01, 100, 0.9).unwrap(), 0.01);
        assert_eq!(poly_lr(100, 0.01, 100, 0.9).unwrap(), 0.0);
        assert!((poly_lr(50, 0.01, 100, 0.9).unwrap() - 0.01 * 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!(poly_lr(101, 0.01, 100, 0.9).is_err());
        assert!(poly_lr(0, 0.01, 0, 0.9).is_err());
    }
}
