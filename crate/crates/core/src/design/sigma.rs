use crate::error::{Error, Result};

/// Code rate above which the FOM shortener with `σ = 1` is preferred.
pub const DEFAULT_CODE_RATE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaChoice {
    /// FOM shortener designed for this feedback quality.
    Fom { sigma: f64 },
    /// UBM shortener (no feedback).
    Ubm,
}

/// Shortener choice for a code rate, using [`DEFAULT_CODE_RATE_THRESHOLD`].
pub fn select_sigma(code_rate: f64) -> Result<SigmaChoice> {
    select_sigma_with_threshold(code_rate, DEFAULT_CODE_RATE_THRESHOLD)
}

pub fn select_sigma_with_threshold(code_rate: f64, threshold: f64) -> Result<SigmaChoice> {
    if !(code_rate > 0.0 && code_rate < 1.0) {
        return Err(Error::InvalidInput(format!("code rate must lie in (0, 1), got {code_rate}")));
    }
    Ok(if code_rate > threshold { SigmaChoice::Fom { sigma: 1.0 } } else { SigmaChoice::Ubm })
}

/// Lower bound `1 − δ/2` on the feedback quality of hard decisions, given
/// the linear MMSE per-symbol error `δ`.
pub fn sigma_advisory_bound(delta_mse: f64) -> f64 {
    1.0 - delta_mse / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn choices() {
        assert_eq!(select_sigma(2.0 / 3.0).unwrap(), SigmaChoice::Fom { sigma: 1.0 });
        assert_eq!(select_sigma(0.75).unwrap(), SigmaChoice::Fom { sigma: 1.0 });
        assert_eq!(select_sigma(1.0 / 3.0).unwrap(), SigmaChoice::Ubm);
        assert_eq!(select_sigma(0.5).unwrap(), SigmaChoice::Ubm);
        assert!(select_sigma(1.0).is_err());
        assert!((sigma_advisory_bound(0.1) - 0.95).abs() < 1e-15);
    }
}
