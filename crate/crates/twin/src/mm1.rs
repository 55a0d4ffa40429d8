use crate::TwinError;

/// Mean queue length of an M/M/1 queue, `λ² / (μ (μ − λ))`.
pub fn calc_lq(lambda_hz: f64, mu_hz: f64) -> Result<f64, TwinError> {
    if !lambda_hz.is_finite() || lambda_hz < 0.0 {
        return Err(TwinError::InvalidRate(lambda_hz));
    }
    if !mu_hz.is_finite() || mu_hz <= 0.0 {
        return Err(TwinError::InvalidRate(mu_hz));
    }
    if lambda_hz >= mu_hz {
        return Err(TwinError::Unstable {
            lambda: lambda_hz,
            mu: mu_hz,
        });
    }
    Ok(lambda_hz * lambda_hz / (mu_hz * (mu_hz - lambda_hz)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_evaluation() {
        // 162^2 / (222 * 60) and 166^2 / (222 * 56)
        assert!((calc_lq(162.0, 222.0).unwrap() - 26244.0 / 13320.0).abs() < 1e-12);
        assert!((calc_lq(162.0, 222.0).unwrap() - 1.9703).abs() < 1e-4);
        assert!((calc_lq(166.0, 222.0).unwrap() - 2.2165).abs() < 1e-4);
    }

    #[test]
    fn empty_arrivals() {
        for mu in [0.5, 1.0, 167.0, 1e6] {
            assert_eq!(calc_lq(0.0, mu).unwrap(), 0.0);
        }
    }

    #[test]
    fn unstable_queue_rejected() {
        assert!(matches!(calc_lq(222.0, 222.0), Err(TwinError::Unstable { .. })));
        assert!(matches!(calc_lq(300.0, 222.0), Err(TwinError::Unstable { .. })));
        assert!(calc_lq(-1.0, 2.0).is_err());
        assert!(calc_lq(1.0, 0.0).is_err());
    }
}
