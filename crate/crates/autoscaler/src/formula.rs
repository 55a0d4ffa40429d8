use crate::AutoscaleError;

/// `ceil(current * current_metric / target_metric)`.
///
/// Products that land within floating-point noise of an integer are taken
/// as that integer, so `(3, 50, 50)` stays 3 rather than becoming 4. The
/// result may be 0 when the metric is 0; clamping to the autoscaler's bounds
/// is the caller's job.
pub fn desired_replicas(current: u32, current_metric: f64, target_metric: f64) -> Result<u32, AutoscaleError> {
    if !(target_metric.is_finite() && target_metric > 0.0) {
        return Err(AutoscaleError::InvalidTarget(target_metric));
    }
    if !(current_metric.is_finite() && current_metric >= 0.0) {
        return Err(AutoscaleError::InvalidMetric(current_metric));
    }
    let raw = current as f64 * (current_metric / target_metric);
    let nearest = raw.round();
    let ceil = if (raw - nearest).abs() <= 1e-9 * raw.max(1.0) {
        nearest
    } else {
        raw.ceil()
    };
    Ok(if ceil >= u32::MAX as f64 { u32::MAX } else { ceil as u32 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        assert_eq!(desired_replicas(4, 90.0, 50.0).unwrap(), 8);
    }

    #[test]
    fn small_ratios_round_up() {
        assert_eq!(desired_replicas(1, 30.0, 60.0).unwrap(), 1);
        assert_eq!(desired_replicas(1, 90.0, 30.0).unwrap(), 3);
        assert_eq!(desired_replicas(3, 10.0, 30.0).unwrap(), 1);
        assert_eq!(desired_replicas(5, 0.0, 30.0).unwrap(), 0);
    }

    #[test]
    fn exact_products_are_not_bumped() {
        // 0.1 * 3 / 0.1 is 3.0000000000000004 in binary floating point.
        assert_eq!(desired_replicas(3, 0.1, 0.1).unwrap(), 3);
        assert_eq!(desired_replicas(10, 0.7, 0.1).unwrap(), 70);
    }

    #[test]
    fn rejects_bad_targets() {
        assert!(desired_replicas(1, 1.0, 0.0).is_err());
        assert!(desired_replicas(1, 1.0, -5.0).is_err());
        assert!(desired_replicas(1, f64::NAN, 5.0).is_err());
        assert!(desired_replicas(1, -1.0, 5.0).is_err());
    }

    /// Integer-only ceiling of `c * m / t` for integral metrics.
    fn int_oracle(c: u64, m: u64, t: u64) -> u64 {
        (c * m).div_ceil(t)
    }

    proptest! {
        #[test]
        fn ratio_one_is_identity(n in 1u32..10_000, m in 0.001f64..1e6) {
            prop_assert_eq!(desired_replicas(n, m, m).unwrap(), n);
        }

        #[test]
        fn matches_integer_oracle(c in 1u64..1000, m in 0u64..1000, t in 1u64..1000) {
            prop_assert_eq!(desired_replicas(c as u32, m as f64, t as f64).unwrap() as u64, int_oracle(c, m, t));
        }

        #[test]
        fn monotone_in_metric(c in 1u32..1000, a in 0.0f64..500.0, b in 0.0f64..500.0, t in 0.1f64..500.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(desired_replicas(c, lo, t).unwrap() <= desired_replicas(c, hi, t).unwrap());
        }

        #[test]
        fn scale_invariant(c in 1u32..1000, m in 0u32..1000, t in 1u32..1000, k in 1u32..64) {
            // Integral inputs scaled by a power of two keep the ratio exact.
            let k = 2f64.powi((k % 12) as i32 - 6);
            prop_assert_eq!(
                desired_replicas(c, m as f64 * k, t as f64 * k).unwrap(),
                desired_replicas(c, m as f64, t as f64).unwrap()
            );
        }
    }
}
