pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Quantile by linear interpolation between order statistics
/// (position `q * (n - 1)` in the sorted data).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Keep values inside the closed fences `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]`,
/// preserving input order.
pub fn iqr_filter(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    values.iter().copied().filter(|v| (lo..=hi).contains(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quartiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0, 100.0];
        assert_eq!(quantile(&s, 0.25), 2.0);
        assert_eq!(quantile(&s, 0.75), 4.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.75);
    }

    #[test]
    fn iqr_examples() {
        assert_eq!(iqr_filter(&[1.0, 2.0, 3.0, 4.0, 5.0]), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(iqr_filter(&[1.0, 2.0, 3.0, 4.0, 100.0]), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(iqr_filter(&[2.5; 6]), vec![2.5; 6]);
        // fence is closed: Q3 + 1.5 IQR = 7 exactly is kept
        assert_eq!(iqr_filter(&[1.0, 2.0, 3.0, 4.0, 7.0]).len(), 5);
        assert_eq!(iqr_filter(&[7.0]), vec![7.0]);
    }

    #[test]
    fn second_pass_can_remove_more() {
        let once = iqr_filter(&[0.3, 0.2, 0.6, 0.3, 0.0, 1.8]);
        assert_eq!(once, vec![0.3, 0.2, 0.6, 0.3, 0.0]);
        assert_eq!(iqr_filter(&once), vec![0.3, 0.2, 0.3]);
    }

    #[test]
    fn sd_matches_hand_value() {
        assert!((sample_sd(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
        assert_eq!(sample_sd(&[4.0]), 0.0);
    }

    proptest! {
        // A single pass can leave values that a second pass would flag, since
        // the fences move once outliers are gone. Filtering is idempotent only
        // when the first pass removed nothing.
        #[test]
        fn filter_keeps_subset(values in prop::collection::vec(-1e3f64..1e3, 1..60)) {
            let kept = iqr_filter(&values);
            prop_assert!(!kept.is_empty());
            prop_assert!(kept.iter().all(|v| values.contains(v)));
            if kept.len() == values.len() {
                prop_assert_eq!(iqr_filter(&kept), kept);
            }
        }
    }
}
