use serde::{Deserialize, Serialize};

use super::special::f_sf;
use super::{GroupSummary, StatsError};

/// Classical one-way ANOVA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p_value: f64,
    pub eta_squared: f64,
    pub ss_between: f64,
    pub ss_within: f64,
}

/// One-way ANOVA on raw groups. Each group needs at least two observations.
pub fn anova_oneway<G: AsRef<[f64]>>(groups: &[G]) -> Result<AnovaResult, StatsError> {
    let summaries = groups
        .iter()
        .enumerate()
        .map(|(i, g)| GroupSummary::from_values(i.to_string(), g.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    if summaries.len() < 2 {
        return Err(StatsError::TooFewGroups {
            required: 2,
            found: summaries.len(),
        });
    }
    let n_total: usize = summaries.iter().map(|s| s.n).sum();
    let grand = groups.iter().flat_map(|g| g.as_ref()).sum::<f64>() / n_total as f64;
    let ss_between = summaries
        .iter()
        .map(|s| s.n as f64 * (s.mean - grand).powi(2))
        .sum();
    let ss_within = groups
        .iter()
        .zip(&summaries)
        .map(|(g, s)| g.as_ref().iter().map(|x| (x - s.mean).powi(2)).sum::<f64>())
        .sum();
    finish(ss_between, ss_within, summaries.len(), n_total)
}

/// One-way ANOVA from group sizes, means and sample standard deviations.
pub fn anova_from_summary(groups: &[GroupSummary]) -> Result<AnovaResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups {
            required: 2,
            found: groups.len(),
        });
    }
    if let Some(g) = groups.iter().find(|g| g.n == 0 || !g.mean.is_finite() || !(g.sd >= 0.0)) {
        return Err(StatsError::InvalidInput(format!("bad summary for group `{}`", g.label)));
    }
    let n_total: usize = groups.iter().map(|g| g.n).sum();
    let grand = groups.iter().map(|g| g.n as f64 * g.mean).sum::<f64>() / n_total as f64;
    let ss_between = groups
        .iter()
        .map(|g| g.n as f64 * (g.mean - grand).powi(2))
        .sum();
    let ss_within = groups
        .iter()
        .map(|g| (g.n as f64 - 1.0) * g.variance())
        .sum();
    finish(ss_between, ss_within, groups.len(), n_total)
}

fn finish(ss_between: f64, ss_within: f64, k: usize, n_total: usize) -> Result<AnovaResult, StatsError> {
    if n_total <= k {
        return Err(StatsError::InvalidInput(format!(
            "{n_total} observations leave no within-group degrees of freedom for {k} groups"
        )));
    }
    let df_between = k - 1;
    let df_within = n_total - k;
    let total = ss_between + ss_within;
    if total <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let ms_between = ss_between / df_between as f64;
    let ms_within = ss_within / df_within as f64;
    let f = if ms_within > 0.0 { ms_between / ms_within } else { f64::INFINITY };
    Ok(AnovaResult {
        f,
        df_between,
        df_within,
        p_value: f_sf(f, df_between as f64, df_within as f64),
        eta_squared: ss_between / total,
        ss_between,
        ss_within,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_two_groups() {
        // SSB = 3 * (2 - 3.5)^2 + 3 * (5 - 3.5)^2 = 13.5, SSW = 4, MSW = 1
        let r = anova_oneway(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert!((r.f - 13.5).abs() < 1e-12);
        assert_eq!((r.df_between, r.df_within), (1, 4));
        assert!((r.eta_squared - 13.5 / 17.5).abs() < 1e-15);
    }

    #[test]
    fn equal_means_give_zero() {
        let r = anova_oneway(&[vec![1.0, 3.0], vec![0.0, 4.0], vec![2.0, 2.5, 1.5]]).unwrap();
        assert!(r.f.abs() < 1e-15);
        assert!(r.eta_squared.abs() < 1e-15);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let s = GroupSummary::new("a", 10, 2.0, 1.0);
        assert_eq!(anova_from_summary(&[s.clone(), s]).unwrap().f, 0.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(anova_oneway(&[vec![1.0, 2.0]]), Err(StatsError::TooFewGroups { .. })));
        assert!(matches!(
            anova_oneway(&[vec![1.0, 2.0], vec![3.0]]),
            Err(StatsError::GroupTooSmall { .. })
        ));
        assert_eq!(anova_oneway(&[vec![1.0, 1.0], vec![1.0, 1.0]]), Err(StatsError::ZeroVariance));
        let r = anova_oneway(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert!(r.f.is_infinite());
        assert_eq!(r.p_value, 0.0);
        assert_eq!(r.eta_squared, 1.0);
    }

    fn groups_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 2..12), 2..6)
    }

    proptest! {
        #[test]
        fn raw_and_summary_forms_agree(groups in groups_strategy()) {
            let raw = anova_oneway(&groups).unwrap();
            let summaries: Vec<_> = groups
                .iter()
                .map(|g| GroupSummary::from_values("g", g).unwrap())
                .collect();
            let summary = anova_from_summary(&summaries).unwrap();
            prop_assert!((raw.f - summary.f).abs() <= 1e-10 * raw.f.max(1.0));
            prop_assert!((raw.eta_squared - summary.eta_squared).abs() < 1e-10);
            prop_assert_eq!(raw.df_within, summary.df_within);
        }

        #[test]
        fn shift_and_scale_invariance(groups in groups_strategy(), shift in -100.0f64..100.0, scale in 0.1f64..10.0) {
            let base = anova_oneway(&groups).unwrap();
            prop_assert!((0.0..=1.0).contains(&base.eta_squared));
            let moved: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|x| x * scale + shift).collect()).collect();
            let r = anova_oneway(&moved).unwrap();
            prop_assert!((r.f - base.f).abs() <= 1e-7 * base.f.max(1.0));
            prop_assert!((r.eta_squared - base.eta_squared).abs() < 1e-9);
        }
    }
}
