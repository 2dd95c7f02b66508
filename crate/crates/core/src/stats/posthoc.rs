use std::fmt;

use serde::{Deserialize, Serialize};

use super::ptukey::studentized_range_sf;
use super::{GroupSummary, StatsError, ALPHA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub group_i: String,
    pub group_j: String,
    /// `mean_j - mean_i`
    pub mean_diff: f64,
    pub q: f64,
    pub df: f64,
    pub p_value: f64,
}

impl PairComparison {
    pub fn significant(&self) -> bool {
        self.p_value < ALPHA
    }
}

/// Star rating used next to ordering chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Significance {
    /// p < .05
    One,
    /// p < .01
    Two,
    /// p < .001
    Three,
}

impl Significance {
    pub fn from_p(p: f64) -> Option<Self> {
        if p < 0.001 {
            Some(Significance::Three)
        } else if p < 0.01 {
            Some(Significance::Two)
        } else if p < ALPHA {
            Some(Significance::One)
        } else {
            None
        }
    }

    pub fn stars(self) -> &'static str {
        match self {
            Significance::One => "*",
            Significance::Two => "**",
            Significance::Three => "***",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosthocResult {
    pub labels: Vec<String>,
    pub comparisons: Vec<PairComparison>,
    /// Adjacent groups joined by `<`, `>` or `=`, e.g. `0 < 1 = 2 < 3`.
    pub chain: String,
    /// Weakest significance among the `<` / `>` links of the chain.
    pub chain_significance: Option<Significance>,
}

impl PosthocResult {
    pub fn pair(&self, a: &str, b: &str) -> Option<&PairComparison> {
        self.comparisons
            .iter()
            .find(|c| (c.group_i == a && c.group_j == b) || (c.group_i == b && c.group_j == a))
    }

    pub fn all_significant(&self) -> bool {
        self.comparisons.iter().all(PairComparison::significant)
    }
}

impl fmt::Display for PosthocResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.chain)?;
        if let Some(s) = self.chain_significance {
            f.write_str(s.stars())?;
        }
        Ok(())
    }
}

/// Games-Howell comparisons of every pair of raw groups.
pub fn games_howell<G: AsRef<[f64]>>(labels: &[String], groups: &[G]) -> Result<PosthocResult, StatsError> {
    if labels.len() != groups.len() {
        return Err(StatsError::InvalidInput(format!(
            "{} labels for {} groups",
            labels.len(),
            groups.len()
        )));
    }
    let summaries = labels
        .iter()
        .zip(groups)
        .map(|(l, g)| GroupSummary::from_values(l.clone(), g.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    games_howell_from_summary(&summaries)
}

/// Games-Howell from group summaries: Welch standard error and
/// Satterthwaite df per pair, p from the studentized range with `k` groups.
pub fn games_howell_from_summary(groups: &[GroupSummary]) -> Result<PosthocResult, StatsError> {
    let k = groups.len();
    if k < 2 {
        return Err(StatsError::TooFewGroups { required: 2, found: k });
    }
    if let Some(g) = groups.iter().find(|g| g.n < 2) {
        return Err(StatsError::GroupTooSmall {
            label: g.label.clone(),
            n: g.n,
            required: 2,
        });
    }
    let mut comparisons = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            comparisons.push(compare(&groups[i], &groups[j], k)?);
        }
    }
    let labels: Vec<String> = groups.iter().map(|g| g.label.clone()).collect();
    let (chain, chain_significance) = build_chain(&labels, &comparisons);
    Ok(PosthocResult {
        labels,
        comparisons,
        chain,
        chain_significance,
    })
}

fn compare(a: &GroupSummary, b: &GroupSummary, k: usize) -> Result<PairComparison, StatsError> {
    let va = a.variance() / a.n as f64;
    let vb = b.variance() / b.n as f64;
    let se2 = va + vb;
    let mean_diff = b.mean - a.mean;
    let (q, df, p_value) = if se2 == 0.0 {
        if mean_diff == 0.0 {
            (0.0, f64::INFINITY, 1.0)
        } else {
            (f64::INFINITY, f64::INFINITY, 0.0)
        }
    } else {
        let df = se2 * se2 / (va * va / (a.n as f64 - 1.0) + vb * vb / (b.n as f64 - 1.0));
        let q = mean_diff.abs() / (se2 / 2.0).sqrt();
        (q, df, studentized_range_sf(q, k, df)?)
    };
    Ok(PairComparison {
        group_i: a.label.clone(),
        group_j: b.label.clone(),
        mean_diff,
        q,
        df,
        p_value,
    })
}

fn build_chain(labels: &[String], comparisons: &[PairComparison]) -> (String, Option<Significance>) {
    let mut chain = labels.first().cloned().unwrap_or_default();
    let mut weakest: Option<f64> = None;
    for w in labels.windows(2) {
        let c = comparisons
            .iter()
            .find(|c| c.group_i == w[0] && c.group_j == w[1])
            .expect("adjacent pair compared");
        let rel = if !c.significant() {
            '='
        } else if c.mean_diff > 0.0 {
            '<'
        } else {
            '>'
        };
        if rel != '=' {
            weakest = Some(weakest.map_or(c.p_value, |p| p.max(c.p_value)));
        }
        chain.push_str(&format!(" {rel} {}", w[1]));
    }
    (chain, weakest.and_then(Significance::from_p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn identical_groups() {
        let g = vec![1.0, 2.0, 3.0, 4.0];
        let r = games_howell(&labels(2), &[g.clone(), g]).unwrap();
        assert_eq!(r.comparisons[0].q, 0.0);
        assert!((r.comparisons[0].p_value - 1.0).abs() < 1e-12);
        assert_eq!(r.chain, "0 = 1");
        assert_eq!(r.to_string(), "0 = 1");
    }

    #[test]
    fn zero_variance_pairs() {
        let r = games_howell(&labels(2), &[vec![2.0, 2.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(r.comparisons[0].p_value, 1.0);
        let r = games_howell(&labels(2), &[vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        assert_eq!(r.comparisons[0].p_value, 0.0);
        assert_eq!(r.chain, "0 < 1");
    }

    #[test]
    fn separated_groups_are_all_significant() {
        let groups: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..10).map(|j| 10.0 * i as f64 + 0.01 * (j % 3) as f64).collect())
            .collect();
        let r = games_howell(&labels(4), &groups).unwrap();
        assert_eq!(r.comparisons.len(), 6);
        assert!(r.comparisons.iter().all(|c| c.p_value < 1e-6));
        assert_eq!(r.to_string(), "0 < 1 < 2 < 3***");
    }

    #[test]
    fn statistic_follows_welch_formulas() {
        let a = GroupSummary::new("a", 10, 1.0, 2.0);
        let b = GroupSummary::new("b", 20, 3.0, 1.0);
        let r = games_howell_from_summary(&[a, b]).unwrap();
        let c = &r.comparisons[0];
        let (va, vb) = (0.4, 0.05);
        assert!((c.q - 2.0 / ((va + vb) / 2.0f64).sqrt()).abs() < 1e-12);
        let df = (va + vb) * (va + vb) / (va * va / 9.0 + vb * vb / 19.0);
        assert!((c.df - df).abs() < 1e-12);
        assert_eq!(c.mean_diff, 2.0);
    }

    #[test]
    fn pair_order_and_label_permutation() {
        let g = [vec![1.0, 2.0, 3.5], vec![2.0, 4.0, 3.0, 5.0], vec![7.0, 6.0, 9.0]];
        let r = games_howell(&labels(3), &g).unwrap();
        let permuted = games_howell(
            &["2".into(), "0".into(), "1".into()],
            &[g[2].clone(), g[0].clone(), g[1].clone()],
        )
        .unwrap();
        for c in &r.comparisons {
            let d = permuted.pair(&c.group_i, &c.group_j).unwrap();
            assert!((c.p_value - d.p_value).abs() < 1e-12);
            assert!((c.q - d.q).abs() < 1e-12);
            let sign = if d.group_i == c.group_i { 1.0 } else { -1.0 };
            assert!((c.mean_diff - sign * d.mean_diff).abs() < 1e-12);
        }
    }

    #[test]
    fn descending_and_mixed_chains() {
        let g = [vec![10.0, 10.1, 9.9], vec![5.0, 5.1, 4.9], vec![5.0, 5.2, 4.8]];
        let r = games_howell(&labels(3), &g).unwrap();
        assert_eq!(r.chain, "0 > 1 = 2");
    }

    #[test]
    fn significance_levels() {
        assert_eq!(Significance::from_p(0.0004), Some(Significance::Three));
        assert_eq!(Significance::from_p(0.005), Some(Significance::Two));
        assert_eq!(Significance::from_p(0.04), Some(Significance::One));
        assert_eq!(Significance::from_p(0.05), None);
    }
}
