//! Analysis stack shared by the human response-time data and the simulated
//! answer steps: IQR outlier removal, one-way ANOVA with eta squared, and
//! Games-Howell pairwise comparisons on the studentized range distribution.

mod anova;
mod descriptive;
mod posthoc;
mod ptukey;
mod rt;
pub mod special;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use anova::{anova_from_summary, anova_oneway, AnovaResult};
pub use descriptive::{iqr_filter, mean, quantile, sample_sd};
pub use posthoc::{games_howell, games_howell_from_summary, PairComparison, PosthocResult, Significance};
pub use ptukey::{studentized_range_cdf, studentized_range_sf};
pub use rt::{human_rt_pipeline, read_rt_csv, RtAnalysis, RtRecord};

/// Significance level used for ordering chains.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {required} groups, got {found}")]
    TooFewGroups { required: usize, found: usize },

    #[error("group `{label}` has {n} observations, need at least {required}")]
    GroupTooSmall {
        label: String,
        n: usize,
        required: usize,
    },

    #[error("all observations are identical; the test is undefined")]
    ZeroVariance,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "quadrature did not converge for x={x}, k={k}, df={df}: last estimate {estimate}, change {change:e}"
    )]
    Quadrature {
        x: f64,
        k: usize,
        df: f64,
        estimate: f64,
        change: f64,
    },

    #[error("no observations left to analyze")]
    NoData,
}

/// Size, mean and sample standard deviation (n - 1 denominator) of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl GroupSummary {
    pub fn new(label: impl Into<String>, n: usize, mean: f64, sd: f64) -> Self {
        Self {
            label: label.into(),
            n,
            mean,
            sd,
        }
    }

    pub fn from_values(label: impl Into<String>, values: &[f64]) -> Result<Self, StatsError> {
        let label = label.into();
        if values.len() < 2 {
            return Err(StatsError::GroupTooSmall {
                label,
                n: values.len(),
                required: 2,
            });
        }
        Ok(Self {
            n: values.len(),
            mean: mean(values),
            sd: sample_sd(values),
            label,
        })
    }

    pub fn variance(&self) -> f64 {
        self.sd * self.sd
    }
}

/// Groups of raw observations with labels.
pub(crate) fn summarize(groups: &[(String, Vec<f64>)]) -> Result<Vec<GroupSummary>, StatsError> {
    groups
        .iter()
        .map(|(label, values)| GroupSummary::from_values(label.clone(), values))
        .collect()
}
