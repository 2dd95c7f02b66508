//! Human response-time ingestion and analysis.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Deserializer, Serialize};

use super::{anova_oneway, games_howell, iqr_filter, mean, summarize, AnovaResult, GroupSummary, PosthocResult, StatsError};
use crate::arithmetic::Operator;

/// One row of `participant_id,operator,carries,rt_seconds,correct`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtRecord {
    pub participant_id: String,
    pub operator: Operator,
    pub carries: usize,
    pub rt_seconds: f64,
    #[serde(deserialize_with = "flexible_bool")]
    pub correct: bool,
}

fn flexible_bool<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" | "y" => Ok(true),
        "0" | "false" | "f" | "no" | "n" => Ok(false),
        other => Err(serde::de::Error::custom(format!("not a boolean: `{other}`"))),
    }
}

pub fn read_rt_csv<R: Read>(input: R) -> Result<Vec<RtRecord>, csv::Error> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input)
        .deserialize()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtAnalysis {
    pub operator: Operator,
    pub summaries: Vec<GroupSummary>,
    pub anova: AnovaResult,
    pub posthoc: PosthocResult,
    /// Participant/class cells with no usable response.
    pub dropped_cells: usize,
}

/// Correct responses only; IQR-filter each participant's responses per
/// carry class, average them, and compare the per-participant means
/// between classes.
pub fn human_rt_pipeline(records: &[RtRecord]) -> Result<RtAnalysis, StatsError> {
    let operator = records.first().ok_or(StatsError::NoData)?.operator;
    if records.iter().any(|r| r.operator != operator) {
        return Err(StatsError::InvalidInput(
            "records mix operators; analyze one operator at a time".into(),
        ));
    }
    if let Some(r) = records.iter().find(|r| !(r.rt_seconds > 0.0)) {
        return Err(StatsError::InvalidInput(format!(
            "non-positive response time {} for participant {}",
            r.rt_seconds, r.participant_id
        )));
    }
    let mut cells: BTreeMap<(usize, &str), Vec<f64>> = BTreeMap::new();
    for r in records {
        let cell = cells.entry((r.carries, r.participant_id.as_str())).or_default();
        if r.correct {
            cell.push(r.rt_seconds);
        }
    }
    let mut dropped = 0;
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for ((carries, participant), rts) in &cells {
        let kept = iqr_filter(rts);
        if kept.is_empty() {
            log::warn!("participant {participant}, {carries}-carry: no correct responses left");
            dropped += 1;
            continue;
        }
        groups.entry(*carries).or_default().push(mean(&kept));
    }
    if groups.is_empty() {
        return Err(StatsError::NoData);
    }
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups {
            required: 2,
            found: groups.len(),
        });
    }
    let labelled: Vec<(String, Vec<f64>)> = groups.into_iter().map(|(c, v)| (c.to_string(), v)).collect();
    let summaries = summarize(&labelled)?;
    let labels: Vec<String> = labelled.iter().map(|(l, _)| l.clone()).collect();
    let values: Vec<&[f64]> = labelled.iter().map(|(_, v)| v.as_slice()).collect();
    Ok(RtAnalysis {
        operator,
        summaries,
        anova: anova_oneway(&values)?,
        posthoc: games_howell(&labels, &values)?,
        dropped_cells: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(p: usize, carries: usize, rt: f64, correct: bool) -> RtRecord {
        RtRecord {
            participant_id: format!("p{p}"),
            operator: Operator::Sub,
            carries,
            rt_seconds: rt,
            correct,
        }
    }

    #[test]
    fn parses_csv() {
        let text = "participant_id,operator,carries,rt_seconds,correct\np1,sub,2,3.5,1\np2,add,0,1.25,false\n";
        let rows = read_rt_csv(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], rec(1, 2, 3.5, true));
        assert_eq!(rows[1].operator, Operator::Add);
        assert!(!rows[1].correct);
        assert!(read_rt_csv("participant_id,operator,carries,rt_seconds,correct\np,sub,1,2,maybe\n".as_bytes()).is_err());
    }

    #[test]
    fn equal_times_everywhere_cannot_be_tested() {
        let records: Vec<_> = (0..5)
            .flat_map(|p| (0..4).flat_map(move |c| (0..3).map(move |_| rec(p, c, 4.0, true))))
            .collect();
        // all per-participant means equal: no variance at all
        assert_eq!(human_rt_pipeline(&records).unwrap_err(), StatsError::ZeroVariance);
    }

    #[test]
    fn equal_class_means_give_zero_f() {
        let records: Vec<_> = (0..6)
            .flat_map(|p| (0..4).flat_map(move |c| (0..3).map(move |_| rec(p, c, 3.0 + p as f64, true))))
            .collect();
        let r = human_rt_pipeline(&records).unwrap();
        assert!(r.anova.f.abs() < 1e-12);
        assert_eq!(r.summaries.len(), 4);
        assert_eq!(r.summaries[0].n, 6);
    }

    #[test]
    fn incorrect_and_outlying_responses_are_removed() {
        let mut records = Vec::new();
        for p in 0..4 {
            for c in 0..2 {
                for rt in [1.0, 2.0, 3.0, 4.0] {
                    records.push(rec(p, c, rt + c as f64 + 0.1 * p as f64, true));
                }
                records.push(rec(p, c, 100.0, true));
                records.push(rec(p, c, 0.5, false));
            }
        }
        let r = human_rt_pipeline(&records).unwrap();
        assert!((r.summaries[0].mean - (2.5 + 0.15)).abs() < 1e-12);
        assert!((r.summaries[1].mean - (3.5 + 0.15)).abs() < 1e-12);
    }

    #[test]
    fn all_incorrect_is_an_error() {
        let records: Vec<_> = (0..3).flat_map(|p| (0..3).map(move |c| rec(p, c, 2.0, false))).collect();
        assert_eq!(human_rt_pipeline(&records).unwrap_err(), StatsError::NoData);
        assert_eq!(human_rt_pipeline(&[]).unwrap_err(), StatsError::NoData);
    }

    #[test]
    fn empty_cells_are_dropped() {
        let mut records = Vec::new();
        for p in 0..3 {
            for c in 0..2 {
                records.push(rec(p, c, 1.0 + c as f64 + 0.1 * p as f64, true));
            }
        }
        records.push(rec(9, 0, 1.0, false));
        let r = human_rt_pipeline(&records).unwrap();
        assert_eq!(r.dropped_cells, 1);
        assert_eq!(r.summaries[0].n, 3);
    }
}
