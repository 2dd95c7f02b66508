//! Configuration grids of independent training trials, their aggregation,
//! the three answer-step analyses, and report files.
//!
//! Every trial draws its seed from `(master_seed, operator, threshold,
//! hidden_dim, trial_index)`, so results do not depend on how many workers
//! run them or in which order they finish.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arithmetic::{enumerate_dataset, Operator};
use crate::error::{Error, Result};
use crate::network::{ModelConfig, DEFAULT_MAX_STEPS};
use crate::stats::{self, anova_oneway, games_howell, mean, sample_sd, AnovaResult, PosthocResult};
use crate::training::{train_network, AdamConfig, TrialRecord, DEFAULT_MAX_EPOCHS};
use crate::{par, seed};

pub const DESK_TRIALS: usize = 30;
pub const FULL_TRIALS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    #[serde(default = "default_operators")]
    pub operators: Vec<Operator>,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials_per_config: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Where trial records are written; `None` keeps them in memory only.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_operators() -> Vec<Operator> {
    Operator::ALL.to_vec()
}
fn default_thresholds() -> Vec<f64> {
    vec![0.7, 0.8, 0.9]
}
fn default_hidden_dims() -> Vec<usize> {
    vec![24, 48, 72]
}
fn default_trials() -> usize {
    DESK_TRIALS
}
fn default_max_epochs() -> usize {
    DEFAULT_MAX_EPOCHS
}
fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            operators: default_operators(),
            thresholds: default_thresholds(),
            hidden_dims: default_hidden_dims(),
            trials_per_config: DESK_TRIALS,
            master_seed: 0,
            max_epochs: DEFAULT_MAX_EPOCHS,
            max_steps: DEFAULT_MAX_STEPS,
            adam: AdamConfig::default(),
            output_dir: None,
        }
    }
}

impl ExperimentPlan {
    /// The full grid: 2 operators x 3 thresholds x 3 widths x 300 trials.
    pub fn full_scale() -> Self {
        Self {
            trials_per_config: FULL_TRIALS,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.operators.is_empty() || self.thresholds.is_empty() || self.hidden_dims.is_empty() {
            return Err(Error::InvalidArgument("plan grids must be nonempty".into()));
        }
        if self.trials_per_config == 0 {
            return Err(Error::InvalidArgument("trials_per_config must be at least 1".into()));
        }
        self.adam.validate()?;
        for config in self.configs()? {
            config.validate()?;
        }
        Ok(())
    }

    /// Grid cells in plan order.
    pub fn configs(&self) -> Result<Vec<ModelConfig>> {
        let mut out = Vec::new();
        for &op in &self.operators {
            for &theta in &self.thresholds {
                for &hidden in &self.hidden_dims {
                    out.push(ModelConfig::new(op, hidden, theta)?.with_max_steps(self.max_steps)?);
                }
            }
        }
        Ok(out)
    }

    pub fn total_trials(&self) -> usize {
        self.operators.len() * self.thresholds.len() * self.hidden_dims.len() * self.trials_per_config
    }
}

/// Seed of one trial; stable across runs, platforms and worker counts.
pub fn trial_seed(master_seed: u64, config: &ModelConfig, trial_index: usize) -> u64 {
    let op = match config.operator {
        Operator::Add => 0,
        Operator::Sub => 1,
    };
    seed::child_seed(
        master_seed,
        &[op, config.threshold.to_bits(), config.hidden_dim as u64, trial_index as u64],
    )
}

/// Canonical record order: operator, threshold, hidden width, trial index.
pub fn sort_records(records: &mut [TrialRecord]) {
    records.sort_by(|a, b| {
        a.config
            .operator
            .cmp(&b.config.operator)
            .then(a.config.threshold.total_cmp(&b.config.threshold))
            .then(a.config.hidden_dim.cmp(&b.config.hidden_dim))
            .then(a.trial_index.cmp(&b.trial_index))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRun {
    pub records: Vec<TrialRecord>,
    pub table: AggregateTable,
}

/// Train every trial of the plan on a pool of `workers` threads (0 picks the
/// default), persist records when the plan has an output directory, and
/// aggregate.
pub fn run_experiment(plan: &ExperimentPlan, workers: usize) -> Result<ExperimentRun> {
    plan.validate()?;
    let tasks: Vec<(ModelConfig, usize)> = plan
        .configs()?
        .into_iter()
        .flat_map(|c| (0..plan.trials_per_config).map(move |i| (c, i)))
        .collect();
    let datasets: BTreeMap<Operator, _> = plan
        .operators
        .iter()
        .map(|&op| (op, enumerate_dataset(op)))
        .collect();
    log::info!("running {} trials", tasks.len());
    let results = par::with_workers(workers, || {
        par::map(&tasks, |(config, index)| {
            let seed = trial_seed(plan.master_seed, config, *index);
            let start = std::time::Instant::now();
            let (_, mut record) = train_network(config, &plan.adam, &datasets[&config.operator], seed, plan.max_epochs)?;
            log::info!(
                "{}_{}_{}_{}: {:?} epochs in {:.1}s",
                config.operator,
                config.threshold,
                config.hidden_dim,
                index,
                record.epochs_to_converge,
                start.elapsed().as_secs_f64()
            );
            record.trial_index = Some(*index);
            Ok(record)
        })
    });
    let mut records = results.into_iter().collect::<Result<Vec<_>>>()?;
    sort_records(&mut records);
    if let Some(dir) = &plan.output_dir {
        persist_trials(&records, dir)?;
    }
    let table = aggregate(&records);
    for cell in &table.flagged {
        log::warn!(
            "{} theta={} d_h={}: none of {} trials converged",
            cell.operator,
            cell.threshold,
            cell.hidden_dim,
            cell.trials
        );
    }
    Ok(ExperimentRun { records, table })
}

pub fn trial_file_name(record: &TrialRecord) -> String {
    format!(
        "{}_{}_{}_{}.json",
        record.config.operator,
        record.config.threshold,
        record.config.hidden_dim,
        record.trial_index.unwrap_or(0)
    )
}

/// Write `trials/<op>_<theta>_<dh>_<idx>.json` under `dir`.
pub fn persist_trials(records: &[TrialRecord], dir: &Path) -> Result<()> {
    let trials = dir.join("trials");
    fs::create_dir_all(&trials).map_err(|e| Error::io(&trials, e))?;
    for record in records {
        let path = trials.join(trial_file_name(record));
        let mut text = serde_json::to_string_pretty(record)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Read every `trials/*.json` under `dir`, in canonical order.
pub fn load_trials(dir: &Path) -> Result<Vec<TrialRecord>> {
    let trials = dir.join("trials");
    let entries = fs::read_dir(&trials).map_err(|e| Error::io(&trials, e))?;
    let mut records = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&trials, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            records.push(serde_json::from_str(&text).map_err(|e| {
                Error::Parse(format!("{}: {e}", path.display()))
            })?);
        }
    }
    sort_records(&mut records);
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub operator: Operator,
    pub threshold: f64,
    pub hidden_dim: usize,
    pub trials: usize,
    pub converged: usize,
    pub failures: usize,
    pub mean_epochs: f64,
    /// Mean and sd across converged trials of each trial's overall mean answer step.
    pub overall_mean: f64,
    pub overall_sd: Option<f64>,
    /// Indexed by carry count.
    pub class_means: Vec<f64>,
    pub class_sds: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedCell {
    pub operator: Operator,
    pub threshold: f64,
    pub hidden_dim: usize,
    pub trials: usize,
}

/// Per-cell statistics over converged trials; cells where nothing converged
/// are listed in `flagged` instead.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub rows: Vec<CellAggregate>,
    pub flagged: Vec<FlaggedCell>,
}

fn same_cell(a: &ModelConfig, b: &ModelConfig) -> bool {
    a.operator == b.operator && a.threshold == b.threshold && a.hidden_dim == b.hidden_dim
}

/// Split canonical-ordered records into runs sharing a grid cell.
fn cells(records: &[TrialRecord]) -> Vec<&[TrialRecord]> {
    records
        .chunk_by(|a, b| same_cell(&a.config, &b.config))
        .collect()
}

fn sd_option(values: &[f64]) -> Option<f64> {
    (values.len() >= 2).then(|| sample_sd(values))
}

pub fn aggregate(records: &[TrialRecord]) -> AggregateTable {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut table = AggregateTable::default();
    for cell in cells(&sorted) {
        let config = cell[0].config;
        let done: Vec<&TrialRecord> = cell.iter().filter(|r| r.converged()).collect();
        if done.is_empty() {
            table.flagged.push(FlaggedCell {
                operator: config.operator,
                threshold: config.threshold,
                hidden_dim: config.hidden_dim,
                trials: cell.len(),
            });
            continue;
        }
        let overall: Vec<f64> = done.iter().filter_map(|r| r.overall_mean_answer_step).collect();
        let epochs: Vec<f64> = done.iter().filter_map(|r| r.epochs_to_converge.map(|e| e as f64)).collect();
        let classes = config.operator.carry_classes(config.width);
        let per_class: Vec<Vec<f64>> = (0..classes)
            .map(|c| {
                done.iter()
                    .filter_map(|r| r.mean_answer_step.get(&c.to_string()).copied())
                    .collect()
            })
            .collect();
        table.rows.push(CellAggregate {
            operator: config.operator,
            threshold: config.threshold,
            hidden_dim: config.hidden_dim,
            trials: cell.len(),
            converged: done.len(),
            failures: cell.len() - done.len(),
            mean_epochs: mean(&epochs),
            overall_mean: mean(&overall),
            overall_sd: sd_option(&overall),
            class_means: per_class.iter().map(|v| mean(v)).collect(),
            class_sds: per_class.iter().map(|v| sd_option(v)).collect(),
        });
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    /// Groups are carry classes within one configuration.
    Carries,
    /// Groups are thresholds at a fixed hidden width.
    Threshold,
    /// Groups are hidden widths at a fixed threshold.
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub kind: AnalysisKind,
    pub operator: Operator,
    /// Fixed threshold, for carry and hidden-width analyses.
    pub threshold: Option<f64>,
    /// Fixed hidden width, for carry and threshold analyses.
    pub hidden_dim: Option<usize>,
    pub group_sizes: Vec<usize>,
    pub anova: AnovaResult,
    pub posthoc: PosthocResult,
    /// Ordering chain with significance stars, e.g. `0 < 1 < 2 < 3***`.
    pub chain: String,
}

/// `0.7` -> `.7`, matching how thresholds are written in chains.
pub fn threshold_label(theta: f64) -> String {
    let s = theta.to_string();
    s.strip_prefix('0').map(str::to_string).unwrap_or(s)
}

fn run_tests(
    kind: AnalysisKind,
    operator: Operator,
    threshold: Option<f64>,
    hidden_dim: Option<usize>,
    labels: Vec<String>,
    groups: Vec<Vec<f64>>,
) -> Result<Analysis> {
    let anova = anova_oneway(&groups)?;
    let posthoc = games_howell(&labels, &groups)?;
    Ok(Analysis {
        kind,
        operator,
        threshold,
        hidden_dim,
        group_sizes: groups.iter().map(Vec::len).collect(),
        chain: posthoc.to_string(),
        anova,
        posthoc,
    })
}

fn converged(records: &[TrialRecord]) -> Vec<&TrialRecord> {
    records.iter().filter(|r| r.converged()).collect()
}

fn require_single<T: PartialEq + Copy + std::fmt::Debug>(values: impl Iterator<Item = T>, what: &str) -> Result<T> {
    let mut values = values.peekable();
    let first = *values.peek().ok_or(Error::EmptyInput("trial records"))?;
    if values.any(|v| v != first) {
        return Err(Error::InvalidArgument(format!("records mix several values of {what}")));
    }
    Ok(first)
}

/// Carry classes within one configuration; each converged trial contributes
/// its mean answer step per class.
pub fn analysis_one(records: &[TrialRecord]) -> Result<Analysis> {
    let done = converged(records);
    let config = done.first().ok_or(Error::Stats(stats::StatsError::NoData))?.config;
    if !done.iter().all(|r| same_cell(&r.config, &config)) {
        return Err(Error::InvalidArgument("records span several configurations".into()));
    }
    let classes = config.operator.carry_classes(config.width);
    let labels: Vec<String> = (0..classes).map(|c| c.to_string()).collect();
    let groups = labels
        .iter()
        .map(|c| {
            done.iter()
                .map(|r| {
                    r.mean_answer_step
                        .get(c)
                        .copied()
                        .ok_or_else(|| Error::InvalidArgument(format!("trial without class {c}")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    run_tests(
        AnalysisKind::Carries,
        config.operator,
        Some(config.threshold),
        Some(config.hidden_dim),
        labels,
        groups,
    )
}

fn overall_groups<K, F>(done: &[&TrialRecord], key: F) -> Vec<(K, Vec<f64>)>
where
    K: Copy,
    F: Fn(&ModelConfig) -> K,
    K: PartialOrd,
{
    let mut groups: Vec<(K, Vec<f64>)> = Vec::new();
    for r in done {
        let k = key(&r.config);
        let value = r.overall_mean_answer_step.expect("converged trial has answer steps");
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(value),
            None => groups.push((k, vec![value])),
        }
    }
    groups.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    groups
}

/// Thresholds at one hidden width; observations are per-trial overall means.
pub fn analysis_two_threshold(records: &[TrialRecord]) -> Result<Analysis> {
    let done = converged(records);
    let operator = require_single(done.iter().map(|r| r.config.operator), "operator")?;
    let hidden = require_single(done.iter().map(|r| r.config.hidden_dim), "hidden_dim")?;
    let groups = overall_groups(&done, |c| c.threshold);
    let labels = groups.iter().map(|(t, _)| threshold_label(*t)).collect();
    run_tests(
        AnalysisKind::Threshold,
        operator,
        None,
        Some(hidden),
        labels,
        groups.into_iter().map(|(_, v)| v).collect(),
    )
}

/// Hidden widths at one threshold; observations are per-trial overall means.
pub fn analysis_two_hidden(records: &[TrialRecord]) -> Result<Analysis> {
    let done = converged(records);
    let operator = require_single(done.iter().map(|r| r.config.operator), "operator")?;
    let theta = require_single(done.iter().map(|r| r.config.threshold.to_bits()), "threshold")?;
    let groups = overall_groups(&done, |c| c.hidden_dim);
    let labels = groups.iter().map(|(h, _)| h.to_string()).collect();
    run_tests(
        AnalysisKind::Hidden,
        operator,
        Some(f64::from_bits(theta)),
        None,
        labels,
        groups.into_iter().map(|(_, v)| v).collect(),
    )
}

/// One analysis attempt; failures (too few converged trials, a single group)
/// are kept with their reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutcome {
    pub kind: AnalysisKind,
    pub operator: Operator,
    pub threshold: Option<f64>,
    pub hidden_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Analysis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AnalysisOutcome {
    fn new(
        kind: AnalysisKind,
        operator: Operator,
        threshold: Option<f64>,
        hidden_dim: Option<usize>,
        result: Result<Analysis>,
    ) -> Self {
        let (result, error) = match result {
            Ok(a) => (Some(a), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Self {
            kind,
            operator,
            threshold,
            hidden_dim,
            result,
            error,
        }
    }
}

/// All three analyses for every operator, threshold and width present in
/// `records`.
pub fn analyze_all(records: &[TrialRecord]) -> Vec<AnalysisOutcome> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut out = Vec::new();
    for cell in cells(&sorted) {
        let c = cell[0].config;
        out.push(AnalysisOutcome::new(
            AnalysisKind::Carries,
            c.operator,
            Some(c.threshold),
            Some(c.hidden_dim),
            analysis_one(cell),
        ));
    }
    for op in Operator::ALL {
        let of_op: Vec<TrialRecord> = sorted.iter().filter(|r| r.config.operator == op).cloned().collect();
        if of_op.is_empty() {
            continue;
        }
        let mut thetas: Vec<f64> = of_op.iter().map(|r| r.config.threshold).collect();
        thetas.sort_by(f64::total_cmp);
        thetas.dedup();
        let mut hiddens: Vec<usize> = of_op.iter().map(|r| r.config.hidden_dim).collect();
        hiddens.sort();
        hiddens.dedup();
        for &h in &hiddens {
            let subset: Vec<TrialRecord> = of_op.iter().filter(|r| r.config.hidden_dim == h).cloned().collect();
            out.push(AnalysisOutcome::new(
                AnalysisKind::Threshold,
                op,
                None,
                Some(h),
                analysis_two_threshold(&subset),
            ));
        }
        for &t in &thetas {
            let subset: Vec<TrialRecord> = of_op.iter().filter(|r| r.config.threshold == t).cloned().collect();
            out.push(AnalysisOutcome::new(
                AnalysisKind::Hidden,
                op,
                Some(t),
                None,
                analysis_two_hidden(&subset),
            ));
        }
    }
    out
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write `aggregate.csv`, `analyses.json` and `fig_data/*.csv` under `out_dir`.
/// Returns the paths written.
pub fn report(table: &AggregateTable, analyses: &[AnalysisOutcome], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let fig_dir = out_dir.join("fig_data");
    fs::create_dir_all(&fig_dir).map_err(|e| Error::io(&fig_dir, e))?;
    let mut written = Vec::new();

    let max_classes = 5;
    let path = out_dir.join("aggregate.csv");
    let mut w = csv_writer(&path)?;
    let mut header: Vec<String> = [
        "operator", "theta", "hidden_dim", "trials", "converged", "failures", "mean_epochs", "overall_mean", "overall_sd",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for c in 0..max_classes {
        header.push(format!("mean_c{c}"));
        header.push(format!("sd_c{c}"));
    }
    w.write_record(&header)?;
    for row in &table.rows {
        let mut rec = vec![
            row.operator.to_string(),
            row.threshold.to_string(),
            row.hidden_dim.to_string(),
            row.trials.to_string(),
            row.converged.to_string(),
            row.failures.to_string(),
            row.mean_epochs.to_string(),
            row.overall_mean.to_string(),
            opt(row.overall_sd),
        ];
        for c in 0..max_classes {
            rec.push(row.class_means.get(c).map(|m| m.to_string()).unwrap_or_default());
            rec.push(opt(row.class_sds.get(c).copied().flatten()));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = out_dir.join("analyses.json");
    let mut text = serde_json::to_string_pretty(analyses)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    for op in Operator::ALL {
        let rows: Vec<&CellAggregate> = table.rows.iter().filter(|r| r.operator == op).collect();
        if rows.is_empty() {
            continue;
        }
        let path = fig_dir.join(format!("carries_{op}.csv"));
        let mut w = csv_writer(&path)?;
        w.write_record(["operator", "theta", "hidden_dim", "carries", "mean", "sd"])?;
        for r in &rows {
            for (c, m) in r.class_means.iter().enumerate() {
                w.write_record([
                    op.to_string(),
                    r.threshold.to_string(),
                    r.hidden_dim.to_string(),
                    c.to_string(),
                    m.to_string(),
                    opt(r.class_sds[c]),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);

        for (name, by_threshold) in [("threshold", true), ("hidden", false)] {
            let path = fig_dir.join(format!("{name}_{op}.csv"));
            let mut w = csv_writer(&path)?;
            let mut sorted = rows.clone();
            if by_threshold {
                w.write_record(["operator", "hidden_dim", "theta", "mean", "sd"])?;
                sorted.sort_by(|a, b| a.hidden_dim.cmp(&b.hidden_dim).then(a.threshold.total_cmp(&b.threshold)));
            } else {
                w.write_record(["operator", "theta", "hidden_dim", "mean", "sd"])?;
            }
            for r in sorted {
                let (a, b) = if by_threshold {
                    (r.hidden_dim.to_string(), r.threshold.to_string())
                } else {
                    (r.threshold.to_string(), r.hidden_dim.to_string())
                };
                w.write_record([op.to_string(), a, b, r.overall_mean.to_string(), opt(r.overall_sd)])?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
