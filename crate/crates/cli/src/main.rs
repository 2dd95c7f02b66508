use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use carrynet::arithmetic::{enumerate_dataset, write_dataset_csv, Operand, Operation, Operator};
use carrynet::experiment::{self, ExperimentPlan};
use carrynet::network::{run_to_answer, Digit, ModelConfig, SavedNetwork, DEFAULT_MAX_STEPS};
use carrynet::stats::{
    anova_from_summary, anova_oneway, games_howell, games_howell_from_summary, human_rt_pipeline, read_rt_csv,
    AnovaResult, GroupSummary, PosthocResult,
};
use carrynet::training::{train_network, AdamConfig, DEFAULT_MAX_EPOCHS};

#[derive(Parser)]
#[command(name = "carrynet", version, about = "Jordan networks on 4-bit binary arithmetic")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Log progress to stderr (-vv for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write every operation of one operator as CSV.
    GenData {
        #[arg(long)]
        op: Operator,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one network and write its trial record as JSON.
    Train(TrainArgs),
    /// Print the per-step outputs of a saved network on one problem.
    Trace {
        #[arg(long)]
        params: PathBuf,
        /// Operands as `<a>,<b>`, each a 4-digit bit string or a decimal number.
        #[arg(long)]
        op: String,
        /// Confidence threshold; defaults to the one the network was trained with.
        #[arg(long, value_parser = parse_theta)]
        theta: Option<f64>,
    },
    /// Run an experiment plan and write trials, aggregates and analyses.
    Run {
        #[arg(long)]
        plan: PathBuf,
        /// Worker threads; 0 uses all cores.
        #[arg(long, env = "CARRYNET_WORKERS", default_value_t = 0)]
        workers: usize,
        /// Overrides the plan's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the plan's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-way ANOVA and Games-Howell on raw data, group summaries, or response times.
    Analyze(AnalyzeArgs),
    /// Rebuild aggregate.csv, analyses.json and fig_data/ from a run directory.
    Report {
        /// Run directory containing trials/.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    op: Operator,
    #[arg(long, value_parser = parse_theta, default_value_t = 0.9)]
    theta: f64,
    #[arg(long, default_value_t = 48)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_EPOCHS)]
    max_epochs: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: usize,
    /// Trial record destination; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also save the trained weights.
    #[arg(long)]
    params_out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["input", "summary", "rt"]))]
struct AnalyzeArgs {
    /// CSV of raw observations; needs --group-col and --value-col.
    #[arg(long = "in", requires_all = ["group_col", "value_col"])]
    input: Option<PathBuf>,
    #[arg(long)]
    group_col: Option<String>,
    #[arg(long)]
    value_col: Option<String>,
    /// CSV of group summaries with columns `label,n,mean,sd`.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Response-time CSV `participant_id,operator,carries,rt_seconds,correct`.
    #[arg(long)]
    rt: Option<PathBuf>,
    /// Write the full result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON to stdout instead of the text summary.
    #[arg(long)]
    json: bool,
}

fn parse_theta(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.5 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("threshold must lie in (0.5, 1), got {v}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData { op, out } => gen_data(op, out.as_deref()),
        Command::Train(args) => train(args),
        Command::Trace { params, op, theta } => trace(&params, &op, theta),
        Command::Run {
            plan,
            workers,
            seed,
            out,
        } => run(&plan, workers, seed, out),
        Command::Analyze(args) => analyze(args),
        Command::Report { input, out } => report(&input, out.as_deref().unwrap_or(&input)),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn gen_data(op: Operator, out: Option<&Path>) -> Result<()> {
    let ops = enumerate_dataset(op);
    match out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_dataset_csv(&ops, file)?;
            log::info!("wrote {} operations to {}", ops.len(), path.display());
        }
        None => write_dataset_csv(&ops, io::stdout().lock())?,
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let config = ModelConfig::new(args.op, args.hidden, args.theta)?.with_max_steps(args.max_steps)?;
    let dataset = enumerate_dataset(args.op);
    let (params, record) = train_network(&config, &AdamConfig::default(), &dataset, args.seed, args.max_epochs)?;
    match record.epochs_to_converge {
        Some(e) => log::info!("converged after {e} epochs"),
        None => log::warn!(
            "no convergence within {} epochs (accuracy {:.4})",
            args.max_epochs,
            record.final_accuracy
        ),
    }
    match &args.out {
        Some(path) => write_json(path, &record)?,
        None => println!("{}", serde_json::to_string_pretty(&record)?),
    }
    if let Some(path) = &args.params_out {
        write_json(path, &SavedNetwork::new(&config, &params)?)?;
    }
    Ok(())
}

fn parse_operand(token: &str, width: usize) -> Result<Operand> {
    let token = token.trim();
    if token.len() == width && token.chars().all(|c| c == '0' || c == '1') {
        return Ok(Operand::from_bit_str(token)?);
    }
    let value: u32 = token
        .parse()
        .with_context(|| format!("operand `{token}` is neither a {width}-bit string nor a number"))?;
    Ok(Operand::new(value, width)?)
}

fn trace(params_path: &Path, operands: &str, theta: Option<f64>) -> Result<()> {
    let saved: SavedNetwork = read_json(params_path)?;
    let params = saved.params()?;
    let mut config = saved.config;
    if let Some(t) = theta {
        config = config.with_threshold(t)?;
    }
    let Some((a, b)) = operands.split_once(',') else {
        bail!("--op expects `<a>,<b>`, got `{operands}`");
    };
    let op = Operation::new(config.operator, parse_operand(a, config.width)?, parse_operand(b, config.width)?)?;
    let trace = run_to_answer(&params, &config, &op)?;
    let mut out = io::stdout().lock();
    writeln!(out, "{op}  theta={}", config.threshold)?;
    for (t, step) in trace.steps.iter().enumerate() {
        let probs: Vec<String> = step.probs.iter().map(|p| format!("{p:.4}")).collect();
        let digits: String = step
            .digits
            .iter()
            .map(|d| match d {
                Digit::Zero => '0',
                Digit::One => '1',
                Digit::Uncertain => '?',
            })
            .collect();
        writeln!(out, "step {t:>2}  p=[{}]  {digits}", probs.join(", "))?;
    }
    let target: String = op.target.iter().map(|b| char::from(b'0' + b)).collect();
    match (trace.answer_step, &trace.predicted) {
        (Some(step), Some(bits)) => {
            let answer: String = bits.iter().map(|b| char::from(b'0' + b)).collect();
            let verdict = if answer == target { "correct" } else { "wrong" };
            writeln!(out, "answer step {step}: {answer} (target {target}, {verdict})")?;
        }
        _ => writeln!(out, "no answer within {} steps (target {target})", config.max_steps)?,
    }
    Ok(())
}

fn run(plan_path: &Path, workers: usize, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut plan: ExperimentPlan = read_json(plan_path)?;
    if let Some(seed) = seed {
        plan.master_seed = seed;
    }
    if out.is_some() {
        plan.output_dir = out;
    }
    let Some(dir) = plan.output_dir.clone() else {
        bail!("no output directory: pass --out or set output_dir in the plan");
    };
    let result = experiment::run_experiment(&plan, workers)?;
    let analyses = experiment::analyze_all(&result.records);
    experiment::report(&result.table, &analyses, &dir)?;
    let converged = result.records.iter().filter(|r| r.converged()).count();
    println!(
        "{} trials, {converged} converged, {} cells flagged; results in {}",
        result.records.len(),
        result.table.flagged.len(),
        dir.display()
    );
    Ok(())
}

fn report(input: &Path, out: &Path) -> Result<()> {
    let records = experiment::load_trials(input)?;
    if records.is_empty() {
        bail!("no trial records under {}", input.join("trials").display());
    }
    let table = experiment::aggregate(&records);
    let analyses = experiment::analyze_all(&records);
    for path in experiment::report(&table, &analyses, out)? {
        println!("{}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct AnalysisOutput {
    groups: Vec<GroupSummary>,
    anova: AnovaResult,
    posthoc: PosthocResult,
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let outputs: Vec<(String, AnalysisOutput)> = if let Some(path) = &args.summary {
        let groups: Vec<GroupSummary> = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(open(path)?)
            .deserialize()
            .collect::<Result<_, _>>()
            .with_context(|| format!("reading summaries from {}", path.display()))?;
        let anova = anova_from_summary(&groups)?;
        let posthoc = games_howell_from_summary(&groups)?;
        vec![(String::new(), AnalysisOutput { groups, anova, posthoc })]
    } else if let Some(path) = &args.rt {
        let records = read_rt_csv(open(path)?).with_context(|| format!("reading {}", path.display()))?;
        let mut out = Vec::new();
        for op in Operator::ALL {
            let subset: Vec<_> = records.iter().filter(|r| r.operator == op).cloned().collect();
            if subset.is_empty() {
                continue;
            }
            let result = human_rt_pipeline(&subset).with_context(|| format!("{op} response times"))?;
            if result.dropped_cells > 0 {
                log::warn!("{op}: {} participant cells without correct responses", result.dropped_cells);
            }
            out.push((
                op.to_string(),
                AnalysisOutput {
                    groups: result.summaries,
                    anova: result.anova,
                    posthoc: result.posthoc,
                },
            ));
        }
        if out.is_empty() {
            bail!("{} has no records", path.display());
        }
        out
    } else {
        let path = args.input.as_deref().expect("clap enforces one source");
        let (labels, groups) = read_groups(
            path,
            args.group_col.as_deref().unwrap_or_default(),
            args.value_col.as_deref().unwrap_or_default(),
        )?;
        let summaries = labels
            .iter()
            .zip(&groups)
            .map(|(l, g)| GroupSummary::from_values(l.clone(), g))
            .collect::<Result<Vec<_>, _>>()?;
        let anova = anova_oneway(&groups)?;
        let posthoc = games_howell(&labels, &groups)?;
        vec![(
            String::new(),
            AnalysisOutput {
                groups: summaries,
                anova,
                posthoc,
            },
        )]
    };

    let json: serde_json::Value = if outputs.len() == 1 && outputs[0].0.is_empty() {
        serde_json::to_value(&outputs[0].1)?
    } else {
        serde_json::to_value(outputs.iter().map(|(k, v)| (k.clone(), v)).collect::<BTreeMap<_, _>>())?
    };
    if let Some(path) = &args.out {
        write_json(path, &json)?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&json)?);
        return Ok(());
    }
    for (name, o) in &outputs {
        if !name.is_empty() {
            println!("{name}:");
        }
        print_text(o);
    }
    Ok(())
}

fn print_text(o: &AnalysisOutput) {
    for g in &o.groups {
        println!("  {:>6}  n={:<5} mean={:.4}  sd={:.4}", g.label, g.n, g.mean, g.sd);
    }
    let a = &o.anova;
    println!(
        "F({}, {}) = {:.2}, p = {:.3e}, eta^2 = {:.3}",
        a.df_between, a.df_within, a.f, a.p_value, a.eta_squared
    );
    for c in &o.posthoc.comparisons {
        println!(
            "  {} vs {}: diff={:.4} q={:.3} df={:.1} p={:.4}",
            c.group_i, c.group_j, c.mean_diff, c.q, c.df, c.p_value
        );
    }
    println!("{}", o.posthoc);
}

/// Group `value_col` by `group_col`. Numeric labels are sorted numerically,
/// others keep their first-appearance order.
fn read_groups(path: &Path, group_col: &str, value_col: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} has no column `{name}`", path.display()))
    };
    let (gi, vi) = (find(group_col)?, find(value_col)?);
    let mut labels: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let label = &row[gi];
        let value: f64 = row[vi]
            .parse()
            .with_context(|| format!("{} row {}: bad value `{}`", path.display(), line + 2, &row[vi]))?;
        match labels.iter().position(|l| l == label) {
            Some(i) => groups[i].push(value),
            None => {
                labels.push(label.to_string());
                groups.push(vec![value]);
            }
        }
    }
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.parse().ok()).collect();
    if let Some(keys) = numeric {
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
        labels = order.iter().map(|&i| labels[i].clone()).collect();
        groups = order.iter().map(|&i| std::mem::take(&mut groups[i])).collect();
    }
    Ok((labels, groups))
}
