//! The `layerscope` command line.
//!
//! Every subcommand reads and writes the files named on the command line;
//! stdout only carries a short human-readable summary. Exit codes: 0 on
//! success, 1 on contract or validation failures, 2 on usage, I/O or parse
//! failures. Failures print one JSON line on stderr:
//! `error: {"kind":"...","message":"..."}`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::divergence::{DivergenceConfig, MidpointRule};
use crate::error::{Error, Result};
use crate::eval::{self, Conditioning, CurveFilter, PromptClass};
use crate::plan::{self, ConditioningPlan, SchedulerSpec, StructureKnobs};
use crate::ranking::{self, RankScope};
use crate::scoring::{self, ProjectionPolicy, ScoreProjection};
use crate::synth;
use crate::trace;

#[derive(Debug, Parser)]
#[command(name = "layerscope", version, about = "Rank attention layers by style sensitivity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a trace file against its header and the m x n grid.
    Validate { traces: PathBuf },
    /// Score every (layer, timestep) cell of a trace file.
    Analyze(AnalyzeArgs),
    /// Merge repeated tables, dropping each cell's best and worst score.
    Aggregate {
        #[arg(required = true)]
        tables: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Rank layers from a sensitivity table.
    Rank(RankArgs),
    /// Compile a ranking into a conditioning plan.
    Plan(PlanArgs),
    /// Generate a synthetic trace file with planted layers.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Ignore the planted layers of the config.
        #[arg(long)]
        null: bool,
    },
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    PerProjection,
    Mean,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MidpointArg {
    Sigma,
    Variance,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    traces: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "mean")]
    projection_policy: PolicyArg,
    /// Worker threads for cell scoring; the output does not depend on it.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 1e-6)]
    sigma_floor: f64,
    #[arg(long, value_enum, default_value = "sigma")]
    midpoint: MidpointArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SlotArg {
    Key,
    Query,
    Value,
    Mean,
}

#[derive(Debug, Args)]
struct RankArgs {
    table: PathBuf,
    #[arg(long, conflicts_with = "averaged")]
    timestep: Option<u32>,
    /// Rank by the mean score over all timesteps (the default).
    #[arg(long)]
    averaged: bool,
    /// Rank a single projection slot instead of their mean.
    #[arg(long, value_enum)]
    projection: Option<SlotArg>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long)]
    ranking: PathBuf,
    #[arg(long)]
    lambda_s: f64,
    #[arg(long)]
    lambda_t: f64,
    /// `t_start,t_end,steps`, e.g. `1000,0,50`.
    #[arg(long)]
    scheduler: String,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 1.0)]
    mid: f64,
    #[arg(long, default_value_t = 1.0)]
    down: f64,
    #[arg(long, default_value_t = 1.0)]
    convs: f64,
    /// Per-timestep rankings used for style overrides.
    #[arg(long = "timestep-ranking")]
    timestep_rankings: Vec<PathBuf>,
    #[arg(long, default_value = "")]
    provenance: String,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Content/style tradeoff curve from a similarity table.
    Curve {
        table: PathBuf,
        #[arg(long)]
        method: Option<String>,
        #[arg(long, value_enum)]
        conditioning: Option<ConditioningArg>,
        #[arg(long, value_enum)]
        prompt_class: Option<PromptArg>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Precision@k of a ranking against synthetic ground truth.
    Recovery {
        #[arg(long)]
        ranking: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        k: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ConditioningArg {
    TextOnly,
    Canny,
    Depth,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PromptArg {
    Easy,
    Complex,
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let line = serde_json::json!({ "kind": e.kind(), "message": e.to_string() });
            let _ = writeln!(err, "error: {line}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Schema { .. } => 2,
        Error::Contract(_) | Error::Lookup(_) | Error::Validation(_) => 1,
    }
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) {
    let _ = writeln!(out, "{text}");
}

fn parse_scheduler(spec: &str) -> Result<SchedulerSpec> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let nums: Option<Vec<u32>> = parts.iter().map(|p| p.parse().ok()).collect();
    match nums.as_deref() {
        Some(&[start, end, steps]) => SchedulerSpec::new(start, end, steps),
        _ => Err(Error::contract(format!(
            "--scheduler expects t_start,t_end,steps, got '{spec}'"
        ))),
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Validate { traces } => {
            let set = trace::read_traces(&traces)?;
            let report = trace::validate(&set);
            for issue in &report.issues {
                say(out, format_args!("{:?}: {} ({})", issue.severity, issue.message, issue.location));
            }
            say(
                out,
                format_args!(
                    "{}: {} records, {} issue(s), {}",
                    traces.display(),
                    set.records.len(),
                    report.issues.len(),
                    if report.ok { "ok" } else { "invalid" }
                ),
            );
            if report.ok {
                Ok(0)
            } else {
                Err(Error::Validation(report))
            }
        }
        Command::Analyze(a) => {
            let set = trace::read_traces(&a.traces)?;
            let midpoint = match a.midpoint {
                MidpointArg::Sigma => MidpointRule::MeanSigma,
                MidpointArg::Variance => MidpointRule::MeanVariance,
            };
            let cfg = DivergenceConfig::new(a.sigma_floor, midpoint)?;
            let policy = match a.projection_policy {
                PolicyArg::PerProjection => ProjectionPolicy::PerProjection,
                PolicyArg::Mean => ProjectionPolicy::MeanOverProjections,
            };
            let table = scoring::sensitivity_table_with_threads(&set, &cfg, policy, Some(a.threads))?;
            scoring::write_table(&table, &a.output)?;
            let flagged = table.cells.values().filter(|c| c.is_degenerate()).count();
            say(
                out,
                format_args!(
                    "scored {} cells ({flagged} degenerate) -> {}",
                    table.cells.len(),
                    a.output.display()
                ),
            );
            Ok(0)
        }
        Command::Aggregate { tables, output } => {
            let loaded = tables.iter().map(scoring::read_table).collect::<Result<Vec<_>>>()?;
            let merged = ranking::trimmed_aggregate(&loaded)?;
            scoring::write_table(&merged, &output)?;
            say(
                out,
                format_args!("merged {} tables -> {}", loaded.len(), output.display()),
            );
            Ok(0)
        }
        Command::Rank(r) => {
            let table = scoring::read_table(&r.table)?;
            let scope = match r.timestep {
                Some(t) => RankScope::PerTimestep(t),
                None => RankScope::TimeAveraged,
            };
            let ranked = match r.projection {
                None => ranking::rank_layers(&table, scope)?,
                Some(slot) => {
                    let slot = match slot {
                        SlotArg::Key => ScoreProjection::Key,
                        SlotArg::Query => ScoreProjection::Query,
                        SlotArg::Value => ScoreProjection::Value,
                        SlotArg::Mean => ScoreProjection::Mean,
                    };
                    ranking::rank_layers_for(&table, scope, slot)?
                }
            };
            ranking::write_ranking(&ranked, &r.output)?;
            let head: Vec<String> = ranked.order.iter().take(5).map(u32::to_string).collect();
            say(
                out,
                format_args!(
                    "ranked {} layers ({scope}); most sensitive: {} -> {}",
                    ranked.layers(),
                    head.join(", "),
                    r.output.display()
                ),
            );
            Ok(0)
        }
        Command::Plan(p) => {
            let ranked = ranking::read_ranking(&p.ranking)?;
            let scheduler = parse_scheduler(&p.scheduler)?;
            let overrides = p
                .timestep_rankings
                .iter()
                .map(ranking::read_ranking)
                .collect::<Result<Vec<_>>>()?;
            let style = plan::build_style_plan(
                &ranked,
                p.lambda_s,
                &scheduler,
                !overrides.is_empty(),
                &overrides,
            )?;
            let structure = plan::build_structure_plan(
                p.lambda_t,
                &scheduler,
                StructureKnobs {
                    lambda_scale: p.scale,
                    lambda_mid: p.mid,
                    lambda_down: p.down,
                    lambda_convs: p.convs,
                },
            )?;
            let built = ConditioningPlan::new(
                ranked.layers() as u32,
                p.provenance,
                scheduler,
                style,
                structure,
            )?;
            plan::emit_plan(&built, &p.output)?;
            say(
                out,
                format_args!(
                    "plan: {} of {} layers styled, structure on Up layers while t > {} -> {}",
                    built.style.layers.len(),
                    built.layers,
                    built.structure.up_cutoff_timestep,
                    p.output.display()
                ),
            );
            Ok(0)
        }
        Command::Synth {
            config,
            output,
            truth,
            null,
        } => {
            let cfg = synth::read_config(&config)?;
            let (set, gt) = if null {
                let gt = synth::GroundTruth {
                    sensitive_layers: Default::default(),
                    separations: Default::default(),
                };
                (synth::generate_null(&cfg)?, gt)
            } else {
                synth::generate_planted(&cfg)?
            };
            trace::write_traces(&set, &output)?;
            synth::write_truth(&gt, &truth)?;
            say(
                out,
                format_args!(
                    "wrote {} records ({} planted layers) -> {}",
                    set.records.len(),
                    gt.sensitive_layers.len(),
                    output.display()
                ),
            );
            Ok(0)
        }
        Command::Eval(EvalCommand::Curve {
            table,
            method,
            conditioning,
            prompt_class,
            output,
        }) => {
            let records = eval::read_similarity(&table)?;
            let filter = CurveFilter {
                method_tag: method,
                conditioning: conditioning.map(|c| match c {
                    ConditioningArg::TextOnly => Conditioning::TextOnly,
                    ConditioningArg::Canny => Conditioning::Canny,
                    ConditioningArg::Depth => Conditioning::Depth,
                }),
                prompt_class: prompt_class.map(|p| match p {
                    PromptArg::Easy => PromptClass::Easy,
                    PromptArg::Complex => PromptClass::Complex,
                }),
            };
            let curve = eval::tradeoff_curve(&records, |r| filter.matches(r))?;
            eval::write_curve(&curve, &output)?;
            say(
                out,
                format_args!("{} curve points -> {}", curve.points.len(), output.display()),
            );
            Ok(0)
        }
        Command::Eval(EvalCommand::Recovery { ranking, truth, k }) => {
            let ranked = ranking::read_ranking(&ranking)?;
            let gt = synth::read_truth(&truth)?;
            let m = eval::recovery_metrics(&ranked, &gt, k)?;
            let mean_rank = m
                .mean_rank_of_planted
                .map_or_else(|| "-".to_owned(), |v| v.to_string());
            say(
                out,
                format_args!(
                    "precision_at_k={} mean_rank_of_planted={mean_rank}",
                    m.precision_at_k
                ),
            );
            Ok(0)
        }
    }
}
