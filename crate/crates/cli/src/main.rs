//! `vtcomp` — schedules, token-dump compression, frame scoring/selection,
//! prefill cost tables, and the synthetic bias/needle benchmarks, from one
//! binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 input/validation error,
//! 3 numeric error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vtcomp_core::compress::{apply_plan, DropPlan, DropStrategy};
use vtcomp_core::config::{RunConfig, CONFIG_ENV_VAR};
use vtcomp_core::cost::multi_report;
use vtcomp_core::dump::{atomic_write, AttentionDump, TokenDump};
use vtcomp_core::harness::{
    bias_experiment, biased_fixture, fixture_segment_config, niah_run, random_instance,
    BiasOracleConfig,
};
use vtcomp_core::report::{
    bias_csv, cost_csv, cost_table, niah_csv, schedule_csv, scores_csv, selection_csv, BiasRecord,
    NiahRecord,
};
use vtcomp_core::schedule::{CompressionSchedule, Stage};
use vtcomp_core::scoring::{global_score, score_video, select_top_k, select_top_k_clips};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

enum CliError {
    Usage(String),
    Validation(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Validation(m) | CliError::Numeric(m) => m,
        }
    }
}

fn usage<E: std::fmt::Display>(err: E) -> CliError {
    CliError::Usage(err.to_string())
}

fn validation<E: std::fmt::Display>(err: E) -> CliError {
    CliError::Validation(err.to_string())
}

#[derive(Parser)]
#[command(
    name = "vtcomp",
    about = "Video token compression: schedules, drop plans, frame scoring, cost model, benchmarks",
    version
)]
struct Cli {
    /// Run config file (key=value); defaults come from VTCOMP_CONFIG or
    /// built-in values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print per-layer token counts and their average for a schedule.
    Schedule(ScheduleArgs),
    /// Apply a drop plan to a token dump.
    Compress(CompressArgs),
    /// Score frames from an attention dump and select the top k.
    ScoreSelect(ScoreArgs),
    /// Emit the baseline-vs-compressed prefill FLOP table.
    Flops(FlopsArgs),
    /// Run the synthetic position-bias and needle benchmarks.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ScheduleArgs {
    /// cosine, constant, or stepwise.
    #[arg(long, default_value = "cosine")]
    kind: String,
    /// Initial tokens per frame.
    #[arg(long, default_value_t = 16)]
    n1: usize,
    #[arg(long, default_value_t = 28)]
    layers: usize,
    /// Step-wise stages as start:tokens pairs, e.g. 0:16,10:8,20:1.
    #[arg(long)]
    stages: Option<String>,
    /// Write the layer,tokens table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CompressArgs {
    /// Input token dump (TOKD).
    #[arg(long)]
    input: PathBuf,
    /// Output token dump.
    #[arg(long)]
    output: PathBuf,
    /// Override the config's drop strategy (suffix or uniform).
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Input attention dump (ATND).
    #[arg(long)]
    input: PathBuf,
    /// Score with one global window instead of segments.
    #[arg(long)]
    global: bool,
    /// Frames to select (overrides the config's n_selected_frames).
    #[arg(long)]
    k: Option<usize>,
    /// Select whole clips instead of individual frames.
    #[arg(long)]
    clip_granularity: bool,
    /// Scores CSV path (frame, score, coverage, selected).
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Selection CSV path (frame, score).
    #[arg(long)]
    selection: Option<PathBuf>,
}

#[derive(Args)]
struct FlopsArgs {
    /// Comma-separated frame counts.
    #[arg(long, default_value = "1024,2048,4096")]
    frames: String,
    #[arg(long, default_value_t = 863)]
    query_tokens: usize,
    /// Write the rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(subcommand)]
    which: BenchCommand,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Needle rank under global vs segmented scoring across seeds.
    Bias(BiasArgs),
    /// Multi-hop needle recovery across seeds.
    Niah(NiahArgs),
}

#[derive(Args)]
struct BiasArgs {
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 512)]
    total_frames: usize,
    #[arg(long, default_value_t = 0.1)]
    end_bias: f64,
    #[arg(long, default_value_t = 0.0)]
    begin_bias: f64,
    #[arg(long, default_value_t = 12.0)]
    signal: f64,
    /// Needle frame (defaults to the middle of the video).
    #[arg(long)]
    needle: Option<usize>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NiahArgs {
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 1024)]
    total_frames: usize,
    #[arg(long, default_value_t = 1)]
    hops: usize,
    #[arg(long, default_value_t = 12.0)]
    signal: f64,
    /// Chunk coverage multiplicity.
    #[arg(long, default_value_t = 8)]
    n_repeat: usize,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap prints help/version through the error path too.
            let _ = err.print();
            return match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let config = match load_config(cli.config.as_deref()) {
        Ok(config) => config,
        Err(err) => {
            eprintln!("error: {}", err.message());
            return ExitCode::from(err.code());
        }
    };
    let result = match cli.command {
        Command::Schedule(args) => run_schedule(args),
        Command::Compress(args) => run_compress(args, &config),
        Command::ScoreSelect(args) => run_score_select(args, &config),
        Command::Flops(args) => run_flops(args, &config),
        Command::Bench(args) => match args.which {
            BenchCommand::Bias(args) => run_bias(args),
            BenchCommand::Niah(args) => run_niah(args),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

fn load_config(flag: Option<&Path>) -> Result<RunConfig, CliError> {
    let path = flag
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CONFIG_ENV_VAR).map(PathBuf::from));
    match path {
        Some(path) => RunConfig::from_file(&path).map_err(validation),
        None => Ok(RunConfig::default()),
    }
}

fn parse_stage_list(text: &str) -> Result<Vec<Stage>, CliError> {
    text.split(',')
        .map(|entry| {
            let (start, tokens) = entry
                .split_once(':')
                .ok_or_else(|| usage(format!("bad stage entry `{entry}`, want start:tokens")))?;
            Ok(Stage {
                start_layer: start.trim().parse().map_err(usage)?,
                tokens: tokens.trim().parse().map_err(usage)?,
            })
        })
        .collect()
}

fn build_schedule(args: &ScheduleArgs) -> Result<CompressionSchedule, CliError> {
    match args.kind.as_str() {
        "cosine" => CompressionSchedule::cosine(args.n1, args.layers).map_err(usage),
        "constant" => CompressionSchedule::constant(args.n1, args.layers).map_err(usage),
        "stepwise" => {
            let stages = args
                .stages
                .as_deref()
                .ok_or_else(|| usage("stepwise schedules need --stages"))?;
            CompressionSchedule::stepwise(args.n1, args.layers, parse_stage_list(stages)?)
                .map_err(usage)
        }
        other => Err(usage(format!("unknown schedule kind `{other}`"))),
    }
}

fn write_output(path: &Path, text: &str) -> Result<(), CliError> {
    atomic_write(path, text.as_bytes()).map_err(validation)
}

fn run_schedule(args: ScheduleArgs) -> Result<(), CliError> {
    let schedule = build_schedule(&args)?;
    print!("{}", schedule_csv(&schedule));
    println!("average_tokens_processed={}", schedule.average_tokens_processed());
    if let Some(path) = args.csv {
        write_output(&path, &schedule_csv(&schedule))?;
    }
    Ok(())
}

fn run_compress(args: CompressArgs, config: &RunConfig) -> Result<(), CliError> {
    let strategy = match args.strategy.as_deref() {
        Some(name) => DropStrategy::parse(name).map_err(usage)?,
        None => config.strategy,
    };
    let dump = TokenDump::read(&args.input).map_err(validation)?;
    let plan = DropPlan::build(config.schedule.clone(), strategy);
    if dump.tokens_per_frame != plan.schedule.initial_tokens {
        return Err(CliError::Validation(format!(
            "token dump holds {} tokens per frame but the plan starts at {}",
            dump.tokens_per_frame, plan.schedule.initial_tokens
        )));
    }
    let compressed = apply_plan(&dump.to_matrix(), &plan).map_err(validation)?;
    let out = TokenDump::from_matrix(&compressed).map_err(validation)?;
    out.write(&args.output).map_err(validation)?;
    println!(
        "compressed {} frames: {} -> {} tokens per frame",
        out.frames, dump.tokens_per_frame, out.tokens_per_frame
    );
    Ok(())
}

fn run_score_select(args: ScoreArgs, config: &RunConfig) -> Result<(), CliError> {
    let dump = AttentionDump::read(&args.input).map_err(validation)?;
    let source = dump.to_source();
    let table = if args.global {
        global_score(&source, &config.segment).map_err(validation)?
    } else {
        score_video(&source, &config.segment, &config.chunk).map_err(validation)?
    };
    let k = args.k.unwrap_or(config.chunk.n_selected_frames);
    let selection = if args.clip_granularity {
        select_top_k_clips(&table, k, config.segment.clip_size).map_err(validation)?
    } else {
        select_top_k(&table, k).map_err(validation)?
    };
    if let Some(path) = &args.scores {
        write_output(path, &scores_csv(&table, &selection))?;
    }
    if let Some(path) = &args.selection {
        write_output(path, &selection_csv(&selection))?;
    }
    if args.scores.is_none() && args.selection.is_none() {
        print!("{}", scores_csv(&table, &selection));
    }
    println!(
        "selected {} of {} frames ({} scoring)",
        selection.frames.len(),
        table.len(),
        if args.global { "global" } else { "segmented" }
    );
    Ok(())
}

fn run_flops(args: FlopsArgs, config: &RunConfig) -> Result<(), CliError> {
    let frames = args
        .frames
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(usage))
        .collect::<Result<Vec<_>, _>>()?;
    if frames.is_empty() {
        return Err(usage("need at least one frame count"));
    }
    let report = multi_report(&frames, args.query_tokens, &config.schedule, &config.dims)
        .map_err(validation)?;
    print!("{}", cost_table(&report));
    if let Some(path) = args.csv {
        write_output(&path, &cost_csv(&report))?;
    }
    Ok(())
}

fn run_bias(args: BiasArgs) -> Result<(), CliError> {
    let mut records = Vec::new();
    for seed in 0..args.seeds {
        let cfg = BiasOracleConfig {
            total_frames: args.total_frames,
            begin_bias: args.begin_bias,
            end_bias: args.end_bias,
            needle_frame: args.needle.unwrap_or(args.total_frames / 2),
            needle_signal: args.signal,
            seed,
            ..biased_fixture()
        };
        let outcome = bias_experiment(&cfg, &fixture_segment_config()).map_err(validation)?;
        records.push(BiasRecord { cfg, outcome });
    }
    let csv = bias_csv(&records);
    match args.out {
        Some(path) => write_output(&path, &csv)?,
        None => print!("{csv}"),
    }
    let segmented_first = records
        .iter()
        .filter(|r| r.outcome.segmented_rank == 1)
        .count();
    let global_first = records.iter().filter(|r| r.outcome.global_rank == 1).count();
    println!(
        "needle ranked first: segmented {segmented_first}/{}, global {global_first}/{}",
        records.len(),
        records.len()
    );
    Ok(())
}

fn run_niah(args: NiahArgs) -> Result<(), CliError> {
    if args.n_repeat == 0 || 512 % args.n_repeat != 0 {
        return Err(usage("--n-repeat must divide the 512-frame chunk"));
    }
    let chunk_cfg = vtcomp_core::scoring::ChunkConfig {
        chunk_frames: 512,
        n_repeat: args.n_repeat,
        n_selected_frames: 1,
    };
    let mut records = Vec::new();
    for seed in 0..args.seeds {
        let instance = random_instance(args.total_frames, args.hops, args.signal, seed);
        let outcome = niah_run(&instance, &chunk_cfg).map_err(numeric_or_validation)?;
        records.push(NiahRecord { instance, outcome });
    }
    let csv = niah_csv(&records);
    match args.out {
        Some(path) => write_output(&path, &csv)?,
        None => print!("{csv}"),
    }
    let recovered = records.iter().filter(|r| r.outcome.recovered).count();
    println!("recovered {recovered}/{} runs", records.len());
    Ok(())
}

fn numeric_or_validation(err: vtcomp_core::harness::HarnessError) -> CliError {
    // Non-finite strengths are numeric problems; everything else is input
    // validation.
    match &err {
        vtcomp_core::harness::HarnessError::BadStrength => CliError::Numeric(err.to_string()),
        _ => CliError::Validation(err.to_string()),
    }
}
