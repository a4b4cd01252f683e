//! `punforge` command line: run the pipeline, build reports, simulate, export.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use punforge::cli::{
    cmd_ablate, cmd_export, cmd_matrix, cmd_run, cmd_sim, parse_binding, AblateConfig, CliError,
    MatrixConfig, RunConfig, SimConfig,
};
use punforge::engine::RunMode;
use punforge::evalbench::fmt1;
use punforge::model::Resolution;
use punforge::providers::RetryPolicy;

#[derive(Parser)]
#[command(
    name = "punforge",
    version,
    about = "Iterative visual-pun generation and recognition pipeline",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the generate-evaluate-refine loop over an idiom corpus.
    Run(RunArgs),
    /// Aggregate manifests into the MLLM x LLM accuracy matrix.
    Matrix(MatrixArgs),
    /// Run and/or report the six-config ablation ladder.
    Ablate(AblateArgs),
    /// Drive the pipeline with stochastic simulated providers.
    Sim(SimArgs),
    /// Bundle a manifest and its images into a tar archive.
    Export(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Idiom corpus: UTF-8, one idiom per line, blank lines ignored.
    #[arg(long)]
    corpus: PathBuf,
    /// Provider registry JSON.
    #[arg(long)]
    registry: PathBuf,
    /// Role assignment, repeated: --binding prompt=ID t2im=ID infer=ID judge=ID update=ID.
    #[arg(long = "binding", value_name = "ROLE=ID", required = true)]
    bindings: Vec<String>,
    /// Pipeline mode: full | t2im_only | one_shot | updates=K.
    #[arg(long, default_value = "full")]
    mode: RunMode,
    /// Iteration cap (full mode only; other modes imply their own).
    #[arg(long)]
    max_steps: Option<u32>,
    /// Image resolution, WxH.
    #[arg(long, default_value = "1024x1024")]
    resolution: Resolution,
    /// Worker threads over idioms.
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Seed recorded with every run and feeding all randomness.
    #[arg(long)]
    seed: Option<u64>,
    /// Output manifest (JSONL); images land next to it under images/.
    #[arg(long)]
    out: PathBuf,
    /// Retry attempts per provider call.
    #[arg(long, default_value_t = 3)]
    max_attempts: u32,
    /// Requests per minute per live provider.
    #[arg(long, default_value_t = 60)]
    rate_limit: u32,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig, CliError> {
        Ok(RunConfig {
            corpus: self.corpus,
            registry: self.registry,
            binding: parse_binding(&self.bindings)?,
            mode: self.mode,
            max_steps: self.max_steps,
            resolution: self.resolution,
            retry: RetryPolicy {
                max_attempts: self.max_attempts,
                rate_limit_rpm: self.rate_limit,
                ..RetryPolicy::default()
            },
            seed: self.seed,
            workers: self.workers,
            out: self.out,
        })
    }
}

#[derive(Args)]
struct MatrixArgs {
    /// Manifest files to aggregate.
    manifests: Vec<PathBuf>,
    /// Render a matrix directly from a cells CSV instead of manifests.
    #[arg(long)]
    cells_csv: Option<PathBuf>,
    /// Also write the matrix as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Exclude provider-failed runs instead of counting them as misses.
    #[arg(long)]
    exclude_failed: bool,
}

#[derive(Args)]
struct AblateArgs {
    /// Manifest files holding ladder runs.
    manifests: Vec<PathBuf>,
    /// Run the ladder first with these inputs (requires the run flags).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long = "binding", value_name = "ROLE=ID")]
    bindings: Vec<String>,
    #[arg(long, default_value = "1024x1024")]
    resolution: Resolution,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output manifest for ladder runs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Render the ladder directly from an absolute-values CSV.
    #[arg(long)]
    cells_csv: Option<PathBuf>,
    /// Also write the ladder's absolute values as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    exclude_failed: bool,
}

#[derive(Args)]
struct SimArgs {
    /// Profile configuration JSON (labels -> per-round probabilities).
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Constant per-round recognition probability.
    #[arg(long)]
    p: Option<f64>,
    /// Rounds per run (the iteration cap).
    #[arg(long, default_value_t = 5)]
    rounds: u32,
    /// Synthetic corpus size.
    #[arg(long)]
    count: Option<usize>,
    /// Real corpus file instead of a synthetic one.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Output manifest (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// Manifest to bundle.
    #[arg(long)]
    manifest: PathBuf,
    /// Output tar path.
    #[arg(long)]
    out: PathBuf,
}

fn real_main() -> Result<u8, CliError> {
    let cli = Cli::try_parse().unwrap_or_else(|err| {
        // help/version print and exit 0; anything else is a config error
        if err.use_stderr() {
            eprint!("{err}");
            std::process::exit(1);
        }
        print!("{err}");
        std::process::exit(0);
    });

    match cli.command {
        Command::Run(args) => {
            let config = args.into_config()?;
            let summary = cmd_run(&config)?;
            println!(
                "runs: {} idioms, {} new, {} resumed, {} provider failure(s)",
                summary.total_idioms,
                summary.new_runs,
                summary.skipped_resume,
                summary.provider_failures
            );
            println!("accuracy: {}", fmt1(summary.accuracy));
            Ok(if summary.provider_failures > 0 { 2 } else { 0 })
        }
        Command::Matrix(args) => {
            let report = cmd_matrix(&MatrixConfig {
                manifests: args.manifests,
                cells_csv: args.cells_csv,
                csv_out: args.csv,
                exclude_failed: args.exclude_failed,
            })?;
            print!("{report}");
            Ok(0)
        }
        Command::Ablate(args) => {
            let run = match (&args.corpus, &args.registry, &args.out) {
                (Some(corpus), Some(registry), Some(out)) => Some(RunConfig {
                    corpus: corpus.clone(),
                    registry: registry.clone(),
                    binding: parse_binding(&args.bindings)?,
                    mode: RunMode::Full, // replaced per ladder config
                    max_steps: None,
                    resolution: args.resolution,
                    retry: RetryPolicy::default(),
                    seed: args.seed,
                    workers: args.workers,
                    out: out.clone(),
                }),
                (None, None, None) => None,
                _ => {
                    return Err(CliError::Config(
                        "ablate runs need --corpus, --registry, and --out together".into(),
                    ))
                }
            };
            let report = cmd_ablate(&AblateConfig {
                run,
                manifests: args.manifests,
                cells_csv: args.cells_csv,
                csv_out: args.csv,
                exclude_failed: args.exclude_failed,
            })?;
            print!("{report}");
            Ok(0)
        }
        Command::Sim(args) => {
            let summary = cmd_sim(&SimConfig {
                profile_file: args.profiles,
                constant_p: args.p,
                rounds: args.rounds,
                count: args.count,
                corpus: args.corpus,
                seed: args.seed,
                workers: args.workers,
                out: args.out,
                mode: RunMode::Full,
            })?;
            println!("{summary}");
            Ok(0)
        }
        Command::Export(args) => {
            let message = cmd_export(&args.manifest, &args.out)?;
            println!("{message}");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
