use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use orthoseis_cli::{
    cmd_baseline, cmd_evaluate, cmd_generate, cmd_infer, cmd_train, config_keys_help, CliError, EvalEntry, EvalRequest, ModelSpec,
    Result, RunConfig, RunDir,
};

/// Seismic reflectivity inversion pipeline.
#[derive(Debug, Parser)]
#[command(name = "orthoseis", version)]
struct Cli {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every subsystem seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "ORTHOSEIS_THREADS")]
    threads: Option<usize>,
    /// Run directory name; defaults to `<command>-<unix time>`.
    #[arg(long, global = true)]
    name: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Ablation {
    /// Every spectral layer replaced by the identity.
    PlainUnet,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize train/val/test sections with every noise variant.
    Generate,
    /// Train on a generated dataset.
    Train {
        /// Data directory, or a run directory holding `data/`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        ablation: Option<Ablation>,
    },
    /// Predict reflectivity for a section with a trained checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Reference reflectivity; metrics are reported when given.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Sparse-spike inversion of a section.
    Baseline {
        #[arg(long)]
        input: PathBuf,
    },
    /// Score predictions against targets into a comparison table.
    Evaluate {
        /// METHOD,SNR,PREDICTION,TARGET (repeatable).
        #[arg(long)]
        entry: Vec<EvalEntry>,
        /// NAME=CHECKPOINT scored on every noise level of the test split (repeatable).
        #[arg(long)]
        model: Vec<ModelSpec>,
        /// Dataset for --model and --baseline.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Add sparse-inversion rows on the test split.
        #[arg(long)]
        baseline: bool,
    },
}

impl Command {
    fn label(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Baseline { .. } => "baseline",
            Command::Evaluate { .. } => "evaluate",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let explicit = cli.config.is_some();
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    }
    .resolve(cli.seed)?;
    let name = cli.name.clone().unwrap_or_else(|| {
        let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        format!("{}-{secs}", cli.command.label())
    });
    let dir = RunDir::create(&cli.out, &name)?;
    match cli.command {
        Command::Generate => {
            let m = cmd_generate(&cfg, &dir)?;
            let n: usize = m.splits.iter().map(|s| s.sections.len()).sum();
            println!("{n} sections written to {}", dir.path("data").display());
        }
        Command::Train { data, ablation } => {
            let out = cmd_train(&cfg, &data, &dir, ablation.is_some(), true)?;
            println!("best epoch {} of {}; checkpoints in {}", out.best_epoch, out.logs.len(), dir.path("checkpoints").display());
        }
        Command::Infer { checkpoint, input, target } => {
            let r = cmd_infer(explicit.then_some(&cfg), &checkpoint, &input, target.as_deref(), &dir)?;
            println!("{} patches, {:.4} s per patch", r.patches, r.seconds_per_patch);
            if let Some(m) = r.metrics {
                println!("MAE {:.4}  MSE {:.6}  SSIM {:.4}  R2 {:.4}", m.mae, m.mse, m.ssim, m.r2);
            }
        }
        Command::Baseline { input } => {
            cmd_baseline(&cfg, &input, &dir)?;
            println!("baseline written to {}", dir.path("outputs").display());
        }
        Command::Evaluate { entry, model, data, baseline } => {
            let rows = cmd_evaluate(&cfg, &EvalRequest { entries: entry, models: model, data, baseline }, &dir)?;
            print!("{}", orthoseis::train::format_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = Cli::command().after_help(config_keys_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
