//! `forge`: patch extraction, contrast filtering, review, splitting,
//! training and reporting from the command line.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "forge", version, about = "Microscopy patch curation and classifier training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate the synthetic five-class corpus (images + labels.csv).
    Synth(SynthArgs),
    /// Cut source images into square patches and write the initial manifest.
    Patch(PatchArgs),
    /// Classify patches as keep / dark / blank / needs-review.
    Filter(FilterArgs),
    /// Serve the review queue for patches the filter could not decide.
    Review(ReviewArgs),
    /// Stratified train / validation / test split.
    Split(SplitArgs),
    /// Stratified k-fold plan.
    Kfold(KfoldArgs),
    /// Train the reference CNN on a split manifest.
    Train(TrainArgs),
    /// Train and test one model per fold, natively or through an external command.
    KfoldRun(KfoldRunArgs),
    /// Render per-run tables and a comparison from fold result files.
    Report(ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Patch(_) => "patch",
            Command::Filter(_) => "filter",
            Command::Review(_) => "review",
            Command::Split(_) => "split",
            Command::Kfold(_) => "kfold",
            Command::Train(_) => "train",
            Command::KfoldRun(_) => "kfold-run",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub images_per_class: usize,
    #[arg(long, env = "FORGE_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct PatchArgs {
    /// Directory of source images (png / jpg).
    #[arg(long)]
    pub input: PathBuf,
    /// CSV with header `source_image,class`.
    #[arg(long)]
    pub labels: PathBuf,
    /// Patch directory; the manifest is written here as manifest.csv.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub patch_size: usize,
    /// Manifest path, if not `<output>/manifest.csv`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Patch directory (default: the manifest's directory).
    #[arg(long)]
    pub patches: Option<PathBuf>,
    /// TOML file with dark_mean, dark_p95, blank_contrast, review_band.
    #[arg(long, conflicts_with = "calibrate")]
    pub thresholds: Option<PathBuf>,
    /// CSV with header `patch_id,label` (keep / reject); fits thresholds first.
    #[arg(long)]
    pub calibrate: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReviewArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub patches: Option<PathBuf>,
    /// Built review UI bundle to serve at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Percentages, `train,validation[,test]`.
    #[arg(long, default_value = "76.5,13.5,10")]
    pub ratios: String,
    #[arg(long, env = "FORGE_SEED")]
    pub seed: u64,
    #[arg(long)]
    pub per_class_cap: Option<usize>,
    #[arg(long)]
    pub group_by_source: bool,
    /// Output manifest (default: `<manifest stem>.split.csv`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct KfoldArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, env = "FORGE_SEED")]
    pub seed: u64,
    /// Share of each fold's non-test rows held out for validation.
    #[arg(long, default_value_t = 0.15)]
    pub validation_fraction: f64,
    #[arg(long)]
    pub per_class_cap: Option<usize>,
    #[arg(long)]
    pub patches: Option<PathBuf>,
    /// Plan directory (default: `folds` next to the manifest).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Manifest with the split column filled.
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub patches: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, env = "FORGE_SEED")]
    pub seed: Option<u64>,
    /// Run directory (default: `<split stem>.run` next to the split).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct KfoldRunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    /// Shell command run with the job directory as its last argument; it
    /// must write `results.csv` there.
    #[arg(long)]
    pub backend: Option<String>,
    /// Model name used in result file names and reports.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub patches: Option<PathBuf>,
    #[arg(long, env = "FORGE_SEED")]
    pub seed: Option<u64>,
    /// Results directory (default: `<plan>/results`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Directory of `<model>.<mode>.folds.csv` files.
    #[arg(long)]
    pub results: PathBuf,
    /// Also render the published reference runs.
    #[arg(long)]
    pub published: bool,
    /// Report directory (default: the results directory).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let command = std::env::args().nth(1).unwrap_or_default();
            let rendered = e.to_string();
            let message: Vec<&str> = rendered
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(|l| l.trim().trim_start_matches("error: "))
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("{}", error::CliError::validation(message.join(" ")).line(&command));
            return ExitCode::from(1);
        }
    };
    let name = cli.command.name();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line(name));
            ExitCode::from(e.exit_code())
        }
    }
}
