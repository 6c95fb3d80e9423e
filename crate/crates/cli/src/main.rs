mod commands;
mod grid;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::setup::Summary;

/// Multi-domain image translation: data preparation, training,
/// translation, evaluation, loss ablation and embedding export.
#[derive(Debug, Parser)]
#[command(name = "multipath", version, about)]
struct Cli {
    /// Root under which commands without an explicit `--out` write.
    #[arg(long, global = true, env = "MULTIPATH_OUT", default_value = "multipath-out")]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tile per-domain image folders into patches and sample a manifest.
    Ingest(IngestArgs),
    /// Write a synthetic multi-domain corpus and its manifest.
    Synth(SynthArgs),
    /// Train a generator/discriminator pair on a manifest.
    Train(TrainArgs),
    /// Translate images into one or more target domains.
    Translate(TranslateArgs),
    /// Score translations between domain pairs.
    Evaluate(EvaluateArgs),
    /// Train and score every loss-ablation configuration.
    Ablate(AblateArgs),
    /// Export one feature vector per patch.
    Embed(EmbedArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for multipath_core::data::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Self::Train,
            SplitArg::Test => Self::Test,
        }
    }
}

/// Config file plus `key=value` overrides, applied in that order on top
/// of the built-in defaults.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// One directory of source images per domain; the folder name is the
    /// domain name.
    #[arg(long = "domain-dir", required = true, num_args = 1..)]
    domain_dirs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    patch_size: usize,
    /// Training patches sampled per domain.
    #[arg(long)]
    train: usize,
    /// Test patches sampled per domain.
    #[arg(long)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drop patches whose mean HSV saturation is below this value.
    #[arg(long)]
    min_saturation: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    domains: usize,
    /// Patches per domain, test split included.
    #[arg(long, default_value_t = 300)]
    per_domain: usize,
    #[arg(long, default_value_t = 60)]
    test_per_domain: usize,
    #[arg(long, default_value_t = 64)]
    patch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write this many patches of a further, unseen domain under
    /// `unseen/<name>/`.
    #[arg(long, default_value_t = 0)]
    unseen: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from the checkpoint in `--out` if there is one.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Folder of images to translate.
    #[arg(long, conflicts_with = "split")]
    input_dir: Option<PathBuf>,
    /// Manifest naming the domains; its `--split` patches are translated
    /// unless `--input-dir` is given.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Target domain name or index. Repeatable; defaults to every domain.
    #[arg(long)]
    target: Vec<String>,
    /// Also write one side-by-side grid per input.
    #[arg(long)]
    grid: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// `source:target` domain names. Repeatable; defaults to every ordered
    /// pair of distinct domains.
    #[arg(long = "pair")]
    pairs: Vec<String>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Report path; defaults to `report.tsv` under the output root.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated configuration labels (`adv`, `adv+cyc`,
    /// `adv+cyc+c`, `adv+cyc+p`, `adv+c+p`, `adv+cyc+c+p`); all six by
    /// default.
    #[arg(long, value_delimiter = ',')]
    rows: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// `extractor` or `bottleneck`.
    #[arg(long, default_value = "extractor")]
    source: String,
    /// Trained checkpoint; required for `bottleneck`, otherwise supplies
    /// the extractor settings.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output TSV; defaults to `embeddings.tsv` under the output root.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> multipath_core::Result<Summary> {
    let root = cli.out_root;
    match cli.command {
        Command::Ingest(a) => commands::ingest(a, &root),
        Command::Synth(a) => commands::synth(a, &root),
        Command::Train(a) => commands::train(a, &root),
        Command::Translate(a) => commands::translate(a, &root),
        Command::Evaluate(a) => commands::evaluate(a, &root),
        Command::Ablate(a) => commands::ablate(a, &root),
        Command::Embed(a) => commands::embed(a, &root),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli).and_then(Summary::validated) {
        Ok(summary) => {
            println!("{}", summary.to_json());
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
