use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Exit status for malformed invocations and configuration errors.
const EXIT_USAGE: u8 = 1;
/// Exit status for failures while running, including divergence.
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "dqclass", version, about = "Deep-Q and supervised classification of synthetic 3D volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate phantom volumes, a manifest and report impressions.
    GenData(GenDataArgs),
    /// Train the Deep-Q classifier.
    TrainRl(TrainRlArgs),
    /// Train the supervised baseline.
    TrainSdl(TrainSdlArgs),
    /// Train the sentence encoder on labelled report impressions.
    LabelsTrain(LabelsTrainArgs),
    /// Label manifest volumes from their report impressions.
    LabelsPredict(LabelsPredictArgs),
    /// Compare two prediction files with McNemar's test.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML file with [data], [rl], [sdl] and [nlp] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainRlArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: PathBuf,
    /// Label map from `labels-predict`, replacing the manifest labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    test_every: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainSdlArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct LabelsTrainArgs {
    #[command(flatten)]
    common: Common,
    /// Reports JSONL; only lines with a label are used.
    #[arg(long)]
    reports: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
}

#[derive(Args, Debug)]
struct LabelsPredictArgs {
    /// Directory written by `labels-train`.
    #[arg(long)]
    model: PathBuf,
    /// Unlabelled reports JSONL, one per volume.
    #[arg(long)]
    reports: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Label map output (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Exact,
    Chi2Corrected,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predictions of classifier A (JSONL).
    #[arg(long)]
    a: PathBuf,
    /// Predictions of classifier B (JSONL).
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    method: MethodArg,
    /// Report JSON output.
    #[arg(long)]
    out: PathBuf,
    /// RL metrics CSV to turn into an accuracy-versus-episode curve.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Curve output, `<out dir>/accuracy_curve.csv` by default.
    #[arg(long)]
    curve: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::TrainRl(a) => commands::train_rl(a),
        Command::TrainSdl(a) => commands::train_sdl(a),
        Command::LabelsTrain(a) => commands::labels_train(a),
        Command::LabelsPredict(a) => commands::labels_predict(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(e.downcast_ref::<dqclass::Error>(), Some(dqclass::Error::Config(_)));
            ExitCode::from(if usage { EXIT_USAGE } else { EXIT_RUNTIME })
        }
    }
}
