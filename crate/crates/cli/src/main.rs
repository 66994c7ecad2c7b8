//! `mvq`: synthetic data, quantiser training, tokenisation and masked token
//! pretraining from the command line.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 on data
//! and file-format errors.

mod commands;
mod metrics;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "mvq",
    version,
    about = "Multi-codebook vector quantisation and masked token pretraining"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate hidden-Markov synthetic features (MVQF).
    GenSynth(GenSynthArgs),
    /// Train a multi-codebook quantiser on a feature file.
    TrainQuantiser(Box<TrainQuantiserArgs>),
    /// Encode features into a token file (MVQT).
    Encode(EncodeArgs),
    /// Decode a token file back into features by summing the selected codes.
    Decode(DecodeArgs),
    /// Print the reconstruction MSE of a quantiser on a feature file.
    EvalRecon(EvalReconArgs),
    /// Masked token pretraining of the student encoder.
    Pretrain(Box<PretrainArgs>),
    /// Masked top-1 accuracy of a pretrained student.
    EvalPretrain(EvalPretrainArgs),
    /// Print the header fields of an MVQF, MVQQ, MVQT or MVQS file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    /// Number of hidden states [default: 8]
    #[arg(long)]
    states: Option<usize>,
    /// Feature dimension [default: 16]
    #[arg(long)]
    dim: Option<usize>,
    /// Number of frames [default: 5000]
    #[arg(long)]
    frames: Option<usize>,
    /// Self-transition probability [default: 0.95]
    #[arg(long)]
    p_stay: Option<f64>,
    /// Emission noise standard deviation [default: 0.05]
    #[arg(long)]
    sigma: Option<f64>,
    /// Norm of every state mean [default: 3]
    #[arg(long)]
    separation: Option<f64>,
    /// Frame rate stored in the header [default: 50]
    #[arg(long)]
    frame_rate: Option<f64>,
    /// Domain tag: speech, audio or unspecified [default: unspecified]
    #[arg(long)]
    domain: Option<String>,
    /// Also write the hidden state of every frame, one per line
    #[arg(long)]
    states_out: Option<PathBuf>,
    /// Configuration file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed; the same seed reproduces the output bit for bit
    #[arg(long)]
    seed: u64,
    /// Output feature file (MVQF)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainQuantiserArgs {
    /// Training features (MVQF)
    #[arg(long)]
    features: PathBuf,
    /// Number of codebooks N [default: 16]
    #[arg(long)]
    n: Option<usize>,
    /// Codebook size K [default: 256]
    #[arg(long)]
    k: Option<usize>,
    /// Refinement sweeps R [default: 5]
    #[arg(long)]
    refine_steps: Option<usize>,
    /// Weight of the code-balance regulariser [default: 0.1]
    #[arg(long)]
    beta: Option<f64>,
    /// Optimisation steps [default: 2000]
    #[arg(long)]
    steps: Option<usize>,
    /// Frames per batch [default: 64]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Initial code noise relative to the per-dimension data std [default: 0.01]
    #[arg(long)]
    init_noise: Option<f64>,
    /// Configuration file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed; the same seed reproduces the output bit for bit
    #[arg(long)]
    seed: u64,
    /// Output quantiser (MVQQ)
    #[arg(long)]
    out: PathBuf,
    /// Per-step metrics as TSV (`-` for standard output)
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    /// Quantiser (MVQQ)
    #[arg(long)]
    quantiser: PathBuf,
    /// Features to encode (MVQF)
    #[arg(long)]
    features: PathBuf,
    /// Output token file (MVQT)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    /// Quantiser (MVQQ)
    #[arg(long)]
    quantiser: PathBuf,
    /// Token file (MVQT)
    #[arg(long)]
    tokens: PathBuf,
    /// Frame rate written to the header
    #[arg(long, default_value_t = 50.0)]
    frame_rate: f64,
    /// Domain tag: speech, audio or unspecified
    #[arg(long, default_value = "unspecified")]
    domain: String,
    /// Output feature file (MVQF)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalReconArgs {
    /// Quantiser (MVQQ)
    #[arg(long)]
    quantiser: PathBuf,
    /// Feature file (MVQF)
    #[arg(long)]
    features: PathBuf,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    /// Speech-domain input feature files
    #[arg(long, num_args = 1.., required = true)]
    speech: Vec<PathBuf>,
    /// Audio-domain input feature files (dual-domain only)
    #[arg(long, num_args = 1..)]
    audio: Vec<PathBuf>,
    /// Teacher features for each speech input, in order; defaults to the input itself
    #[arg(long, num_args = 1..)]
    speech_teacher: Vec<PathBuf>,
    /// Audio-teacher features for each audio input, in order; defaults to the input itself
    #[arg(long, num_args = 1..)]
    audio_teacher: Vec<PathBuf>,
    /// Quantiser producing speech targets
    #[arg(long)]
    quantiser: PathBuf,
    /// Quantiser producing audio targets; enables dual-domain training
    #[arg(long)]
    audio_quantiser: Option<PathBuf>,
    /// joint, disjoint or asymmetrical [default: asymmetrical]
    #[arg(long)]
    strategy: Option<String>,
    /// Weight of masked frames [default: 0.5]
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight of the audio-target loss [default: 0.1]
    #[arg(long)]
    lambda: Option<f64>,
    /// Span-start probability per frame [default: 0.065]
    #[arg(long)]
    mask_p_start: Option<f64>,
    /// Frames masked per span [default: 10]
    #[arg(long)]
    mask_span: Option<usize>,
    /// Optimisation steps [default: 3000]
    #[arg(long)]
    steps: Option<usize>,
    /// Crops per batch [default: 8]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Frames per crop [default: 64]
    #[arg(long)]
    segment_len: Option<usize>,
    /// Encoder width [default: 64]
    #[arg(long)]
    d_model: Option<usize>,
    /// Context blocks [default: 2]
    #[arg(long)]
    layers: Option<usize>,
    /// Convolution window, odd [default: 9]
    #[arg(long)]
    window: Option<usize>,
    /// Adam learning rate [default: 0.003]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Speech batches per cycle of the domain schedule [default: 1]
    #[arg(long)]
    speech_ratio: Option<usize>,
    /// Audio batches per cycle of the domain schedule [default: 1]
    #[arg(long)]
    audio_ratio: Option<usize>,
    /// Teacher resampling: nearest or linear [default: linear]
    #[arg(long)]
    interp: Option<String>,
    /// Configuration file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed; the same seed reproduces the output bit for bit
    #[arg(long)]
    seed: u64,
    /// Trained student (MVQS)
    #[arg(long)]
    out: PathBuf,
    /// Per-step metrics as TSV (`-` for standard output)
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalPretrainArgs {
    /// Trained student (MVQS)
    #[arg(long)]
    model: PathBuf,
    /// Evaluation feature files (treated as speech inputs)
    #[arg(long, num_args = 1.., required = true)]
    features: Vec<PathBuf>,
    /// Quantiser producing the speech targets
    #[arg(long)]
    quantiser: PathBuf,
    /// Also score the audio heads against this quantiser's tokens
    #[arg(long)]
    audio_quantiser: Option<PathBuf>,
    /// Span-start probability per frame
    #[arg(long, default_value_t = 0.065)]
    mask_p_start: f64,
    /// Frames masked per span
    #[arg(long, default_value_t = 10)]
    mask_span: usize,
    /// Random seed; the same seed reproduces the output bit for bit
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// MVQF, MVQQ, MVQT or MVQS file
    file: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenSynth(a) => commands::gen_synth(a),
        Command::TrainQuantiser(a) => commands::train_quantiser(*a),
        Command::Encode(a) => commands::encode(a),
        Command::Decode(a) => commands::decode(a),
        Command::EvalRecon(a) => commands::eval_recon(a),
        Command::Pretrain(a) => commands::pretrain(*a),
        Command::EvalPretrain(a) => commands::eval_pretrain(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mvq: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
