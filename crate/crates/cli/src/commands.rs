use std::fmt::Write as _;
use std::path::PathBuf;

use mvq_core::io::{
    generate_synthetic_with_states, inspect_bytes, parse_config, read_features, read_quantiser,
    read_student, read_tokens, write_features, write_quantiser, write_student, write_tokens,
    Config,
};
use mvq_core::quantiser::train_quantiser as train;
use mvq_core::ssl::{self, InterpMode, MaskConfig, Sample, Strategy};
use mvq_core::{Domain, FeatureSequence};

use crate::metrics::{pretrain_tsv, quantiser_tsv, write_output};
use crate::{
    DecodeArgs, EncodeArgs, EvalPretrainArgs, EvalReconArgs, GenSynthArgs, InspectArgs,
    PretrainArgs, TrainQuantiserArgs,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mvq_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(
                mvq_core::Error::Config(_)
                | mvq_core::Error::Parse { .. }
                | mvq_core::Error::UnknownKeys(_),
            ) => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn load_config(path: &Option<PathBuf>) -> CliResult<Config> {
    match path {
        Some(p) => Ok(parse_config(p)?),
        None => Ok(Config::default()),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn parse_domain(s: &str) -> CliResult<Domain> {
    match s {
        "speech" => Ok(Domain::Speech),
        "audio" => Ok(Domain::Audio),
        "unspecified" => Ok(Domain::Unspecified),
        _ => Err(CliError::Usage(format!(
            "unknown domain {s:?}; expected speech, audio or unspecified"
        ))),
    }
}

pub fn gen_synth(a: GenSynthArgs) -> CliResult {
    let mut cfg = load_config(&a.config)?.synth;
    set(&mut cfg.states, a.states);
    set(&mut cfg.dim, a.dim);
    set(&mut cfg.frames, a.frames);
    set(&mut cfg.p_stay, a.p_stay);
    set(&mut cfg.sigma, a.sigma);
    set(&mut cfg.separation, a.separation);
    set(&mut cfg.frame_rate_hz, a.frame_rate);
    if let Some(d) = &a.domain {
        cfg.domain = parse_domain(d)?;
    }
    cfg.seed = a.seed;
    let data = generate_synthetic_with_states::<f64>(&cfg)?;
    write_features(&a.out, &data.features)?;
    if let Some(path) = &a.states_out {
        let text: String = data.states.iter().map(|s| format!("{s}\n")).collect();
        write_output(path, &text)?;
    }
    Ok(())
}

pub fn train_quantiser(a: TrainQuantiserArgs) -> CliResult {
    let mut cfg = load_config(&a.config)?.quantiser;
    set(&mut cfg.n_codebooks, a.n);
    set(&mut cfg.codebook_size, a.k);
    set(&mut cfg.refine_steps, a.refine_steps);
    set(&mut cfg.beta, a.beta);
    set(&mut cfg.steps, a.steps);
    set(&mut cfg.batch_size, a.batch_size);
    set(&mut cfg.adam.learning_rate, a.learning_rate);
    set(&mut cfg.init_noise_sigma, a.init_noise);
    cfg.seed = a.seed;
    let features = read_features::<f64>(&a.features)?;
    let trained = train(&features, &cfg)?;
    write_quantiser(&a.out, &trained.quantiser)?;
    if let Some(path) = &a.metrics_out {
        write_output(path, &quantiser_tsv(&trained.trace, cfg.n_codebooks))?;
    }
    // report the quantiser as stored, at f32 precision
    let stored = read_quantiser::<f64>(&a.out)?;
    println!("mse={}", stored.reconstruction_mse(&features)?);
    Ok(())
}

pub fn encode(a: EncodeArgs) -> CliResult {
    let q = read_quantiser::<f64>(&a.quantiser)?;
    let xs = read_features::<f64>(&a.features)?;
    write_tokens(&a.out, &q.encode_sequence(&xs)?)?;
    Ok(())
}

pub fn decode(a: DecodeArgs) -> CliResult {
    if !(a.frame_rate > 0.0 && a.frame_rate.is_finite()) {
        return Err(CliError::Usage(format!(
            "frame rate {} must be positive",
            a.frame_rate
        )));
    }
    let q = read_quantiser::<f64>(&a.quantiser)?;
    let z = read_tokens(&a.tokens)?;
    let frames = q.decode_sequence(&z)?;
    let xs = FeatureSequence::new(frames, a.frame_rate, parse_domain(&a.domain)?)?;
    write_features(&a.out, &xs)?;
    Ok(())
}

pub fn eval_recon(a: EvalReconArgs) -> CliResult {
    let q = read_quantiser::<f64>(&a.quantiser)?;
    let xs = read_features::<f64>(&a.features)?;
    println!("mse={}", q.reconstruction_mse(&xs)?);
    Ok(())
}

fn read_all(paths: &[PathBuf]) -> CliResult<Vec<FeatureSequence>> {
    paths.iter().map(|p| Ok(read_features::<f64>(p)?)).collect()
}

fn teachers(
    inputs: usize,
    teachers: &[PathBuf],
    flag: &str,
) -> CliResult<Vec<Option<FeatureSequence>>> {
    if teachers.is_empty() {
        return Ok(vec![None; inputs]);
    }
    if teachers.len() != inputs {
        return Err(CliError::Usage(format!(
            "--{flag} needs one file per input ({inputs}), got {}",
            teachers.len()
        )));
    }
    Ok(read_all(teachers)?.into_iter().map(Some).collect())
}

pub fn pretrain(a: PretrainArgs) -> CliResult {
    let mut cfg = load_config(&a.config)?.pretrain;
    if let Some(s) = &a.strategy {
        cfg.strategy = Strategy::parse(s).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown strategy {s:?}; expected joint, disjoint or asymmetrical"
            ))
        })?;
    }
    if let Some(s) = &a.interp {
        cfg.interp = InterpMode::parse(s).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown interpolation {s:?}; expected nearest or linear"
            ))
        })?;
    }
    set(&mut cfg.alpha, a.alpha);
    set(&mut cfg.lambda, a.lambda);
    set(&mut cfg.mask.p_start, a.mask_p_start);
    set(&mut cfg.mask.span, a.mask_span);
    set(&mut cfg.steps, a.steps);
    set(&mut cfg.batch_size, a.batch_size);
    set(&mut cfg.segment_len, a.segment_len);
    set(&mut cfg.d_model, a.d_model);
    set(&mut cfg.layers, a.layers);
    set(&mut cfg.window, a.window);
    set(&mut cfg.adam.learning_rate, a.learning_rate);
    set(&mut cfg.speech_ratio, a.speech_ratio);
    set(&mut cfg.audio_ratio, a.audio_ratio);
    cfg.seed = a.seed;
    cfg.validate()?;
    if !a.audio.is_empty() && a.audio_quantiser.is_none() {
        return Err(CliError::Usage("--audio needs --audio-quantiser".into()));
    }
    if !a.audio_teacher.is_empty() && a.audio_quantiser.is_none() {
        return Err(CliError::Usage(
            "--audio-teacher needs --audio-quantiser".into(),
        ));
    }
    let dual = a.audio_quantiser.is_some();
    print!("{}", echo(&cfg, dual));

    let q_s = read_quantiser::<f64>(&a.quantiser)?;
    let q_a = a
        .audio_quantiser
        .as_ref()
        .map(read_quantiser::<f64>)
        .transpose()?;
    let speech_inputs = read_all(&a.speech)?;
    let speech_teachers = teachers(speech_inputs.len(), &a.speech_teacher, "speech-teacher")?;
    let speech: Vec<Sample<f64>> = speech_inputs
        .into_iter()
        .zip(speech_teachers)
        .map(|(input, speech_teacher)| Sample {
            input,
            speech_teacher,
            audio_teacher: None,
        })
        .collect();
    let audio_inputs = read_all(&a.audio)?;
    let audio_teachers = teachers(audio_inputs.len(), &a.audio_teacher, "audio-teacher")?;
    let audio: Vec<Sample<f64>> = audio_inputs
        .into_iter()
        .zip(audio_teachers)
        .map(|(input, audio_teacher)| Sample {
            input,
            speech_teacher: None,
            audio_teacher,
        })
        .collect();

    let out = ssl::pretrain(&speech, &audio, &q_s, q_a.as_ref(), &cfg)?;
    write_student(&a.out, &out.model)?;
    if let Some(path) = &a.metrics_out {
        write_output(path, &pretrain_tsv(&out.trace, q_s.n_codebooks(), dual))?;
    }
    if let Some(last) = out.trace.last() {
        println!("final_loss_total={}", last.loss_total);
    }
    Ok(())
}

fn echo(cfg: &ssl::SslTrainConfig, dual: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mode={}", if dual { "dual" } else { "single" });
    let _ = writeln!(s, "strategy={}", cfg.strategy.name());
    let _ = writeln!(s, "alpha={}", cfg.alpha);
    let _ = writeln!(s, "lambda={}", cfg.lambda);
    let _ = writeln!(s, "mask_p_start={}", cfg.mask.p_start);
    let _ = writeln!(s, "mask_span={}", cfg.mask.span);
    let _ = writeln!(s, "steps={}", cfg.steps);
    let _ = writeln!(s, "batch_size={}", cfg.batch_size);
    let _ = writeln!(s, "segment_len={}", cfg.segment_len);
    let _ = writeln!(s, "d_model={}", cfg.d_model);
    let _ = writeln!(s, "layers={}", cfg.layers);
    let _ = writeln!(s, "window={}", cfg.window);
    let _ = writeln!(s, "learning_rate={}", cfg.adam.learning_rate);
    let _ = writeln!(s, "speech_ratio={}", cfg.speech_ratio);
    let _ = writeln!(s, "audio_ratio={}", cfg.audio_ratio);
    let _ = writeln!(s, "interp={}", cfg.interp.name());
    let _ = writeln!(s, "seed={}", cfg.seed);
    s
}

pub fn eval_pretrain(a: EvalPretrainArgs) -> CliResult {
    let model = read_student::<f64>(&a.model)?;
    let q_s = read_quantiser::<f64>(&a.quantiser)?;
    let q_a = a
        .audio_quantiser
        .as_ref()
        .map(read_quantiser::<f64>)
        .transpose()?;
    if q_a.is_some() && model.heads_audio.is_empty() {
        return Err(CliError::Usage("model has no audio heads".into()));
    }
    let mask = MaskConfig {
        p_start: a.mask_p_start,
        span: a.mask_span,
    };
    let utts = read_all(&a.features)?
        .into_iter()
        .map(|input| {
            ssl::prepare_utterance(
                &Sample::new(input),
                false,
                &q_s,
                q_a.as_ref(),
                InterpMode::Linear,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = ssl::eval_masked_accuracy(&model, &utts, &mask, a.seed)?;
    for (n, acc) in report.speech.iter().enumerate() {
        println!("acc_cb_{n}={acc}");
    }
    for (n, acc) in report.audio.iter().enumerate() {
        println!("acc_audio_cb_{n}={acc}");
    }
    println!("mean={}", report.mean_speech);
    println!("masked_positions={}", report.masked_positions);
    Ok(())
}

pub fn inspect(a: InspectArgs) -> CliResult {
    let bytes = std::fs::read(&a.file).map_err(|source| CliError::Io {
        path: a.file.clone(),
        source,
    })?;
    println!("{}", inspect_bytes(&bytes)?);
    Ok(())
}
