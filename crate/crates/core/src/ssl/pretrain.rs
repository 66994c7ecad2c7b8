use rayon::prelude::*;

use super::interp::{interpolate_targets, InterpMode};
use super::loss::{dual_domain_loss, Strategy};
use super::mask::{apply_mask, mask_embedding_grad, sample_mask_with, MaskConfig, MaskSpec};
use super::model::{student_backward, student_forward, StudentModel, StudentShape};
use crate::numerics::{adam_step, argmax, streams, AdamConfig, AdamState, Real, Rng};
use crate::quantiser::Quantiser;
use crate::sequence::{Domain, FeatureSequence, TokenSequence};
use crate::{Error, Result};

/// Hyperparameters of masked-prediction pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct SslTrainConfig {
    /// Weight of masked frames; unmasked frames get `1 − alpha`.
    pub alpha: f64,
    /// Scale of the audio-target loss in dual-domain training.
    pub lambda: f64,
    pub strategy: Strategy,
    pub mask: MaskConfig,
    pub adam: AdamConfig,
    pub steps: usize,
    /// Crops per step.
    pub batch_size: usize,
    /// Frames per crop.
    pub segment_len: usize,
    pub d_model: usize,
    pub layers: usize,
    pub window: usize,
    /// Speech batches per cycle of the domain schedule.
    pub speech_ratio: usize,
    /// Audio batches per cycle of the domain schedule.
    pub audio_ratio: usize,
    pub interp: InterpMode,
    pub seed: u64,
}

impl Default for SslTrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda: 0.1,
            strategy: Strategy::Asymmetrical,
            mask: MaskConfig::default(),
            adam: AdamConfig::with_learning_rate(3e-3),
            steps: 3000,
            batch_size: 8,
            segment_len: 64,
            d_model: 64,
            layers: 2,
            window: 9,
            speech_ratio: 1,
            audio_ratio: 1,
            interp: InterpMode::Linear,
            seed: 0,
        }
    }
}

impl SslTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda {} must be >= 0",
                self.lambda
            )));
        }
        if self.steps == 0 || self.batch_size == 0 || self.segment_len == 0 {
            return Err(Error::Config(
                "steps, batch_size and segment_len must be >= 1".into(),
            ));
        }
        if self.window.is_multiple_of(2) || self.d_model == 0 {
            return Err(Error::Config("window must be odd and d_model >= 1".into()));
        }
        if self.speech_ratio + self.audio_ratio == 0 {
            return Err(Error::Config("domain ratio must not be 0:0".into()));
        }
        self.mask.validate()?;
        self.adam.validate()
    }
}

/// Raw training input: student features plus optional teacher features.
/// A missing teacher means the input itself is quantised for targets.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub input: FeatureSequence<T>,
    pub speech_teacher: Option<FeatureSequence<T>>,
    pub audio_teacher: Option<FeatureSequence<T>>,
}

impl<T: Real> Sample<T> {
    pub fn new(input: FeatureSequence<T>) -> Self {
        Self {
            input,
            speech_teacher: None,
            audio_teacher: None,
        }
    }
}

/// Input frames with their token targets, aligned frame by frame.
#[derive(Debug, Clone)]
pub struct Utterance<T> {
    pub input: FeatureSequence<T>,
    pub speech_targets: TokenSequence,
    pub audio_targets: Option<TokenSequence>,
    pub is_audio: bool,
}

impl<T: Real> Utterance<T> {
    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }
}

/// Resamples teacher features to the input frame rate and quantises them.
/// Audio targets are produced when `audio_quantiser` is given. Sequences are
/// truncated to the shortest of input and resampled teachers.
pub fn prepare_utterance<T: Real>(
    sample: &Sample<T>,
    is_audio: bool,
    speech_quantiser: &Quantiser<T>,
    audio_quantiser: Option<&Quantiser<T>>,
    mode: InterpMode,
) -> Result<Utterance<T>> {
    let rate = sample.input.frame_rate_hz();
    let teacher = |t: &Option<FeatureSequence<T>>| -> Result<FeatureSequence<T>> {
        match t {
            Some(t) => interpolate_targets(t, rate, mode),
            None => Ok(sample.input.clone()),
        }
    };
    let speech_teacher = teacher(&sample.speech_teacher)?;
    let audio_teacher = match audio_quantiser {
        Some(_) => Some(teacher(&sample.audio_teacher)?),
        None => None,
    };
    let len = [
        Some(sample.input.len()),
        Some(speech_teacher.len()),
        audio_teacher.as_ref().map(|a| a.len()),
    ]
    .into_iter()
    .flatten()
    .min()
    .unwrap_or(0);
    let speech_targets = speech_quantiser.encode_sequence(&speech_teacher.slice(0, len)?)?;
    let audio_targets = match (audio_quantiser, audio_teacher) {
        (Some(q), Some(e)) => Some(q.encode_sequence(&e.slice(0, len)?)?),
        _ => None,
    };
    Ok(Utterance {
        input: sample.input.slice(0, len)?,
        speech_targets,
        audio_targets,
        is_audio,
    })
}

/// One training step's record. Losses are means over the batch's crops;
/// `loss_total = α·loss_masked + (1−α)·loss_unmasked + loss_audio`.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainStepMetrics {
    pub step: usize,
    pub domain: Domain,
    pub loss_total: f64,
    /// Codebook-averaged summed CE over masked frames (speech targets).
    pub loss_masked: f64,
    /// Codebook-averaged summed CE over unmasked frames (speech targets).
    pub loss_unmasked: f64,
    /// `λ ·` audio-target loss, `None` in single-domain training.
    pub loss_audio: Option<f64>,
    /// `loss_total` divided by frames per crop.
    pub loss_per_frame: f64,
    /// Masked top-1 accuracy per speech codebook.
    pub acc_speech: Vec<f64>,
    /// Masked top-1 accuracy per audio codebook (empty unless computed).
    pub acc_audio: Vec<f64>,
    pub masked_frames: usize,
    pub frames: usize,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome<T> {
    pub model: StudentModel<T>,
    pub trace: Vec<PretrainStepMetrics>,
}

struct CropResult<T> {
    grads: StudentModel<T>,
    total: T,
    masked: T,
    unmasked: T,
    audio: T,
    speech_correct: Vec<usize>,
    audio_correct: Option<Vec<usize>>,
    masked_frames: usize,
    frames: usize,
}

/// Masked-prediction pretraining. Single-domain when `audio_quantiser` is
/// `None` (only `speech` is used), dual-domain under `cfg.strategy` otherwise.
pub fn pretrain<T: Real>(
    speech: &[Sample<T>],
    audio: &[Sample<T>],
    speech_quantiser: &Quantiser<T>,
    audio_quantiser: Option<&Quantiser<T>>,
    cfg: &SslTrainConfig,
) -> Result<PretrainOutcome<T>> {
    cfg.validate()?;
    if audio_quantiser.is_none() && !audio.is_empty() {
        return Err(Error::Config("audio data needs an audio quantiser".into()));
    }
    let dual = audio_quantiser.is_some();
    let prep = |samples: &[Sample<T>], is_audio: bool| -> Result<Vec<Utterance<T>>> {
        samples
            .iter()
            .map(|s| prepare_utterance(s, is_audio, speech_quantiser, audio_quantiser, cfg.interp))
            .filter(|u| u.as_ref().map_or(true, |u| !u.is_empty()))
            .collect()
    };
    let speech_utts = prep(speech, false)?;
    let audio_utts = prep(audio, true)?;
    if speech_utts.is_empty() && audio_utts.is_empty() {
        return Err(Error::Config(
            "pretraining needs at least one non-empty sequence".into(),
        ));
    }
    let d_in = speech_utts
        .iter()
        .chain(&audio_utts)
        .next()
        .expect("non-empty")
        .input
        .dim();
    if let Some(u) = speech_utts
        .iter()
        .chain(&audio_utts)
        .find(|u| u.input.dim() != d_in)
    {
        return Err(Error::shape(format!("inputs of dim {d_in}"), u.input.dim()));
    }

    let shape = StudentShape {
        d_in,
        d_model: cfg.d_model,
        layers: cfg.layers,
        window: cfg.window,
        speech_heads: (
            speech_quantiser.n_codebooks(),
            speech_quantiser.codebook_size(),
        ),
        audio_heads: audio_quantiser.map(|q| (q.n_codebooks(), q.codebook_size())),
    };
    let mut model = StudentModel::init(shape, cfg.seed)?;
    let mut opt: Vec<AdamState<T>> = model
        .parameters()
        .into_iter()
        .map(|p| AdamState::for_param(p, cfg.adam))
        .collect();

    let alpha = T::lit(cfg.alpha);
    let lambda = T::lit(cfg.lambda);
    let strategy = if dual {
        cfg.strategy
    } else {
        Strategy::Asymmetrical
    };
    let mut rng = Rng::new(cfg.seed, streams::PRETRAIN_BATCHES);
    let mut trace = Vec::with_capacity(cfg.steps);
    let cycle = cfg.speech_ratio + cfg.audio_ratio;

    for step in 1..=cfg.steps {
        let want_audio = (step - 1) % cycle >= cfg.speech_ratio;
        let pool = match (want_audio, speech_utts.is_empty(), audio_utts.is_empty()) {
            (true, _, false) | (false, true, _) => &audio_utts,
            _ => &speech_utts,
        };
        let tasks: Vec<(usize, usize, usize, MaskSpec)> = (0..cfg.batch_size)
            .map(|_| {
                let i = rng.below(pool.len());
                let len = cfg.segment_len.min(pool[i].len());
                let start = rng.below(pool[i].len() - len + 1);
                let mask = sample_mask_with(len, &cfg.mask, &mut rng);
                (i, start, len, mask)
            })
            .collect();
        let results: Vec<CropResult<T>> = tasks
            .par_iter()
            .map(|(i, start, len, mask)| {
                crop_step(
                    &model, &pool[*i], *start, *len, mask, alpha, lambda, strategy,
                )
            })
            .collect::<Result<_>>()?;

        // fixed-order reduction keeps steps bitwise reproducible
        let inv_b = T::from_usize(results.len()).expect("batch").recip();
        let mut grads = model.zeros_like();
        for r in &results {
            grads.accumulate(&r.grads, inv_b);
        }
        for ((param, grad), state) in model
            .parameters_mut()
            .into_iter()
            .zip(grads.parameters())
            .zip(&mut opt)
        {
            adam_step(param, grad, state)?;
        }
        trace.push(summarise(step, pool[0].is_audio, dual, &results, &shape));
    }
    Ok(PretrainOutcome { model, trace })
}

#[allow(clippy::too_many_arguments)]
fn crop_step<T: Real>(
    model: &StudentModel<T>,
    utt: &Utterance<T>,
    start: usize,
    len: usize,
    mask: &MaskSpec,
    alpha: T,
    lambda: T,
    strategy: Strategy,
) -> Result<CropResult<T>> {
    let input = utt.input.slice(start, len)?;
    let zs = utt.speech_targets.slice(start, len)?;
    let za = utt
        .audio_targets
        .as_ref()
        .map(|z| z.slice(start, len))
        .transpose()?;
    let masked_input = apply_mask(&input, mask, model.mask_embedding.as_slice())?;
    let cache = student_forward(&masked_input, model)?;
    let loss = dual_domain_loss(
        cache.output(),
        &zs,
        za.as_ref(),
        mask,
        &model.heads_speech,
        &model.heads_audio,
        utt.is_audio,
        alpha,
        lambda,
        strategy,
    )?;
    let mut grads = model.zeros_like();
    let grad_input = student_backward(&cache, &loss.grad_h, model, &mut grads)?;
    grads
        .mask_embedding
        .as_mut_slice()
        .iter_mut()
        .zip(mask_embedding_grad(&grad_input, mask))
        .for_each(|(g, v)| *g += v);
    for (g, l) in grads.heads_speech.iter_mut().zip(&loss.grad_heads_speech) {
        g.axpy(T::one(), l);
    }
    for (g, l) in grads.heads_audio.iter_mut().zip(&loss.grad_heads_audio) {
        g.axpy(T::one(), l);
    }
    let (masked, unmasked, speech_correct) = match &loss.speech {
        Some(s) => (s.masked_mean(), s.unmasked_mean(), s.masked_correct.clone()),
        None => (T::zero(), T::zero(), vec![0; model.heads_speech.len()]),
    };
    Ok(CropResult {
        total: loss.total,
        audio: loss.audio_contribution(lambda),
        audio_correct: loss.audio.as_ref().map(|a| a.masked_correct.clone()),
        grads,
        masked,
        unmasked,
        speech_correct,
        masked_frames: mask.masked_count(),
        frames: len,
    })
}

fn summarise<T: Real>(
    step: usize,
    is_audio: bool,
    dual: bool,
    results: &[CropResult<T>],
    shape: &StudentShape,
) -> PretrainStepMetrics {
    let b = results.len() as f64;
    let mean =
        |f: &dyn Fn(&CropResult<T>) -> T| results.iter().map(|r| f(r).as_f64()).sum::<f64>() / b;
    let masked_frames: usize = results.iter().map(|r| r.masked_frames).sum();
    let frames: usize = results.iter().map(|r| r.frames).sum();
    let rate = |correct: usize, denom: usize| {
        if denom == 0 {
            0.0
        } else {
            correct as f64 / denom as f64
        }
    };
    let acc_speech = (0..shape.speech_heads.0)
        .map(|n| {
            rate(
                results.iter().map(|r| r.speech_correct[n]).sum(),
                masked_frames,
            )
        })
        .collect();
    let acc_audio = match shape.audio_heads {
        Some((na, _)) if results.iter().any(|r| r.audio_correct.is_some()) => (0..na)
            .map(|n| {
                let correct = results
                    .iter()
                    .filter_map(|r| r.audio_correct.as_ref())
                    .map(|c| c[n])
                    .sum();
                rate(correct, masked_frames)
            })
            .collect(),
        _ => Vec::new(),
    };
    let loss_total = mean(&|r| r.total);
    PretrainStepMetrics {
        step,
        domain: if is_audio {
            Domain::Audio
        } else {
            Domain::Speech
        },
        loss_total,
        loss_masked: mean(&|r| r.masked),
        loss_unmasked: mean(&|r| r.unmasked),
        loss_audio: dual.then(|| mean(&|r| r.audio)),
        loss_per_frame: loss_total * b / frames.max(1) as f64,
        acc_speech,
        acc_audio,
        masked_frames,
        frames,
    }
}

/// Masked top-1 accuracy of a trained model on whole sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub speech: Vec<f64>,
    pub audio: Vec<f64>,
    /// Mean over speech codebooks.
    pub mean_speech: f64,
    pub masked_positions: usize,
    pub audio_masked_positions: usize,
}

/// Fraction of masked positions whose argmax prediction equals the target,
/// per codebook. Masks are drawn per utterance from `seed`.
pub fn eval_masked_accuracy<T: Real>(
    model: &StudentModel<T>,
    data: &[Utterance<T>],
    mask: &MaskConfig,
    seed: u64,
) -> Result<AccuracyReport> {
    mask.validate()?;
    let mut rng = Rng::new(seed, streams::EVAL);
    let masks: Vec<MaskSpec> = data
        .iter()
        .map(|u| sample_mask_with(u.len(), mask, &mut rng))
        .collect();
    let n_s = model.heads_speech.len();
    let n_a = model.heads_audio.len();
    let per_utt: Vec<(Vec<usize>, Vec<usize>, usize, usize)> = data
        .par_iter()
        .zip(&masks)
        .map(|(u, m)| {
            if u.input.dim() != model.d_in() {
                return Err(Error::shape(
                    format!("inputs of dim {}", model.d_in()),
                    u.input.dim(),
                ));
            }
            let x = apply_mask(&u.input, m, model.mask_embedding.as_slice())?;
            let cache = student_forward(&x, model)?;
            let h = cache.output();
            let count =
                |heads: &[crate::numerics::Matrix<T>], z: &TokenSequence| -> Result<Vec<usize>> {
                    if z.n_codebooks() != heads.len()
                        || heads.iter().any(|w| w.rows() != z.codebook_size())
                    {
                        return Err(Error::shape(
                            format!("{} heads", heads.len()),
                            format!("targets N={} K={}", z.n_codebooks(), z.codebook_size()),
                        ));
                    }
                    let mut correct = vec![0usize; heads.len()];
                    for &t in m.indices() {
                        for (n, w) in heads.iter().enumerate() {
                            let logits = w.matvec(h.row(t));
                            if argmax(&logits) == Some(z.token(t, n)) {
                                correct[n] += 1;
                            }
                        }
                    }
                    Ok(correct)
                };
            let speech = count(&model.heads_speech, &u.speech_targets)?;
            let (audio, audio_positions) = match (&u.audio_targets, n_a) {
                (Some(z), n) if n > 0 => (count(&model.heads_audio, z)?, m.masked_count()),
                _ => (vec![0; n_a], 0),
            };
            Ok((speech, audio, m.masked_count(), audio_positions))
        })
        .collect::<Result<_>>()?;

    let mut speech = vec![0usize; n_s];
    let mut audio = vec![0usize; n_a];
    let (mut positions, mut audio_positions) = (0, 0);
    for (s, a, p, ap) in per_utt {
        speech.iter_mut().zip(s).for_each(|(x, y)| *x += y);
        audio.iter_mut().zip(a).for_each(|(x, y)| *x += y);
        positions += p;
        audio_positions += ap;
    }
    if positions == 0 {
        return Err(Error::Config("evaluation produced no masked frames".into()));
    }
    let speech: Vec<f64> = speech
        .iter()
        .map(|&c| c as f64 / positions as f64)
        .collect();
    let audio = if audio_positions == 0 {
        Vec::new()
    } else {
        audio
            .iter()
            .map(|&c| c as f64 / audio_positions as f64)
            .collect()
    };
    Ok(AccuracyReport {
        mean_speech: speech.iter().sum::<f64>() / speech.len() as f64,
        speech,
        audio,
        masked_positions: positions,
        audio_masked_positions: audio_positions,
    })
}
