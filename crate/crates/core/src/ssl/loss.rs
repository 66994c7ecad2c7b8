use super::MaskSpec;
use crate::numerics::{argmax, softmax_in_place, Matrix, Real};
use crate::sequence::TokenSequence;
use crate::{Error, Result};

/// How speech-target and audio-target losses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Both target families for every input.
    Joint,
    /// Only the input's own domain's targets.
    Disjoint,
    /// Speech targets for every input, audio targets only for audio inputs.
    #[default]
    Asymmetrical,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Joint => "joint",
            Strategy::Disjoint => "disjoint",
            Strategy::Asymmetrical => "asymmetrical",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "joint" => Some(Strategy::Joint),
            "disjoint" => Some(Strategy::Disjoint),
            "asymmetrical" | "asymmetric" => Some(Strategy::Asymmetrical),
            _ => None,
        }
    }

    /// Whether the (speech, audio) terms apply to an input, before `λ` gating.
    pub fn terms(self, is_audio: bool) -> (bool, bool) {
        match self {
            Strategy::Joint => (true, true),
            Strategy::Disjoint => (!is_audio, is_audio),
            Strategy::Asymmetrical => (true, is_audio),
        }
    }
}

/// `T × K` logits `W_n h_t` of one prediction head.
pub fn head_logits<T: Real>(h: &Matrix<T>, head: &Matrix<T>) -> Result<Matrix<T>> {
    if head.cols() != h.cols() {
        return Err(Error::shape(
            format!("head with {} columns", h.cols()),
            head.cols(),
        ));
    }
    let mut out = Matrix::zeros(h.rows(), head.rows());
    for t in 0..h.rows() {
        let ht = h.row(t);
        for (o, w) in out.row_mut(t).iter_mut().zip(head.iter_rows()) {
            *o = crate::numerics::dot(w, ht);
        }
    }
    Ok(out)
}

/// Result of [`single_domain_loss`].
#[derive(Debug, Clone)]
pub struct SingleLoss<T> {
    /// `(1/N) Σ_n [α masked[n] + (1 − α) unmasked[n]]`.
    pub total: T,
    /// Summed cross-entropy over masked frames, per codebook.
    pub masked: Vec<T>,
    /// Summed cross-entropy over unmasked frames, per codebook.
    pub unmasked: Vec<T>,
    pub grad_h: Matrix<T>,
    pub grad_heads: Vec<Matrix<T>>,
    /// Masked frames whose argmax prediction equals the target, per codebook.
    pub masked_correct: Vec<usize>,
    pub masked_frames: usize,
    pub frames: usize,
}

impl<T: Real> SingleLoss<T> {
    /// `(1/N) Σ_n masked[n]`.
    pub fn masked_mean(&self) -> T {
        mean(&self.masked)
    }

    /// `(1/N) Σ_n unmasked[n]`.
    pub fn unmasked_mean(&self) -> T {
        mean(&self.unmasked)
    }
}

fn mean<T: Real>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::from_usize(xs.len()).expect("count")
}

/// Multi-codebook masked prediction loss.
///
/// Sums (not means) cross-entropy over frames; masked frames are weighted by
/// `alpha`, unmasked ones by `1 − alpha`, and codebooks are averaged.
pub fn single_domain_loss<T: Real>(
    h: &Matrix<T>,
    targets: &TokenSequence,
    mask: &MaskSpec,
    heads: &[Matrix<T>],
    alpha: T,
) -> Result<SingleLoss<T>> {
    let frames = h.rows();
    if targets.len() != frames || mask.len() != frames {
        return Err(Error::shape(
            format!("{frames} frames of targets and mask"),
            format!("{} targets, {} mask", targets.len(), mask.len()),
        ));
    }
    let n_cb = targets.n_codebooks();
    let k = targets.codebook_size();
    if heads.len() != n_cb {
        return Err(Error::shape(format!("{n_cb} heads"), heads.len()));
    }
    if let Some(bad) = heads.iter().find(|w| w.shape() != (k, h.cols())) {
        return Err(Error::shape(
            format!("head {k}x{}", h.cols()),
            format!("{:?}", bad.shape()),
        ));
    }
    if !(T::zero()..=T::one()).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }

    let inv_n = T::from_usize(n_cb).expect("count").recip();
    let w_masked = alpha * inv_n;
    let w_unmasked = (T::one() - alpha) * inv_n;
    let mut masked = vec![T::zero(); n_cb];
    let mut unmasked = vec![T::zero(); n_cb];
    let mut masked_correct = vec![0usize; n_cb];
    let mut grad_h = Matrix::zeros(frames, h.cols());
    let mut grad_heads: Vec<Matrix<T>> = heads.iter().map(Matrix::zeros_like).collect();
    let mut logits = vec![T::zero(); k];

    for t in 0..frames {
        let ht = h.row(t);
        let is_masked = mask.is_masked(t);
        let weight = if is_masked { w_masked } else { w_unmasked };
        for (n, head) in heads.iter().enumerate() {
            let target = targets.token(t, n);
            for (l, w) in logits.iter_mut().zip(head.iter_rows()) {
                *l = crate::numerics::dot(w, ht);
            }
            if is_masked && argmax(&logits) == Some(target) {
                masked_correct[n] += 1;
            }
            let target_logit = logits[target];
            let lse = softmax_in_place(&mut logits);
            let ce = (lse - target_logit).max(T::zero());
            if is_masked {
                masked[n] += ce;
            } else {
                unmasked[n] += ce;
            }
            if weight == T::zero() {
                continue;
            }
            // logits now hold probabilities
            logits[target] -= T::one();
            logits.iter_mut().for_each(|g| *g *= weight);
            grad_heads[n].add_outer(&logits, ht, T::one());
            head.add_matvec_transposed(&logits, grad_h.row_mut(t));
        }
    }

    let total = masked
        .iter()
        .zip(&unmasked)
        .map(|(&m, &u)| alpha * m + (T::one() - alpha) * u)
        .sum::<T>()
        * inv_n;
    Ok(SingleLoss {
        total,
        masked,
        unmasked,
        grad_h,
        grad_heads,
        masked_correct,
        masked_frames: mask.masked_count(),
        frames,
    })
}

/// Result of [`dual_domain_loss`]. Terms that were not selected are `None`
/// and their head gradients are exactly zero.
#[derive(Debug, Clone)]
pub struct DualLoss<T> {
    pub total: T,
    pub speech: Option<SingleLoss<T>>,
    /// Unscaled audio-target loss; it enters `total` multiplied by `λ`.
    pub audio: Option<SingleLoss<T>>,
    pub grad_h: Matrix<T>,
    pub grad_heads_speech: Vec<Matrix<T>>,
    pub grad_heads_audio: Vec<Matrix<T>>,
}

impl<T: Real> DualLoss<T> {
    /// Contribution of the audio term to `total` (`λ · L_single(H, Z_a)`).
    pub fn audio_contribution(&self, lambda: T) -> T {
        self.audio.as_ref().map_or(T::zero(), |a| lambda * a.total)
    }
}

/// Dual-domain loss: speech-target and audio-target single-domain losses
/// combined according to `strategy`, the audio term scaled by `lambda`.
#[allow(clippy::too_many_arguments)]
pub fn dual_domain_loss<T: Real>(
    h: &Matrix<T>,
    speech_targets: &TokenSequence,
    audio_targets: Option<&TokenSequence>,
    mask: &MaskSpec,
    heads_speech: &[Matrix<T>],
    heads_audio: &[Matrix<T>],
    is_audio: bool,
    alpha: T,
    lambda: T,
    strategy: Strategy,
) -> Result<DualLoss<T>> {
    if lambda.is_nan() || lambda < T::zero() {
        return Err(Error::Config(format!("lambda {lambda} must be >= 0")));
    }
    let (use_speech, use_audio) = strategy.terms(is_audio);
    if use_audio && audio_targets.is_none() {
        return Err(Error::Config(format!(
            "{} strategy needs audio targets for this input",
            strategy.name()
        )));
    }
    let speech = if use_speech {
        Some(single_domain_loss(
            h,
            speech_targets,
            mask,
            heads_speech,
            alpha,
        )?)
    } else {
        None
    };
    let audio = match audio_targets {
        Some(z) if use_audio && lambda != T::zero() => {
            Some(single_domain_loss(h, z, mask, heads_audio, alpha)?)
        }
        _ => None,
    };

    let mut grad_h = Matrix::zeros(h.rows(), h.cols());
    let mut grad_heads_speech: Vec<Matrix<T>> =
        heads_speech.iter().map(Matrix::zeros_like).collect();
    let mut grad_heads_audio: Vec<Matrix<T>> = heads_audio.iter().map(Matrix::zeros_like).collect();
    let total = match (&speech, &audio) {
        (Some(s), None) => {
            grad_h = s.grad_h.clone();
            grad_heads_speech = s.grad_heads.clone();
            s.total
        }
        (None, Some(a)) => {
            grad_h.axpy(lambda, &a.grad_h);
            for (g, ga) in grad_heads_audio.iter_mut().zip(&a.grad_heads) {
                g.axpy(lambda, ga);
            }
            lambda * a.total
        }
        (Some(s), Some(a)) => {
            grad_h = s.grad_h.clone();
            grad_h.axpy(lambda, &a.grad_h);
            grad_heads_speech = s.grad_heads.clone();
            for (g, ga) in grad_heads_audio.iter_mut().zip(&a.grad_heads) {
                g.axpy(lambda, ga);
            }
            s.total + lambda * a.total
        }
        (None, None) => T::zero(),
    };
    Ok(DualLoss {
        total,
        speech,
        audio,
        grad_h,
        grad_heads_speech,
        grad_heads_audio,
    })
}
