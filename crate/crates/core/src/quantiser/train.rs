use super::{
    hard_usage_entropy, quantiser_loss_with_encodings, Quantiser, DEFAULT_CODEBOOK_SIZE,
    DEFAULT_REFINE_STEPS,
};
use crate::numerics::{adam_step, streams, AdamConfig, AdamState, Matrix, Real, Rng};
use crate::sequence::{FeatureSequence, TokenTuple};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantiserTrainConfig {
    pub n_codebooks: usize,
    pub codebook_size: usize,
    pub refine_steps: usize,
    /// Scale of the code-balance regulariser.
    pub beta: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub adam: AdamConfig,
    /// Initial code noise, relative to the per-dimension data std.
    pub init_noise_sigma: f64,
    pub seed: u64,
}

impl Default for QuantiserTrainConfig {
    fn default() -> Self {
        Self {
            n_codebooks: 16,
            codebook_size: DEFAULT_CODEBOOK_SIZE,
            refine_steps: DEFAULT_REFINE_STEPS,
            beta: 0.1,
            batch_size: 64,
            steps: 2000,
            adam: AdamConfig::default(),
            init_noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl QuantiserTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::Config("batch_size and steps must be >= 1".into()));
        }
        if self.beta.is_nan()
            || self.beta < 0.0
            || self.init_noise_sigma.is_nan()
            || self.init_noise_sigma < 0.0
        {
            return Err(Error::Config(
                "beta and init_noise_sigma must be >= 0".into(),
            ));
        }
        self.adam.validate()
    }
}

/// Per-step training record.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantiserStepMetrics {
    pub step: usize,
    pub loss_total: f64,
    pub loss_residual: f64,
    pub loss_prediction: f64,
    pub loss_reg: f64,
    /// Hard code-usage entropy (nats) of each codebook over the batch.
    pub usage_entropy: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedQuantiser<T> {
    pub quantiser: Quantiser<T>,
    pub trace: Vec<QuantiserStepMetrics>,
}

/// Codes start at `frame / N` plus Gaussian noise scaled by the per-dimension
/// data std, so sums of one code per codebook land near the data. Classifiers
/// start at zero.
pub fn initial_quantiser<T: Real>(
    features: &FeatureSequence<T>,
    cfg: &QuantiserTrainConfig,
) -> Result<Quantiser<T>> {
    if features.is_empty() {
        return Err(Error::InvalidInput(
            "cannot initialise from empty features".into(),
        ));
    }
    let (n, k, d) = (cfg.n_codebooks, cfg.codebook_size, features.dim());
    let mut q = Quantiser::zeros(n, k, d, cfg.refine_steps)?;
    let std = features.per_dim_std();
    let mut rng = Rng::new(cfg.seed, streams::QUANTISER_INIT);
    let inv_n = T::from_usize(n).expect("codebook count").recip();
    let sigma = T::lit(cfg.init_noise_sigma);
    for cb in 0..n {
        let codebook: &mut Matrix<T> = q.codebook_mut(cb);
        for code in 0..k {
            let frame = features.frame(rng.below(features.len()));
            for ((c, &x), &s) in codebook.row_mut(code).iter_mut().zip(frame).zip(&std) {
                *c = x * inv_n + T::lit(rng.normal()) * sigma * s;
            }
        }
    }
    Ok(q)
}

/// Trains a quantiser with Adam on shuffled minibatches.
pub fn train_quantiser<T: Real>(
    features: &FeatureSequence<T>,
    cfg: &QuantiserTrainConfig,
) -> Result<TrainedQuantiser<T>> {
    cfg.validate()?;
    if features.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "{} frames is fewer than batch_size {}",
            features.len(),
            cfg.batch_size
        )));
    }
    let mut q = initial_quantiser(features, cfg)?;
    let mut opt: Vec<AdamState<T>> = q
        .parameters()
        .map(|p| AdamState::for_param(p, cfg.adam))
        .collect();
    let beta = T::lit(cfg.beta);
    let mut rng = Rng::new(cfg.seed, streams::QUANTISER_BATCHES);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut cursor = order.len();
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size {
            if cursor == order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let frames: Vec<&[T]> = idx.iter().map(|&t| features.frame(t)).collect();
        let encodings = encode_batch(&q, &frames)?;
        let out = quantiser_loss_with_encodings(&frames, encodings, &q, beta)?;
        for ((param, grad), state) in q.parameters_mut().zip(out.grads.iter()).zip(&mut opt) {
            adam_step(param, grad, state)?;
        }
        trace.push(QuantiserStepMetrics {
            step,
            loss_total: out.total.as_f64(),
            loss_residual: out.residual.as_f64(),
            loss_prediction: out.prediction.as_f64(),
            loss_reg: out.reg.as_f64(),
            usage_entropy: hard_usage_entropy(&out.encodings, q.n_codebooks(), q.codebook_size()),
        });
    }
    Ok(TrainedQuantiser {
        quantiser: q,
        trace,
    })
}

fn encode_batch<T: Real>(q: &Quantiser<T>, frames: &[&[T]]) -> Result<Vec<TokenTuple>> {
    use rayon::prelude::*;
    frames.par_iter().map(|x| q.encode(x)).collect()
}
