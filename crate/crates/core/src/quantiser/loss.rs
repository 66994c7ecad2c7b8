use super::Quantiser;
use crate::numerics::{softmax_in_place, Matrix, Real};
use crate::sequence::{FeatureSequence, TokenTuple};
use crate::{Error, Result};

/// Gradients with the same layout as the quantiser's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantiserGrads<T> {
    pub codebooks: Vec<Matrix<T>>,
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Matrix<T>>,
}

impl<T: Real> QuantiserGrads<T> {
    pub fn zeros_for(q: &Quantiser<T>) -> Self {
        let (n, k, d) = (q.n_codebooks(), q.codebook_size(), q.dim());
        Self {
            codebooks: vec![Matrix::zeros(k, d); n],
            weights: vec![Matrix::zeros(k, d); n],
            biases: vec![Matrix::zeros(1, k); n],
        }
    }

    /// Same order as [`Quantiser::parameters`].
    pub fn iter(&self) -> impl Iterator<Item = &Matrix<T>> {
        self.codebooks
            .iter()
            .chain(&self.weights)
            .chain(&self.biases)
    }
}

/// Loss parts of one quantiser training batch.
#[derive(Debug, Clone)]
pub struct QuantiserLoss<T> {
    /// Mean squared reconstruction error.
    pub residual: T,
    /// Mean over frames of the summed per-codebook classifier cross-entropy.
    pub prediction: T,
    /// `Σ_n KL(uniform ‖ batch-mean classifier softmax of codebook n)`.
    pub reg: T,
    /// `residual + prediction + β·reg`.
    pub total: T,
    pub grads: QuantiserGrads<T>,
    /// Encodings the loss was evaluated at (detached targets).
    pub encodings: Vec<TokenTuple>,
}

/// Encodes the batch with the current quantiser and evaluates the training
/// loss at those encodings.
pub fn quantiser_loss<T: Real>(
    batch: &FeatureSequence<T>,
    q: &Quantiser<T>,
    beta: T,
) -> Result<QuantiserLoss<T>> {
    let frames: Vec<&[T]> = (0..batch.len()).map(|t| batch.frame(t)).collect();
    let encodings = frames
        .iter()
        .map(|x| q.encode(x))
        .collect::<Result<Vec<_>>>()?;
    quantiser_loss_with_encodings(&frames, encodings, q, beta)
}

/// Training loss with the encodings held fixed.
///
/// The residual term only reaches the selected code vectors; the prediction
/// and regulariser terms only reach the classifiers.
pub fn quantiser_loss_with_encodings<T: Real>(
    frames: &[&[T]],
    encodings: Vec<TokenTuple>,
    q: &Quantiser<T>,
    beta: T,
) -> Result<QuantiserLoss<T>> {
    if frames.is_empty() {
        return Err(Error::InvalidInput(
            "quantiser_loss on an empty batch".into(),
        ));
    }
    if encodings.len() != frames.len() {
        return Err(Error::shape(
            format!("{} encodings", frames.len()),
            encodings.len(),
        ));
    }
    let (n_cb, k, d) = (q.n_codebooks(), q.codebook_size(), q.dim());
    for (x, z) in frames.iter().zip(&encodings) {
        if x.len() != d {
            return Err(Error::shape(format!("frame of dim {d}"), x.len()));
        }
        z.validate(n_cb, k)?;
    }

    let batch = T::from_usize(frames.len()).expect("batch size");
    let inv_b = batch.recip();
    let mut grads = QuantiserGrads::zeros_for(q);

    // residual
    let mut residual = T::zero();
    let mut recon = vec![T::zero(); d];
    let mut diff = vec![T::zero(); d];
    let code_scale = T::lit(-2.0) * inv_b;
    for (x, z) in frames.iter().zip(&encodings) {
        q.decode_into(z.as_slice(), &mut recon);
        for ((r, &xi), &xh) in diff.iter_mut().zip(x.iter()).zip(&recon) {
            *r = xi - xh;
        }
        residual += diff.iter().map(|&r| r * r).sum::<T>();
        for n in 0..n_cb {
            let g = grads.codebooks[n].row_mut(z.get(n));
            g.iter_mut()
                .zip(&diff)
                .for_each(|(g, &r)| *g += code_scale * r);
        }
    }
    residual *= inv_b;

    // prediction and balance regulariser, one classifier at a time
    let k_real = T::from_usize(k).expect("codebook size");
    let uniform = k_real.recip();
    let mut prediction = T::zero();
    let mut reg = T::zero();
    let mut probs = Matrix::zeros(frames.len(), k);
    let mut mean_p = vec![T::zero(); k];
    let mut g = vec![T::zero(); k];
    for n in 0..n_cb {
        mean_p.iter_mut().for_each(|m| *m = T::zero());
        for (b, (x, z)) in frames.iter().zip(&encodings).enumerate() {
            let logits = q.classifier_logits(n, x);
            let target = z.get(n);
            let p = probs.row_mut(b);
            p.copy_from_slice(&logits);
            let lse = softmax_in_place(p);
            prediction += (lse - logits[target]).max(T::zero());
            mean_p
                .iter_mut()
                .zip(p.iter())
                .for_each(|(m, &pi)| *m += pi * inv_b);
        }
        let tiny = T::min_positive_value();
        // KL(u ‖ p̄) = Σ_k u (ln u − ln p̄_k)
        reg += mean_p
            .iter()
            .map(|&m| uniform * (uniform.ln() - m.max(tiny).ln()))
            .sum::<T>();
        // ∂KL/∂p̄_k = −1/(K p̄_k)
        let a: Vec<T> = mean_p.iter().map(|&m| uniform / m.max(tiny)).collect();

        for (b, (x, z)) in frames.iter().zip(&encodings).enumerate() {
            let p = probs.row(b);
            let s: T = p.iter().zip(&a).map(|(&pi, &ai)| pi * ai).sum();
            for (j, gj) in g.iter_mut().enumerate() {
                let ce = p[j] - if j == z.get(n) { T::one() } else { T::zero() };
                let balance = p[j] * (s - a[j]);
                *gj = (ce + beta * balance) * inv_b;
            }
            grads.weights[n].add_outer(&g, x, T::one());
            grads.biases[n]
                .as_mut_slice()
                .iter_mut()
                .zip(&g)
                .for_each(|(bg, &gj)| *bg += gj);
        }
    }
    prediction *= inv_b;

    Ok(QuantiserLoss {
        residual,
        prediction,
        reg,
        total: residual + prediction + beta * reg,
        grads,
        encodings,
    })
}

/// Entropy (nats) of the empirical index histogram of each codebook.
pub fn hard_usage_entropy(
    encodings: &[TokenTuple],
    n_codebooks: usize,
    codebook_size: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_codebooks);
    let total = encodings.len() as f64;
    for n in 0..n_codebooks {
        let mut counts = vec![0usize; codebook_size];
        for z in encodings {
            counts[z.get(n)] += 1;
        }
        let h = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .sum::<f64>();
        out.push(h);
    }
    out
}
