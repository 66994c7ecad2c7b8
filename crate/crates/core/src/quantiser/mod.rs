//! Multi-codebook vector quantiser.
//!
//! `N` non-hierarchical codebooks of `K` code vectors each. A frame is encoded
//! to one index per codebook and reconstructed as the direct sum of the
//! selected code vectors. Encoding starts from the argmax of per-codebook
//! linear classifiers and is then refined by coordinate descent over the
//! codebooks.

mod loss;
mod train;

use rayon::prelude::*;

use crate::numerics::{argmax, sq_dist, Matrix, Real};
use crate::sequence::{FeatureSequence, TokenSequence, TokenTuple, MAX_CODEBOOK_SIZE};
use crate::{Error, Result};

pub use loss::{
    hard_usage_entropy, quantiser_loss, quantiser_loss_with_encodings, QuantiserGrads,
    QuantiserLoss,
};
pub use train::{
    initial_quantiser, train_quantiser, QuantiserStepMetrics, QuantiserTrainConfig,
    TrainedQuantiser,
};

/// Default number of refinement sweeps.
pub const DEFAULT_REFINE_STEPS: usize = 5;
/// Default codebook size; tokens then fit in one byte.
pub const DEFAULT_CODEBOOK_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Quantiser<T> {
    codebooks: Vec<Matrix<T>>,
    weights: Vec<Matrix<T>>,
    biases: Vec<Matrix<T>>,
    refine_steps: usize,
}

/// Candidates per side considered by a pair move.
pub const PAIR_CANDIDATES: usize = 8;

/// A refinement move: one codebook re-chosen, or two re-chosen jointly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineMove {
    Single {
        codebook: usize,
        from: usize,
        to: usize,
    },
    Pair {
        codebooks: (usize, usize),
        from: (usize, usize),
        to: (usize, usize),
    },
}

/// One step of [`Quantiser::refine_observed`] with the full reconstruction
/// error before and after it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineUpdate<T> {
    pub round: usize,
    pub step: RefineMove,
    pub error_before: T,
    pub error_after: T,
}

impl<T: Real> Quantiser<T> {
    /// All-zero codebooks and classifiers.
    pub fn zeros(
        n_codebooks: usize,
        codebook_size: usize,
        dim: usize,
        refine_steps: usize,
    ) -> Result<Self> {
        validate_sizes(n_codebooks, codebook_size, dim)?;
        Ok(Self {
            codebooks: vec![Matrix::zeros(codebook_size, dim); n_codebooks],
            weights: vec![Matrix::zeros(codebook_size, dim); n_codebooks],
            biases: vec![Matrix::zeros(1, codebook_size); n_codebooks],
            refine_steps,
        })
    }

    /// Codebooks are `K × d`, classifier weights `K × d`, biases `1 × K`.
    pub fn from_parts(
        codebooks: Vec<Matrix<T>>,
        weights: Vec<Matrix<T>>,
        biases: Vec<Matrix<T>>,
        refine_steps: usize,
    ) -> Result<Self> {
        let n = codebooks.len();
        let (k, d) = codebooks.first().map_or((0, 0), Matrix::shape);
        validate_sizes(n, k, d)?;
        if weights.len() != n || biases.len() != n {
            return Err(Error::shape(
                format!("{n} classifiers"),
                format!("{} weights, {} biases", weights.len(), biases.len()),
            ));
        }
        for i in 0..n {
            for (what, m, shape) in [
                ("codebook", &codebooks[i], (k, d)),
                ("classifier weight", &weights[i], (k, d)),
                ("classifier bias", &biases[i], (1, k)),
            ] {
                if m.shape() != shape {
                    return Err(Error::shape(
                        format!("{what} {i} of shape {shape:?}"),
                        format!("{:?}", m.shape()),
                    ));
                }
                if !m.is_finite() {
                    return Err(Error::InvalidInput(format!("non-finite {what} {i}")));
                }
            }
        }
        Ok(Self {
            codebooks,
            weights,
            biases,
            refine_steps,
        })
    }

    #[inline]
    pub fn n_codebooks(&self) -> usize {
        self.codebooks.len()
    }

    #[inline]
    pub fn codebook_size(&self) -> usize {
        self.codebooks[0].rows()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.codebooks[0].cols()
    }

    pub fn refine_steps(&self) -> usize {
        self.refine_steps
    }

    pub fn set_refine_steps(&mut self, r: usize) {
        self.refine_steps = r;
    }

    /// Code vector `k` of codebook `n`.
    #[inline]
    pub fn code(&self, n: usize, k: usize) -> &[T] {
        self.codebooks[n].row(k)
    }

    pub fn codebook(&self, n: usize) -> &Matrix<T> {
        &self.codebooks[n]
    }

    pub fn codebook_mut(&mut self, n: usize) -> &mut Matrix<T> {
        &mut self.codebooks[n]
    }

    pub fn classifier_weights(&self, n: usize) -> &Matrix<T> {
        &self.weights[n]
    }

    pub fn classifier_weights_mut(&mut self, n: usize) -> &mut Matrix<T> {
        &mut self.weights[n]
    }

    pub fn classifier_bias(&self, n: usize) -> &[T] {
        self.biases[n].as_slice()
    }

    pub fn classifier_bias_mut(&mut self, n: usize) -> &mut [T] {
        self.biases[n].as_mut_slice()
    }

    /// Trainable tensors in a fixed order: codebooks, classifier weights,
    /// classifier biases.
    pub fn parameters(&self) -> impl Iterator<Item = &Matrix<T>> {
        self.codebooks
            .iter()
            .chain(&self.weights)
            .chain(&self.biases)
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Matrix<T>> {
        self.codebooks
            .iter_mut()
            .chain(self.weights.iter_mut())
            .chain(self.biases.iter_mut())
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Real>(&self) -> Quantiser<U> {
        let conv = |ms: &[Matrix<T>]| -> Vec<Matrix<U>> {
            ms.iter()
                .map(|m| m.map(|x| U::from(x).expect("scalar conversion")))
                .collect()
        };
        Quantiser {
            codebooks: conv(&self.codebooks),
            weights: conv(&self.weights),
            biases: conv(&self.biases),
            refine_steps: self.refine_steps,
        }
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::shape(
                format!("frame of dim {}", self.dim()),
                x.len(),
            ));
        }
        Ok(())
    }

    /// Direct-sum reconstruction `Σ_n C^n[z_n]`.
    pub fn decode(&self, z: &TokenTuple) -> Result<Vec<T>> {
        z.validate(self.n_codebooks(), self.codebook_size())?;
        let mut out = vec![T::zero(); self.dim()];
        self.decode_into(z.as_slice(), &mut out);
        Ok(out)
    }

    /// Unchecked decode into a buffer.
    pub(crate) fn decode_into(&self, z: &[u16], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (n, &zn) in z.iter().enumerate() {
            for (o, &c) in out.iter_mut().zip(self.code(n, usize::from(zn))) {
                *o += c;
            }
        }
    }

    /// Logits of classifier `n`: `W_n x + b_n`.
    pub fn classifier_logits(&self, n: usize, x: &[T]) -> Vec<T> {
        let mut logits = self.weights[n].matvec(x);
        logits
            .iter_mut()
            .zip(self.biases[n].as_slice())
            .for_each(|(l, &b)| *l += b);
        logits
    }

    /// Per-codebook argmax of the classifier logits, lowest index on ties.
    pub fn classifier_init(&self, x: &[T]) -> Result<TokenTuple> {
        self.check_dim(x)?;
        Ok(self.classifier_init_unchecked(x))
    }

    fn classifier_init_unchecked(&self, x: &[T]) -> TokenTuple {
        TokenTuple(
            (0..self.n_codebooks())
                .map(|n| {
                    let logits = self.classifier_logits(n, x);
                    // NaN logits only arise from non-finite input
                    argmax(&logits).unwrap_or(0) as u16
                })
                .collect(),
        )
    }

    /// Block coordinate-descent refinement.
    ///
    /// Each of the `R` sweeps first re-chooses every codebook index in order
    /// `0..N` with the others fixed, then re-chooses every pair `(n, m)`, `n < m`,
    /// jointly over their [`PAIR_CANDIDATES`] best single-codebook candidates.
    /// No move increases the reconstruction error. Stops early once a sweep
    /// changes nothing.
    pub fn refine(&self, x: &[T], z: &TokenTuple) -> Result<TokenTuple> {
        self.refine_observed(x, z, None::<fn(&RefineUpdate<T>)>)
    }

    /// [`refine`](Self::refine) reporting every move to `observer`.
    pub fn refine_observed<F>(
        &self,
        x: &[T],
        z: &TokenTuple,
        mut observer: Option<F>,
    ) -> Result<TokenTuple>
    where
        F: FnMut(&RefineUpdate<T>),
    {
        self.check_dim(x)?;
        z.validate(self.n_codebooks(), self.codebook_size())?;
        let mut state = RefineState::new(self, x, z.clone());
        for round in 0..self.refine_steps {
            let mut changed = false;
            for n in 0..self.n_codebooks() {
                let before = observer.as_ref().map(|_| state.error());
                let from = state.z.get(n);
                let to = state.best_single(n);
                if to != from {
                    state.set(&[(n, to)]);
                    changed = true;
                }
                if let (Some(obs), Some(error_before)) = (observer.as_mut(), before) {
                    debug_assert_monotone(error_before, state.error());
                    obs(&RefineUpdate {
                        round,
                        step: RefineMove::Single {
                            codebook: n,
                            from,
                            to,
                        },
                        error_before,
                        error_after: state.error(),
                    });
                }
            }
            for n in 0..self.n_codebooks() {
                for m in n + 1..self.n_codebooks() {
                    let before = observer.as_ref().map(|_| state.error());
                    let from = (state.z.get(n), state.z.get(m));
                    let to = state.best_pair(n, m);
                    if to != from {
                        state.set(&[(n, to.0), (m, to.1)]);
                        changed = true;
                    }
                    if let (Some(obs), Some(error_before)) = (observer.as_mut(), before) {
                        debug_assert_monotone(error_before, state.error());
                        obs(&RefineUpdate {
                            round,
                            step: RefineMove::Pair {
                                codebooks: (n, m),
                                from,
                                to,
                            },
                            error_before,
                            error_after: state.error(),
                        });
                    }
                }
            }
            if !changed {
                break;
            }
        }
        Ok(state.z)
    }

    /// `refine(x, classifier_init(x))`.
    pub fn encode(&self, x: &[T]) -> Result<TokenTuple> {
        let init = self.classifier_init(x)?;
        self.refine(x, &init)
    }

    pub fn encode_sequence(&self, xs: &FeatureSequence<T>) -> Result<TokenSequence> {
        self.encode_sequence_with(xs, true)
    }

    /// Per-frame encode; `parallel` fans out over frames with identical output.
    pub fn encode_sequence_with(
        &self,
        xs: &FeatureSequence<T>,
        parallel: bool,
    ) -> Result<TokenSequence> {
        if xs.dim() != self.dim() {
            return Err(Error::shape(
                format!("features of dim {}", self.dim()),
                xs.dim(),
            ));
        }
        let frames = 0..xs.len();
        let tuples: Vec<TokenTuple> = if parallel {
            frames
                .into_par_iter()
                .map(|t| self.encode(xs.frame(t)))
                .collect::<Result<_>>()?
        } else {
            frames
                .map(|t| self.encode(xs.frame(t)))
                .collect::<Result<_>>()?
        };
        TokenSequence::from_tuples(self.n_codebooks(), self.codebook_size(), tuples)
    }

    /// Reconstructs every frame of a token sequence.
    pub fn decode_sequence(&self, z: &TokenSequence) -> Result<Matrix<T>> {
        if z.n_codebooks() != self.n_codebooks() || z.codebook_size() != self.codebook_size() {
            return Err(Error::shape(
                format!(
                    "tokens for N={} K={}",
                    self.n_codebooks(),
                    self.codebook_size()
                ),
                format!("N={} K={}", z.n_codebooks(), z.codebook_size()),
            ));
        }
        let mut out = Matrix::zeros(z.len(), self.dim());
        for t in 0..z.len() {
            self.decode_into(z.frame(t), out.row_mut(t));
        }
        Ok(out)
    }

    /// Squared reconstruction error `‖x − decode(encode(x))‖²`.
    pub fn reconstruction_error(&self, x: &[T]) -> Result<T> {
        let z = self.encode(x)?;
        let mut recon = vec![T::zero(); self.dim()];
        self.decode_into(&z.0, &mut recon);
        Ok(sq_dist(x, &recon))
    }

    /// Mean over frames of `‖x − decode(encode(x))‖²`.
    pub fn reconstruction_mse(&self, xs: &FeatureSequence<T>) -> Result<T> {
        if xs.is_empty() {
            return Err(Error::InvalidInput(
                "reconstruction_mse of empty sequence".into(),
            ));
        }
        if xs.dim() != self.dim() {
            return Err(Error::shape(
                format!("features of dim {}", self.dim()),
                xs.dim(),
            ));
        }
        let errors: Vec<T> = (0..xs.len())
            .into_par_iter()
            .map(|t| self.reconstruction_error(xs.frame(t)))
            .collect::<Result<_>>()?;
        let n = T::from_usize(errors.len()).expect("frame count");
        Ok(errors.into_iter().sum::<T>() / n)
    }

    /// Mean of decoded frames, e.g. an utterance-level embedding.
    pub fn mean_decoded(&self, z: &TokenSequence) -> Result<Vec<T>> {
        if z.is_empty() {
            return Err(Error::InvalidInput("mean of empty token sequence".into()));
        }
        let frames = self.decode_sequence(z)?;
        let mut mean = vec![T::zero(); self.dim()];
        for row in frames.iter_rows() {
            mean.iter_mut().zip(row).for_each(|(m, &x)| *m += x);
        }
        let n = T::from_usize(z.len()).expect("frame count");
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }
}

fn validate_sizes(n: usize, k: usize, d: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput(
            "quantiser needs at least one codebook".into(),
        ));
    }
    if !(2..=MAX_CODEBOOK_SIZE).contains(&k) {
        return Err(Error::InvalidInput(format!(
            "codebook size {k} outside [2, {MAX_CODEBOOK_SIZE}]"
        )));
    }
    if d == 0 {
        return Err(Error::InvalidInput(
            "quantiser dimension must be >= 1".into(),
        ));
    }
    Ok(())
}

/// Working state of one refinement: current tuple and its reconstruction.
struct RefineState<'a, T> {
    q: &'a Quantiser<T>,
    x: &'a [T],
    z: TokenTuple,
    recon: Vec<T>,
    target: Vec<T>,
    scratch: Vec<T>,
}

impl<'a, T: Real> RefineState<'a, T> {
    fn new(q: &'a Quantiser<T>, x: &'a [T], z: TokenTuple) -> Self {
        let d = q.dim();
        let mut recon = vec![T::zero(); d];
        q.decode_into(&z.0, &mut recon);
        Self {
            q,
            x,
            z,
            recon,
            target: vec![T::zero(); d],
            scratch: vec![T::zero(); d],
        }
    }

    fn error(&self) -> T {
        sq_dist(self.x, &self.recon)
    }

    fn set(&mut self, changes: &[(usize, usize)]) {
        for &(n, k) in changes {
            self.z.0[n] = k as u16;
        }
        // full recompute keeps the reconstruction exactly decode(z)
        self.q.decode_into(&self.z.0, &mut self.recon);
    }

    /// `x − x̂ + Σ C^n[z_n]` over `codebooks`: what they jointly have to explain.
    fn fill_target(&mut self, codebooks: &[usize]) {
        for ((t, &xi), &ri) in self.target.iter_mut().zip(self.x).zip(&self.recon) {
            *t = xi - ri;
        }
        for &n in codebooks {
            let code = self.q.code(n, self.z.get(n));
            self.target.iter_mut().zip(code).for_each(|(t, &c)| *t += c);
        }
    }

    fn best_single(&mut self, n: usize) -> usize {
        self.fill_target(&[n]);
        nearest_code(&self.q.codebooks[n], &self.target)
    }

    fn best_pair(&mut self, n: usize, m: usize) -> (usize, usize) {
        let q = self.q;
        let current = (self.z.get(n), self.z.get(m));
        self.fill_target(&[n, m]);
        // candidates for n given m's current code, and vice versa
        let cand_n = self.candidates(n, m, current.1);
        let cand_m = self.candidates(m, n, current.0);

        let pair_error = |scratch: &mut Vec<T>, target: &[T], a: usize, b: usize| -> T {
            for ((s, &t), &ca) in scratch.iter_mut().zip(target).zip(q.code(n, a)) {
                *s = t - ca;
            }
            sq_dist(scratch, q.code(m, b))
        };
        let mut best = current;
        let mut best_err = pair_error(&mut self.scratch, &self.target, current.0, current.1);
        for &a in &cand_n {
            for ((s, &t), &ca) in self.scratch.iter_mut().zip(&self.target).zip(q.code(n, a)) {
                *s = t - ca;
            }
            for &b in &cand_m {
                let err = sq_dist(&self.scratch, q.code(m, b));
                if err < best_err {
                    best = (a, b);
                    best_err = err;
                }
            }
        }
        best
    }

    /// Up to [`PAIR_CANDIDATES`] indices of codebook `n` that best explain the
    /// pair target with codebook `other` fixed at `other_code`, in index order.
    fn candidates(&mut self, n: usize, other: usize, other_code: usize) -> Vec<usize> {
        let k = self.q.codebook_size();
        for ((s, &t), &c) in self
            .scratch
            .iter_mut()
            .zip(&self.target)
            .zip(self.q.code(other, other_code))
        {
            *s = t - c;
        }
        if k <= PAIR_CANDIDATES {
            return (0..k).collect();
        }
        let mut scored: Vec<(T, usize)> = (0..k)
            .map(|c| (sq_dist(&self.scratch, self.q.code(n, c)), c))
            .collect();
        scored.select_nth_unstable_by(PAIR_CANDIDATES - 1, |a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        let mut out: Vec<usize> = scored[..PAIR_CANDIDATES].iter().map(|&(_, c)| c).collect();
        out.sort_unstable();
        out
    }
}

#[inline]
fn debug_assert_monotone<T: Real>(before: T, after: T) {
    debug_assert!(
        after <= before + T::lit(1e-12),
        "refinement move increased the error: {before:?} -> {after:?}"
    );
}

/// Row of `codebook` closest to `target`, lowest index on ties.
fn nearest_code<T: Real>(codebook: &Matrix<T>, target: &[T]) -> usize {
    let mut best = 0;
    let mut best_dist = T::infinity();
    for (k, code) in codebook.iter_rows().enumerate() {
        let dist = sq_dist(code, target);
        if dist < best_dist {
            best = k;
            best_dist = dist;
        }
    }
    best
}
