use crate::numerics::{streams, Matrix, Real, Rng};
use crate::sequence::FeatureSequence;
use crate::{Error, Result};

/// Span-masking policy: every frame starts a span with probability
/// `p_start`; a span covers `span` frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    pub p_start: f64,
    pub span: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            p_start: 0.065,
            span: 10,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_start) || self.span == 0 {
            return Err(Error::Config(format!(
                "mask p_start must be in [0, 1] and span >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Expected masked fraction far from the sequence edges.
    pub fn expected_coverage(&self) -> f64 {
        1.0 - (1.0 - self.p_start).powi(self.span as i32)
    }
}

/// Sorted, deduplicated masked frame indices of a length-`len` sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSpec {
    len: usize,
    indices: Vec<usize>,
    flags: Vec<bool>,
}

impl MaskSpec {
    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut flags = vec![false; len];
        for i in indices {
            if i >= len {
                return Err(Error::Index { index: i, len });
            }
            flags[i] = true;
        }
        Ok(Self::from_flags(flags))
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        let indices = flags
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        Self {
            len: flags.len(),
            indices,
            flags,
        }
    }

    pub fn none(len: usize) -> Self {
        Self::from_flags(vec![false; len])
    }

    pub fn all(len: usize) -> Self {
        Self::from_flags(vec![true; len])
    }

    /// Length of the sequence the mask applies to.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn masked_count(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_masked(&self, t: usize) -> bool {
        self.flags[t]
    }

    pub fn masked_fraction(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.indices.len() as f64 / self.len as f64
        }
    }
}

/// Samples span starts i.i.d. with probability `p_start` and masks
/// `[start, start + span)` clipped to the sequence.
pub fn sample_mask(len: usize, cfg: &MaskConfig, seed: u64) -> MaskSpec {
    let mut rng = Rng::new(seed, streams::MASK);
    sample_mask_with(len, cfg, &mut rng)
}

pub(crate) fn sample_mask_with(len: usize, cfg: &MaskConfig, rng: &mut Rng) -> MaskSpec {
    let mut flags = vec![false; len];
    for start in 0..len {
        if rng.bernoulli(cfg.p_start) {
            let end = (start + cfg.span).min(len);
            flags[start..end].iter_mut().for_each(|f| *f = true);
        }
    }
    MaskSpec::from_flags(flags)
}

/// Replaces masked frames with `embedding`; other frames are copied unchanged.
pub fn apply_mask<T: Real>(
    xs: &FeatureSequence<T>,
    mask: &MaskSpec,
    embedding: &[T],
) -> Result<Matrix<T>> {
    if embedding.len() != xs.dim() {
        return Err(Error::shape(
            format!("mask embedding of dim {}", xs.dim()),
            embedding.len(),
        ));
    }
    if mask.len() != xs.len() {
        return Err(Error::shape(
            format!("mask over {} frames", xs.len()),
            mask.len(),
        ));
    }
    let mut out = xs.frames().clone();
    for &t in mask.indices() {
        out.row_mut(t).copy_from_slice(embedding);
    }
    Ok(out)
}

/// Gradient of the mask embedding from the gradient w.r.t. the masked input.
pub fn mask_embedding_grad<T: Real>(grad_input: &Matrix<T>, mask: &MaskSpec) -> Vec<T> {
    let mut g = vec![T::zero(); grad_input.cols()];
    for &t in mask.indices() {
        g.iter_mut()
            .zip(grad_input.row(t))
            .for_each(|(a, &b)| *a += b);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: usize, d: usize) -> FeatureSequence<f64> {
        FeatureSequence::from_frames(Matrix::from_fn(t, d, |r, c| (r * d + c) as f64)).unwrap()
    }

    #[test]
    fn zero_probability_masks_nothing() {
        let m = sample_mask(
            100,
            &MaskConfig {
                p_start: 0.0,
                span: 10,
            },
            1,
        );
        assert_eq!(m.masked_count(), 0);
    }

    #[test]
    fn certain_start_unit_span_masks_everything() {
        let m = sample_mask(
            37,
            &MaskConfig {
                p_start: 1.0,
                span: 1,
            },
            1,
        );
        assert_eq!(m.indices(), (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn coverage_matches_expectation() {
        let cfg = MaskConfig {
            p_start: 0.065,
            span: 10,
        };
        let expected = cfg.expected_coverage();
        let mean: f64 = (0..100)
            .map(|s| sample_mask(1000, &cfg, s).masked_fraction())
            .sum::<f64>()
            / 100.0;
        assert!((mean - expected).abs() < 0.05, "{mean} vs {expected}");
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let cfg = MaskConfig::default();
        assert_eq!(sample_mask(500, &cfg, 9), sample_mask(500, &cfg, 9));
    }

    #[test]
    fn empty_mask_is_identity() {
        let x = seq(5, 3);
        let out = apply_mask(&x, &MaskSpec::none(5), &[9.0; 3]).unwrap();
        assert_eq!(&out, x.frames());
    }

    #[test]
    fn full_mask_replaces_every_frame() {
        let x = seq(4, 2);
        let out = apply_mask(&x, &MaskSpec::all(4), &[7.0, -7.0]).unwrap();
        assert!(out.iter_rows().all(|r| r == [7.0, -7.0]));
    }

    #[test]
    fn exactly_masked_frames_differ() {
        let x = seq(200, 3);
        let m = sample_mask(200, &MaskConfig::default(), 4);
        let out = apply_mask(&x, &m, &[-1.0; 3]).unwrap();
        let differing = (0..200).filter(|&t| out.row(t) != x.frame(t)).count();
        assert_eq!(differing, m.masked_count());
    }

    #[test]
    fn dimension_mismatch() {
        let x = seq(3, 2);
        assert!(matches!(
            apply_mask(&x, &MaskSpec::none(3), &[0.0; 3]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn from_indices_rejects_out_of_range() {
        assert!(MaskSpec::from_indices(3, [0, 3]).is_err());
        let m = MaskSpec::from_indices(5, [3, 1, 3]).unwrap();
        assert_eq!(m.indices(), &[1, 3]);
    }
}
