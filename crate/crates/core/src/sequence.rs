//! Frame sequences and token containers shared by every module.

use crate::numerics::{Matrix, Real};
use crate::{Error, Result};

/// Largest supported codebook size; tokens are stored as `u16`.
pub const MAX_CODEBOOK_SIZE: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Domain {
    Speech,
    Audio,
    #[default]
    Unspecified,
}

impl Domain {
    pub fn tag(self) -> u8 {
        match self {
            Domain::Speech => 0,
            Domain::Audio => 1,
            Domain::Unspecified => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Domain::Speech),
            1 => Some(Domain::Audio),
            2 => Some(Domain::Unspecified),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Speech => "speech",
            Domain::Audio => "audio",
            Domain::Unspecified => "unspecified",
        }
    }
}

/// `T × d` real-valued frames with a frame rate and a domain tag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<T> {
    frames: Matrix<T>,
    frame_rate_hz: f64,
    domain: Domain,
}

impl<T: Real> FeatureSequence<T> {
    pub fn new(frames: Matrix<T>, frame_rate_hz: f64, domain: Domain) -> Result<Self> {
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::InvalidInput(format!(
                "frame rate must be positive, got {frame_rate_hz}"
            )));
        }
        if !frames.is_finite() {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(Self {
            frames,
            frame_rate_hz,
            domain,
        })
    }

    /// Unspecified domain at 50 Hz.
    pub fn from_frames(frames: Matrix<T>) -> Result<Self> {
        Self::new(frames, 50.0, Domain::Unspecified)
    }

    pub fn empty(dim: usize, frame_rate_hz: f64, domain: Domain) -> Result<Self> {
        Self::new(Matrix::zeros(0, dim), frame_rate_hz, domain)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    #[inline]
    pub fn frame(&self, t: usize) -> &[T] {
        self.frames.row(t)
    }

    pub fn frames(&self) -> &Matrix<T> {
        &self.frames
    }

    pub fn into_frames(self) -> Matrix<T> {
        self.frames
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    /// Frames `[start, start + len)` as a new sequence.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::Index {
                index: start + len,
                len: self.len(),
            });
        }
        let d = self.dim();
        let data = self.frames.as_slice()[start * d..(start + len) * d].to_vec();
        Ok(Self {
            frames: Matrix::from_vec(len, d, data)?,
            frame_rate_hz: self.frame_rate_hz,
            domain: self.domain,
        })
    }

    /// Per-dimension population standard deviation.
    pub fn per_dim_std(&self) -> Vec<T> {
        let d = self.dim();
        let t = self.len();
        if t == 0 {
            return vec![T::zero(); d];
        }
        let n = T::from_usize(t).expect("frame count");
        let mut mean = vec![T::zero(); d];
        for row in self.frames.iter_rows() {
            mean.iter_mut().zip(row).for_each(|(m, &x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![T::zero(); d];
        for row in self.frames.iter_rows() {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.into_iter().map(|v| (v / n).sqrt()).collect()
    }
}

/// One token per codebook for a single frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenTuple(pub Vec<u16>);

impl TokenTuple {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.0
    }

    pub fn get(&self, n: usize) -> usize {
        usize::from(self.0[n])
    }

    /// Checks length `n` and every token `< k`.
    pub fn validate(&self, n: usize, k: usize) -> Result<()> {
        if self.0.len() != n {
            return Err(Error::shape(format!("{n} tokens"), self.0.len()));
        }
        match self.0.iter().find(|&&z| usize::from(z) >= k) {
            Some(&z) => Err(Error::TokenRange {
                token: usize::from(z),
                k,
            }),
            None => Ok(()),
        }
    }
}

impl From<Vec<u16>> for TokenTuple {
    fn from(v: Vec<u16>) -> Self {
        Self(v)
    }
}

/// `T × N` tokens, row-major, each `< k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    n_codebooks: usize,
    codebook_size: usize,
    tokens: Vec<u16>,
}

impl TokenSequence {
    pub fn new(n_codebooks: usize, codebook_size: usize) -> Result<Self> {
        Self::from_flat(n_codebooks, codebook_size, Vec::new())
    }

    pub fn from_flat(n_codebooks: usize, codebook_size: usize, tokens: Vec<u16>) -> Result<Self> {
        if n_codebooks == 0 {
            return Err(Error::InvalidInput("token sequence needs N >= 1".into()));
        }
        if !(2..=MAX_CODEBOOK_SIZE).contains(&codebook_size) {
            return Err(Error::InvalidInput(format!(
                "codebook size {codebook_size} outside [2, {MAX_CODEBOOK_SIZE}]"
            )));
        }
        if !tokens.len().is_multiple_of(n_codebooks) {
            return Err(Error::shape(
                format!("multiple of {n_codebooks} tokens"),
                tokens.len(),
            ));
        }
        if let Some(&z) = tokens.iter().find(|&&z| usize::from(z) >= codebook_size) {
            return Err(Error::TokenRange {
                token: usize::from(z),
                k: codebook_size,
            });
        }
        Ok(Self {
            n_codebooks,
            codebook_size,
            tokens,
        })
    }

    pub fn from_tuples(
        n_codebooks: usize,
        codebook_size: usize,
        tuples: impl IntoIterator<Item = TokenTuple>,
    ) -> Result<Self> {
        let mut flat = Vec::new();
        for z in tuples {
            z.validate(n_codebooks, codebook_size)?;
            flat.extend_from_slice(&z.0);
        }
        Self::from_flat(n_codebooks, codebook_size, flat)
    }

    pub fn len(&self) -> usize {
        self.tokens.len() / self.n_codebooks
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_codebooks(&self) -> usize {
        self.n_codebooks
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    #[inline]
    pub fn frame(&self, t: usize) -> &[u16] {
        &self.tokens[t * self.n_codebooks..(t + 1) * self.n_codebooks]
    }

    #[inline]
    pub fn token(&self, t: usize, n: usize) -> usize {
        usize::from(self.tokens[t * self.n_codebooks + n])
    }

    pub fn tuple(&self, t: usize) -> TokenTuple {
        TokenTuple(self.frame(t).to_vec())
    }

    pub fn as_flat(&self) -> &[u16] {
        &self.tokens
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::Index {
                index: start + len,
                len: self.len(),
            });
        }
        let n = self.n_codebooks;
        Ok(Self {
            n_codebooks: n,
            codebook_size: self.codebook_size,
            tokens: self.tokens[start * n..(start + len) * n].to_vec(),
        })
    }
}
