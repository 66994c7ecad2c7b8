use crate::numerics::{streams, Matrix, Real, Rng};
use crate::sequence::{Domain, FeatureSequence};
use crate::{Error, Result};

/// Hidden-Markov feature generator.
///
/// Each of `states` states owns a fixed random direction of norm `separation`.
/// The chain stays with probability `p_stay` and otherwise jumps uniformly to
/// one of the other states; each frame is its state's mean plus isotropic
/// Gaussian noise of std `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub states: usize,
    pub dim: usize,
    pub p_stay: f64,
    pub sigma: f64,
    pub separation: f64,
    pub frames: usize,
    pub frame_rate_hz: f64,
    pub domain: Domain,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            states: 8,
            dim: 16,
            p_stay: 0.95,
            sigma: 0.05,
            separation: 3.0,
            frames: 5000,
            frame_rate_hz: 50.0,
            domain: Domain::Unspecified,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.states < 2 {
            return Err(Error::Config(
                "synthetic generator needs at least 2 states".into(),
            ));
        }
        if self.dim == 0 {
            return Err(Error::Config("synthetic dim must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.p_stay) {
            return Err(Error::Config(format!(
                "p_stay {} outside [0, 1)",
                self.p_stay
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma {} must be >= 0", self.sigma)));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config(format!(
                "separation {} must be >= 0",
                self.separation
            )));
        }
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz.is_finite()) {
            return Err(Error::Config("frame rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData<T> {
    pub features: FeatureSequence<T>,
    /// Hidden state of every frame.
    pub states: Vec<usize>,
    /// `states × dim` state means.
    pub means: Matrix<T>,
}

pub fn generate_synthetic<T: Real>(cfg: &SynthConfig) -> Result<FeatureSequence<T>> {
    generate_synthetic_with_states(cfg).map(|d| d.features)
}

pub fn generate_synthetic_with_states<T: Real>(cfg: &SynthConfig) -> Result<SyntheticData<T>> {
    cfg.validate()?;
    let (m, d) = (cfg.states, cfg.dim);

    let mut rng = Rng::new(cfg.seed, streams::SYNTH_MEANS);
    let mut means = Matrix::zeros(m, d);
    for s in 0..m {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = v
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        v.iter_mut().for_each(|x| *x *= cfg.separation / norm);
        for (dst, x) in means.row_mut(s).iter_mut().zip(v) {
            *dst = T::lit(x);
        }
    }

    let mut chain = Rng::new(cfg.seed, streams::SYNTH_CHAIN);
    let mut states = Vec::with_capacity(cfg.frames);
    let mut state = chain.below(m);
    for t in 0..cfg.frames {
        if t > 0 && !chain.bernoulli(cfg.p_stay) {
            // uniform over the other m - 1 states
            let j = chain.below(m - 1);
            state = if j >= state { j + 1 } else { j };
        }
        states.push(state);
    }

    let mut noise = Rng::new(cfg.seed, streams::SYNTH_NOISE);
    let sigma = T::lit(cfg.sigma);
    let mut frames = Matrix::zeros(cfg.frames, d);
    for (t, &s) in states.iter().enumerate() {
        let mean = means.row(s);
        for (x, &mu) in frames.row_mut(t).iter_mut().zip(mean) {
            *x = if cfg.sigma == 0.0 {
                mu
            } else {
                mu + sigma * T::lit(noise.normal())
            };
        }
    }
    let features = FeatureSequence::new(frames, cfg.frame_rate_hz, cfg.domain)?;
    Ok(SyntheticData {
        features,
        states,
        means,
    })
}
