use crate::numerics::{Matrix, Real};
use crate::sequence::FeatureSequence;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterpMode {
    Nearest,
    #[default]
    Linear,
}

impl InterpMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nearest" => Some(InterpMode::Nearest),
            "linear" => Some(InterpMode::Linear),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InterpMode::Nearest => "nearest",
            InterpMode::Linear => "linear",
        }
    }
}

/// Resamples a feature sequence to `target_rate_hz`.
///
/// Output frame `j` sits at source position `j · r_src / r_dst`; the output
/// has `round(T · r_dst / r_src)` frames. Equal rates return the input as is.
pub fn interpolate_targets<T: Real>(
    src: &FeatureSequence<T>,
    target_rate_hz: f64,
    mode: InterpMode,
) -> Result<FeatureSequence<T>> {
    if !(target_rate_hz > 0.0 && target_rate_hz.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "target rate {target_rate_hz} must be positive"
        )));
    }
    let src_rate = src.frame_rate_hz();
    if src_rate == target_rate_hz {
        return Ok(src.clone());
    }
    let len = src.len();
    if len == 0 {
        return Err(Error::InvalidInput(
            "cannot resample an empty sequence".into(),
        ));
    }
    if mode == InterpMode::Linear && len < 2 {
        return Err(Error::InvalidInput(
            "linear resampling needs at least 2 frames".into(),
        ));
    }
    let ratio = src_rate / target_rate_hz;
    let out_len = (len as f64 * target_rate_hz / src_rate).round() as usize;
    let d = src.dim();
    let last = len - 1;
    let mut out = Matrix::zeros(out_len, d);
    for j in 0..out_len {
        let pos = j as f64 * ratio;
        match mode {
            InterpMode::Nearest => {
                let i = ((pos + 0.5).floor() as usize).min(last);
                out.row_mut(j).copy_from_slice(src.frame(i));
            }
            InterpMode::Linear => {
                let i0 = (pos.floor() as usize).min(last);
                let i1 = (i0 + 1).min(last);
                let frac = if i0 == last { 0.0 } else { pos - i0 as f64 };
                let (w0, w1) = (T::lit(1.0 - frac), T::lit(frac));
                let (a, b) = (src.frame(i0), src.frame(i1));
                for ((o, &x0), &x1) in out.row_mut(j).iter_mut().zip(a).zip(b) {
                    *o = w0 * x0 + w1 * x1;
                }
            }
        }
    }
    FeatureSequence::new(out, target_rate_hz, src.domain())
}
