//! Tab-separated metric traces: one header line naming the columns, then one
//! line per optimisation step.
//!
//! `train-quantiser` columns: `step`, `loss_total`, `loss_residual`,
//! `loss_prediction`, `loss_reg`, `entropy_cb_<n>` (hard code-usage entropy in
//! nats over the batch).
//!
//! `pretrain` columns: `step`, `domain`, `loss_total`, `loss_masked`,
//! `loss_unmasked`, `loss_audio` (dual-domain runs only), `loss_per_frame`,
//! `acc_cb_<n>` (masked top-1 accuracy per speech codebook over the batch).

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use mvq_core::quantiser::QuantiserStepMetrics;
use mvq_core::ssl::PretrainStepMetrics;

use crate::commands::{CliError, CliResult};

pub fn quantiser_tsv(trace: &[QuantiserStepMetrics], n_codebooks: usize) -> String {
    let mut out = String::from("step\tloss_total\tloss_residual\tloss_prediction\tloss_reg");
    for n in 0..n_codebooks {
        let _ = write!(out, "\tentropy_cb_{n}");
    }
    out.push('\n');
    for m in trace {
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            m.step, m.loss_total, m.loss_residual, m.loss_prediction, m.loss_reg
        );
        for h in &m.usage_entropy {
            let _ = write!(out, "\t{h}");
        }
        out.push('\n');
    }
    out
}

pub fn pretrain_tsv(trace: &[PretrainStepMetrics], n_codebooks: usize, dual: bool) -> String {
    let mut out = String::from("step\tdomain\tloss_total\tloss_masked\tloss_unmasked");
    if dual {
        out.push_str("\tloss_audio");
    }
    out.push_str("\tloss_per_frame");
    for n in 0..n_codebooks {
        let _ = write!(out, "\tacc_cb_{n}");
    }
    out.push('\n');
    for m in trace {
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            m.step,
            m.domain.name(),
            m.loss_total,
            m.loss_masked,
            m.loss_unmasked
        );
        if dual {
            let _ = write!(out, "\t{}", m.loss_audio.unwrap_or(0.0));
        }
        let _ = write!(out, "\t{}", m.loss_per_frame);
        for acc in &m.acc_speech {
            let _ = write!(out, "\t{acc}");
        }
        out.push('\n');
    }
    out
}

/// Writes `text` to `path`, or to standard output when `path` is `-`.
pub fn write_output(path: &Path, text: &str) -> CliResult {
    let result = if path == Path::new("-") {
        std::io::stdout().lock().write_all(text.as_bytes())
    } else {
        std::fs::write(path, text)
    };
    result.map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
