//! Acceptance suite: one PASS/FAIL line per criterion, with its runtime
//! against the budget. Exits non-zero if any criterion fails.
//!
//! Reference values come from oracles written here independently of the
//! library: exhaustive encoding, a direct log-softmax cross-entropy and
//! central finite differences.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mvq_core::io::{
    decode_features, decode_quantiser, decode_tokens, encode_features, encode_quantiser,
    encode_tokens, generate_synthetic, read_features, read_quantiser, read_tokens, write_features,
    write_quantiser, write_tokens, SynthConfig, TOKEN_HEADER_LEN,
};
use mvq_core::numerics::{streams, AdamConfig, Matrix, Rng};
use mvq_core::quantiser::{
    initial_quantiser, quantiser_loss_with_encodings, train_quantiser, Quantiser,
    QuantiserTrainConfig, RefineMove,
};
use mvq_core::sequence::FeatureSequence;
use mvq_core::ssl::{
    apply_mask, dual_domain_loss, eval_masked_accuracy, mask_embedding_grad, prepare_utterance,
    pretrain, single_domain_loss, student_backward, student_forward, InterpMode, MaskConfig,
    MaskSpec, Sample, SslTrainConfig, Strategy, StudentModel, StudentShape,
};
use mvq_core::{Domain, TokenSequence, TokenTuple};

const GOLDEN_FEATURES: &[u8] = include_bytes!("../../core/tests/golden/features.mvqf");
const GOLDEN_QUANTISER: &[u8] = include_bytes!("../../core/tests/golden/quantiser.mvqq");
const GOLDEN_TOKENS_U8: &[u8] = include_bytes!("../../core/tests/golden/tokens_u8.mvqt");
const GOLDEN_TOKENS_U16: &[u8] = include_bytes!("../../core/tests/golden/tokens_u16.mvqt");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (&'static str, u64, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("encode matches exhaustive search", 5, encode_oracle),
        ("refinement never increases error", 600, refine_monotone),
        ("finite-difference gradient checks", 30, gradient_checks),
        (
            "quantiser training reduces MSE with balanced codes",
            60,
            quantiser_training,
        ),
        ("more codebooks give lower MSE", 180, codebook_trend),
        (
            "masked prediction is learnable and needs alpha > 0",
            300,
            pretext_learnability,
        ),
        ("dual-domain gating is exact", 600, dual_gating),
        ("loss decomposition and uniform baseline", 600, loss_algebra),
        (
            "binary formats roundtrip and match golden files",
            600,
            serialization,
        ),
        ("CLI reruns are byte-identical", 600, cli_determinism),
    ];
    let mut failures = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed < Duration::from_secs(*limit);
        let pass = result.pass && in_time;
        failures += usize::from(!pass);
        println!(
            "[{}] {:>2}. {name}: {} ({:.1} s, limit {limit} s{})",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            result.detail,
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over budget" },
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.normal())
}

fn random_quantiser(n: usize, k: usize, d: usize, r: usize, rng: &mut Rng) -> Quantiser<f64> {
    let codebooks = (0..n).map(|_| gaussian_matrix(k, d, 1.0, rng)).collect();
    let weights = (0..n).map(|_| gaussian_matrix(k, d, 1.0, rng)).collect();
    let biases = (0..n).map(|_| gaussian_matrix(1, k, 1.0, rng)).collect();
    Quantiser::from_parts(codebooks, weights, biases, r).unwrap()
}

fn sq_error(q: &Quantiser<f64>, x: &[f64], z: &[usize]) -> f64 {
    (0..x.len())
        .map(|j| {
            let xhat: f64 = z
                .iter()
                .enumerate()
                .map(|(n, &k)| q.codebook(n)[(k, j)])
                .sum();
            (x[j] - xhat).powi(2)
        })
        .sum()
}

/// Exhaustive search in lexicographic order; strict improvement keeps the
/// lowest-index tuple on ties.
fn brute_force(q: &Quantiser<f64>, x: &[f64]) -> (Vec<usize>, f64) {
    let (n, k) = (q.n_codebooks(), q.codebook_size());
    let mut best = (vec![0; n], f64::INFINITY);
    for code in 0..k.pow(n as u32) {
        let z: Vec<usize> = (0..n).rev().map(|i| (code / k.pow(i as u32)) % k).collect();
        let e = sq_error(q, x, &z);
        if e < best.1 {
            best = (z, e);
        }
    }
    best
}

fn encode_oracle() -> Outcome {
    let mut rng = Rng::new(101, streams::EVAL);
    let q = random_quantiser(2, 4, 3, 5, &mut rng);
    let (mut exact, mut worst) = (0, 0.0f64);
    let mut within = true;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..3).map(|_| 1.5 * rng.normal()).collect();
        let z: Vec<usize> = q
            .encode(&x)
            .unwrap()
            .0
            .iter()
            .map(|&v| v as usize)
            .collect();
        let (opt, opt_err) = brute_force(&q, &x);
        if z == opt {
            exact += 1;
        } else {
            let excess = sq_error(&q, &x, &z) / opt_err - 1.0;
            worst = worst.max(excess);
            within &= excess <= 0.05;
        }
    }
    outcome(
        exact >= 950 && within,
        format!(
            "{exact}/1000 exact, worst excess on the rest {:.2}%",
            100.0 * worst
        ),
    )
}

fn refine_monotone() -> Outcome {
    let mut rng = Rng::new(202, streams::EVAL);
    let (mut moves, mut violations) = (0usize, 0usize);
    let mut worst_increase = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let n = 1 + rng.below(4);
        let k = 2 + rng.below(7);
        let d = 1 + rng.below(6);
        let q = random_quantiser(n, k, d, 5, &mut rng);
        let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.normal()).collect();
        let z0 = TokenTuple((0..n).map(|_| rng.below(k) as u16).collect());
        let mut current: Vec<usize> = z0.0.iter().map(|&v| v as usize).collect();
        let mut err = sq_error(&q, &x, &current);
        let out = q
            .refine_observed(
                &x,
                &z0,
                Some(|u: &mvq_core::quantiser::RefineUpdate<f64>| {
                    match u.step {
                        RefineMove::Single { codebook, to, .. } => current[codebook] = to,
                        RefineMove::Pair { codebooks, to, .. } => {
                            current[codebooks.0] = to.0;
                            current[codebooks.1] = to.1;
                        }
                    }
                    let next = sq_error(&q, &x, &current);
                    worst_increase = worst_increase
                        .max(next - err)
                        .max(u.error_after - u.error_before);
                    if next > err + 1e-12 || u.error_after > u.error_before + 1e-12 {
                        violations += 1;
                    }
                    moves += 1;
                    err = next;
                }),
            )
            .unwrap();
        let final_z: Vec<usize> = out.0.iter().map(|&v| v as usize).collect();
        if final_z != current {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{moves} moves over 10000 triples, {violations} increases, max change {worst_increase:.2e}"),
    )
}

/// Max over coordinates of `|fd − g| / max(|fd| + |g|, 1e-6)` with central
/// differences of step `1e-6`.
fn fd_error(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], grad: &[f64]) -> f64 {
    let eps = 1e-6;
    let mut p = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        p[i] = x[i] + eps;
        let up = f(&p);
        p[i] = x[i] - eps;
        let down = f(&p);
        p[i] = x[i];
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max((fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-6));
    }
    worst
}

fn random_tokens(t: usize, n: usize, k: usize, rng: &mut Rng) -> TokenSequence {
    TokenSequence::from_flat(n, k, (0..t * n).map(|_| rng.below(k) as u16).collect()).unwrap()
}

fn random_mask(t: usize, rng: &mut Rng) -> MaskSpec {
    MaskSpec::from_flags((0..t).map(|_| rng.bernoulli(0.4)).collect())
}

fn flatten(ms: &[Matrix<f64>]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.as_slice().to_vec()).collect()
}

fn unflatten(flat: &[f64], like: &[Matrix<f64>]) -> Vec<Matrix<f64>> {
    let mut offset = 0;
    like.iter()
        .map(|m| {
            let len = m.as_slice().len();
            let out =
                Matrix::from_vec(m.rows(), m.cols(), flat[offset..offset + len].to_vec()).unwrap();
            offset += len;
            out
        })
        .collect()
}

fn gradient_checks() -> Outcome {
    let mut rng = Rng::new(303, streams::EVAL);
    let mut results = Vec::new();

    // quantiser loss with encodings fixed
    let (t, n, k, d) = (8, 3, 5, 4);
    let q = random_quantiser(n, k, d, 5, &mut rng);
    let frames: Vec<Vec<f64>> = (0..t)
        .map(|_| (0..d).map(|_| rng.normal()).collect())
        .collect();
    let refs: Vec<&[f64]> = frames.iter().map(Vec::as_slice).collect();
    let enc: Vec<TokenTuple> = (0..t)
        .map(|_| TokenTuple((0..n).map(|_| rng.below(k) as u16).collect()))
        .collect();
    let out = quantiser_loss_with_encodings(&refs, enc.clone(), &q, 0.3).unwrap();
    let params: Vec<Matrix<f64>> = q.parameters().cloned().collect();
    let grads: Vec<Matrix<f64>> = out.grads.iter().cloned().collect();
    let err = fd_error(
        |p| {
            let mut q2 = q.clone();
            for (dst, src) in q2.parameters_mut().zip(unflatten(p, &params)) {
                *dst = src;
            }
            quantiser_loss_with_encodings(&refs, enc.clone(), &q2, 0.3)
                .unwrap()
                .total
        },
        &flatten(&params),
        &flatten(&grads),
    );
    results.push(("quantiser_loss", err));

    // single-domain loss, w.r.t. H and the heads
    let (t, n, k, dm) = (8, 3, 5, 6);
    let h = gaussian_matrix(t, dm, 1.0, &mut rng);
    let heads: Vec<Matrix<f64>> = (0..n)
        .map(|_| gaussian_matrix(k, dm, 0.7, &mut rng))
        .collect();
    let z = random_tokens(t, n, k, &mut rng);
    let mask = random_mask(t, &mut rng);
    let alpha = 0.35;
    let out = single_domain_loss(&h, &z, &mask, &heads, alpha).unwrap();
    let mut all = vec![h.clone()];
    all.extend(heads.iter().cloned());
    let mut grad = vec![out.grad_h.clone()];
    grad.extend(out.grad_heads.iter().cloned());
    let err = fd_error(
        |p| {
            let ms = unflatten(p, &all);
            single_domain_loss(&ms[0], &z, &mask, &ms[1..], alpha)
                .unwrap()
                .total
        },
        &flatten(&all),
        &flatten(&grad),
    );
    results.push(("single_domain_loss", err));

    // dual-domain loss, every strategy and domain
    let heads_a: Vec<Matrix<f64>> = (0..2)
        .map(|_| gaussian_matrix(4, dm, 0.7, &mut rng))
        .collect();
    let za = random_tokens(t, 2, 4, &mut rng);
    let mut worst = 0.0f64;
    for strategy in [Strategy::Joint, Strategy::Disjoint, Strategy::Asymmetrical] {
        for is_audio in [false, true] {
            let out = dual_domain_loss(
                &h,
                &z,
                Some(&za),
                &mask,
                &heads,
                &heads_a,
                is_audio,
                alpha,
                0.4,
                strategy,
            )
            .unwrap();
            let mut all = vec![h.clone()];
            all.extend(heads.iter().cloned());
            all.extend(heads_a.iter().cloned());
            let mut grad = vec![out.grad_h.clone()];
            grad.extend(out.grad_heads_speech.iter().cloned());
            grad.extend(out.grad_heads_audio.iter().cloned());
            let err = fd_error(
                |p| {
                    let ms = unflatten(p, &all);
                    dual_domain_loss(
                        &ms[0],
                        &z,
                        Some(&za),
                        &mask,
                        &ms[1..1 + n],
                        &ms[1 + n..],
                        is_audio,
                        alpha,
                        0.4,
                        strategy,
                    )
                    .unwrap()
                    .total
                },
                &flatten(&all),
                &flatten(&grad),
            );
            worst = worst.max(err);
        }
    }
    results.push(("dual_domain_loss", worst));

    // student encoder including the mask embedding, through L = Σ G ⊙ H
    let shape = StudentShape {
        d_in: 3,
        d_model: 5,
        layers: 2,
        window: 3,
        speech_heads: (1, 2),
        audio_heads: None,
    };
    let model = StudentModel::<f64>::init(shape, 7).unwrap();
    let xs = FeatureSequence::from_frames(gaussian_matrix(7, 3, 1.0, &mut rng)).unwrap();
    let mask = MaskSpec::from_flags(vec![false, true, true, false, false, true, false]);
    let g_out = gaussian_matrix(7, 5, 1.0, &mut rng);
    let objective = |m: &StudentModel<f64>, xs: &FeatureSequence<f64>| {
        let x = apply_mask(xs, &mask, m.mask_embedding.as_slice()).unwrap();
        let h = student_forward(&x, m).unwrap();
        h.output()
            .as_slice()
            .iter()
            .zip(g_out.as_slice())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let x = apply_mask(&xs, &mask, model.mask_embedding.as_slice()).unwrap();
    let cache = student_forward(&x, &model).unwrap();
    let mut grads = model.zeros_like();
    let grad_input = student_backward(&cache, &g_out, &model, &mut grads).unwrap();
    grads
        .mask_embedding
        .as_mut_slice()
        .iter_mut()
        .zip(mask_embedding_grad(&grad_input, &mask))
        .for_each(|(g, v)| *g += v);
    // the encoder feeds no heads here, so head parameters are left out
    let n_encoder = model.parameters().len() - model.heads_speech.len();
    let params: Vec<Matrix<f64>> = model
        .parameters()
        .into_iter()
        .take(n_encoder)
        .cloned()
        .collect();
    let pgrads: Vec<Matrix<f64>> = grads
        .parameters()
        .into_iter()
        .take(n_encoder)
        .cloned()
        .collect();
    let err_params = fd_error(
        |p| {
            let mut m2 = model.clone();
            for (dst, src) in m2.parameters_mut().into_iter().zip(unflatten(p, &params)) {
                *dst = src;
            }
            objective(&m2, &xs)
        },
        &flatten(&params),
        &flatten(&pgrads),
    );
    let unmasked_grad: Vec<f64> = (0..7)
        .flat_map(|t| {
            let keep = !mask.is_masked(t);
            grad_input
                .row(t)
                .iter()
                .map(move |&g| if keep { g } else { 0.0 })
                .collect::<Vec<_>>()
        })
        .collect();
    let err_input = fd_error(
        |p| {
            objective(
                &model,
                &FeatureSequence::from_frames(Matrix::from_vec(7, 3, p.to_vec()).unwrap()).unwrap(),
            )
        },
        xs.frames().as_slice(),
        &unmasked_grad,
    );
    results.push(("student_forward", err_params.max(err_input)));

    let pass = results.iter().all(|(_, e)| *e < 1e-4);
    let detail = results
        .iter()
        .map(|(name, e)| format!("{name} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, format!("max rel. error: {detail}"))
}

fn entropy_nats(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

fn synth(states: usize, frames: usize) -> SynthConfig {
    SynthConfig {
        states,
        dim: 16,
        p_stay: 0.95,
        frames,
        seed: 1,
        ..SynthConfig::default()
    }
}

fn quantiser_cfg(n: usize) -> QuantiserTrainConfig {
    QuantiserTrainConfig {
        n_codebooks: n,
        codebook_size: 8,
        steps: 2000,
        beta: 0.1,
        seed: 1,
        ..QuantiserTrainConfig::default()
    }
}

fn quantiser_training() -> Outcome {
    let data = generate_synthetic::<f64>(&synth(8, 5000)).unwrap();
    let cfg = quantiser_cfg(4);
    let initial = initial_quantiser(&data, &cfg)
        .unwrap()
        .reconstruction_mse(&data)
        .unwrap();
    let q = train_quantiser(&data, &cfg).unwrap().quantiser;
    let trained = q.reconstruction_mse(&data).unwrap();
    let z = q.encode_sequence(&data).unwrap();
    let ratios: Vec<f64> = (0..4)
        .map(|n| {
            let mut counts = [0usize; 8];
            (0..z.len()).for_each(|t| counts[z.token(t, n)] += 1);
            entropy_nats(&counts) / 8f64.ln()
        })
        .collect();
    let pass = trained < 0.5 * initial && ratios.iter().all(|&r| r > 0.6);
    outcome(
        pass,
        format!(
            "MSE {initial:.4} -> {trained:.4} ({:.1}%), usage entropy / ln K = {}",
            100.0 * trained / initial,
            ratios
                .iter()
                .map(|r| format!("{r:.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn mse_by_codebooks(states: usize) -> Vec<f64> {
    let data = generate_synthetic::<f64>(&synth(states, 5000)).unwrap();
    [1, 2, 4]
        .iter()
        .map(|&n| {
            train_quantiser(&data, &quantiser_cfg(n))
                .unwrap()
                .quantiser
                .reconstruction_mse(&data)
                .unwrap()
        })
        .collect()
}

fn codebook_trend() -> Outcome {
    let rich = mse_by_codebooks(64);
    let few = mse_by_codebooks(8);
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join(" > ")
    };
    outcome(
        rich[0] > rich[1] && rich[1] > rich[2],
        format!(
            "N=1,2,4 on 64 states: {}; on 8 states (reference): {}",
            fmt(&rich),
            fmt(&few)
        ),
    )
}

fn pretext_learnability() -> Outcome {
    let data = generate_synthetic::<f64>(&synth(8, 7000)).unwrap();
    let train = data.slice(0, 5000).unwrap();
    let held_out = data.slice(5000, 2000).unwrap();
    let q = train_quantiser(&train, &quantiser_cfg(4))
        .unwrap()
        .quantiser;
    let eval =
        prepare_utterance(&Sample::new(held_out), false, &q, None, InterpMode::Linear).unwrap();
    let accuracy = |alpha: f64| {
        let cfg = SslTrainConfig {
            alpha,
            steps: 3000,
            batch_size: 8,
            segment_len: 64,
            d_model: 16,
            layers: 4,
            window: 9,
            adam: AdamConfig::with_learning_rate(3e-3),
            seed: 1,
            ..SslTrainConfig::default()
        };
        let out = pretrain(&[Sample::new(train.clone())], &[], &q, None, &cfg).unwrap();
        eval_masked_accuracy(
            &out.model,
            std::slice::from_ref(&eval),
            &MaskConfig::default(),
            5,
        )
        .unwrap()
    };
    let half = accuracy(0.5);
    let zero = accuracy(0.0);
    let chance = 1.0 / 8.0;
    outcome(
        half.mean_speech >= 5.0 * chance && zero.mean_speech < half.mean_speech,
        format!(
            "held-out masked top-1 {:.3} at alpha=0.5 (>= {:.3}), {:.3} at alpha=0 over {} positions",
            half.mean_speech,
            5.0 * chance,
            zero.mean_speech,
            half.masked_positions
        ),
    )
}

/// `(1/N) Σ_n [α Σ_{t∈M} CE + (1−α) Σ_{t∉M} CE]` from first principles.
fn reference_single(
    h: &Matrix<f64>,
    z: &TokenSequence,
    mask: &MaskSpec,
    heads: &[Matrix<f64>],
    alpha: f64,
) -> f64 {
    let mut total = 0.0;
    for (n, w) in heads.iter().enumerate() {
        let (mut masked, mut unmasked) = (0.0, 0.0);
        for t in 0..h.rows() {
            let logits: Vec<f64> = (0..w.rows())
                .map(|k| (0..w.cols()).map(|j| w[(k, j)] * h[(t, j)]).sum())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            let ce = lse - logits[z.token(t, n)];
            if mask.is_masked(t) {
                masked += ce;
            } else {
                unmasked += ce;
            }
        }
        total += alpha * masked + (1.0 - alpha) * unmasked;
    }
    total / heads.len() as f64
}

fn dual_gating() -> Outcome {
    let mut rng = Rng::new(707, streams::EVAL);
    let (t, dm) = (12, 6);
    let heads_s: Vec<Matrix<f64>> = (0..3)
        .map(|_| gaussian_matrix(5, dm, 0.8, &mut rng))
        .collect();
    let heads_a: Vec<Matrix<f64>> = (0..2)
        .map(|_| gaussian_matrix(4, dm, 0.8, &mut rng))
        .collect();
    let mut problems = Vec::new();

    for (is_audio, lambda) in [(false, 0.1), (false, 0.7), (true, 0.0)] {
        let h = gaussian_matrix(t, dm, 1.0, &mut rng);
        let zs = random_tokens(t, 3, 5, &mut rng);
        let za = random_tokens(t, 2, 4, &mut rng);
        let mask = random_mask(t, &mut rng);
        let dual = dual_domain_loss(
            &h,
            &zs,
            Some(&za),
            &mask,
            &heads_s,
            &heads_a,
            is_audio,
            0.5,
            lambda,
            Strategy::Asymmetrical,
        )
        .unwrap();
        let single = single_domain_loss(&h, &zs, &mask, &heads_s, 0.5).unwrap();
        let audio_max = dual
            .grad_heads_audio
            .iter()
            .flat_map(|g| g.as_slice().iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if dual.total.to_bits() != single.total.to_bits()
            || dual.grad_h != single.grad_h
            || audio_max != 0.0
        {
            problems.push(format!("is_audio={is_audio} lambda={lambda}"));
        }
    }

    // a fixed mixed-domain batch against the documented combinations
    let lambda = 0.3;
    let batch: Vec<_> = (0..6)
        .map(|i| {
            let h = gaussian_matrix(t, dm, 1.0, &mut rng);
            let zs = random_tokens(t, 3, 5, &mut rng);
            let za = random_tokens(t, 2, 4, &mut rng);
            let mask = random_mask(t, &mut rng);
            (h, zs, za, mask, i % 2 == 1)
        })
        .collect();
    let mut worst = 0.0f64;
    for strategy in [Strategy::Joint, Strategy::Disjoint, Strategy::Asymmetrical] {
        let (mut got, mut want) = (0.0, 0.0);
        for (h, zs, za, mask, is_audio) in &batch {
            got += dual_domain_loss(
                h,
                zs,
                Some(za),
                mask,
                &heads_s,
                &heads_a,
                *is_audio,
                0.5,
                lambda,
                strategy,
            )
            .unwrap()
            .total;
            let ls = reference_single(h, zs, mask, &heads_s, 0.5);
            let la = reference_single(h, za, mask, &heads_a, 0.5);
            want += match (strategy, is_audio) {
                (Strategy::Joint, _) => ls + lambda * la,
                (Strategy::Disjoint, false) => ls,
                (Strategy::Disjoint, true) => lambda * la,
                (Strategy::Asymmetrical, false) => ls,
                (Strategy::Asymmetrical, true) => ls + lambda * la,
            };
        }
        worst = worst.max((got - want).abs());
    }
    if worst > 1e-12 {
        problems.push(format!("strategy totals off by {worst:.1e}"));
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("bitwise gating holds, strategy totals within {worst:.1e}")
        } else {
            problems.join("; ")
        },
    )
}

fn loss_algebra() -> Outcome {
    let mut rng = Rng::new(808, streams::EVAL);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t = 1 + rng.below(16);
        let n = 1 + rng.below(4);
        let k = 2 + rng.below(9);
        let dm = 1 + rng.below(8);
        let alpha = rng.uniform();
        let h = gaussian_matrix(t, dm, 1.5, &mut rng);
        let heads: Vec<Matrix<f64>> = (0..n)
            .map(|_| gaussian_matrix(k, dm, 1.0, &mut rng))
            .collect();
        let z = random_tokens(t, n, k, &mut rng);
        let mask = random_mask(t, &mut rng);
        let got = single_domain_loss(&h, &z, &mask, &heads, alpha)
            .unwrap()
            .total;
        let want = reference_single(&h, &z, &mask, &heads, alpha);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    let (t, k) = (10, 7);
    let h = Matrix::from_fn(t, 4, |r, c| (r + c) as f64 * 0.3);
    let heads = vec![Matrix::zeros(k, 4); 3];
    let z = random_tokens(t, 3, k, &mut rng);
    let uniform = single_domain_loss(&h, &z, &MaskSpec::none(t), &heads, 0.0)
        .unwrap()
        .total;
    let baseline_err = (uniform - t as f64 * (k as f64).ln()).abs();
    outcome(
        worst <= 1e-12 && baseline_err <= 1e-9,
        format!("100 random cases within {worst:.1e} (rel.), zero-head baseline off T ln K by {baseline_err:.1e}"),
    )
}

fn serialization() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(909, streams::EVAL);
    let mut problems = Vec::new();

    let xs =
        FeatureSequence::new(gaussian_matrix(10, 4, 1.0, &mut rng), 25.0, Domain::Audio).unwrap();
    let path = dir.path().join("x.mvqf");
    write_features(&path, &xs).unwrap();
    let back = read_features::<f64>(&path).unwrap();
    let f32_equal = xs
        .frames()
        .as_slice()
        .iter()
        .zip(back.frames().as_slice())
        .all(|(a, b)| (*a as f32).to_bits() == (*b as f32).to_bits());
    if !f32_equal || back.domain() != Domain::Audio || back.frame_rate_hz() != 25.0 {
        problems.push("feature roundtrip".to_string());
    }

    let q = random_quantiser(3, 16, 4, 5, &mut rng);
    let path = dir.path().join("q.mvqq");
    write_quantiser(&path, &q).unwrap();
    let reloaded = read_quantiser::<f64>(&path).unwrap();
    let again = decode_quantiser::<f64>(&encode_quantiser(&reloaded).unwrap()).unwrap();
    let frames = gaussian_matrix(100, 4, 1.5, &mut rng);
    let same = frames
        .iter_rows()
        .all(|x| reloaded.encode(x).unwrap() == again.encode(x).unwrap());
    if !same || reloaded != again {
        problems.push("quantiser reload changes encodings".to_string());
    }

    let z = random_tokens(50, 16, 256, &mut rng);
    let path = dir.path().join("z.mvqt");
    write_tokens(&path, &z).unwrap();
    let size = std::fs::metadata(&path).unwrap().len();
    if size != (TOKEN_HEADER_LEN + 50 * 16) as u64 || read_tokens(&path).unwrap() != z {
        problems.push(format!("K=256 token file is {size} bytes"));
    }
    let z300 = random_tokens(9, 2, 300, &mut rng);
    if decode_tokens(&encode_tokens(&z300).unwrap()).unwrap() != z300 {
        problems.push("K=300 token roundtrip".to_string());
    }

    let golden_ok = decode_features::<f64>(GOLDEN_FEATURES)
        .map(|x| {
            x.frames().as_slice() == [0.5, -1.25, 2.0, 3.75, -0.125, f64::from(1e-3f32)]
                && encode_features(&x).unwrap() == GOLDEN_FEATURES
        })
        .unwrap_or(false)
        && decode_quantiser::<f64>(GOLDEN_QUANTISER)
            .map(|q| {
                q.codebook(0).as_slice() == [1.0, 0.0, 0.0, 1.0]
                    && encode_quantiser(&q).unwrap() == GOLDEN_QUANTISER
            })
            .unwrap_or(false)
        && decode_tokens(GOLDEN_TOKENS_U8)
            .map(|z| {
                z.as_flat() == [0, 255, 7, 128, 1, 2]
                    && encode_tokens(&z).unwrap() == GOLDEN_TOKENS_U8
            })
            .unwrap_or(false)
        && decode_tokens(GOLDEN_TOKENS_U16)
            .map(|z| {
                z.as_flat() == [299, 0, 256, 17] && encode_tokens(&z).unwrap() == GOLDEN_TOKENS_U16
            })
            .unwrap_or(false);
    if !golden_ok {
        problems.push("golden files".to_string());
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("features, quantiser, K=256 ({size} bytes for 50x16) and K=300 tokens, 4 golden files")
        } else {
            problems.join("; ")
        },
    )
}

/// Runs `mvq` in `dir` and returns its stdout, or an error naming the command.
fn mvq(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mvq"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(out.stdout)
    } else {
        Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

const PIPELINE: &[&[&str]] = &[
    &[
        "gen-synth",
        "--states",
        "6",
        "--dim",
        "8",
        "--frames",
        "600",
        "--seed",
        "3",
        "--out",
        "speech.mvqf",
    ],
    &[
        "gen-synth",
        "--states",
        "5",
        "--dim",
        "8",
        "--frames",
        "400",
        "--domain",
        "audio",
        "--seed",
        "4",
        "--out",
        "audio.mvqf",
    ],
    &[
        "train-quantiser",
        "--features",
        "speech.mvqf",
        "--n",
        "3",
        "--k",
        "8",
        "--steps",
        "60",
        "--batch-size",
        "32",
        "--seed",
        "5",
        "--out",
        "q.mvqq",
        "--metrics-out",
        "q.tsv",
    ],
    &[
        "train-quantiser",
        "--features",
        "audio.mvqf",
        "--n",
        "2",
        "--k",
        "4",
        "--steps",
        "40",
        "--seed",
        "6",
        "--out",
        "qa.mvqq",
    ],
    &[
        "encode",
        "--quantiser",
        "q.mvqq",
        "--features",
        "speech.mvqf",
        "--out",
        "z.mvqt",
    ],
    &[
        "decode",
        "--quantiser",
        "q.mvqq",
        "--tokens",
        "z.mvqt",
        "--out",
        "decoded.mvqf",
    ],
    &[
        "eval-recon",
        "--quantiser",
        "q.mvqq",
        "--features",
        "speech.mvqf",
    ],
    &[
        "pretrain",
        "--speech",
        "speech.mvqf",
        "--quantiser",
        "q.mvqq",
        "--steps",
        "15",
        "--d-model",
        "8",
        "--seed",
        "7",
        "--out",
        "s.mvqs",
        "--metrics-out",
        "s.tsv",
    ],
    &[
        "pretrain",
        "--speech",
        "speech.mvqf",
        "--audio",
        "audio.mvqf",
        "--quantiser",
        "q.mvqq",
        "--audio-quantiser",
        "qa.mvqq",
        "--strategy",
        "joint",
        "--steps",
        "15",
        "--d-model",
        "8",
        "--seed",
        "8",
        "--out",
        "dual.mvqs",
        "--metrics-out",
        "dual.tsv",
    ],
    &[
        "eval-pretrain",
        "--model",
        "s.mvqs",
        "--features",
        "speech.mvqf",
        "--quantiser",
        "q.mvqq",
        "--seed",
        "9",
    ],
    &["inspect", "dual.mvqs"],
];

fn run_pipeline(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    PIPELINE.iter().map(|args| mvq(dir, args)).collect()
}

fn cli_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (out_a, out_b) = match (run_pipeline(a.path()), run_pipeline(b.path())) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return outcome(false, format!("command failed: {e}")),
    };
    let mut differing: Vec<String> = PIPELINE
        .iter()
        .zip(out_a.iter().zip(&out_b))
        .filter(|(_, (x, y))| x != y)
        .map(|(args, _)| format!("stdout of {}", args[0]))
        .collect();
    let mut files: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    files.sort();
    for name in &files {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap_or_default();
        if x != y {
            differing.push(name.to_string_lossy().into_owned());
        }
    }
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!(
                "{} commands, {} artifacts and traces identical",
                PIPELINE.len(),
                files.len()
            )
        } else {
            format!("differs: {}", differing.join(", "))
        },
    )
}
