use super::Real;
use crate::{Error, Result};

/// Numerically stable softmax. Rejects non-finite logits.
pub fn softmax<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    super::check_finite(logits, "softmax logits")?;
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Unchecked in-place softmax, returns the log-partition `log Σ exp(x)`.
pub fn softmax_in_place<T: Real>(xs: &mut [T]) -> T {
    if xs.is_empty() {
        return T::neg_infinity();
    }
    let max = xs.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = sum.recip();
    xs.iter_mut().for_each(|x| *x *= inv);
    max + sum.ln()
}

pub fn log_softmax<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    super::check_finite(logits, "log_softmax logits")?;
    let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
    Ok(logits.iter().map(|&x| x - lse).collect())
}

/// `−log softmax(logits)[target]` together with its gradient
/// `softmax(logits) − onehot(target)`.
pub fn cross_entropy<T: Real>(logits: &[T], target: usize) -> Result<(T, Vec<T>)> {
    if target >= logits.len() {
        return Err(Error::Index {
            index: target,
            len: logits.len(),
        });
    }
    super::check_finite(logits, "cross_entropy logits")?;
    let mut grad = logits.to_vec();
    let lse = softmax_in_place(&mut grad);
    let loss = (lse - logits[target]).max(T::zero());
    grad[target] -= T::one();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_check;
    use proptest::prelude::*;

    #[test]
    fn symmetric_pair_is_uniform() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn large_logit_does_not_overflow() {
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1] < 1e-300);
    }

    #[test]
    fn matches_reference_values() {
        // exp-normalisation evaluated at 40 digits with mpmath
        let expected: [f64; 3] = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219];
        for (p, e) in softmax(&[1.0, 2.0, 3.0]).unwrap().iter().zip(expected) {
            assert!((p - e).abs() < 1e-12, "{p} vs {e}");
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            softmax(&[0.0, f64::INFINITY]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn log_softmax_agrees() {
        let l: Vec<f64> = log_softmax(&[0.3, -1.0, 2.0]).unwrap();
        let p = softmax(&[0.3, -1.0, 2.0]).unwrap();
        for (a, b) in l.iter().zip(p) {
            assert!((a.exp() - b).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_cross_entropy() {
        let (loss, grad) = cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(grad, vec![-0.5, 0.5]);
    }

    #[test]
    fn confident_correct_cross_entropy() {
        let (loss, _) = cross_entropy(&[50.0, 0.0], 0).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        assert!(matches!(
            cross_entropy(&[0.0, 1.0], 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = [0.7, -1.3, 0.2, 2.1, -0.4];
        let (_, grad) = cross_entropy(&logits, 3).unwrap();
        let err = finite_difference_check(|x| cross_entropy(x, 3).unwrap().0, &logits, &grad, 1e-5);
        assert!(err < 1e-6, "rel err {err}");
    }

    proptest! {
        #[test]
        fn softmax_normalises_and_is_shift_invariant(
            logits in proptest::collection::vec(-50.0f64..50.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&logits).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn cross_entropy_gradient_sums_to_zero(
            logits in proptest::collection::vec(-20.0f64..20.0, 2..10),
            t in 0usize..10,
        ) {
            let t = t % logits.len();
            let (loss, grad) = cross_entropy(&logits, t).unwrap();
            prop_assert!(loss >= 0.0);
            prop_assert!(grad.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
