use super::Real;

/// Central finite-difference gradient check.
///
/// Returns `max_i |fd_i − g_i| / max(1e−8, |fd_i| + |g_i|)` where
/// `fd_i = (f(x + ε e_i) − f(x − ε e_i)) / 2ε`.
pub fn finite_difference_check<T: Real>(
    mut f: impl FnMut(&[T]) -> T,
    x: &[T],
    analytic_grad: &[T],
    epsilon: T,
) -> T {
    assert_eq!(x.len(), analytic_grad.len(), "gradient length");
    let two = T::lit(2.0);
    let floor = T::lit(1e-8);
    let mut probe = x.to_vec();
    let mut worst = T::zero();
    for i in 0..x.len() {
        probe[i] = x[i] + epsilon;
        let up = f(&probe);
        probe[i] = x[i] - epsilon;
        let down = f(&probe);
        probe[i] = x[i];
        let fd = (up - down) / (two * epsilon);
        let g = analytic_grad[i];
        let rel = (fd - g).abs() / floor.max(fd.abs() + g.abs());
        if rel > worst || rel.is_nan() {
            worst = rel;
        }
    }
    worst
}
