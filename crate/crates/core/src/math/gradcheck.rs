/// Central finite differences `(f(θ + ε e_k) - f(θ - ε e_k)) / 2ε` for every
/// coordinate of `theta`.
pub fn finite_diff_grad<F>(mut loss: F, theta: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(
        (1e-7..=1e-3).contains(&eps),
        "finite-difference step {eps} outside [1e-7, 1e-3]"
    );
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + eps;
            let up = loss(&probe);
            probe[k] = orig - eps;
            let down = loss(&probe);
            probe[k] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Floor on the denominator so that gradients near zero are compared on an
/// absolute scale of about `1e-4 * tol`.
const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}
