/// Central-difference estimate of the gradient of `f` at `x`.
pub fn numeric_gradient<F>(f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Relative error between an analytic and a numeric derivative.
///
/// Components where both magnitudes are below `floor` are compared on an
/// absolute scale of `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Default magnitude below which gradient components are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Maximum relative error between `grad(x)` and central differences of `f`.
pub fn grad_check<F, G>(f: F, grad: G, x: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let analytic = grad(x);
    assert_eq!(analytic.len(), x.len(), "gradient length must match input length");
    let numeric = numeric_gradient(f, x, eps);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n, REL_ERR_FLOOR))
        .fold(0.0, f64::max)
}
