//! Independent oracles shared by the integration suites. Nothing here calls
//! into the library's numerical code.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use psalm::family::ScaleMatrix;
use psalm::sal::SalParams;

/// Trapezoid rule on `[lo, hi]` for integrands that decay doubly
/// exponentially at both ends, where the rule converges geometrically.
pub fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, h: f64) -> f64 {
    let steps = ((hi - lo) / h).ceil() as usize;
    let h = (hi - lo) / steps as f64;
    let mut sum = 0.5 * (f(lo) + f(hi));
    for k in 1..steps {
        sum += f(lo + k as f64 * h);
    }
    sum * h
}

/// `ln K_ν(z)` from `∫_0^∞ exp(−z cosh t) cosh(νt) dt`, scaled by `e^z`
/// so that large arguments do not underflow.
pub fn quadrature_log_k(nu: f64, z: f64) -> f64 {
    let nu = nu.abs();
    // Past t_max the exponent is below −750 relative to the peak.
    let mut t_max: f64 = 1.0;
    while z * (t_max.cosh() - 1.0) - nu * t_max < 800.0 {
        t_max += 0.5;
    }
    // Integrand peaks near sinh t = ν/z; rescale around the peak value.
    let peak_t = (nu / z).asinh();
    let log_peak = -z * (peak_t.cosh() - 1.0) + nu * peak_t;
    let f = |t: f64| (-z * (t.cosh() - 1.0) + nu * t - log_peak).exp() * 0.5 * (1.0 + (-2.0 * nu * t).exp());
    let integral = trapezoid(f, 0.0, t_max, 2e-3);
    integral.ln() + log_peak - z
}

/// Unnormalised GIG log density `(ν−1) ln w − (a w + b/w)/2`.
fn gig_kernel(w: f64, a: f64, b: f64, nu: f64) -> f64 {
    (nu - 1.0) * w.ln() - 0.5 * (a * w + b / w)
}

/// `∫ w^k g(w) dw / ∫ g(w) dw` for the GIG kernel `g`, via `w = e^t`.
pub fn gig_moment_quadrature(a: f64, b: f64, nu: f64, k: f64) -> f64 {
    let mode = ((nu - 1.0) + ((nu - 1.0).powi(2) + a * b).sqrt()) / a;
    let centre = mode.ln();
    let shift = gig_kernel(mode, a, b, nu) + mode.ln();
    let integrand = |t: f64, k: f64| {
        let w = t.exp();
        (gig_kernel(w, a, b, nu) + t - shift + k * t).exp()
    };
    let span = 60.0;
    let num = trapezoid(|t| integrand(t, k), centre - span, centre + span, 1e-3);
    let den = trapezoid(|t| integrand(t, 0.0), centre - span, centre + span, 1e-3);
    num / den
}

/// Integral of an arbitrary density on `(0, ∞)` through `w = e^t`.
pub fn integrate_positive(log_density: impl Fn(f64) -> f64, centre: f64) -> f64 {
    let c = centre.ln();
    trapezoid(|t| (log_density(t.exp()) + t).exp(), c - 60.0, c + 60.0, 1e-3)
}

/// ARI from explicit pair counting over all `n(n−1)/2` pairs.
pub fn brute_force_ari(a: &[usize], b: &[usize]) -> f64 {
    let (mut ss, mut sd, mut ds, mut dd) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => ss += 1.0,
                (true, false) => sd += 1.0,
                (false, true) => ds += 1.0,
                (false, false) => dd += 1.0,
            }
        }
    }
    let denom = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (ss * dd - sd * ds) / denom
}

/// Rand index by pair counting.
pub fn brute_force_rand(a: &[usize], b: &[usize]) -> f64 {
    let (mut agree, mut total) = (0.0, 0.0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            total += 1.0;
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1.0;
            }
        }
    }
    agree / total
}

/// Free scale parameters transcribed row by row from the model table.
pub fn table_scale_params(code: &str, p: usize, q: usize, g: usize) -> usize {
    let l = p * q - q * (q - 1) / 2;
    match code {
        "CCCC" => l + 1,
        "CCUC" => l + g,
        "UCCC" => g * l + 1,
        "UCUC" => g * l + g,
        "CCCU" => l + p,
        "CCUU" => l + (g + (p - 1)),
        "UCCU" => g * l + p,
        "UCUU" => g * l + (g + (p - 1)),
        "CUCU" => l + (1 + g * (p - 1)),
        "CUUU" => l + g * p,
        "UUCU" => g * l + (1 + g * (p - 1)),
        "UUUU" => g * l + g * p,
        other => panic!("not a model code: {other}"),
    }
}

/// Dense `ΛΛ' + diag(ψ)` and its inverse and log-determinant by LU.
pub fn dense_scale(loadings: &DMatrix<f64>, psi: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let sigma = loadings * loadings.transpose() + DMatrix::from_diagonal(psi);
    let inverse = sigma.clone().try_inverse().expect("positive definite");
    let det = sigma.clone().lu().determinant();
    (sigma, inverse, det.ln())
}

/// A bivariate SAL component with a one-factor scale.
pub fn component(mu: [f64; 2], alpha: [f64; 2], loading: [f64; 2], psi: [f64; 2]) -> SalParams {
    let scale = ScaleMatrix::from_psi(
        DMatrix::from_column_slice(2, 1, &loading),
        &DVector::from_column_slice(&psi),
    )
    .unwrap();
    SalParams::new(
        DVector::from_column_slice(&mu),
        DVector::from_column_slice(&alpha),
        scale,
    )
    .unwrap()
}

/// Two well-separated bivariate components with equal weights.
pub fn separated_pair(offset: [f64; 2]) -> Vec<(f64, SalParams)> {
    vec![
        (0.5, component([0.0, 0.0], [1.0, 0.5], [0.5, 0.3], [0.5, 0.5])),
        (0.5, component(offset, [-0.5, 1.0], [0.5, 0.3], [0.5, 0.5])),
    ]
}

pub fn data_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}
