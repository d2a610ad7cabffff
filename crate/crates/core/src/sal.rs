//! Shifted asymmetric Laplace (SAL) densities, the GIG posterior of the
//! latent weight, and a sampler built on the normal variance-mean mixture
//! `X = μ + W α + √W N` with `W ~ Exp(1)` and `N ~ N(0, Σ)`.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, PsalmError, Result};
use crate::family::{ScaleFactor, ScaleMatrix};
use crate::special::{bessel_ratio, log_bessel_k, log_bessel_k_with_ratio, GigParams};

#[derive(Debug, Clone, PartialEq)]
pub struct SalParams {
    pub mu: DVector<f64>,
    pub alpha: DVector<f64>,
    pub scale: ScaleMatrix,
}

impl SalParams {
    pub fn new(mu: DVector<f64>, alpha: DVector<f64>, scale: ScaleMatrix) -> Result<Self> {
        if mu.len() != scale.dim() || alpha.len() != scale.dim() {
            return domain(format!(
                "dimension mismatch: mu {}, alpha {}, scale {}",
                mu.len(),
                alpha.len(),
                scale.dim()
            ));
        }
        Ok(Self { mu, alpha, scale })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Bessel order `ν = (2 - p) / 2`.
    pub fn nu(&self) -> f64 {
        (2.0 - self.dim() as f64) / 2.0
    }
}

/// A SAL component with its scale factorised once, for repeated evaluation.
#[derive(Debug, Clone)]
pub struct SalKernel {
    mu: DVector<f64>,
    factor: ScaleFactor,
    /// `Σ⁻¹ α`
    inv_alpha: DVector<f64>,
    /// `2 + α' Σ⁻¹ α`
    a: f64,
    nu: f64,
}

impl SalKernel {
    pub fn new(params: &SalParams) -> Result<Self> {
        let factor = params.scale.factor()?;
        let inv_alpha = &factor.inverse * &params.alpha;
        let a = 2.0 + params.alpha.dot(&inv_alpha);
        Ok(Self {
            mu: params.mu.clone(),
            factor,
            inv_alpha,
            a,
            nu: params.nu(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return domain(format!(
                "observation has dimension {}, expected {}",
                x.len(),
                self.dim()
            ));
        }
        Ok(())
    }

    /// Squared Mahalanobis distance `δ(x, μ | Σ)`.
    pub fn mahalanobis(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mu;
        self.factor.bilinear(&diff, &diff).max(0.0)
    }

    /// `x - μ`, `(x - μ)'Σ⁻¹α` and `δ(x, μ | Σ)`.
    fn parts(&self, x: &DVector<f64>) -> (f64, f64) {
        // Hot path of every E-step; avoids allocating `x - μ`.
        let inverse = &self.factor.inverse;
        let (mut skew, mut b) = (0.0, 0.0);
        for j in 0..x.len() {
            let dj = x[j] - self.mu[j];
            skew += dj * self.inv_alpha[j];
            let column = inverse.column(j);
            let mut row = 0.0;
            for k in 0..x.len() {
                row += column[k] * (x[k] - self.mu[k]);
            }
            b += dj * row;
        }
        (skew, b.max(0.0))
    }

    fn log_const(&self, skew: f64) -> f64 {
        let p = self.dim() as f64;
        LN_2 + skew - 0.5 * p * (2.0 * PI).ln() - 0.5 * self.factor.log_det
    }

    /// `ln[(b/a)^{ν/2} K_ν(√(ab))]` in the `b → 0` limit, finite only for `p = 1`.
    fn tail_at_zero(&self) -> Result<f64> {
        if self.dim() == 1 {
            // Γ(ν) 2^{ν-1} a^{-ν} with ν = 1/2.
            Ok(0.5 * PI.ln() - 0.5 * LN_2 - 0.5 * self.a.ln())
        } else {
            Err(PsalmError::Singular(
                "observation equals the location and p >= 2".into(),
            ))
        }
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        let (skew, b) = self.parts(x);
        let tail = if b > 0.0 {
            0.5 * self.nu * (b.ln() - self.a.ln()) + log_bessel_k(self.nu, (self.a * b).sqrt())?
        } else {
            self.tail_at_zero()?
        };
        Ok(self.log_const(skew) + tail)
    }

    /// Log density together with `E[W | x]` and the `ψ`-regularised
    /// `E[1/W | x]`, sharing the Bessel evaluation.
    pub(crate) fn evaluate(&self, x: &DVector<f64>, psi: f64) -> Result<(f64, f64, f64)> {
        let (skew, b) = self.parts(x);
        if b <= 0.0 {
            let log_density = self.log_const(skew) + self.tail_at_zero()?;
            let (e1, e2) = expectations_from_ab(self.a, b, self.nu, psi)?;
            return Ok((log_density, e1, e2));
        }
        let (log_k, ratio) = log_bessel_k_with_ratio(self.nu, (self.a * b).sqrt())?;
        let log_density = self.log_const(skew) + 0.5 * self.nu * (b.ln() - self.a.ln()) + log_k;
        let e1 = (b / self.a).sqrt() * ratio;
        let e2 = if psi == 0.0 {
            (self.a / b).sqrt() * ratio - 2.0 * self.nu / b
        } else {
            let b_reg = b + psi;
            (self.a / b_reg).sqrt() * bessel_ratio(self.nu, (self.a * b_reg).sqrt())?
                - 2.0 * self.nu / b_reg
        };
        Ok((log_density, e1, e2))
    }

    /// `(a, b)` of the GIG posterior of `W` given `x`; `b` may be zero.
    pub fn gig_ab(&self, x: &DVector<f64>) -> (f64, f64) {
        (self.a, self.mahalanobis(x))
    }

    /// `E[W | x]` and the `ψ`-regularised `E[1/W | x]`.
    pub fn latent_expectations(&self, x: &DVector<f64>, psi: f64) -> Result<(f64, f64)> {
        self.check_dim(x)?;
        if !(psi >= 0.0 && psi.is_finite()) {
            return domain(format!("psi must be finite and non-negative, got {psi}"));
        }
        expectations_from_ab(self.a, self.mahalanobis(x), self.nu, psi)
    }
}

/// `E1 = √(b/a) R_ν(√(ab))` and `E2 = √(a/(ψ+b)) R_ν(√(a(ψ+b))) − 2ν/(ψ+b)`.
pub(crate) fn expectations_from_ab(a: f64, b: f64, nu: f64, psi: f64) -> Result<(f64, f64)> {
    let b_reg = psi + b;
    if b_reg <= 0.0 {
        return Err(PsalmError::Singular(
            "observation equals the location and psi is zero".into(),
        ));
    }
    let b1 = b.max(f64::MIN_POSITIVE);
    let e1 = (b1 / a).sqrt() * bessel_ratio(nu, (a * b1).sqrt())?;
    let e2 = (a / b_reg).sqrt() * bessel_ratio(nu, (a * b_reg).sqrt())? - 2.0 * nu / b_reg;
    Ok((e1, e2))
}

/// `ln ξ(x | μ, Σ, α)`.
pub fn sal_log_density(x: &DVector<f64>, params: &SalParams) -> Result<f64> {
    SalKernel::new(params)?.log_density(x)
}

/// GIG parameters `(2 + α'Σ⁻¹α, δ(x, μ | Σ), (2 - p)/2)` of `W | x`.
///
/// Returned as a plain triple because `b` may be zero at `x = μ`.
pub fn gig_posterior_params(x: &DVector<f64>, params: &SalParams) -> Result<(f64, f64, f64)> {
    let kernel = SalKernel::new(params)?;
    kernel.check_dim(x)?;
    let (a, b) = kernel.gig_ab(x);
    Ok((a, b, kernel.nu()))
}

/// Same as [`gig_posterior_params`] but validated as [`GigParams`].
pub fn gig_posterior(x: &DVector<f64>, params: &SalParams) -> Result<GigParams> {
    let (a, b, nu) = gig_posterior_params(x, params)?;
    GigParams::new(a, b, nu)
}

/// `(E[W | x], E[1/W | x])`, the latter with `ψ` added to the Mahalanobis term.
pub fn latent_expectations(x: &DVector<f64>, params: &SalParams, psi: f64) -> Result<(f64, f64)> {
    SalKernel::new(params)?.latent_expectations(x, psi)
}

/// Per-observation generator: stream `i` of a ChaCha generator keyed by `seed`.
fn observation_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

struct Draw {
    mu: DVector<f64>,
    alpha: DVector<f64>,
    chol: DMatrix<f64>,
}

impl Draw {
    fn new(params: &SalParams) -> Result<Self> {
        let chol = params
            .scale
            .dense()
            .cholesky()
            .ok_or_else(|| PsalmError::Conditioning("scale matrix is not positive definite".into()))?
            .unpack();
        Ok(Self {
            mu: params.mu.clone(),
            alpha: params.alpha.clone(),
            chol,
        })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        // Exp(1) by inversion; 1 - U lies in (0, 1].
        let w = -(1.0 - rng.random::<f64>()).ln();
        let z = DVector::from_fn(self.mu.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mu + &self.alpha * w + (&self.chol * z) * w.sqrt()
    }
}

/// `n` independent SAL draws as the rows of an `n × p` matrix.
pub fn sample_sal(params: &SalParams, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return domain("sample size must be at least 1");
    }
    let draw = Draw::new(params)?;
    let p = params.dim();
    let mut out = DMatrix::zeros(n, p);
    for i in 0..n {
        let x = draw.sample(&mut observation_rng(seed, i));
        out.row_mut(i).copy_from(&x.transpose());
    }
    Ok(out)
}

/// Draws `n` observations from a SAL mixture, returning the data and the
/// generating component of each row.
pub fn sample_sal_mixture(
    components: &[(f64, SalParams)],
    n: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if components.is_empty() {
        return domain("mixture needs at least one component");
    }
    if n == 0 {
        return domain("sample size must be at least 1");
    }
    let total: f64 = components.iter().map(|(w, _)| w).sum();
    if components.iter().any(|(w, _)| !(*w > 0.0)) || (total - 1.0).abs() > 1e-12 {
        return domain("mixture weights must be positive and sum to 1");
    }
    let p = components[0].1.dim();
    if components.iter().any(|(_, c)| c.dim() != p) {
        return domain("all components must share a dimension");
    }
    let draws = components
        .iter()
        .map(|(_, c)| Draw::new(c))
        .collect::<Result<Vec<_>>>()?;
    let mut cumulative = Vec::with_capacity(components.len());
    let mut acc = 0.0;
    for (w, _) in components {
        acc += w;
        cumulative.push(acc);
    }
    let mut data = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = observation_rng(seed, i);
        let u: f64 = rng.random::<f64>() * total;
        let g = cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(components.len() - 1);
        let x = draws[g].sample(&mut rng);
        data.row_mut(i).copy_from(&x.transpose());
        labels.push(g);
    }
    Ok((data, labels))
}
