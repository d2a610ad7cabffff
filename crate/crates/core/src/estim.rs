//! Two-phase estimation: deterministic annealing with a regularised
//! `E[1/W]`, followed by alternating expectation-conditional maximisation
//! (AECM) until Aitken's acceleration criterion is met.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, PsalmError, Result};
use crate::family::{
    total_free_params, ComponentParams, DeltaParam, ModelCode, PsalmSpec, ScaleMatrix, Shared,
};
use crate::sal::SalKernel;
use crate::select::{bic, icl, map_classify};

/// Observations are the rows of an `n × p` matrix.
pub type DataMatrix = DMatrix<f64>;

/// Smallest value allowed for a residual variance.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// The sequence of annealing exponents `v`, each held for `iters_per_v`
/// sweeps, followed by up to `hold` further sweeps at `v = 1` that stop
/// early once the log-likelihood stops moving.
///
/// Locations move slowly under these updates and stay fixed afterwards, so
/// the hold gives them time to settle before the AECM phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule")]
pub struct AnnealSchedule {
    values: Vec<f64>,
    iters_per_v: usize,
    hold: usize,
}

#[derive(Deserialize)]
struct RawSchedule {
    values: Vec<f64>,
    iters_per_v: usize,
    #[serde(default)]
    hold: usize,
}

impl TryFrom<RawSchedule> for AnnealSchedule {
    type Error = PsalmError;

    fn try_from(raw: RawSchedule) -> Result<Self> {
        Ok(Self::new(raw.values, raw.iters_per_v)?.with_hold(raw.hold))
    }
}

/// Sweeps allowed at `v = 1` by the default schedule.
pub const DEFAULT_HOLD: usize = 1000;

/// The hold ends once the log-likelihood has varied by less than the
/// convergence tolerance over this many consecutive sweeps. The
/// regularised sweeps are not monotone, so Aitken's test misfires here.
pub const HOLD_WINDOW: usize = 10;

fn settled(trace: &[f64], window: usize, epsilon: f64) -> bool {
    if trace.len() < window {
        return false;
    }
    let tail = &trace[trace.len() - window..];
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    hi - lo < epsilon
}

impl AnnealSchedule {
    pub fn new(values: Vec<f64>, iters_per_v: usize) -> Result<Self> {
        if values.first() != Some(&0.0) || values.last() != Some(&1.0) {
            return domain("annealing schedule must start at 0 and end at 1");
        }
        if values.windows(2).any(|w| !(w[1] >= w[0])) {
            return domain("annealing schedule must be nondecreasing");
        }
        if iters_per_v == 0 {
            return domain("at least one sweep per annealing value is required");
        }
        Ok(Self {
            values,
            iters_per_v,
            hold: 0,
        })
    }

    pub fn with_hold(mut self, hold: usize) -> Self {
        self.hold = hold;
        self
    }

    /// `steps` equally spaced values from 0 to 1.
    pub fn linear(steps: usize, iters_per_v: usize) -> Result<Self> {
        if steps < 2 {
            return domain("a linear schedule needs at least two values");
        }
        let last = (steps - 1) as f64;
        let values = (0..steps).map(|k| k as f64 / last).collect();
        Self::new(values, iters_per_v)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iters_per_v(&self) -> usize {
        self.iters_per_v
    }

    pub fn hold(&self) -> usize {
        self.hold
    }

    /// Sweeps of the fixed part of the schedule, excluding the hold.
    pub fn sweeps(&self) -> usize {
        self.values.len() * self.iters_per_v
    }
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self::linear(25, 4)
            .expect("default schedule is valid")
            .with_hold(DEFAULT_HOLD)
    }
}

/// How each random start partitions the data before the first M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    /// `G` distinct observations drawn at random; every other observation
    /// joins the nearest one in Euclidean distance.
    #[default]
    NearestSeed,
    /// Each observation drawn uniformly into one of the `G` components.
    Uniform,
}

/// Which log-likelihood the Aitken asymptote is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AitkenGap {
    /// `l∞ − l(t+1)`, the gap to the newest value.
    #[default]
    Newest,
    /// `l∞ − l(t)`.
    Previous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Offset added to the Mahalanobis term of `E[1/W]` while annealing.
    pub psi: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub n_starts: usize,
    pub seed: u64,
    /// Components lighter than this abandon the start; `None` means
    /// `max(q + 1, 3)`.
    pub min_component_size: Option<usize>,
    pub schedule: AnnealSchedule,
    pub aitken_gap: AitkenGap,
    /// Fresh partitions drawn for one start before it is given up.
    pub max_attempts: usize,
    /// Also update the locations during the AECM phase.
    pub update_location: bool,
    pub init: InitMethod,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            psi: 0.01,
            epsilon: 0.01,
            max_iters: 1000,
            n_starts: 10,
            seed: 0,
            min_component_size: None,
            schedule: AnnealSchedule::default(),
            aitken_gap: AitkenGap::Newest,
            max_attempts: 5,
            update_location: false,
            init: InitMethod::NearestSeed,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.psi >= 0.0 && self.psi.is_finite()) {
            return domain(format!("psi must be finite and non-negative, got {}", self.psi));
        }
        if !(self.epsilon > 0.0) {
            return domain(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.n_starts == 0 || self.max_attempts == 0 {
            return domain("at least one start and one attempt per start are required");
        }
        Ok(())
    }

    pub fn min_size(&self, q: usize) -> usize {
        self.min_component_size.unwrap_or((q + 1).max(3))
    }
}

/// Responsibilities and latent-weight moments, each `n × G`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentExpectations {
    pub z: DMatrix<f64>,
    pub e1: DMatrix<f64>,
    pub e2: DMatrix<f64>,
}

impl LatentExpectations {
    /// `n_g = Σ_i ẑ_ig`.
    pub fn group_sizes(&self) -> Vec<f64> {
        self.z.column_iter().map(|c| c.sum()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub starts: usize,
    pub attempts: usize,
    pub degenerate: usize,
    pub singular: usize,
    pub conditioning: usize,
    pub numerical: usize,
    /// Final log-likelihood of each start, `None` where every attempt failed.
    pub start_logliks: Vec<Option<f64>>,
    pub failures: Vec<String>,
}

impl FitDiagnostics {
    fn record(&mut self, err: &PsalmError) {
        match err {
            PsalmError::Degenerate { .. } => self.degenerate += 1,
            PsalmError::SingularPoint { .. } | PsalmError::Singular(_) => self.singular += 1,
            PsalmError::Conditioning(_) => self.conditioning += 1,
            _ => self.numerical += 1,
        }
        const KEEP: usize = 20;
        if self.failures.len() < KEEP {
            self.failures.push(err.to_string());
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "{} attempts: {} degenerate, {} singular, {} ill-conditioned, {} numerical",
            self.attempts, self.degenerate, self.singular, self.conditioning, self.numerical
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: PsalmSpec,
    pub params: ComponentParams,
    pub responsibilities: DMatrix<f64>,
    pub map_labels: Vec<usize>,
    /// Observed log-likelihood after each AECM cycle, starting from the
    /// annealed parameters.
    pub loglik_trace: Vec<f64>,
    /// Observed log-likelihood at the start of each annealing sweep.
    pub anneal_trace: Vec<f64>,
    pub loglik: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub bic: f64,
    pub icl: f64,
    pub converged: bool,
    pub iterations: usize,
    pub start_index: usize,
    pub diagnostics: FitDiagnostics,
}

/// SplitMix64 finaliser.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministically combines a base seed with a path of indices.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(base), |acc, &k| mix(acc ^ mix(k)))
}

/// Uniform random hard partition with every component nonempty.
pub fn init_partition(n: usize, groups: usize, seed: u64) -> Result<Vec<usize>> {
    init_partition_clamped(n, groups, seed, None)
}

fn init_partition_clamped(
    n: usize,
    groups: usize,
    seed: u64,
    known: Option<&[Option<usize>]>,
) -> Result<Vec<usize>> {
    if groups == 0 || groups > n {
        return domain(format!("cannot partition {n} observations into {groups} components"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let labels: Vec<usize> = (0..n)
            .map(|i| match known.and_then(|k| k[i]) {
                Some(g) => g,
                None => rng.random_range(0..groups),
            })
            .collect();
        let mut counts = vec![0usize; groups];
        for &l in &labels {
            counts[l] += 1;
        }
        if counts.iter().all(|&c| c > 0) {
            return Ok(labels);
        }
        let free = known.map_or(n, |k| k.iter().filter(|l| l.is_none()).count());
        let empty = counts.iter().filter(|&&c| c == 0).count();
        if free < empty {
            return domain("too few unlabelled observations to populate every component");
        }
    }
}

/// Partition around `G` random centres. A component with labelled
/// observations is centred on their mean; the others on distinct random
/// observations. Labelled rows keep their labels.
fn nearest_seed_partition(
    rows: &[DVector<f64>],
    groups: usize,
    seed: u64,
    known: Option<&[Option<usize>]>,
) -> Result<Vec<usize>> {
    let n = rows.len();
    if groups == 0 || groups > n {
        return domain(format!("cannot partition {n} observations into {groups} components"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centres: Vec<DVector<f64>> = sample(&mut rng, n, groups)
        .into_iter()
        .map(|i| rows[i].clone())
        .collect();
    if let Some(known) = known {
        let p = rows[0].len();
        let mut sums = vec![DVector::zeros(p); groups];
        let mut counts = vec![0usize; groups];
        for (x, label) in rows.iter().zip(known) {
            if let Some(g) = *label {
                sums[g] += x;
                counts[g] += 1;
            }
        }
        for g in 0..groups {
            if counts[g] > 0 {
                centres[g] = &sums[g] / counts[g] as f64;
            }
        }
    }
    Ok(rows
        .iter()
        .enumerate()
        .map(|(i, x)| match known.and_then(|k| k[i]) {
            Some(g) => g,
            None => {
                let dist: Vec<f64> = centres.iter().map(|c| (x - c).norm_squared()).collect();
                (0..groups)
                    .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))
                    .expect("at least one component")
            }
        })
        .collect())
}

/// Factor loadings from the top `q` eigenpairs of `sg`, with the residual
/// diagonal split into `ω` and a unit-determinant `Δ`.
pub fn init_loadings(sg: &DMatrix<f64>, q: usize) -> Result<ScaleMatrix> {
    let (loadings, residual) = top_loadings(sg, q)?;
    ScaleMatrix::from_psi(loadings, &residual)
}

/// `(Λ, diag{S − ΛΛ'})` with the residual floored at [`VARIANCE_FLOOR`].
fn top_loadings(sg: &DMatrix<f64>, q: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let p = sg.nrows();
    if sg.ncols() != p || q == 0 || q > p {
        return domain(format!("need a square matrix and 1 <= q <= p, got q={q}, p={p}"));
    }
    if sg.iter().any(|v| !v.is_finite()) {
        return Err(PsalmError::Conditioning("scatter matrix is not finite".into()));
    }
    let eig = SymmetricEigen::new(sg.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut loadings = DMatrix::zeros(p, q);
    for (k, &j) in order.iter().take(q).enumerate() {
        let mut v = eig.eigenvectors.column(j).into_owned();
        let (imax, _) = v.iamax_full();
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        loadings.set_column(k, &(v * eig.eigenvalues[j].max(0.0).sqrt()));
    }
    let fitted = &loadings * loadings.transpose();
    let residual = DVector::from_fn(p, |i, _| (sg[(i, i)] - fitted[(i, i)]).max(VARIANCE_FLOOR));
    Ok((loadings, residual))
}

fn rows_of(data: &DataMatrix) -> Vec<DVector<f64>> {
    data.row_iter().map(|r| r.transpose()).collect()
}

fn check_data(data: &DataMatrix, params: &ComponentParams) -> Result<()> {
    if data.nrows() == 0 {
        return domain("data has no observations");
    }
    if data.ncols() != params.dim() {
        return domain(format!(
            "data has {} columns but the model has dimension {}",
            data.ncols(),
            params.dim()
        ));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return domain("data contains non-finite values");
    }
    Ok(())
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// One E-step pass: responsibilities at exponent `v`, latent moments with
/// regulariser `psi`, and the observed (or, with `known`, joint)
/// log-likelihood of the current parameters.
fn evaluate(
    rows: &[DVector<f64>],
    params: &ComponentParams,
    v: f64,
    psi: f64,
    known: Option<&[Option<usize>]>,
) -> Result<(LatentExpectations, f64)> {
    let n = rows.len();
    let groups = params.n_components();
    let kernels = (0..groups)
        .map(|g| {
            let scale = params.assemble_scale(g)?;
            SalKernel::new(&crate::sal::SalParams::new(
                params.locations()[g].clone(),
                params.skewness()[g].clone(),
                scale,
            )?)
        })
        .collect::<Result<Vec<_>>>()?;
    let log_pi: Vec<f64> = params.weights().iter().map(|w| w.ln()).collect();
    let mut z = DMatrix::zeros(n, groups);
    let mut e1 = DMatrix::zeros(n, groups);
    let mut e2 = DMatrix::zeros(n, groups);
    let mut logw = vec![0.0; groups];
    let mut loglik = 0.0;
    for (i, x) in rows.iter().enumerate() {
        for (g, kernel) in kernels.iter().enumerate() {
            let (log_density, m1, m2) = kernel.evaluate(x, psi).map_err(|e| match e {
                PsalmError::Singular(_) => PsalmError::SingularPoint { row: i, component: g },
                other => other,
            })?;
            logw[g] = log_pi[g] + log_density;
            e1[(i, g)] = m1;
            e2[(i, g)] = m2;
        }
        let total = log_sum_exp(&logw);
        if !total.is_finite() {
            return Err(PsalmError::Numerical {
                row: i,
                reason: "density is zero or non-finite under every component".into(),
            });
        }
        match known.and_then(|k| k[i]) {
            Some(label) => {
                z[(i, label)] = 1.0;
                loglik += logw[label];
            }
            None => {
                loglik += total;
                let scaled: Vec<f64> = logw.iter().map(|l| v * l).collect();
                let norm = log_sum_exp(&scaled);
                for g in 0..groups {
                    z[(i, g)] = (scaled[g] - norm).exp();
                }
            }
        }
    }
    if !loglik.is_finite() {
        return Err(PsalmError::Numerical {
            row: 0,
            reason: "log-likelihood is not finite".into(),
        });
    }
    Ok((LatentExpectations { z, e1, e2 }, loglik))
}

/// Annealed E-step: `ẑ* ∝ [π_g ξ(x_i | θ_g)]^v` and `E[1/W]` regularised by `psi`.
pub fn anneal_e_step(
    data: &DataMatrix,
    params: &ComponentParams,
    v: f64,
    psi: f64,
) -> Result<LatentExpectations> {
    check_data(data, params)?;
    if !(0.0..=1.0).contains(&v) {
        return domain(format!("annealing exponent must lie in [0, 1], got {v}"));
    }
    if !(psi >= 0.0 && psi.is_finite()) {
        return domain(format!("psi must be finite and non-negative, got {psi}"));
    }
    Ok(evaluate(&rows_of(data), params, v, psi, None)?.0)
}

/// Standard E-step (`v = 1`, `ψ = 0`).
pub fn e_step(data: &DataMatrix, params: &ComponentParams) -> Result<LatentExpectations> {
    anneal_e_step(data, params, 1.0, 0.0)
}

/// `Σ_i log Σ_g π_g ξ(x_i | θ_g)`.
pub fn observed_loglik(data: &DataMatrix, params: &ComponentParams) -> Result<f64> {
    check_data(data, params)?;
    Ok(evaluate(&rows_of(data), params, 1.0, 0.0, None)?.1)
}

struct GroupSums {
    n: f64,
    /// `Σ ẑ E1`
    w1: f64,
    /// `Σ ẑ E2`
    w2: f64,
    /// `Σ ẑ x`
    sx: DVector<f64>,
    /// `Σ ẑ E2 x`
    sx2: DVector<f64>,
}

fn group_sums(rows: &[DVector<f64>], exp: &LatentExpectations, g: usize) -> GroupSums {
    let p = rows[0].len();
    let mut s = GroupSums {
        n: 0.0,
        w1: 0.0,
        w2: 0.0,
        sx: DVector::zeros(p),
        sx2: DVector::zeros(p),
    };
    for (i, x) in rows.iter().enumerate() {
        let z = exp.z[(i, g)];
        if z == 0.0 {
            continue;
        }
        s.n += z;
        s.w1 += z * exp.e1[(i, g)];
        s.w2 += z * exp.e2[(i, g)];
        s.sx.axpy(z, x, 1.0);
        s.sx2.axpy(z * exp.e2[(i, g)], x, 1.0);
    }
    s
}

fn mixing_weights(sizes: &[f64]) -> Vec<f64> {
    let total: f64 = sizes.iter().sum();
    sizes.iter().map(|s| s / total).collect()
}

fn check_sizes(sizes: &[f64], min_size: f64) -> Result<()> {
    for (g, &s) in sizes.iter().enumerate() {
        if !(s >= min_size) {
            return Err(PsalmError::Degenerate {
                component: g,
                reason: format!("expected size {s:.3} below the minimum {min_size}"),
            });
        }
    }
    Ok(())
}

/// First CM step: `π̂_g = n_g/n` and the joint closed-form `(μ̂_g, α̂_g)`.
pub fn cm_step1(
    data: &DataMatrix,
    exp: &LatentExpectations,
    params: &ComponentParams,
) -> Result<ComponentParams> {
    check_data(data, params)?;
    cm1(&rows_of(data), exp, params, true, 0.0)
}

/// First CM step with the locations held fixed: `π̂_g` and the conditional
/// maximiser `α̂_g = Σ ẑ (x − μ_g) / Σ ẑ E1`.
pub fn cm_step1_fixed_location(
    data: &DataMatrix,
    exp: &LatentExpectations,
    params: &ComponentParams,
) -> Result<ComponentParams> {
    check_data(data, params)?;
    cm1(&rows_of(data), exp, params, false, 0.0)
}

fn cm1(
    rows: &[DVector<f64>],
    exp: &LatentExpectations,
    params: &ComponentParams,
    update_location: bool,
    min_size: f64,
) -> Result<ComponentParams> {
    let groups = params.n_components();
    let mut sizes = Vec::with_capacity(groups);
    let mut locations = Vec::with_capacity(groups);
    let mut skewness = Vec::with_capacity(groups);
    for g in 0..groups {
        let s = group_sums(rows, exp, g);
        if !(s.n > 0.0) || s.n < min_size {
            return Err(PsalmError::Degenerate {
                component: g,
                reason: format!("expected size {:.3} below the minimum {min_size}", s.n),
            });
        }
        if update_location {
            let denom = s.w1 * s.w2 - s.n * s.n;
            if !(denom.abs() > 1e-12 * (s.w1 * s.w2).max(1.0)) {
                return Err(PsalmError::Degenerate {
                    component: g,
                    reason: "location/skewness system is singular".into(),
                });
            }
            let alpha = (&s.sx * s.w2 - &s.sx2 * s.n) / denom;
            let mu = (&s.sx2 * s.w1 - &s.sx * s.n) / denom;
            locations.push(mu);
            skewness.push(alpha);
        } else {
            let mu = params.locations()[g].clone();
            let alpha = (&s.sx - &mu * s.n) / s.w1;
            locations.push(mu);
            skewness.push(alpha);
        }
        sizes.push(s.n);
    }
    if locations.iter().chain(&skewness).any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(PsalmError::Numerical {
            row: 0,
            reason: "location or skewness update is not finite".into(),
        });
    }
    params.with_location_skewness(mixing_weights(&sizes), locations, skewness)
}

/// `S_g = (1/n_g) Σ ẑ E2 (x−μ)(x−μ)' − α r' − r α' + (1/n_g) α α' Σ ẑ E1`
/// with `r = (1/n_g) Σ ẑ (x − μ)`.
pub fn compute_sg(
    data: &DataMatrix,
    exp: &LatentExpectations,
    mu: &DVector<f64>,
    alpha: &DVector<f64>,
    g: usize,
) -> Result<DMatrix<f64>> {
    if g >= exp.z.ncols() || exp.z.nrows() != data.nrows() {
        return domain("expectations do not match the data or component index");
    }
    if mu.len() != data.ncols() || alpha.len() != data.ncols() {
        return domain("location and skewness must match the data dimension");
    }
    let s = scatter(&rows_of(data), exp, mu, alpha, g);
    if !(s.1 > 0.0) {
        return Err(PsalmError::Degenerate {
            component: g,
            reason: "component has zero expected size".into(),
        });
    }
    Ok(s.0)
}

/// `(S_g, n_g)`.
fn scatter(
    rows: &[DVector<f64>],
    exp: &LatentExpectations,
    mu: &DVector<f64>,
    alpha: &DVector<f64>,
    g: usize,
) -> (DMatrix<f64>, f64) {
    let p = mu.len();
    let mut outer = DMatrix::zeros(p, p);
    let mut r = DVector::zeros(p);
    let mut n = 0.0;
    let mut w1 = 0.0;
    for (i, x) in rows.iter().enumerate() {
        let z = exp.z[(i, g)];
        if z == 0.0 {
            continue;
        }
        let d = x - mu;
        outer.ger(z * exp.e2[(i, g)], &d, &d, 1.0);
        r.axpy(z, &d, 1.0);
        n += z;
        w1 += z * exp.e1[(i, g)];
    }
    let r = r / n;
    let mut s = outer / n;
    s.ger(-1.0, alpha, &r, 1.0);
    s.ger(-1.0, &r, alpha, 1.0);
    s.ger(w1 / n, alpha, alpha, 1.0);
    let s = (&s + s.transpose()) * 0.5;
    (s, n)
}

fn cholesky_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| PsalmError::Conditioning(format!("{what} is not positive definite")))
}

/// Splits residual diagonals `m_g` into `(ω, Δ)` storage as the code
/// dictates. `old_delta` is used where `ω_g` and a common `Δ` are updated
/// conditionally on one another.
fn variance_update(
    code: ModelCode,
    residuals: &[DVector<f64>],
    pi: &[f64],
    old_delta: &DeltaParam,
) -> Result<(Shared<f64>, DeltaParam)> {
    let p = residuals[0].len();
    let pf = p as f64;
    let groups = residuals.len();
    let log_geo = |m: &DVector<f64>| m.iter().map(|v| v.ln()).sum::<f64>() / pf;
    let out = match (code.isotropic(), code.shared_delta(), code.shared_omega()) {
        (true, _, false) => (
            Shared::PerGroup(residuals.iter().map(|m| m.mean()).collect()),
            DeltaParam::Identity,
        ),
        (true, _, true) => (
            Shared::Common(residuals.iter().zip(pi).map(|(m, w)| w * m.mean()).sum()),
            DeltaParam::Identity,
        ),
        (false, true, true) => {
            let mut pooled = DVector::zeros(p);
            for (m, w) in residuals.iter().zip(pi) {
                pooled.axpy(*w, m, 1.0);
            }
            let log_omega = log_geo(&pooled);
            let omega = log_omega.exp();
            (
                Shared::Common(omega),
                DeltaParam::Common(pooled.map(|v| (v.ln() - log_omega).exp())),
            )
        }
        (false, true, false) => {
            let delta = old_delta.get(0, p);
            let omegas: Vec<f64> = residuals
                .iter()
                .map(|m| m.component_div(&delta).mean())
                .collect();
            let mut pooled = DVector::zeros(p);
            for g in 0..groups {
                pooled.axpy(pi[g] / omegas[g], &residuals[g], 1.0);
            }
            let log_norm = log_geo(&pooled);
            (
                Shared::PerGroup(omegas),
                DeltaParam::Common(pooled.map(|v| (v.ln() - log_norm).exp())),
            )
        }
        (false, false, true) => {
            let logs: Vec<f64> = residuals.iter().map(log_geo).collect();
            let omega = logs.iter().zip(pi).map(|(l, w)| w * l.exp()).sum();
            let deltas = residuals
                .iter()
                .zip(&logs)
                .map(|(m, l)| m.map(|v| (v.ln() - l).exp()))
                .collect();
            (Shared::Common(omega), DeltaParam::PerGroup(deltas))
        }
        (false, false, false) => {
            let logs: Vec<f64> = residuals.iter().map(log_geo).collect();
            let omegas = logs.iter().map(|l| l.exp()).collect();
            let deltas = residuals
                .iter()
                .zip(&logs)
                .map(|(m, l)| m.map(|v| (v.ln() - l).exp()))
                .collect();
            (Shared::PerGroup(omegas), DeltaParam::PerGroup(deltas))
        }
    };
    let bad_omega = match &out.0 {
        Shared::Common(w) => !(w.is_finite() && *w > 0.0),
        Shared::PerGroup(ws) => ws.iter().any(|w| !(w.is_finite() && *w > 0.0)),
    };
    if bad_omega {
        return Err(PsalmError::Conditioning("variance update is not positive".into()));
    }
    Ok(out)
}

/// Second CM step: loadings, then `ω` and `Δ`, under the model's sharing
/// constraints. `pi` weights the pooled statistics of shared parameters.
pub fn cm_step2(
    sg: &[DMatrix<f64>],
    pi: &[f64],
    params: &ComponentParams,
) -> Result<ComponentParams> {
    let groups = params.n_components();
    let p = params.dim();
    if sg.len() != groups || pi.len() != groups {
        return domain("one scatter matrix and one weight per component required");
    }
    if sg.iter().any(|s| s.nrows() != p || s.ncols() != p) {
        return domain("scatter matrices must be p x p");
    }
    let code = params.code();
    let q = params.n_factors();
    let mut betas = Vec::with_capacity(groups);
    let mut thetas = Vec::with_capacity(groups);
    let mut old_psi = Vec::with_capacity(groups);
    for g in 0..groups {
        let scale = params.assemble_scale(g)?;
        let inv = scale.woodbury_inverse()?;
        let lambda = scale.loadings();
        let beta = lambda.transpose() * inv;
        let theta = DMatrix::identity(q, q) - &beta * lambda + &beta * &sg[g] * beta.transpose();
        betas.push(beta);
        thetas.push((&theta + theta.transpose()) * 0.5);
        old_psi.push(scale.psi());
    }
    let loadings: Vec<DMatrix<f64>> = if code.shared_loadings() {
        let mut common = DMatrix::zeros(p, q);
        let cross: Vec<DMatrix<f64>> = (0..groups)
            .map(|g| &sg[g] * betas[g].transpose())
            .collect();
        for j in 0..p {
            let mut lhs = DMatrix::zeros(q, q);
            let mut rhs = DVector::zeros(q);
            for g in 0..groups {
                let w = pi[g] / old_psi[g][j];
                lhs += &thetas[g] * w;
                rhs.axpy(w, &cross[g].row(j).transpose(), 1.0);
            }
            let row = lhs
                .cholesky()
                .ok_or_else(|| PsalmError::Conditioning("pooled factor moment is singular".into()))?
                .solve(&rhs);
            common.set_row(j, &row.transpose());
        }
        vec![common; groups]
    } else {
        (0..groups)
            .map(|g| Ok(&sg[g] * betas[g].transpose() * cholesky_inverse(&thetas[g], "factor moment")?))
            .collect::<Result<_>>()?
    };
    let residuals: Vec<DVector<f64>> = (0..groups)
        .map(|g| {
            let l = &loadings[g];
            let m = &sg[g] - (l * &betas[g] * &sg[g]) * 2.0 + l * &thetas[g] * l.transpose();
            DVector::from_fn(p, |i, _| m[(i, i)].max(VARIANCE_FLOOR))
        })
        .collect();
    if loadings.iter().any(|l| l.iter().any(|v| !v.is_finite())) {
        return Err(PsalmError::Conditioning("loadings update is not finite".into()));
    }
    let (omega, delta) = variance_update(code, &residuals, pi, params.delta())?;
    let loadings = if code.shared_loadings() {
        Shared::Common(loadings.into_iter().next().expect("at least one component"))
    } else {
        Shared::PerGroup(loadings)
    };
    params.with_scale(loadings, omega, delta)
}

/// Aitken's acceleration stopping rule comparing the asymptotic estimate
/// with the newest log-likelihood.
pub fn aitken_converged(l_prev2: f64, l_prev: f64, l_curr: f64, epsilon: f64) -> bool {
    aitken_converged_with(l_prev2, l_prev, l_curr, epsilon, AitkenGap::Newest)
}

pub fn aitken_converged_with(
    l_prev2: f64,
    l_prev: f64,
    l_curr: f64,
    epsilon: f64,
    gap: AitkenGap,
) -> bool {
    let step = l_prev - l_prev2;
    if step == 0.0 {
        return (l_curr - l_prev).abs() < epsilon;
    }
    let a = (l_curr - l_prev) / step;
    let l_inf = l_prev + (l_curr - l_prev) / (1.0 - a);
    let diff = match gap {
        AitkenGap::Newest => l_inf - l_curr,
        AitkenGap::Previous => l_inf - l_prev,
    };
    (0.0..epsilon).contains(&diff)
}

/// Initial parameters from a hard partition: group means, zero skewness and
/// eigen-decomposition loadings.
fn initial_params(
    rows: &[DVector<f64>],
    labels: &[usize],
    spec: &PsalmSpec,
) -> Result<ComponentParams> {
    let groups = spec.groups;
    let p = rows[0].len();
    let q = spec.factors;
    let mut sizes = vec![0.0; groups];
    let mut means = vec![DVector::zeros(p); groups];
    for (x, &l) in rows.iter().zip(labels) {
        sizes[l] += 1.0;
        means[l] += x;
    }
    for g in 0..groups {
        means[g] /= sizes[g];
    }
    let mut scatters = vec![DMatrix::zeros(p, p); groups];
    for (x, &l) in rows.iter().zip(labels) {
        let d = x - &means[l];
        scatters[l].ger(1.0, &d, &d, 1.0);
    }
    for g in 0..groups {
        scatters[g] /= sizes[g];
    }
    let pi = mixing_weights(&sizes);
    let (loadings, residuals) = if spec.code.shared_loadings() {
        let mut pooled = DMatrix::zeros(p, p);
        for g in 0..groups {
            pooled += &scatters[g] * pi[g];
        }
        let (l, _) = top_loadings(&pooled, q)?;
        let fitted = &l * l.transpose();
        let residuals = scatters
            .iter()
            .map(|s| DVector::from_fn(p, |i, _| (s[(i, i)] - fitted[(i, i)]).max(VARIANCE_FLOOR)))
            .collect::<Vec<_>>();
        (Shared::Common(l), residuals)
    } else {
        let (ls, rs): (Vec<_>, Vec<_>) = scatters
            .iter()
            .map(|s| top_loadings(s, q))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        (Shared::PerGroup(ls), rs)
    };
    let start_delta = if spec.code.isotropic() {
        DeltaParam::Identity
    } else {
        DeltaParam::Common(DVector::from_element(p, 1.0))
    };
    let (omega, delta) = variance_update(spec.code, &residuals, &pi, &start_delta)?;
    ComponentParams::new(
        spec.code,
        pi,
        means,
        vec![DVector::zeros(p); groups],
        loadings,
        omega,
        delta,
    )
}

struct StartOutcome {
    params: ComponentParams,
    expectations: LatentExpectations,
    loglik_trace: Vec<f64>,
    anneal_trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

struct Engine<'a> {
    rows: Vec<DVector<f64>>,
    spec: PsalmSpec,
    config: &'a FitConfig,
    known: Option<&'a [Option<usize>]>,
}

impl Engine<'_> {
    fn min_size(&self) -> f64 {
        self.config.min_size(self.spec.factors) as f64
    }

    /// E-step, CM-1, second E-step, then CM-2.
    fn cycle(
        &self,
        params: &ComponentParams,
        exp: &LatentExpectations,
        v: f64,
        psi: f64,
        update_location: bool,
    ) -> Result<ComponentParams> {
        let params = cm1(&self.rows, exp, params, update_location, self.min_size())?;
        let (exp, _) = evaluate(&self.rows, &params, v, psi, self.known)?;
        let groups = params.n_components();
        let mut sg = Vec::with_capacity(groups);
        let mut sizes = Vec::with_capacity(groups);
        for g in 0..groups {
            let (s, n) = scatter(
                &self.rows,
                &exp,
                &params.locations()[g],
                &params.skewness()[g],
                g,
            );
            sg.push(s);
            sizes.push(n);
        }
        check_sizes(&sizes, self.min_size())?;
        cm_step2(&sg, &mixing_weights(&sizes), &params)
    }

    fn run(&self, seed: u64) -> Result<StartOutcome> {
        let labels = match self.config.init {
            InitMethod::NearestSeed => {
                nearest_seed_partition(&self.rows, self.spec.groups, seed, self.known)?
            }
            InitMethod::Uniform => {
                init_partition_clamped(self.rows.len(), self.spec.groups, seed, self.known)?
            }
        };
        let mut params = initial_params(&self.rows, &labels, &self.spec)?;
        let schedule = &self.config.schedule;
        let mut anneal_trace = Vec::with_capacity(schedule.sweeps());
        for &v in schedule.values() {
            for _ in 0..schedule.iters_per_v() {
                let (exp, loglik) = evaluate(&self.rows, &params, v, self.config.psi, self.known)?;
                anneal_trace.push(loglik);
                params = self.cycle(&params, &exp, v, self.config.psi, true)?;
            }
        }
        for _ in 0..schedule.hold() {
            let (exp, loglik) = evaluate(&self.rows, &params, 1.0, self.config.psi, self.known)?;
            anneal_trace.push(loglik);
            if settled(&anneal_trace, HOLD_WINDOW, self.config.epsilon) {
                break;
            }
            params = self.cycle(&params, &exp, 1.0, self.config.psi, true)?;
        }
        let update_location = self.config.update_location;
        let (mut exp, loglik) = evaluate(&self.rows, &params, 1.0, 0.0, self.known)?;
        let mut loglik_trace = vec![loglik];
        let mut converged = false;
        let mut iterations = 0;
        while iterations < self.config.max_iters {
            let next = self.cycle(&params, &exp, 1.0, 0.0, update_location)?;
            let (next_exp, loglik) = evaluate(&self.rows, &next, 1.0, 0.0, self.known)?;
            params = next;
            exp = next_exp;
            loglik_trace.push(loglik);
            iterations += 1;
            if let [.., l0, l1, l2] = loglik_trace[..] {
                if aitken_converged_with(l0, l1, l2, self.config.epsilon, self.config.aitken_gap) {
                    converged = true;
                    break;
                }
            }
        }
        Ok(StartOutcome {
            params,
            expectations: exp,
            loglik_trace,
            anneal_trace,
            converged,
            iterations,
        })
    }
}

/// Fits one model from `config.n_starts` random starts and keeps the start
/// with the largest final log-likelihood.
pub fn fit(data: &DataMatrix, spec: &PsalmSpec, config: &FitConfig) -> Result<FitResult> {
    fit_partially_labelled(data, spec, config, None)
}

pub(crate) fn fit_partially_labelled(
    data: &DataMatrix,
    spec: &PsalmSpec,
    config: &FitConfig,
    known: Option<&[Option<usize>]>,
) -> Result<FitResult> {
    config.validate()?;
    let (n, p) = data.shape();
    if n == 0 || p == 0 {
        return domain("data must have at least one row and one column");
    }
    if data.iter().any(|v| !v.is_finite()) {
        return domain("data contains non-finite values");
    }
    if spec.factors > p {
        return domain(format!("q = {} exceeds the dimension p = {p}", spec.factors));
    }
    if spec.groups > n {
        return domain(format!("G = {} exceeds the number of observations {n}", spec.groups));
    }
    if let Some(k) = known {
        if k.len() != n || k.iter().flatten().any(|&g| g >= spec.groups) {
            return domain("known labels must cover every row and lie below G");
        }
    }
    let engine = Engine {
        rows: rows_of(data),
        spec: *spec,
        config,
        known,
    };
    let mut diagnostics = FitDiagnostics {
        starts: config.n_starts,
        ..Default::default()
    };
    let mut best: Option<(usize, StartOutcome)> = None;
    for start in 0..config.n_starts {
        let mut outcome = None;
        for attempt in 0..config.max_attempts {
            diagnostics.attempts += 1;
            let seed = derive_seed(config.seed, &[start as u64, attempt as u64]);
            match engine.run(seed) {
                Ok(o) => {
                    outcome = Some(o);
                    break;
                }
                Err(e) => diagnostics.record(&e),
            }
        }
        diagnostics
            .start_logliks
            .push(outcome.as_ref().map(|o| *o.loglik_trace.last().expect("trace is nonempty")));
        if let Some(o) = outcome {
            let value = *o.loglik_trace.last().expect("trace is nonempty");
            let better = best
                .as_ref()
                .is_none_or(|(_, b)| value > *b.loglik_trace.last().expect("trace is nonempty"));
            if better {
                best = Some((start, o));
            }
        }
    }
    let (start_index, outcome) = best.ok_or_else(|| PsalmError::FitFailed {
        starts: config.n_starts,
        diagnostics: diagnostics.summary(),
    })?;
    let loglik = *outcome.loglik_trace.last().expect("trace is nonempty");
    let n_params = total_free_params(spec.code, p, spec.factors, spec.groups)?;
    let bic_value = bic(loglik, n_params, n);
    let responsibilities = outcome.expectations.z;
    let icl_value = icl(bic_value, &responsibilities)?;
    let map_labels = map_classify(&responsibilities);
    Ok(FitResult {
        spec: *spec,
        params: outcome.params,
        responsibilities,
        map_labels,
        loglik_trace: outcome.loglik_trace,
        anneal_trace: outcome.anneal_trace,
        loglik,
        n_params,
        n_obs: n,
        bic: bic_value,
        icl: icl_value,
        converged: outcome.converged,
        iterations: outcome.iterations,
        start_index,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settled_needs_a_full_quiet_window() {
        assert!(!settled(&[1.0, 1.0], 3, 0.1));
        assert!(settled(&[0.0, 5.0, 5.01, 5.02, 5.0], 3, 0.1));
        assert!(!settled(&[5.0, 5.2, 5.0], 3, 0.1));
    }

    #[test]
    fn aitken_on_a_geometric_sequence() {
        // l_t = −1 − 0.5^t has asymptote −1.
        let (a, b, c) = (-1.5, -1.25, -1.125);
        assert!(aitken_converged(a, b, c, 0.2));
        assert!(!aitken_converged(a, b, c, 0.1));
        assert!(!aitken_converged_with(a, b, c, 0.2, AitkenGap::Previous));
        assert!(aitken_converged_with(a, b, c, 0.3, AitkenGap::Previous));
        assert!(aitken_converged(-2.0, -2.0, -2.0, 1e-9));
    }

    #[test]
    fn uniform_partition_fills_every_component() {
        let labels = init_partition(7, 3, 11).unwrap();
        for g in 0..3 {
            assert!(labels.contains(&g));
        }
        assert_eq!(labels, init_partition(7, 3, 11).unwrap());
        assert!(init_partition(2, 3, 0).is_err());
    }

    fn two_clusters() -> Vec<DVector<f64>> {
        (0..20)
            .map(|i| {
                let shift = if i < 10 { 0.0 } else { 100.0 };
                DVector::from_vec(vec![shift + (i % 10) as f64 * 0.1, shift])
            })
            .collect()
    }

    #[test]
    fn nearest_seed_separates_distant_clusters() {
        let rows = two_clusters();
        let uniform = |l: &[usize]| l.iter().all(|&g| g == l[0]);
        let mut separated = 0;
        for seed in 0..20 {
            let labels = nearest_seed_partition(&rows, 2, seed, None).unwrap();
            // With both centres in one cluster the other stays whole.
            assert!(uniform(&labels[..10]) || uniform(&labels[10..]));
            if uniform(&labels[..10]) && uniform(&labels[10..]) && labels[0] != labels[10] {
                separated += 1;
            }
        }
        assert!(separated >= 5, "only {separated} of 20 seeds split the clusters");
        assert!(nearest_seed_partition(&rows, 21, 0, None).is_err());
    }

    #[test]
    fn nearest_seed_keeps_known_labels() {
        let rows = two_clusters();
        let mut known = vec![None; 20];
        known[0] = Some(1);
        known[15] = Some(0);
        let labels = nearest_seed_partition(&rows, 2, 3, Some(&known)).unwrap();
        assert!(labels[..10].iter().all(|&l| l == 1));
        assert!(labels[10..].iter().all(|&l| l == 0));
    }

    #[test]
    fn schedule_defaults_and_serde() {
        let s = AnnealSchedule::default();
        assert_eq!(s.values().len(), 25);
        assert_eq!(s.iters_per_v(), 4);
        assert_eq!(s.sweeps(), 100);
        assert_eq!(s.hold(), DEFAULT_HOLD);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<AnnealSchedule>(&json).unwrap(), s);
        let old: AnnealSchedule =
            serde_json::from_str(r#"{"values":[0.0,0.5,1.0],"iters_per_v":2}"#).unwrap();
        assert_eq!(old.hold(), 0);
        assert!(serde_json::from_str::<AnnealSchedule>(r#"{"values":[0.5,1.0],"iters_per_v":2}"#).is_err());
        assert!(AnnealSchedule::new(vec![0.0, 0.7, 0.3, 1.0], 1).is_err());
        assert!(AnnealSchedule::linear(1, 1).is_err());
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = FitConfig::default();
        assert_eq!(c.init, InitMethod::NearestSeed);
        assert_eq!(c.psi, 0.01);
        assert!(c.validate().is_ok());
        assert_eq!(c.min_size(1), 3);
        assert_eq!(c.min_size(4), 5);
        assert!(FitConfig { psi: -1.0, ..c.clone() }.validate().is_err());
        assert!(FitConfig { epsilon: 0.0, ..c.clone() }.validate().is_err());
        assert!(FitConfig { n_starts: 0, ..c }.validate().is_err());
        assert_eq!(serde_json::to_string(&InitMethod::NearestSeed).unwrap(), "\"nearest_seed\"");
    }

    #[test]
    fn derived_seeds_are_deterministic_and_spread() {
        assert_eq!(derive_seed(5, &[1, 2]), derive_seed(5, &[1, 2]));
        assert_ne!(derive_seed(5, &[1, 2]), derive_seed(5, &[2, 1]));
        assert_ne!(derive_seed(5, &[]), derive_seed(6, &[]));
    }
}
