//! The twelve constrained scale structures `Σ_g = Λ_g Λ_g' + ω_g Δ_g`,
//! their parameter containers and free-parameter counts.
//!
//! A model code has four letters, each `C` (constrained) or `U`
//! (unconstrained), answering in order: are the loadings shared, is the
//! diagonal `Δ` shared, is the scalar `ω` shared, and is `Δ` the identity.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{domain, PsalmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelCode {
    shared_loadings: bool,
    shared_delta: bool,
    shared_omega: bool,
    isotropic: bool,
}

impl ModelCode {
    /// All members of the family, in table order.
    pub const ALL: [ModelCode; 12] = [
        ModelCode::from_letters(true, true, true, true),
        ModelCode::from_letters(true, true, false, true),
        ModelCode::from_letters(false, true, true, true),
        ModelCode::from_letters(false, true, false, true),
        ModelCode::from_letters(true, true, true, false),
        ModelCode::from_letters(true, true, false, false),
        ModelCode::from_letters(false, true, true, false),
        ModelCode::from_letters(false, true, false, false),
        ModelCode::from_letters(true, false, true, false),
        ModelCode::from_letters(true, false, false, false),
        ModelCode::from_letters(false, false, true, false),
        ModelCode::from_letters(false, false, false, false),
    ];

    const fn from_letters(
        shared_loadings: bool,
        shared_delta: bool,
        shared_omega: bool,
        isotropic: bool,
    ) -> Self {
        Self {
            shared_loadings,
            shared_delta,
            shared_omega,
            isotropic,
        }
    }

    /// Accepts exactly the twelve valid codes, case-insensitively.
    pub fn parse(text: &str) -> Result<Self> {
        let upper = text.trim().to_ascii_uppercase();
        let invalid = || PsalmError::ModelCode {
            code: text.to_string(),
            valid: Self::ALL
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(", "),
        };
        let letters: Vec<bool> = upper
            .chars()
            .map(|c| match c {
                'C' => Ok(true),
                'U' => Ok(false),
                _ => Err(invalid()),
            })
            .collect::<Result<_>>()?;
        if letters.len() != 4 {
            return Err(invalid());
        }
        let code = Self::from_letters(letters[0], letters[1], letters[2], letters[3]);
        // Δ = I is a special case of a shared Δ.
        if code.isotropic && !code.shared_delta {
            return Err(invalid());
        }
        Ok(code)
    }

    pub fn shared_loadings(&self) -> bool {
        self.shared_loadings
    }

    pub fn shared_delta(&self) -> bool {
        self.shared_delta
    }

    pub fn shared_omega(&self) -> bool {
        self.shared_omega
    }

    pub fn isotropic(&self) -> bool {
        self.isotropic
    }

    /// Position in [`ModelCode::ALL`].
    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|c| c == self).expect("constructible codes are all listed")
    }
}

impl fmt::Display for ModelCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let letter = |b: bool| if b { 'C' } else { 'U' };
        write!(
            f,
            "{}{}{}{}",
            letter(self.shared_loadings),
            letter(self.shared_delta),
            letter(self.shared_omega),
            letter(self.isotropic)
        )
    }
}

impl FromStr for ModelCode {
    type Err = PsalmError;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl Serialize for ModelCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// One component's scale `Σ = Λ Λ' + ω Δ` in factored form.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleMatrix {
    loadings: DMatrix<f64>,
    omega: f64,
    delta: DVector<f64>,
}

const UNIT_DET_TOL: f64 = 1e-10;

impl ScaleMatrix {
    pub fn new(loadings: DMatrix<f64>, omega: f64, delta: DVector<f64>) -> Result<Self> {
        if loadings.nrows() != delta.len() {
            return domain(format!(
                "loadings have {} rows but delta has length {}",
                loadings.nrows(),
                delta.len()
            ));
        }
        if !(omega.is_finite() && omega > 0.0) {
            return domain(format!("omega must be positive, got {omega}"));
        }
        if delta.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return domain("delta entries must be positive");
        }
        if loadings.iter().any(|v| !v.is_finite()) {
            return domain("loadings must be finite");
        }
        let det: f64 = delta.iter().product();
        if (det - 1.0).abs() > UNIT_DET_TOL {
            return domain(format!("delta must have unit determinant, got {det}"));
        }
        Ok(Self {
            loadings,
            omega,
            delta,
        })
    }

    /// Splits a positive diagonal `Ψ` into `ω = |Ψ|^{1/p}` and `Δ = Ψ / ω`.
    pub fn from_psi(loadings: DMatrix<f64>, psi: &DVector<f64>) -> Result<Self> {
        let (omega, delta) = split_psi(psi)?;
        Self::new(loadings, omega, delta)
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn delta(&self) -> &DVector<f64> {
        &self.delta
    }

    pub fn dim(&self) -> usize {
        self.delta.len()
    }

    pub fn n_factors(&self) -> usize {
        self.loadings.ncols()
    }

    /// Diagonal of `ω Δ`.
    pub fn psi(&self) -> DVector<f64> {
        &self.delta * self.omega
    }

    /// Dense `Λ Λ' + ω Δ`.
    pub fn dense(&self) -> DMatrix<f64> {
        let mut sigma = &self.loadings * self.loadings.transpose();
        for (j, psi) in self.psi().iter().enumerate() {
            sigma[(j, j)] += psi;
        }
        sigma
    }

    /// `Σ⁻¹` and `ln|Σ|` through the `q × q` capacitance matrix
    /// `I_q + Λ' (ωΔ)⁻¹ Λ`; no dense `p × p` matrix is ever inverted.
    pub fn factor(&self) -> Result<ScaleFactor> {
        let p = self.dim();
        let q = self.n_factors();
        let d_inv = self.psi().map(|v| 1.0 / v);
        let mut scaled = self.loadings.clone();
        for (j, mut row) in scaled.row_iter_mut().enumerate() {
            row *= d_inv[j];
        }
        let capacitance = DMatrix::<f64>::identity(q, q) + self.loadings.transpose() * &scaled;
        if capacitance.iter().any(|v| !v.is_finite()) {
            return Err(PsalmError::Conditioning("non-finite capacitance matrix".into()));
        }
        let chol = capacitance.cholesky().ok_or_else(|| {
            PsalmError::Conditioning("capacitance matrix is not positive definite".into())
        })?;
        let mut inverse = -(&scaled * chol.solve(&scaled.transpose()));
        for j in 0..p {
            inverse[(j, j)] += d_inv[j];
        }
        let log_det_cap: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_det = self.psi().iter().map(|v| v.ln()).sum::<f64>() + log_det_cap;
        Ok(ScaleFactor { inverse, log_det })
    }

    pub fn woodbury_inverse(&self) -> Result<DMatrix<f64>> {
        Ok(self.factor()?.inverse)
    }

    pub fn woodbury_logdet(&self) -> Result<f64> {
        Ok(self.factor()?.log_det)
    }
}

/// Precomputed inverse and log-determinant of a [`ScaleMatrix`].
#[derive(Debug, Clone)]
pub struct ScaleFactor {
    pub inverse: DMatrix<f64>,
    pub log_det: f64,
}

impl ScaleFactor {
    /// `v' Σ⁻¹ w`.
    pub fn bilinear(&self, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        v.dot(&(&self.inverse * w))
    }
}

/// Splits a positive diagonal into its geometric mean and a unit-determinant
/// remainder.
pub fn split_psi(psi: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    if psi.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return domain("diagonal entries must be finite and positive");
    }
    let log_mean = psi.iter().map(|v| v.ln()).sum::<f64>() / psi.len() as f64;
    let omega = log_mean.exp();
    let delta = psi.map(|v| (v.ln() - log_mean).exp());
    Ok((omega, delta))
}

/// A parameter that is either common to all components or stored per
/// component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shared<T> {
    Common(T),
    PerGroup(Vec<T>),
}

impl<T> Shared<T> {
    pub fn get(&self, g: usize) -> &T {
        match self {
            Shared::Common(v) => v,
            Shared::PerGroup(vs) => &vs[g],
        }
    }

    pub fn is_common(&self) -> bool {
        matches!(self, Shared::Common(_))
    }

    fn len_ok(&self, groups: usize) -> bool {
        match self {
            Shared::Common(_) => true,
            Shared::PerGroup(vs) => vs.len() == groups,
        }
    }
}

/// Storage for the unit-determinant diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaParam {
    Identity,
    Common(DVector<f64>),
    PerGroup(Vec<DVector<f64>>),
}

impl DeltaParam {
    pub fn get(&self, g: usize, p: usize) -> DVector<f64> {
        match self {
            DeltaParam::Identity => DVector::from_element(p, 1.0),
            DeltaParam::Common(d) => d.clone(),
            DeltaParam::PerGroup(ds) => ds[g].clone(),
        }
    }
}

/// Mixing weights, locations, skewness and constrained scale parts of a
/// fitted or candidate mixture.
///
/// Shared parameters are stored exactly once, so a snapshot cannot violate
/// its model code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    code: ModelCode,
    weights: Vec<f64>,
    locations: Vec<DVector<f64>>,
    skewness: Vec<DVector<f64>>,
    loadings: Shared<DMatrix<f64>>,
    omega: Shared<f64>,
    delta: DeltaParam,
}

impl ComponentParams {
    pub fn new(
        code: ModelCode,
        weights: Vec<f64>,
        locations: Vec<DVector<f64>>,
        skewness: Vec<DVector<f64>>,
        loadings: Shared<DMatrix<f64>>,
        omega: Shared<f64>,
        delta: DeltaParam,
    ) -> Result<Self> {
        let groups = weights.len();
        if groups == 0 {
            return domain("at least one component is required");
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return domain("mixing weights must be positive");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return domain(format!("mixing weights sum to {total}, expected 1"));
        }
        if locations.len() != groups || skewness.len() != groups {
            return domain("one location and one skewness vector per component required");
        }
        let p = locations[0].len();
        if locations.iter().chain(&skewness).any(|v| v.len() != p) {
            return domain("location and skewness vectors must all have the same dimension");
        }
        if code.shared_loadings() != loadings.is_common() || !loadings.len_ok(groups) {
            return domain(format!("loadings storage does not match model {code}"));
        }
        if code.shared_omega() != omega.is_common() || !omega.len_ok(groups) {
            return domain(format!("omega storage does not match model {code}"));
        }
        let delta_ok = match (&delta, code.isotropic(), code.shared_delta()) {
            (DeltaParam::Identity, true, _) => true,
            (DeltaParam::Common(d), false, true) => d.len() == p,
            (DeltaParam::PerGroup(ds), false, false) => {
                ds.len() == groups && ds.iter().all(|d| d.len() == p)
            }
            _ => false,
        };
        if !delta_ok {
            return domain(format!("delta storage does not match model {code}"));
        }
        let params = Self {
            code,
            weights,
            locations,
            skewness,
            loadings,
            omega,
            delta,
        };
        for g in 0..groups {
            let l = params.loadings.get(g);
            if l.nrows() != p || l.ncols() == 0 || l.ncols() > p {
                return domain("loadings must be p x q with 1 <= q <= p");
            }
            params.assemble_scale(g)?;
        }
        Ok(params)
    }

    pub fn code(&self) -> ModelCode {
        self.code
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.locations[0].len()
    }

    pub fn n_factors(&self) -> usize {
        self.loadings.get(0).ncols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn locations(&self) -> &[DVector<f64>] {
        &self.locations
    }

    pub fn skewness(&self) -> &[DVector<f64>] {
        &self.skewness
    }

    pub fn loadings(&self) -> &Shared<DMatrix<f64>> {
        &self.loadings
    }

    pub fn omega(&self) -> &Shared<f64> {
        &self.omega
    }

    pub fn delta(&self) -> &DeltaParam {
        &self.delta
    }

    /// The `(Λ, ω, Δ)` triple in effect for component `g`.
    pub fn assemble_scale(&self, g: usize) -> Result<ScaleMatrix> {
        if g >= self.n_components() {
            return domain(format!(
                "component index {g} out of range for {} components",
                self.n_components()
            ));
        }
        ScaleMatrix::new(
            self.loadings.get(g).clone(),
            *self.omega.get(g),
            self.delta.get(g, self.dim()),
        )
    }

    /// A copy with new weights, locations and skewness.
    pub fn with_location_skewness(
        &self,
        weights: Vec<f64>,
        locations: Vec<DVector<f64>>,
        skewness: Vec<DVector<f64>>,
    ) -> Result<Self> {
        Self::new(
            self.code,
            weights,
            locations,
            skewness,
            self.loadings.clone(),
            self.omega.clone(),
            self.delta.clone(),
        )
    }

    /// A copy with new scale parts.
    pub fn with_scale(
        &self,
        loadings: Shared<DMatrix<f64>>,
        omega: Shared<f64>,
        delta: DeltaParam,
    ) -> Result<Self> {
        Self::new(
            self.code,
            self.weights.clone(),
            self.locations.clone(),
            self.skewness.clone(),
            loadings,
            omega,
            delta,
        )
    }
}

/// A model code with its component and factor counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PsalmSpec {
    pub code: ModelCode,
    pub groups: usize,
    pub factors: usize,
}

impl PsalmSpec {
    pub fn new(code: ModelCode, groups: usize, factors: usize) -> Result<Self> {
        if groups == 0 {
            return domain("at least one component is required");
        }
        if factors == 0 {
            return domain("at least one factor is required");
        }
        Ok(Self {
            code,
            groups,
            factors,
        })
    }
}

impl fmt::Display for PsalmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} G={} q={}", self.code, self.groups, self.factors)
    }
}

fn check_dims(p: usize, q: usize, groups: usize) -> Result<()> {
    if q == 0 || q > p {
        return domain(format!("number of factors must satisfy 1 <= q <= p, got q={q}, p={p}"));
    }
    if groups == 0 {
        return domain("at least one component is required");
    }
    Ok(())
}

/// Number of free parameters in the scale matrices of a model.
pub fn free_scale_params(code: ModelCode, p: usize, q: usize, groups: usize) -> Result<usize> {
    check_dims(p, q, groups)?;
    let per_loading = p * q - q * (q - 1) / 2;
    let loadings = if code.shared_loadings() {
        per_loading
    } else {
        groups * per_loading
    };
    let variances = match (code.isotropic(), code.shared_delta(), code.shared_omega()) {
        (true, _, true) => 1,
        (true, _, false) => groups,
        (false, true, true) => p,
        (false, true, false) => groups + (p - 1),
        (false, false, true) => 1 + groups * (p - 1),
        (false, false, false) => groups * p,
    };
    Ok(loadings + variances)
}

/// Mixing weights, locations, skewness and scale parameters together.
pub fn total_free_params(code: ModelCode, p: usize, q: usize, groups: usize) -> Result<usize> {
    Ok((groups - 1) + 2 * groups * p + free_scale_params(code, p, q, groups)?)
}
