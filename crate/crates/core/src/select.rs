//! Information criteria, MAP labelling and grid search over
//! `(model code, G, q)`.

use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, PsalmError, Result};
use crate::estim::{derive_seed, fit, DataMatrix, FitConfig, FitResult};
use crate::family::{ModelCode, PsalmSpec};

/// `2l − ρ ln n`; larger is better.
pub fn bic(loglik: f64, n_params: usize, n_obs: usize) -> f64 {
    2.0 * loglik - n_params as f64 * (n_obs as f64).ln()
}

/// BIC plus `Σ_i ln ẑ_{i, MAP(i)}`, the log responsibility of each
/// observation's assigned component.
pub fn icl(bic: f64, responsibilities: &DMatrix<f64>) -> Result<f64> {
    let labels = map_classify(responsibilities);
    let mut penalty = 0.0;
    for (i, &g) in labels.iter().enumerate() {
        let z = responsibilities[(i, g)];
        if !(z > 0.0) {
            return domain(format!("row {i} has no positive responsibility"));
        }
        penalty += z.ln();
    }
    Ok(bic + penalty)
}

/// Row-wise argmax; ties go to the lowest component index.
pub fn map_classify(responsibilities: &DMatrix<f64>) -> Vec<usize> {
    responsibilities
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (g, &z) in row.iter().enumerate() {
                if z > row[best] {
                    best = g;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Bic,
    Icl,
}

impl Criterion {
    pub fn score(&self, result: &FitResult) -> f64 {
        match self {
            Criterion::Bic => result.bic,
            Criterion::Icl => result.icl,
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = PsalmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bic" => Ok(Criterion::Bic),
            "icl" => Ok(Criterion::Icl),
            _ => Err(PsalmError::Usage(format!("unknown criterion `{s}`, expected bic or icl"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    codes: Vec<ModelCode>,
    groups: RangeInclusive<usize>,
    factors: RangeInclusive<usize>,
    criterion: Criterion,
}

impl SearchGrid {
    pub fn new(
        codes: Vec<ModelCode>,
        groups: RangeInclusive<usize>,
        factors: RangeInclusive<usize>,
        criterion: Criterion,
    ) -> Result<Self> {
        if codes.is_empty() {
            return domain("search grid needs at least one model code");
        }
        if groups.is_empty() || *groups.start() == 0 {
            return domain("component range must be nonempty and start at 1 or more");
        }
        if factors.is_empty() || *factors.start() == 0 {
            return domain("factor range must be nonempty and start at 1 or more");
        }
        Ok(Self {
            codes,
            groups,
            factors,
            criterion,
        })
    }

    pub fn codes(&self) -> &[ModelCode] {
        &self.codes
    }

    pub fn groups(&self) -> &RangeInclusive<usize> {
        &self.groups
    }

    pub fn factors(&self) -> &RangeInclusive<usize> {
        &self.factors
    }

    pub fn criterion(&self) -> Criterion {
        self.criterion
    }

    /// Every cell in code-major order.
    pub fn cells(&self) -> Vec<PsalmSpec> {
        let mut cells = Vec::new();
        for &code in &self.codes {
            for groups in self.groups.clone() {
                for factors in self.factors.clone() {
                    cells.push(PsalmSpec {
                        code,
                        groups,
                        factors,
                    });
                }
            }
        }
        cells
    }
}

/// Outcome of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub spec: PsalmSpec,
    pub seed: u64,
    pub result: std::result::Result<FitResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub criterion: Criterion,
    /// Successful fits, best first.
    pub ranked: Vec<FitResult>,
    pub failures: Vec<CellOutcome>,
}

impl SearchResult {
    pub fn best(&self) -> &FitResult {
        &self.ranked[0]
    }

    /// The same fits ordered by another criterion.
    pub fn reranked(&self, criterion: Criterion) -> Vec<&FitResult> {
        let mut out: Vec<&FitResult> = self.ranked.iter().collect();
        sort_by_criterion(&mut out, criterion);
        out
    }
}

fn sort_by_criterion(results: &mut [&FitResult], criterion: Criterion) {
    results.sort_by(|a, b| criterion.score(b).total_cmp(&criterion.score(a)));
}

/// Seed of one grid cell.
pub fn cell_seed(base: u64, spec: &PsalmSpec) -> u64 {
    derive_seed(
        base,
        &[spec.code.index() as u64, spec.groups as u64, spec.factors as u64],
    )
}

/// Fits every cell of the grid concurrently and ranks the successful fits.
pub fn grid_search(data: &DataMatrix, grid: &SearchGrid, config: &FitConfig) -> Result<SearchResult> {
    config.validate()?;
    if *grid.factors.end() > data.ncols() {
        return domain(format!(
            "largest factor count {} exceeds the dimension {}",
            grid.factors.end(),
            data.ncols()
        ));
    }
    let outcomes: Vec<CellOutcome> = grid
        .cells()
        .into_par_iter()
        .map(|spec| {
            let seed = cell_seed(config.seed, &spec);
            let cell_config = FitConfig {
                seed,
                ..config.clone()
            };
            let result = fit(data, &spec, &cell_config).map_err(|e| e.to_string());
            CellOutcome { spec, seed, result }
        })
        .collect();
    let mut ranked = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome.result {
            Ok(result) => ranked.push(result),
            Err(_) => failures.push(outcome),
        }
    }
    if ranked.is_empty() {
        let detail = failures
            .iter()
            .map(|f| format!("{}: {}", f.spec, f.result.as_ref().err().map_or("", |s| s)))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(PsalmError::FitFailed {
            starts: failures.len(),
            diagnostics: detail,
        });
    }
    ranked.sort_by(|a, b| grid.criterion.score(b).total_cmp(&grid.criterion.score(a)));
    Ok(SearchResult {
        criterion: grid.criterion,
        ranked,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn bic_examples() {
        assert_relative_eq!(bic(-100.0, 10, 100), -200.0 - 10.0 * 100f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(bic(-100.0, 10, 100), -246.0517, epsilon = 1e-4);
        assert_eq!(bic(0.0, 0, 17), 0.0);
    }

    #[test]
    fn icl_examples() {
        let hard = dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 0.0];
        assert_eq!(icl(-5.0, &hard).unwrap(), -5.0);
        let flat = dmatrix![0.5, 0.5; 0.5, 0.5];
        assert_relative_eq!(icl(-10.0, &flat).unwrap(), -11.3863, epsilon = 1e-4);
    }

    #[test]
    fn map_ties_go_low() {
        let z = dmatrix![0.2, 0.8; 0.5, 0.5; 0.7, 0.3];
        assert_eq!(map_classify(&z), vec![1, 0, 0]);
        let swapped = dmatrix![0.8, 0.2; 0.5, 0.5; 0.3, 0.7];
        assert_eq!(map_classify(&swapped), vec![0, 0, 1]);
    }

    #[test]
    fn grid_validation() {
        assert!(SearchGrid::new(vec![], 1..=2, 1..=1, Criterion::Bic).is_err());
        assert!(SearchGrid::new(ModelCode::ALL.to_vec(), 0..=2, 1..=1, Criterion::Bic).is_err());
        let grid = SearchGrid::new(ModelCode::ALL.to_vec(), 1..=9, 1..=1, Criterion::Icl).unwrap();
        assert_eq!(grid.cells().len(), 108);
        assert_eq!("ICL".parse::<Criterion>().unwrap(), Criterion::Icl);
    }

    #[test]
    fn cell_seeds_are_distinct() {
        let grid = SearchGrid::new(ModelCode::ALL.to_vec(), 1..=9, 1..=3, Criterion::Bic).unwrap();
        let mut seeds: Vec<u64> = grid.cells().iter().map(|c| cell_seed(7, c)).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), grid.cells().len());
    }
}
