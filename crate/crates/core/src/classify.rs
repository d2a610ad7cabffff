//! Semi-supervised fitting: labelled observations keep one-hot
//! responsibilities throughout, and the joint likelihood of labelled and
//! unlabelled observations is maximised.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::estim::{derive_seed, fit_partially_labelled, DataMatrix, FitConfig, FitResult};
use crate::family::PsalmSpec;
use crate::metrics::ConfusionMatrix;

/// Known class labels for a subset of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialLabels {
    known: BTreeMap<usize, usize>,
    classes: usize,
    components: usize,
}

impl PartialLabels {
    /// `known` maps observation index to class in `0..classes`; the model
    /// uses `components >= classes` components.
    pub fn new(known: BTreeMap<usize, usize>, classes: usize, components: usize) -> Result<Self> {
        if components < classes {
            return domain(format!(
                "component count {components} is below the class count {classes}"
            ));
        }
        let mut seen = vec![false; classes];
        for &c in known.values() {
            if c >= classes {
                return domain(format!("class {c} is outside 0..{classes}"));
            }
            seen[c] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return domain(format!("class {c} has no labelled observation"));
        }
        Ok(Self {
            known,
            classes,
            components,
        })
    }

    /// No labelled observations; fitting reduces to clustering.
    pub fn unlabelled(components: usize) -> Self {
        Self {
            known: BTreeMap::new(),
            classes: 0,
            components,
        }
    }

    pub fn known(&self) -> &BTreeMap<usize, usize> {
        &self.known
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn components(&self) -> usize {
        self.components
    }

    fn per_row(&self, n: usize) -> Result<Vec<Option<usize>>> {
        let mut rows = vec![None; n];
        for (&i, &c) in &self.known {
            if i >= n {
                return domain(format!("labelled index {i} is outside the {n} observations"));
            }
            rows[i] = Some(c);
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiSupervisedFit {
    pub fit: FitResult,
    /// Indices of the unlabelled observations.
    pub unlabelled: Vec<usize>,
    /// MAP component of each unlabelled observation.
    pub predicted: Vec<usize>,
}

/// Fits with the labelled responsibilities clamped in every E-step.
pub fn fit_semisupervised(
    data: &DataMatrix,
    labels: &PartialLabels,
    spec: &PsalmSpec,
    config: &FitConfig,
) -> Result<SemiSupervisedFit> {
    if spec.groups != labels.components {
        return domain(format!(
            "model has {} components but the labels expect {}",
            spec.groups, labels.components
        ));
    }
    let rows = labels.per_row(data.nrows())?;
    let fit = fit_partially_labelled(data, spec, config, Some(&rows))?;
    let unlabelled: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].is_none()).collect();
    let predicted = unlabelled.iter().map(|&i| fit.map_labels[i]).collect();
    Ok(SemiSupervisedFit {
        fit,
        unlabelled,
        predicted,
    })
}

/// Repeated random known/unknown splits of a fully labelled data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationExperiment {
    pub known_fraction: f64,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub result: std::result::Result<ReplicateSummary, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub loglik: f64,
    pub held_out: usize,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: PsalmSpec,
    pub class_names: Vec<String>,
    pub replicates: Vec<ReplicateOutcome>,
    /// Held-out truth against prediction, summed over successful replicates.
    pub confusion: ConfusionMatrix,
    pub ari: f64,
    pub accuracy: f64,
}

/// A random subset of `round(fraction · n)` indices in which every class
/// appears at least once.
pub fn known_subset(truth: &[usize], classes: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return domain(format!("known fraction must lie in (0, 1], got {fraction}"));
    }
    let n = truth.len();
    let k = ((fraction * n as f64).round() as usize).clamp(classes, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..1000 {
        let mut chosen = sample(&mut rng, n, k).into_vec();
        chosen.sort_unstable();
        let mut seen = vec![false; classes];
        for &i in &chosen {
            seen[truth[i]] = true;
        }
        if seen.iter().all(|&s| s) {
            return Ok(chosen);
        }
    }
    domain("could not draw a labelled subset covering every class")
}

/// Runs the replicates concurrently; each replicate labels a fresh random
/// subset, fits, and cross-tabulates the held-out predictions.
pub fn run_experiment(
    data: &DataMatrix,
    truth: &[usize],
    class_names: &[String],
    spec: &PsalmSpec,
    experiment: &ClassificationExperiment,
    config: &FitConfig,
) -> Result<ExperimentResult> {
    let classes = class_names.len();
    if truth.len() != data.nrows() {
        return domain("one class label per observation is required");
    }
    if truth.iter().any(|&c| c >= classes) {
        return domain("class label outside the list of class names");
    }
    if spec.groups != classes {
        return domain("the experiment needs one component per class");
    }
    if experiment.replicates == 0 {
        return domain("at least one replicate is required");
    }
    let names: Vec<String> = class_names.to_vec();
    let outcomes: Vec<ReplicateOutcome> = (0..experiment.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(experiment.seed, &[r as u64]);
            let result = replicate(data, truth, &names, spec, experiment.known_fraction, seed, config)
                .map_err(|e| e.to_string());
            ReplicateOutcome {
                replicate: r,
                seed,
                result,
            }
        })
        .collect();
    let empty = ConfusionMatrix {
        row_labels: names.clone(),
        col_labels: names.clone(),
        counts: vec![vec![0; classes]; classes],
    };
    let mut total = empty;
    for o in &outcomes {
        if let Ok(s) = &o.result {
            total = total.add(&s.confusion)?;
        }
    }
    if total.total() == 0 {
        return domain("every replicate failed or no observation was held out");
    }
    Ok(ExperimentResult {
        spec: *spec,
        class_names: names,
        replicates: outcomes,
        ari: total.adjusted_rand_index(),
        accuracy: total.accuracy(),
        confusion: total,
    })
}

fn replicate(
    data: &DataMatrix,
    truth: &[usize],
    names: &[String],
    spec: &PsalmSpec,
    fraction: f64,
    seed: u64,
    config: &FitConfig,
) -> Result<ReplicateSummary> {
    let classes = names.len();
    let chosen = known_subset(truth, classes, fraction, seed)?;
    let known: BTreeMap<usize, usize> = chosen.iter().map(|&i| (i, truth[i])).collect();
    let labels = PartialLabels::new(known, classes, spec.groups)?;
    let config = FitConfig {
        seed: derive_seed(seed, &[1]),
        ..config.clone()
    };
    let fit = fit_semisupervised(data, &labels, spec, &config)?;
    let mut counts = vec![vec![0usize; classes]; classes];
    for (&i, &g) in fit.unlabelled.iter().zip(&fit.predicted) {
        counts[truth[i]][g] += 1;
    }
    let table = ConfusionMatrix {
        row_labels: names.to_vec(),
        col_labels: names.to_vec(),
        counts,
    };
    Ok(ReplicateSummary {
        loglik: fit.fit.loglik,
        held_out: fit.unlabelled.len(),
        confusion: table,
    })
}
