//! Semi-supervised classification of the four crab groups (species by sex):
//! each replicate reveals 80% of the labels and predicts the rest.
//!
//! `cargo run --release --example semisupervised_crabs [replicates]`

use psalm::classify::{run_experiment, ClassificationExperiment};
use psalm::estim::FitConfig;
use psalm::family::PsalmSpec;
use psalm::io::{read_table, ReadOptions};

fn main() -> psalm::Result<()> {
    let replicates = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let crabs = read_table(
        concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/crabs.csv"),
        &ReadOptions {
            label_column: Some("group".into()),
            features: Some(["FL", "RW", "CL", "CW", "BD"].map(String::from).to_vec()),
            ..ReadOptions::default()
        },
    )?;
    let (names, truth) = crabs.label_codes().expect("group column");
    let spec = PsalmSpec::new("CCCU".parse()?, names.len(), 1)?;
    let experiment = ClassificationExperiment {
        known_fraction: 0.8,
        replicates,
        seed: 11,
    };
    let config = FitConfig {
        n_starts: 1,
        ..FitConfig::default()
    };
    let result = run_experiment(&crabs.matrix, &truth, &names, &spec, &experiment, &config)?;
    let failed = result.replicates.iter().filter(|r| r.result.is_err()).count();
    println!("{spec}, {replicates} replicates ({failed} failed)");
    println!("held-out predictions summed over replicates:\n{}", result.confusion);
    println!("ARI {:.3}, accuracy {:.3}", result.ari, result.accuracy);
    Ok(())
}
