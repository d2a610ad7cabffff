//! Clustering CYT and ME3 yeast proteins on three localisation features, and
//! the semi-supervised alternative.
//!
//! `cargo run --release --example yeast_clustering [starts] [replicates]`

use psalm::classify::{run_experiment, ClassificationExperiment};
use psalm::estim::FitConfig;
use psalm::family::{ModelCode, PsalmSpec};
use psalm::io::{read_table, standardize, Format, ReadOptions, YEAST_COLUMNS};
use psalm::metrics::ari;
use psalm::select::{grid_search, Criterion, SearchGrid};

fn arg(k: usize, default: usize) -> usize {
    std::env::args().nth(k).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> psalm::Result<()> {
    let yeast = read_table(
        concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/yeast_cyt_me3.data"),
        &ReadOptions {
            format: Format::Whitespace,
            column_names: Some(YEAST_COLUMNS.map(String::from).to_vec()),
            label_column: Some("class".into()),
            features: Some(["mcg", "alm", "vac"].map(String::from).to_vec()),
            classes: Some(vec!["CYT".into(), "ME3".into()]),
            ..ReadOptions::default()
        },
    )?;
    let yeast = standardize(&yeast)?;
    let (names, truth) = yeast.label_codes().expect("class column");
    println!("{} proteins, {} features", yeast.n(), yeast.p());

    let grid = SearchGrid::new(ModelCode::ALL.to_vec(), 1..=3, 1..=1, Criterion::Bic)?;
    let config = FitConfig {
        n_starts: arg(1, 10),
        seed: 2024,
        ..FitConfig::default()
    };
    let search = grid_search(&yeast.matrix, &grid, &config)?;
    for (label, best) in [("BIC", search.best()), ("ICL", search.reranked(Criterion::Icl)[0])] {
        println!(
            "{label} selects {}: BIC {:.2}, ICL {:.2}, ARI {:.3}",
            best.spec,
            best.bic,
            best.icl,
            ari(&truth, &best.map_labels)?
        );
    }

    let experiment = ClassificationExperiment {
        known_fraction: 0.8,
        replicates: arg(2, 20),
        seed: 11,
    };
    let spec = PsalmSpec::new("CCCU".parse()?, 2, 1)?;
    let semi = run_experiment(
        &yeast.matrix,
        &truth,
        &names,
        &spec,
        &experiment,
        &FitConfig {
            n_starts: 1,
            ..FitConfig::default()
        },
    )?;
    println!("semi-supervised {spec}:\n{}accuracy {:.3}", semi.confusion, semi.accuracy);
    Ok(())
}
