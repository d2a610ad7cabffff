//! Model selection on the first and third principal components of the crab
//! data: every model code over a range of component counts, ranked by BIC,
//! with ICL alongside.
//!
//! `cargo run --release --example model_search_crabs [max_groups] [starts]`
//! (defaults 9 and 20; smaller values finish much sooner).

use psalm::estim::FitConfig;
use psalm::family::ModelCode;
use psalm::io::{pca_project, read_table, ReadOptions};
use psalm::metrics::ari;
use psalm::select::{grid_search, Criterion, SearchGrid};

fn arg(k: usize, default: usize) -> usize {
    std::env::args().nth(k).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> psalm::Result<()> {
    let max_groups = arg(1, 9);
    let starts = arg(2, 20);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/crabs.csv");
    let options = ReadOptions {
        label_column: Some("sex".into()),
        features: Some(["FL", "RW", "CL", "CW", "BD"].map(String::from).to_vec()),
        ..ReadOptions::default()
    };
    let crabs = read_table(path, &options)?;
    let species: Vec<String> = read_table(
        path,
        &ReadOptions {
            label_column: Some("sp".into()),
            ..options
        },
    )?
    .labels
    .expect("species column");
    let (pcs, _) = pca_project(&crabs, &[0, 2], true)?;
    let sex = pcs.labels.clone().expect("sex column");

    let grid = SearchGrid::new(ModelCode::ALL.to_vec(), 1..=max_groups, 1..=1, Criterion::Bic)?;
    let config = FitConfig {
        n_starts: starts,
        seed: 2024,
        ..FitConfig::default()
    };
    let started = std::time::Instant::now();
    let search = grid_search(&pcs.matrix, &grid, &config)?;
    println!(
        "{} fits, {} failed, {:.1?}",
        search.ranked.len(),
        search.failures.len(),
        started.elapsed()
    );
    println!("{:<16} {:>10} {:>10} {:>10} {:>8} {:>8}", "model", "loglik", "BIC", "ICL", "ARI sp", "ARI sex");
    for r in search.ranked.iter().take(8) {
        println!(
            "{:<16} {:>10.2} {:>10.2} {:>10.2} {:>8.3} {:>8.3}",
            r.spec.to_string(),
            r.loglik,
            r.bic,
            r.icl,
            ari(&species, &r.map_labels)?,
            ari(&sex, &r.map_labels)?
        );
    }
    let by_icl = search.reranked(Criterion::Icl)[0];
    println!("ICL selects {} (ICL {:.2})", by_icl.spec, by_icl.icl);
    Ok(())
}
