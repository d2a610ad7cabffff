//! Correlation-based principal components of the crab measurements.
//!
//! `cargo run --release --example pca_crabs [path/to/crabs.csv]`

use psalm::io::{pca_project, read_table, ReadOptions};

fn main() -> psalm::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/crabs.csv").into());
    let options = ReadOptions {
        label_column: Some("group".into()),
        features: Some(["FL", "RW", "CL", "CW", "BD"].map(String::from).to_vec()),
        ..ReadOptions::default()
    };
    let crabs = read_table(&path, &options)?;
    let (scores, summary) = pca_project(&crabs, &[0, 2], true)?;

    let mut cumulative = 0.0;
    for (k, share) in summary.explained.iter().enumerate() {
        cumulative += share;
        println!("PC{}: {:>6.2}% (cumulative {:>6.2}%)", k + 1, 100.0 * share, 100.0 * cumulative);
    }
    println!("loadings of PC1 and PC3:");
    for (name, row) in crabs.feature_names.iter().zip(summary.rotation.row_iter()) {
        println!("  {name}: {:>7.3} {:>7.3}", row[0], row[2]);
    }

    // Group means on the retained components.
    let (groups, codes) = scores.label_codes().expect("labels were read");
    for (g, name) in groups.iter().enumerate() {
        let rows: Vec<usize> = (0..scores.n()).filter(|&i| codes[i] == g).collect();
        let mean = |j: usize| rows.iter().map(|&i| scores.matrix[(i, j)]).sum::<f64>() / rows.len() as f64;
        println!("{name}: PC1 {:>6.3}, PC3 {:>6.3}", mean(0), mean(1));
    }
    Ok(())
}
