//! Write a fit to the versioned JSON results document and read it back.

use nalgebra::{dmatrix, dvector};
use psalm::estim::{fit, FitConfig};
use psalm::family::{PsalmSpec, ScaleMatrix};
use psalm::io::{read_results, write_results, Dataset, ModelRecord, Provenance, ResultsDocument};
use psalm::sal::{sample_sal_mixture, SalParams};

fn main() -> psalm::Result<()> {
    let tight = ScaleMatrix::from_psi(dmatrix![0.4; 0.2], &dvector![0.3, 0.3])?;
    let wide = ScaleMatrix::from_psi(dmatrix![1.0; -0.5], &dvector![0.8, 0.6])?;
    let mixture = vec![
        (0.5, SalParams::new(dvector![0.0, 0.0], dvector![1.0, 1.0], tight)?),
        (0.5, SalParams::new(dvector![6.0, -4.0], dvector![0.0, -1.5], wide)?),
    ];
    let (matrix, _) = sample_sal_mixture(&mixture, 200, 5)?;
    let data = Dataset {
        matrix,
        feature_names: vec!["x1".into(), "x2".into()],
        labels: None,
        provenance: Provenance {
            source: "synthetic".into(),
            transforms: Vec::new(),
        },
    };
    let config = FitConfig {
        n_starts: 3,
        ..FitConfig::default()
    };
    let result = fit(&data.matrix, &PsalmSpec::new("UUCU".parse()?, 2, 1)?, &config)?;

    let mut doc = ResultsDocument::new("fit", &config, &data);
    doc.models.push(ModelRecord {
        fit: result,
        evaluation: None,
    });
    let path = std::env::temp_dir().join("psalm_results_example.json");
    write_results(&doc, &path)?;
    let back = read_results(&path)?;
    println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());
    println!(
        "schema {}, BIC identical after reload: {}",
        back.schema_version,
        back.models[0].fit.bic.to_bits() == doc.models[0].fit.bic.to_bits()
    );
    Ok(())
}
