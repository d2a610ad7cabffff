//! Draw a two-component SAL mixture, fit it, and compare the fit with the
//! generating parameters.

use nalgebra::{dmatrix, dvector};
use psalm::estim::{fit, FitConfig};
use psalm::family::{PsalmSpec, ScaleMatrix};
use psalm::metrics::ari;
use psalm::sal::{sample_sal_mixture, SalParams};

fn main() -> psalm::Result<()> {
    let shared = ScaleMatrix::from_psi(dmatrix![0.5; 0.3], &dvector![0.5, 0.5])?;
    let truth = vec![
        (0.4, SalParams::new(dvector![0.0, 0.0], dvector![1.0, 0.5], shared.clone())?),
        (0.6, SalParams::new(dvector![8.0, 6.0], dvector![-0.5, 1.0], shared)?),
    ];
    let (x, labels) = sample_sal_mixture(&truth, 500, 2024)?;

    let spec = PsalmSpec::new("CCCU".parse()?, 2, 1)?;
    let config = FitConfig {
        n_starts: 5,
        seed: 1,
        ..FitConfig::default()
    };
    let result = fit(&x, &spec, &config)?;
    println!(
        "{}: loglik {:.2}, BIC {:.2}, ICL {:.2}, {} AECM iterations, converged {}",
        result.spec, result.loglik, result.bic, result.icl, result.iterations, result.converged
    );
    println!("ARI against the generating labels: {:.3}", ari(&labels, &result.map_labels)?);
    let params = &result.params;
    for g in 0..2 {
        let (mu, alpha) = (&params.locations()[g], &params.skewness()[g]);
        println!(
            "component {g}: weight {:.3}, mu ({:.2}, {:.2}), alpha ({:.2}, {:.2})",
            params.weights()[g],
            mu[0],
            mu[1],
            alpha[0],
            alpha[1]
        );
    }
    Ok(())
}
