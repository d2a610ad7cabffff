//! Evaluate the SAL density and check a large sample's mean against μ + α.

use nalgebra::{dmatrix, dvector};
use psalm::family::ScaleMatrix;
use psalm::sal::{latent_expectations, sal_log_density, sample_sal, SalParams};

fn main() -> psalm::Result<()> {
    let scale = ScaleMatrix::from_psi(dmatrix![0.8; 0.4], &dvector![0.5, 0.3])?;
    let params = SalParams::new(dvector![1.0, -2.0], dvector![1.5, 0.5], scale)?;

    for x in [dvector![1.5, -1.8], dvector![4.0, -1.0], dvector![-1.0, -3.0]] {
        let (w, inv_w) = latent_expectations(&x, &params, 0.0)?;
        println!(
            "x = ({:>4}, {:>4}): ln density {:>9.4}, E[W|x] {w:.4}, E[1/W|x] {inv_w:.4}",
            x[0],
            x[1],
            sal_log_density(&x, &params)?
        );
    }

    let n = 100_000;
    let draws = sample_sal(&params, n, 7)?;
    let mean = draws.row_mean();
    let expected = &params.mu + &params.alpha;
    println!("sample mean ({:.3}, {:.3}) vs mu + alpha ({}, {})", mean[0], mean[1], expected[0], expected[1]);
    Ok(())
}
