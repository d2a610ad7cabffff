//! The factor-analytic scale `ΛΛ' + ωΔ` inverted through the Woodbury
//! identity, compared against a dense inverse.

use nalgebra::{DMatrix, DVector};
use psalm::family::ScaleMatrix;

fn main() -> psalm::Result<()> {
    let p = 12;
    let q = 2;
    let loadings = DMatrix::from_fn(p, q, |i, j| ((i + 1) as f64 * (j + 2) as f64).sin());
    let psi = DVector::from_fn(p, |i, _| 0.2 + 0.1 * i as f64);
    let scale = ScaleMatrix::from_psi(loadings, &psi)?;
    println!("omega = {:.4}, prod(delta) = {:.12}", scale.omega(), scale.delta().product());

    let dense = scale.dense();
    let inverse = scale.woodbury_inverse()?;
    let residual = (&dense * &inverse - DMatrix::identity(p, p)).amax();
    let log_det = dense.clone().lu().determinant().ln();
    println!("max |Sigma Sigma^-1 - I| = {residual:.2e}");
    println!("log det: woodbury {:.12}, dense {log_det:.12}", scale.woodbury_logdet()?);
    Ok(())
}
