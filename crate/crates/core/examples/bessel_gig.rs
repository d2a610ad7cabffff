//! Log Bessel functions, their ratios, and the GIG moments that drive the
//! E-step.

use psalm::special::{bessel_ratio, gig_log_density, gig_moments, log_bessel_k, GigParams};

fn main() -> psalm::Result<()> {
    println!("{:>6} {:>8} {:>14} {:>14}", "nu", "z", "ln K_nu(z)", "K_nu+1/K_nu");
    for (nu, z) in [(0.0, 1.0), (-0.5, 2.0), (-1.5, 0.3), (2.5, 10.0), (50.0, 1e-8), (0.0, 700.0)] {
        println!("{nu:>6} {z:>8} {:>14.8} {:>14.8}", log_bessel_k(nu, z)?, bessel_ratio(nu, z)?);
    }

    // Posterior of the latent weight for a trivariate observation at
    // Mahalanobis distance b from the location.
    let a = 2.5;
    for b in [0.01, 1.0, 25.0] {
        let gig = GigParams::new(a, b, -0.5)?;
        let (w, inv_w) = gig_moments(&gig);
        println!(
            "b = {b:>5}: E[W] = {w:.5}, E[1/W] = {inv_w:.5}, density at E[W] = {:.5}",
            gig_log_density(w, &gig)?.exp()
        );
    }
    Ok(())
}
