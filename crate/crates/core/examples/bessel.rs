//! Bessel functions and the remainder of their leading asymptotic term.

use spectralfield::numerics::bessel::{asymptotic_remainder_bound, bessel_j, bessel_j_leading};
use std::error::Error;

fn main() -> Result<(), Box<dyn Error>> {
    for nu in [0.0, 0.5, 1.0, 1.5, 2.0] {
        let mut sup = 0.0f64;
        for i in 0..=9900 {
            let z = 10.0 + 0.1 * i as f64;
            sup = sup.max(z.powf(1.5) * (bessel_j(nu, z)? - bessel_j_leading(nu, z)?).abs());
        }
        println!(
            "nu = {nu}: J(1) = {:+.12}  J(30) = {:+.12}  sup z^1.5 |J - lead| on [10, 1000] = {sup:.4} (bound {:.4})",
            bessel_j(nu, 1.0)?,
            bessel_j(nu, 30.0)?,
            asymptotic_remainder_bound(nu, 10.0)?
        );
    }
    Ok(())
}
