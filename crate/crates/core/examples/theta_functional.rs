//! Ball variance against the two-term Theta functional.

use spectralfield::fluctuations::{theta_ball, theta_scan, SpectralOptions};
use spectralfield::geometry::TransformMode;
use spectralfield::spectral_models::{Family, StructureFunction};
use std::error::Error;
use std::f64::consts::PI;

fn main() -> Result<(), Box<dyn Error>> {
    let sf = StructureFunction::new(2, Family::RadialPower { alpha: 0.5, p: 2.0 })?;

    let t = theta_ball(&sf, 64.0, PI)?;
    println!("Theta(L=64): inner {:.4} + outer {:.4} = {:.4}", t.inner, t.outer, t.total);

    let grid = [16.0, 32.0, 64.0, 128.0, 256.0];
    for c in [1.0, PI, 2.0 * PI] {
        let r = theta_scan(&sf, &grid, c, TransformMode::Lattice, &SpectralOptions::default())?;
        let ratios: Vec<String> =
            r.rows.iter().filter(|x| x.stat == "ratio").map(|x| format!("{:.4}", x.value)).collect();
        let slope = r.fit.as_ref().map(|f| f.beta).unwrap_or(f64::NAN);
        println!("c = {c:.3}: variance / Theta = [{}], log-slope {slope:+.4}", ratios.join(", "));
    }
    Ok(())
}
