//! Covariances between adjacent boxes oscillate in sign for stealthy spectra.

use spectralfield::fluctuations::{covariance_grid, neighbourhood_sum, SpectralOptions};
use spectralfield::geometry::TransformMode;
use spectralfield::spectral_models::{Family, StructureFunction};
use std::error::Error;
use std::f64::consts::PI;

fn main() -> Result<(), Box<dyn Error>> {
    let sf = StructureFunction::new(2, Family::AxesStealthy { delta: PI / 2.0 })?;
    let opts = SpectralOptions::default();

    for mode in [TransformMode::Lattice, TransformMode::Continuum] {
        let g = covariance_grid(&sf, 128.0, mode, &opts)?;
        println!("{} mode, sigma^2 = {:.6}", mode.as_str(), g.sigma_sq);
        for e in &g.entries {
            println!("  n = {:?}  ratio {:+.5}  limit {:+.3}", e.offset, e.ratio, e.predicted_limit / g.sigma_sq);
        }
        // Summed over the 3^d neighbourhood the covariances cancel.
        let s = neighbourhood_sum(&sf, 128.0, mode, &opts)?;
        println!("  neighbourhood sum / sigma^2 = {:+.2e}", s.value);
    }

    print!("{}", covariance_grid(&sf, 32.0, TransformMode::Lattice, &opts)?.to_csv());
    Ok(())
}
