//! Normalized ball masses of a non-Gaussian field approach N(0, 1).

use spectralfield::moments::{clt_scan, CltOptions};
use spectralfield::sampler::Transform;
use spectralfield::spectral_models::{Family, StructureFunction};
use std::error::Error;

fn main() -> Result<(), Box<dyn Error>> {
    let sf = StructureFunction::new(2, Family::Constant)?;
    for transform in [Transform::Sign, Transform::Cube] {
        let opts = CltOptions { transform, replicates: 2000, seed: 3, torus: None };
        let r = clt_scan(&sf, &[2.0, 4.0, 8.0, 16.0], &opts)?;
        println!("transform {}", transform.as_str());
        for row in &r.rows {
            println!("  L = {:>4}  {:<3} {:+.4} +- {:.4}", row.scan_var, row.stat, row.value, row.stat_err);
        }
    }
    Ok(())
}
