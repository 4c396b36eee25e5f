//! Gaussian entropy per site and its Szego limit; gapped spectra degenerate
//! as the regularization eps goes to zero.

use spectralfield::entropy::{covariance_matrix, entropy_scan, gaussian_entropy};
use spectralfield::geometry::{Domain, Shape};
use spectralfield::spectral_models::{CosineTerm, Family, StructureFunction};
use std::error::Error;
use std::f64::consts::PI;

fn main() -> Result<(), Box<dyn Error>> {
    let sf = StructureFunction::new(
        1,
        Family::CosineSeries { constant: 1.0, terms: vec![CosineTerm { lag: vec![1], amplitude: 0.5 }] },
    )?;
    for n in [64.0, 256.0, 1024.0] {
        let pts = Domain::offset_box(vec![0], n)?.lattice_points();
        let h = gaussian_entropy(&covariance_matrix(&sf, &pts)?, 0.0)?.to_f64() / pts.len() as f64;
        println!("n = {n:>5}: entropy per site {h:.6}");
    }
    println!("Szego log det per site {}", sf.szego_limit()?);

    let stealthy = StructureFunction::new(1, Family::StealthyGap { delta: PI / 2.0 })?;
    let eps: Vec<f64> = (2..=8).map(|k| 10f64.powi(-k)).collect();
    let scan = entropy_scan(&stealthy, &Shape::Ball, &[256.0], &eps)?;
    print!("{}", scan.to_csv());
    Ok(())
}
