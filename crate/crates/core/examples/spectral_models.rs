//! Build structure functions, evaluate them, and tabulate covariance kernels.
//!
//! ```text
//! cargo run --release --example spectral_models
//! ```

use spectralfield::geometry::TransformMode;
use spectralfield::spectral_models::{read_tabulated, Family, StructureFunction};
use std::error::Error;
use std::f64::consts::PI;
use std::path::Path;

fn main() -> Result<(), Box<dyn Error>> {
    let models = [
        StructureFunction::new(2, Family::Constant)?,
        StructureFunction::new(2, Family::StealthyGap { delta: PI / 2.0 })?,
        StructureFunction::new(2, Family::RadialPower { alpha: 0.5, p: 2.0 })?,
        StructureFunction::new(2, Family::AnisotropicProduct { alphas: vec![0.5, 1.0] })?,
        StructureFunction::new(2, Family::AxesStealthy { delta: PI / 2.0 })?,
    ];

    for sf in &models {
        let k = sf.covariance_kernel(2)?;
        println!("{}", sf.id());
        println!("  norm            {:.6}", sf.normalization());
        println!("  S(pi/4, pi/4)   {:.6}", sf.eval(&[PI / 4.0, PI / 4.0])?);
        println!("  gap fraction    {:.6}", sf.gap_fraction());
        println!(
            "  K(0,0) K(1,0) K(1,1)  {:+.6} {:+.6} {:+.6}",
            k.get(&[0, 0]).unwrap(),
            k.get(&[1, 0]).unwrap(),
            k.get(&[1, 1]).unwrap()
        );
        println!("  sigma_d^2 (lattice)   {}", sf.sigma_sq_d(TransformMode::Lattice)?);
        println!("  cube exponents        {:?}", sf.cube_exponents());
        println!("  ball exponents        {:?}", sf.ball_exponents());
        println!("  Szego limit           {}", sf.szego_limit()?);
    }

    // Models can also be read from a tabulated N^d grid.
    let tab = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/configs/bowl-5x5.tab");
    let sf = StructureFunction::from_spec(read_tabulated(&tab)?)?;
    println!("{} K(1,0) = {:+.6}", sf.id(), sf.covariance_kernel(1)?.get(&[1, 0]).unwrap());
    Ok(())
}
