//! Gaussian fields on the torus: sampling, covariance check, transforms and
//! binary dumps.

use spectralfield::fluctuations::{variance_monte_carlo, variance_spectral};
use spectralfield::geometry::{Domain, TransformMode};
use spectralfield::sampler::{
    empirical_kernel, periodized_kernel, transform_field, FieldSample, GaussianSampler, Transform,
};
use spectralfield::spectral_models::{Family, StructureFunction};
use std::error::Error;
use std::f64::consts::PI;

fn main() -> Result<(), Box<dyn Error>> {
    let sf = StructureFunction::new(2, Family::StealthyGap { delta: PI / 2.0 })?;
    let n = 64;
    let sampler = GaussianSampler::new(&sf, n)?;

    // Streams under one seed are independent and reproducible.
    let fields: Vec<FieldSample> = (0..200).map(|i| sampler.sample(42, i)).collect();
    let emp = empirical_kernel(&fields, 2)?;
    let target = periodized_kernel(&sf, n)?;
    for lag in [[0, 0], [1, 0], [1, 1], [2, 0]] {
        let (m, se) = emp.get(&lag).unwrap();
        println!("K_N{lag:?} = {:+.4}   empirical {:+.4} +- {:.4}", target.get(&lag), m, se);
    }

    let sign = transform_field(&fields[0], Transform::Sign)?;
    println!("sign field mean {:+.3e}", sign.mean());

    let path = std::env::temp_dir().join("spectralfield-example.spf");
    fields[0].write_spf1(&path)?;
    let back = FieldSample::read_spf1(&path)?;
    println!("SPF1 round trip exact: {}", back.values() == fields[0].values());
    std::fs::remove_file(&path)?;

    let dom = Domain::ball(2, 5.0)?;
    let exact = variance_spectral(&sf, &dom, TransformMode::Lattice)?;
    let mc = variance_monte_carlo(&sf, &dom, 64, 500, 7)?;
    println!("ball L=5 variance: spectral {:.4}, Monte Carlo {:.4} +- {:.4}", exact.value, mc.value, mc.error);
    Ok(())
}
