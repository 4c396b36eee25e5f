//! Moment-cumulant conversion over set partitions, and k-statistics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use spectralfield::moments::{
    correlation_table, empirical_cumulants, ks_distance_normal, set_partitions, truncated_table, CorrelationTable,
};
use std::error::Error;

fn main() -> Result<(), Box<dyn Error>> {
    for n in 1..=5 {
        println!("Bell({n}) = {}", set_partitions(n)?.len());
    }

    // Three points with pairwise correlation 1 and rho_3 = 5.
    let pts = vec![vec![0], vec![1], vec![2]];
    let mut t = CorrelationTable::new(pts)?;
    for mask in 1..8u32 {
        let v = match mask.count_ones() {
            1 => 1.0,
            2 => 2.0,
            _ => 5.0,
        };
        t.set(mask, v)?;
    }
    let tr = truncated_table(&t)?;
    println!("rho^T on {{0,1}} = {}, on {{0,1,2}} = {}", tr.get(0b011).unwrap(), tr.get(0b111).unwrap());
    println!("back to rho_3 = {}", correlation_table(&tr)?.get(0b111).unwrap());

    // Exp(1) has cumulants (m - 1)!.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs: Vec<f64> = (0..20_000).map(|_| Exp1.sample(&mut rng)).collect();
    let c = empirical_cumulants(&xs, 4)?;
    for (i, (k, se)) in c.k.iter().zip(&c.std_error).enumerate() {
        println!("k{} = {k:.3} +- {se:.3}", i + 1);
    }
    println!("KS distance of Exp(1) to N(0,1): {:.3}", ks_distance_normal(&xs)?);
    Ok(())
}
