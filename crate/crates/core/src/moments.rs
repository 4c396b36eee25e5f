//! Set partitions, conversions between correlation and truncated correlation
//! functions, k-statistics, and the normalized-mass CLT diagnostic.

use crate::fluctuations::{ScanReport, ScanRow};
use crate::geometry::Domain;
use crate::sampler::{transform_field, GaussianSampler, Transform};
use crate::spectral_models::{KernelTable, StructureFunction};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest order handled by the partition layer.
pub const MAX_ORDER: usize = 6;

/// A partition of {0, .., n-1} as a list of blocks, each a bitmask.
pub type Partition = Vec<u32>;

/// All partitions of {0, .., n-1} in restricted-growth-string order.
pub fn set_partitions(n: usize) -> Result<Vec<Partition>> {
    if n == 0 || n > MAX_ORDER {
        return Err(Error::Domain(format!("partition order {n} is outside 1..={MAX_ORDER}")));
    }
    let mut out = Vec::new();
    let mut rgs = vec![0usize; n];
    loop {
        let blocks = rgs.iter().copied().max().unwrap() + 1;
        let mut p = vec![0u32; blocks];
        for (i, &b) in rgs.iter().enumerate() {
            p[b] |= 1 << i;
        }
        out.push(p);
        // next restricted growth string
        let mut i = n - 1;
        loop {
            if i == 0 {
                return Ok(out);
            }
            let prefix_max = rgs[..i].iter().copied().max().unwrap();
            if rgs[i] <= prefix_max {
                rgs[i] += 1;
                for v in rgs[i + 1..].iter_mut() {
                    *v = 0;
                }
                break;
            }
            i -= 1;
        }
    }
}

/// Block values of an order-n correlation table, one per nonempty subset of
/// the n points (indexed by bitmask).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    order: usize,
    points: Vec<Vec<i64>>,
    values: Vec<Option<f64>>,
}

impl CorrelationTable {
    pub fn new(points: Vec<Vec<i64>>) -> Result<Self> {
        let order = points.len();
        if order == 0 || order > MAX_ORDER {
            return Err(Error::Domain(format!("table order {order} is outside 1..={MAX_ORDER}")));
        }
        Ok(CorrelationTable { order, points, values: vec![None; 1 << order] })
    }

    /// Fill every block from `f(points in block)`.
    pub fn from_fn(points: Vec<Vec<i64>>, f: impl Fn(&[&[i64]]) -> f64) -> Result<Self> {
        let mut t = Self::new(points)?;
        for mask in 1..(1u32 << t.order) {
            let block: Vec<&[i64]> =
                (0..t.order).filter(|i| mask >> i & 1 == 1).map(|i| t.points[i].as_slice()).collect();
            t.values[mask as usize] = Some(f(&block));
        }
        Ok(t)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn points(&self) -> &[Vec<i64>] {
        &self.points
    }

    pub fn set(&mut self, mask: u32, value: f64) -> Result<()> {
        if mask == 0 || mask as usize >= self.values.len() {
            return Err(Error::Invalid(format!(
                "block mask {mask:#b} is not a nonempty subset of {} points",
                self.order
            )));
        }
        if !value.is_finite() {
            return Err(Error::Invalid("block values must be finite".into()));
        }
        self.values[mask as usize] = Some(value);
        Ok(())
    }

    pub fn get(&self, mask: u32) -> Option<f64> {
        self.values.get(mask as usize).copied().flatten()
    }

    fn require(&self, mask: u32) -> Result<f64> {
        self.get(mask).ok_or_else(|| Error::Invalid(format!("missing value for block {mask:#b}")))
    }

    fn full_mask(&self) -> u32 {
        (1u32 << self.order) - 1
    }
}

/// Partitions of the points in `mask`, blocks as masks of the original indices.
fn partitions_of(mask: u32) -> Vec<Partition> {
    let idx: Vec<usize> = (0..32).filter(|i| mask >> i & 1 == 1).collect();
    set_partitions(idx.len())
        .expect("mask size within range")
        .into_iter()
        .map(|p| {
            p.into_iter()
                .map(|b| (0..idx.len()).filter(|i| b >> i & 1 == 1).fold(0u32, |acc, i| acc | 1 << idx[i]))
                .collect()
        })
        .collect()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

fn truncated_block(table: &CorrelationTable, mask: u32) -> Result<f64> {
    let mut total = 0.0;
    for p in partitions_of(mask) {
        let k = p.len();
        let mut prod = factorial(k - 1) * if k % 2 == 1 { 1.0 } else { -1.0 };
        for b in &p {
            prod *= table.require(*b)?;
        }
        total += prod;
    }
    Ok(total)
}

fn correlation_block(table: &CorrelationTable, mask: u32) -> Result<f64> {
    let mut total = 0.0;
    for p in partitions_of(mask) {
        let mut prod = 1.0;
        for b in &p {
            prod *= table.require(*b)?;
        }
        total += prod;
    }
    Ok(total)
}

/// rho^T_n = sum over partitions of (|pi| - 1)! (-1)^{|pi| - 1} prod_B rho_B.
pub fn truncated_from_correlations(table: &CorrelationTable) -> Result<f64> {
    truncated_block(table, table.full_mask())
}

/// rho_n = sum over partitions of prod_B rho^T_B.
pub fn correlations_from_truncated(table: &CorrelationTable) -> Result<f64> {
    correlation_block(table, table.full_mask())
}

/// Convert every block of a correlation table to its truncated value.
pub fn truncated_table(table: &CorrelationTable) -> Result<CorrelationTable> {
    let mut out = CorrelationTable::new(table.points.clone())?;
    for mask in 1..=table.full_mask() {
        out.values[mask as usize] = Some(truncated_block(table, mask)?);
    }
    Ok(out)
}

/// Inverse of [`truncated_table`].
pub fn correlation_table(truncated: &CorrelationTable) -> Result<CorrelationTable> {
    let mut out = CorrelationTable::new(truncated.points.clone())?;
    for mask in 1..=truncated.full_mask() {
        out.values[mask as usize] = Some(correlation_block(truncated, mask)?);
    }
    Ok(out)
}

/// Sum of |K(j)| over lags j in a window: for Gaussian fields the only
/// nonzero truncated correlation of order >= 2 is rho^T_2 = K.
pub fn gaussian_truncated_sum(kernel: &KernelTable, window: &Domain) -> Result<f64> {
    let mut total = 0.0;
    for j in window.lattice_points() {
        total +=
            kernel.get(&j).ok_or_else(|| Error::Invalid(format!("lag {j:?} lies outside the kernel table")))?.abs();
    }
    Ok(total)
}

/// Minimum number of samples for cumulant estimates.
pub const MIN_SAMPLES: usize = 100;

/// k-statistics k_1..k_m with jackknife standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cumulants {
    pub samples: usize,
    pub k: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// k-statistics from power sums of (already shifted) data.
fn k_stats(n: f64, s: [f64; 5], max_order: usize) -> Vec<f64> {
    let [_, s1, s2, s3, s4] = s;
    let mut k = vec![s1 / n];
    if max_order >= 2 {
        k.push((n * s2 - s1 * s1) / (n * (n - 1.0)));
    }
    if max_order >= 3 {
        k.push((2.0 * s1.powi(3) - 3.0 * n * s1 * s2 + n * n * s3) / (n * (n - 1.0) * (n - 2.0)));
    }
    if max_order >= 4 {
        let num =
            -6.0 * s1.powi(4) + 12.0 * n * s1 * s1 * s2 - 3.0 * n * (n - 1.0) * s2 * s2 - 4.0 * n * (n + 1.0) * s1 * s3
                + n * n * (n + 1.0) * s4;
        k.push(num / (n * (n - 1.0) * (n - 2.0) * (n - 3.0)));
    }
    k
}

pub fn empirical_cumulants(samples: &[f64], max_order: usize) -> Result<Cumulants> {
    if !(1..=4).contains(&max_order) {
        return Err(Error::Domain(format!("cumulant order {max_order} is outside 1..=4")));
    }
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Invalid(format!("need at least {MIN_SAMPLES} samples, got {}", samples.len())));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("samples must be finite".into()));
    }
    let n = samples.len();
    let shift = samples.iter().sum::<f64>() / n as f64;
    let y: Vec<f64> = samples.iter().map(|v| v - shift).collect();
    let mut s = [0.0; 5];
    for &v in &y {
        let mut p = 1.0;
        for e in s.iter_mut() {
            *e += p;
            p *= v;
        }
    }
    let mut k = k_stats(n as f64, s, max_order);
    k[0] += shift;
    // jackknife over leave-one-out power sums
    let m = (n - 1) as f64;
    let loo: Vec<Vec<f64>> = y
        .iter()
        .map(|&v| {
            let mut t = s;
            let mut p = 1.0;
            for e in t.iter_mut() {
                *e -= p;
                p *= v;
            }
            k_stats(m, t, max_order)
        })
        .collect();
    let mut se = Vec::with_capacity(max_order);
    for r in 0..max_order {
        let mean = loo.iter().map(|v| v[r]).sum::<f64>() / n as f64;
        let ss = loo.iter().map(|v| (v[r] - mean).powi(2)).sum::<f64>();
        se.push((ss * m / n as f64).sqrt());
    }
    Ok(Cumulants { samples: n, k, std_error: se })
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Kolmogorov-Smirnov distance between the empirically standardized samples
/// and N(0, 1).
pub fn ks_distance_normal(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Invalid("KS distance needs at least 2 samples".into()));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Invalid("samples have zero spread".into()));
    }
    let mut z: Vec<f64> = samples.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    Ok(z.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = normal_cdf(v);
            ((i + 1) as f64 / nf - f).max(f - i as f64 / nf)
        })
        .fold(0.0, f64::max))
}

/// Options for [`clt_scan`].
#[derive(Debug, Clone)]
pub struct CltOptions {
    pub transform: Transform,
    pub replicates: usize,
    pub seed: u64,
    /// Torus side; defaults to the smallest even N >= 8 max L.
    pub torus: Option<usize>,
}

/// Minimum number of replicates for [`clt_scan`].
pub const MIN_REPLICATES: usize = 1000;

/// Ball masses per replicate field for each L, normalized across replicates,
/// with k3, k4 and the KS distance to N(0, 1).
pub fn clt_scan(sf: &StructureFunction, grid: &[f64], opts: &CltOptions) -> Result<ScanReport> {
    if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::Invalid("CLT grid must hold positive scales".into()));
    }
    if opts.replicates < MIN_REPLICATES {
        return Err(Error::Invalid(format!("CLT scan needs at least {MIN_REPLICATES} replicates")));
    }
    let lmax = grid.iter().cloned().fold(0.0, f64::max);
    let need = ((8.0 * lmax).ceil() as usize).max(8);
    let torus = opts.torus.unwrap_or(need + need % 2);
    if (torus as f64) < 8.0 * lmax {
        return Err(Error::Domain(format!("torus side {torus} is below 8 L_max = {}", 8.0 * lmax)));
    }
    let sampler = GaussianSampler::new(sf, torus)?;
    let domains: Vec<Domain> = grid.iter().map(|&l| Domain::ball(sf.dim(), l)).collect::<Result<_>>()?;
    let anchor = vec![(torus / 2) as i64; sf.dim()];
    let masses: Vec<Vec<f64>> = (0..opts.replicates as u64)
        .into_par_iter()
        .map(|i| {
            let mut f = sampler.sample(opts.seed, i);
            if opts.transform != Transform::None {
                f = transform_field(&f, opts.transform)?;
            }
            domains.iter().map(|d| d.local_mass(f.values(), torus, &anchor)).collect()
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mode = format!("transform={}", opts.transform.as_str());
    for (li, &l) in grid.iter().enumerate() {
        let q: Vec<f64> = masses.iter().map(|m| m[li]).collect();
        let n = q.len() as f64;
        let mean = q.iter().sum::<f64>() / n;
        let sd = (q.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        if !(sd > 0.0) {
            return Err(Error::Numeric(format!("ball masses at L = {l} have zero spread")));
        }
        let z: Vec<f64> = q.iter().map(|v| (v - mean) / sd).collect();
        let c = empirical_cumulants(&z, 4)?;
        let ks = ks_distance_normal(&q)?;
        for (stat, value, err) in
            [("k3", c.k[2], c.std_error[2]), ("k4", c.k[3], c.std_error[3]), ("ks", ks, 0.8687 / n.sqrt())]
        {
            rows.push(ScanRow {
                scan_var: l,
                value,
                stat: stat.into(),
                stat_err: err,
                mode: mode.clone(),
                converged: true,
            });
        }
    }
    Ok(ScanReport { scan_name: "L".into(), model: sf.id(), window: "ball".into(), rows, fit: None })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::spectral_models::Family;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, StandardNormal};

    #[test]
    fn bell_numbers() {
        // Bell recurrence B_{n+1} = sum_k C(n, k) B_k
        let mut bell = vec![1u64];
        for n in 0..6 {
            let mut c = 1u64;
            let mut s = 0u64;
            for k in 0..=n {
                s += c * bell[k];
                c = c * (n - k) as u64 / (k + 1) as u64;
            }
            bell.push(s);
        }
        for n in 1..=6 {
            let ps = set_partitions(n).unwrap();
            assert_eq!(ps.len() as u64, bell[n]);
            for p in &ps {
                assert_eq!(p.iter().fold(0, |a, b| a | b), (1 << n) - 1);
                assert_eq!(p.iter().map(|b| b.count_ones()).sum::<u32>(), n as u32);
            }
        }
        assert!(set_partitions(0).is_err() && set_partitions(7).is_err());
        assert_eq!(set_partitions(2).unwrap(), vec![vec![0b11], vec![0b01, 0b10]]);
    }

    #[test]
    fn second_order_conversions() {
        let pts = vec![vec![0], vec![3]];
        let t = CorrelationTable::from_fn(pts.clone(), |b| if b.len() == 1 { 0.0 } else { 0.7 }).unwrap();
        assert_eq!(truncated_from_correlations(&t).unwrap(), 0.7);
        let t = CorrelationTable::from_fn(pts, |b| if b.len() == 1 { 0.5 } else { 0.2 }).unwrap();
        assert!((truncated_from_correlations(&t).unwrap() - (0.2 - 0.25)).abs() < 1e-15);
        assert!((correlations_from_truncated(&t).unwrap() - (0.2 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn missing_block_is_an_error() {
        let mut t = CorrelationTable::new(vec![vec![0], vec![1]]).unwrap();
        t.set(0b01, 1.0).unwrap();
        assert!(matches!(truncated_from_correlations(&t), Err(Error::Invalid(_))));
    }

    #[test]
    fn round_trip_on_random_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 1..=5 {
            for _ in 0..100 {
                let pts: Vec<Vec<i64>> = (0..n).map(|i| vec![i as i64]).collect();
                let mut t = CorrelationTable::new(pts).unwrap();
                for m in 1..(1u32 << n) {
                    t.set(m, rng.gen_range(-1.0..1.0)).unwrap();
                }
                let back = correlation_table(&truncated_table(&t).unwrap()).unwrap();
                for m in 1..(1u32 << n) {
                    assert!((back.get(m).unwrap() - t.get(m).unwrap()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn independent_point_gives_zero() {
        // point 0 independent of the rest: moments factor across {0} and the others
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 2..=4 {
            let pts: Vec<Vec<i64>> = (0..n).map(|i| vec![i as i64]).collect();
            let mut rest = vec![0.0; 1 << n];
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for m in 1..(1usize << n) {
                rest[m] = rng.gen_range(-1.0..1.0);
            }
            let mut t = CorrelationTable::new(pts).unwrap();
            for m in 1..(1u32 << n) {
                let others = m & !1;
                let v = match (m & 1 == 1, others) {
                    (true, 0) => a[0],
                    (true, o) => a[0] * rest[o as usize],
                    (false, o) => rest[o as usize],
                };
                t.set(m, v).unwrap();
            }
            assert_eq!(truncated_from_correlations(&t).unwrap(), 0.0, "n={n}");
        }
    }

    /// Cumulants from raw moments by the recursion
    /// kappa_n = m_n - sum_{k=1}^{n-1} C(n-1, k-1) kappa_k m_{n-k}.
    fn moment_cumulants(x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let m: Vec<f64> = (0..=4).map(|p| x.iter().map(|v| v.powi(p)).sum::<f64>() / n).collect();
        let binom = |a: usize, b: usize| -> f64 { (0..b).map(|i| (a - i) as f64 / (i + 1) as f64).product() };
        let mut k = [0.0; 5];
        for r in 1..=4 {
            k[r] = m[r] - (1..r).map(|j| binom(r - 1, j - 1) * k[j] * m[r - j]).sum::<f64>();
        }
        k[1..].to_vec()
    }

    #[test]
    fn k_statistics_match_moment_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let exp = Exp::new(1.0).unwrap();
        let x: Vec<f64> = (0..200_000).map(|_| exp.sample(&mut rng)).collect();
        let c = empirical_cumulants(&x, 4).unwrap();
        let oracle = moment_cumulants(&x);
        for r in 0..4 {
            assert!((c.k[r] - oracle[r]).abs() < 1e-3 * oracle[r].abs().max(1.0), "order {}", r + 1);
        }
        assert!((c.k[2] - 2.0).abs() < 3.0 * c.std_error[2]);
    }

    #[test]
    fn gaussian_higher_cumulants_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let c = empirical_cumulants(&x, 4).unwrap();
        assert!(c.k[2].abs() < 3.0 * c.std_error[2] && c.k[3].abs() < 3.0 * c.std_error[3]);
        assert!(ks_distance_normal(&x).unwrap() < 0.01);
    }

    #[test]
    fn k_statistics_scale_and_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..1.0f64).powi(3)).collect();
        let a = -2.5;
        let y: Vec<f64> = x.iter().map(|v| a * v).collect();
        let (cx, cy) = (empirical_cumulants(&x, 4).unwrap(), empirical_cumulants(&y, 4).unwrap());
        for r in 0..4 {
            let want = a.powi(r as i32 + 1) * cx.k[r];
            assert!((cy.k[r] - want).abs() < 1e-10 * want.abs().max(1e-3));
        }
        let c = empirical_cumulants(&[3.0; 200], 4).unwrap();
        assert_eq!(&c.k[1..], &[0.0, 0.0, 0.0]);
        assert!(empirical_cumulants(&[1.0; 99], 4).is_err());
    }

    #[test]
    fn gaussian_truncated_sum_is_kernel_l1() {
        let sf = StructureFunction::new(1, Family::Constant).unwrap();
        let k = sf.covariance_kernel(3).unwrap();
        let s = gaussian_truncated_sum(&k, &Domain::ball(1, 3.0).unwrap()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clt_scan_gaussian_field() {
        let sf = StructureFunction::new(2, Family::RadialPower { alpha: 1.0, p: 2.0 }).unwrap();
        let opts = CltOptions { transform: Transform::None, replicates: 1000, seed: 8, torus: None };
        let r = clt_scan(&sf, &[2.0, 3.0], &opts).unwrap();
        for row in r.rows.iter().filter(|r| r.stat != "ks") {
            assert!(row.value.abs() < 3.0 * row.stat_err, "{row:?}");
        }
        let bad = CltOptions { torus: Some(16), ..opts.clone() };
        assert!(matches!(clt_scan(&sf, &[3.0], &bad), Err(Error::Domain(_))));
        let few = CltOptions { replicates: 10, ..opts };
        assert!(clt_scan(&sf, &[3.0], &few).is_err());
    }
}
