//! Acceptance criteria, one line each. Runs without the libtest harness so the
//! report is always printed; exits nonzero when any criterion fails.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectralfield::entropy::{covariance_matrix, entropy_scan};
use spectralfield::fluctuations::{
    covariance_boxes, covariance_grid, covariance_limit, exponent_scan, theta_scan, variance_direct, variance_spectral,
    ScanReport, SpectralOptions,
};
use spectralfield::geometry::{Domain, Shape, TransformMode};
use spectralfield::moments::{
    clt_scan, correlation_table, truncated_from_correlations, truncated_table, CltOptions, CorrelationTable,
};
use spectralfield::numerics::bessel::{bessel_j, bessel_j_leading};
use spectralfield::numerics::linalg::log_det_psd;
use spectralfield::sampler::Transform;
use spectralfield::spectral_models::{CosineTerm, Family, StructureFunction};
use std::f64::consts::PI;
use std::time::Instant;

type Outcome = Result<(bool, String), String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn model(dim: usize, family: Family) -> Result<StructureFunction, String> {
    StructureFunction::new(dim, family).map_err(|e| e.to_string())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn families(dim: usize) -> Vec<Family> {
    vec![
        Family::Constant,
        Family::StealthyGap { delta: PI / 2.0 },
        Family::RadialPower { alpha: 1.0, p: 2.0 },
        Family::AnisotropicProduct { alphas: [0.5, 1.0][..dim].to_vec() },
        Family::AxesStealthy { delta: PI / 2.0 },
    ]
}

fn criterion_1() -> Outcome {
    let mut worst = (0.0, String::new());
    for dim in [1, 2] {
        for fam in families(dim) {
            let sf = model(dim, fam)?;
            for l in [5.0, 10.0, 20.0] {
                for shape in [Shape::Ball, Shape::Cube] {
                    let dom = Domain::new(dim, shape.clone(), l).map_err(|e| e.to_string())?;
                    let s = variance_spectral(&sf, &dom, TransformMode::Lattice).map_err(|e| e.to_string())?;
                    let d = variance_direct(&sf, &dom).map_err(|e| e.to_string())?;
                    let r = rel(s.value, d.value);
                    if r > worst.0 || worst.1.is_empty() {
                        worst = (r, format!("{} {shape:?} L={l}", sf.id()));
                    }
                }
            }
        }
    }
    Ok((worst.0 <= 1e-6, format!("max relative gap {:.2e} at {} (tol 1e-6)", worst.0, worst.1)))
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for dim in 1..=3 {
        let sf = model(dim, Family::Constant)?;
        let scales: &[f64] = if dim == 3 { &[3.0, 7.5, 12.0] } else { &[3.0, 7.5, 20.0, 64.0] };
        for &l in scales {
            for shape in [Shape::Ball, Shape::Cube] {
                let dom = Domain::new(dim, shape, l).map_err(|e| e.to_string())?;
                let v = variance_spectral(&sf, &dom, TransformMode::Lattice).map_err(|e| e.to_string())?;
                worst = worst.max(rel(v.value, dom.n_points() as f64));
                cases += 1;
            }
        }
    }
    Ok((worst <= 1e-6, format!("{cases} windows, max relative gap {worst:.2e} (tol 1e-6)")))
}

fn criterion_3() -> Outcome {
    let sf = model(1, Family::StealthyGap { delta: PI / 2.0 })?;
    let l = 512.0;
    let dom = Domain::ball(1, l).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (mode, closed) in [(TransformMode::Continuum, 8.0 / PI), (TransformMode::Lattice, 2.0 / PI)] {
        let sigma = sf.sigma_sq_d(mode).map_err(|e| e.to_string())?.to_f64();
        let v = variance_spectral(&sf, &dom, mode).map_err(|e| e.to_string())?.value;
        let c = covariance_boxes(&sf, l, &[1], mode).map_err(|e| e.to_string())?.value;
        let target = covariance_limit(sigma, &[1]);
        let (rv, rc) = (rel(v, sigma), rel(c, target));
        ok &= rv <= 0.03 && rc <= 0.05 && rel(sigma, closed) < 1e-9;
        parts.push(format!(
            "{}: sigma^2={sigma:.6} (closed {closed:.6}) var={v:.5} ({:.2}%) adj cov={c:.5} vs {target:.5} ({:.2}%)",
            mode.as_str(),
            100.0 * rv,
            100.0 * rc
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn criterion_4() -> Outcome {
    let sf = model(2, Family::AxesStealthy { delta: PI / 2.0 })?;
    let mut ok = true;
    let mut parts = Vec::new();
    for mode in [TransformMode::Lattice, TransformMode::Continuum] {
        let g = covariance_grid(&sf, 128.0, mode, &SpectralOptions::default()).map_err(|e| e.to_string())?;
        let mut signs = true;
        let mut line = Vec::new();
        for e in &g.entries {
            let target = e.predicted_limit / g.sigma_sq;
            let within = if target == 0.0 { e.ratio.abs() <= 0.02 } else { (e.ratio - target).abs() <= 0.05 };
            // Zero-limit offsets have no sign to match.
            let sign = target == 0.0 || e.ratio.signum() == target.signum();
            signs &= sign;
            ok &= within && sign && e.converged;
            line.push(format!("{:?}:{:+.4}", e.offset, e.ratio));
        }
        parts.push(format!("{} [{}] signs {}", mode.as_str(), line.join(" "), if signs { "ok" } else { "wrong" }));
    }
    Ok((ok, parts.join("; ")))
}

fn fitted(r: &ScanReport) -> Result<f64, String> {
    r.fit.as_ref().map(|f| f.beta).ok_or_else(|| "no fit".to_string())
}

const GRID: [f64; 5] = [16.0, 32.0, 64.0, 128.0, 256.0];

fn criterion_5() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (alpha, target) in [(0.5, 1.5), (1.0, 1.0)] {
        let sf = model(2, Family::RadialPower { alpha, p: 2.0 })?;
        let r = exponent_scan(&sf, &Shape::Cube, &GRID, TransformMode::Lattice).map_err(|e| e.to_string())?;
        let beta = fitted(&r)?;
        let tau = r.fit.as_ref().map(|f| f.tau).unwrap_or(0);
        let pass = (beta - target).abs() <= 0.1 && r.all_converged();
        ok &= pass;
        let mut line = format!("alpha={alpha}: beta={beta:.4} (log^{tau} divided, target {target})");
        if !pass {
            // Diagnostic only: the continuum functional on the same grid.
            let c = exponent_scan(&sf, &Shape::Cube, &GRID, TransformMode::Continuum).map_err(|e| e.to_string())?;
            line.push_str(&format!(" [continuum {:.4}]", fitted(&c)?));
        }
        parts.push(line);
    }
    Ok((ok, parts.join("; ")))
}

fn criterion_6() -> Outcome {
    let sf = model(2, Family::AxesStealthy { delta: PI / 2.0 })?;
    let cube = fitted(&exponent_scan(&sf, &Shape::Cube, &GRID, TransformMode::Lattice).map_err(|e| e.to_string())?)?;
    let ball = fitted(&exponent_scan(&sf, &Shape::Ball, &GRID, TransformMode::Lattice).map_err(|e| e.to_string())?)?;
    let ok = cube.abs() <= 0.1 && (ball - 1.0).abs() <= 0.15;
    Ok((ok, format!("cube beta={cube:.4} (target 0 +- 0.1), ball beta={ball:.4} (target 1 +- 0.15)")))
}

fn criterion_7() -> Outcome {
    let grid = [16.0, 32.0, 64.0, 128.0, 256.0, 512.0];
    let opts = SpectralOptions::default();
    let mut ok = true;
    let mut parts = Vec::new();
    let models = [
        Family::Constant,
        Family::RadialPower { alpha: 0.5, p: 2.0 },
        Family::RadialPower { alpha: 1.0, p: 2.0 },
        Family::StealthyGap { delta: PI / 2.0 },
    ];
    for fam in models {
        let sf = model(2, fam)?;
        let r = theta_scan(&sf, &grid, PI, TransformMode::Lattice, &opts).map_err(|e| e.to_string())?;
        let slope = fitted(&r)?;
        let pass = slope.abs() <= 0.05 && r.all_converged();
        ok &= pass;
        let mut line = format!("{} slope={slope:+.4}", sf.id());
        if !pass {
            // Diagnostic only: the slope at other cutoffs.
            let mut alt = Vec::new();
            for c in [1.0, 2.0 * PI] {
                let s = fitted(&theta_scan(&sf, &grid, c, TransformMode::Lattice, &opts).map_err(|e| e.to_string())?)?;
                alt.push(format!("c={c:.3}:{s:+.4}"));
            }
            line.push_str(&format!(" [{}]", alt.join(" ")));
        }
        parts.push(line);
    }
    Ok((ok, format!("c=pi; {}", parts.join("; "))))
}

/// J_1 by the trapezoid rule on Bessel's integral, exact to rounding once the
/// node count exceeds z by a margin.
fn bessel_j1_integral(z: f64) -> f64 {
    let m = 2 * (z as usize) + 64;
    let h = PI / m as f64;
    let mut s = 0.5 * ((0.0f64).cos() + (PI - z * PI.sin()).cos());
    for i in 1..m {
        let t = i as f64 * h;
        s += (t - z * t.sin()).cos();
    }
    s * h / PI
}

fn bessel_closed(nu: f64, z: f64) -> f64 {
    let a = (2.0 / (PI * z)).sqrt();
    if nu == 0.5 {
        a * z.sin()
    } else {
        a * (z.sin() / z - z.cos())
    }
}

fn criterion_8() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for nu in [0.5, 1.0, 1.5] {
        let mut sup = 0.0f64;
        let mut sup_oracle = 0.0f64;
        let mut max_gap = 0.0f64;
        let steps = 99_000;
        for i in 0..=steps {
            let z = 10.0 + 990.0 * i as f64 / steps as f64;
            let lead = bessel_j_leading(nu, z).map_err(|e| e.to_string())?;
            let j = bessel_j(nu, z).map_err(|e| e.to_string())?;
            sup = sup.max(z.powf(1.5) * (j - lead).abs());
            if nu != 1.0 || i % 10 == 0 {
                let o = if nu == 1.0 { bessel_j1_integral(z) } else { bessel_closed(nu, z) };
                sup_oracle = sup_oracle.max(z.powf(1.5) * (o - lead).abs());
                max_gap = max_gap.max(z.powf(1.5) * (o - j).abs());
            }
        }
        ok &= sup <= 1.0 && sup_oracle <= 1.0 && max_gap < 1e-6;
        parts.push(format!("nu={nu}: M={sup:.4} (oracle {sup_oracle:.4}, z^1.5 gap {max_gap:.1e})"));
    }
    Ok((ok, parts.join("; ")))
}

fn points(n: usize) -> Vec<Vec<i64>> {
    (0..n as i64).map(|i| vec![i]).collect()
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for n in 1..=5 {
        for _ in 0..100 {
            let mut t = CorrelationTable::new(points(n)).map_err(|e| e.to_string())?;
            for mask in 1..(1u32 << n) {
                t.set(mask, rng.gen_range(-1.0..1.0)).map_err(|e| e.to_string())?;
            }
            let back =
                correlation_table(&truncated_table(&t).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            for mask in 1..(1u32 << n) {
                worst = worst.max((back.get(mask).unwrap() - t.get(mask).unwrap()).abs());
            }
        }
    }
    // Independent blocks: rho(S) = rho_A(S & A) rho_B(S & B), integer valued so
    // the Mobius sum is exact in floating point.
    let mut nonzero = 0;
    let mut checked = 0;
    for n in 2..=4 {
        for split in 1..(1u32 << n) - 1 {
            for _ in 0..20 {
                let va: Vec<f64> = (0..1u32 << n).map(|_| rng.gen_range(-4..=4) as f64).collect();
                let vb: Vec<f64> = (0..1u32 << n).map(|_| rng.gen_range(-4..=4) as f64).collect();
                let part = |v: &Vec<f64>, m: u32| if m == 0 { 1.0 } else { v[m as usize] };
                let mut t = CorrelationTable::new(points(n)).map_err(|e| e.to_string())?;
                for mask in 1..(1u32 << n) {
                    t.set(mask, part(&va, mask & split) * part(&vb, mask & !split & ((1 << n) - 1)))
                        .map_err(|e| e.to_string())?;
                }
                checked += 1;
                if truncated_from_correlations(&t).map_err(|e| e.to_string())? != 0.0 {
                    nonzero += 1;
                }
            }
        }
    }
    let ok = worst <= 1e-12 && nonzero == 0;
    Ok((ok, format!("round-trip max error {worst:.1e} (tol 1e-12); {nonzero}/{checked} block-diagonal tables with nonzero rho^T")))
}

fn criterion_10() -> Outcome {
    let sf = model(2, Family::Constant)?;
    let opts = CltOptions { transform: Transform::Sign, replicates: 10_000, seed: 10, torus: None };
    let r = clt_scan(&sf, &[16.0], &opts).map_err(|e| e.to_string())?;
    let row = |s: &str| r.rows.iter().find(|x| x.stat == s).ok_or_else(|| format!("missing {s} row"));
    let (k3, k4, ks) = (row("k3")?, row("k4")?, row("ks")?);
    let ok = ks.value < 0.02 && k3.value.abs() <= 3.0 * k3.stat_err && k4.value.abs() <= 3.0 * k4.stat_err;
    Ok((
        ok,
        format!(
            "KS={:.4} (< 0.02); k3={:+.4} ({:.2} SE); k4={:+.4} ({:.2} SE)",
            ks.value,
            k3.value,
            k3.value.abs() / k3.stat_err,
            k4.value,
            k4.value.abs() / k4.stat_err
        ),
    ))
}

fn criterion_11() -> Outcome {
    let sf =
        model(1, Family::CosineSeries { constant: 1.0, terms: vec![CosineTerm { lag: vec![1], amplitude: 0.5 }] })?;
    let dom = Domain::offset_box(vec![0], 2048.0).map_err(|e| e.to_string())?;
    let pts = dom.lattice_points();
    let m = covariance_matrix(&sf, &pts).map_err(|e| e.to_string())?;
    let per_site = log_det_psd(&m, 0.0).map_err(|e| e.to_string())?.to_f64() / pts.len() as f64;
    // Mean of log(1 + a cos) is log((1 + sqrt(1 - a^2)) / 2).
    let oracle = ((1.0 + (1.0f64 - 0.25).sqrt()) / 2.0).ln();
    let gap = (per_site - oracle).abs();
    Ok((
        gap <= 1e-3,
        format!("n={} per-site log det {per_site:.6} vs {oracle:.6} (gap {gap:.1e}, tol 1e-3)", pts.len()),
    ))
}

fn decrements(sf: &StructureFunction, l: f64, eps: &[f64]) -> Result<(Vec<f64>, Vec<f64>), String> {
    let scan = entropy_scan(sf, &Shape::Ball, &[l], eps).map_err(|e| e.to_string())?;
    let rows: Vec<_> = scan.rows.iter().filter(|r| r.eps > 0.0).collect();
    let h: Vec<f64> = rows.iter().map(|r| r.entropy_per_site.to_f64()).collect();
    let reference: Vec<f64> =
        rows.windows(2).map(|w| 0.5 * (w[0].szego_ref.to_f64() - w[1].szego_ref.to_f64())).collect();
    Ok((h.windows(2).map(|w| w[0] - w[1]).collect(), reference))
}

fn criterion_12() -> Outcome {
    let eps: Vec<f64> = (2..=8).map(|k| 10f64.powi(-k)).collect();
    let predicted = 0.25 * 10f64.ln();
    let sf1 = model(1, Family::StealthyGap { delta: PI / 2.0 })?;
    let (dec, reference) = decrements(&sf1, 1024.0, &eps)?;
    let monotone = dec.iter().all(|d| *d > 0.0);
    let within = dec.iter().zip(&reference).all(|(d, r)| rel(*d, *r) <= 0.15);
    let ref_ok = reference.iter().all(|r| rel(*r, predicted) < 1e-2);
    let fmt = |v: &[f64]| v.iter().map(|d| format!("{d:.3}")).collect::<Vec<_>>().join(",");
    let mut ok = monotone && within && ref_ok;
    let mut parts =
        vec![format!("d=1 L=1024 decrements [{}] vs reference [{}] (~{predicted:.4})", fmt(&dec), fmt(&reference))];
    // A finite window's covariance is nonsingular, so each d=2 curve must
    // flatten eventually; the trend is that every decade lowers the entropy
    // and the decrement at every decade grows with L.
    let sf2 = model(2, Family::StealthyGap { delta: PI / 2.0 })?;
    let mut previous: Option<Vec<f64>> = None;
    for l in [8.0, 16.0, 32.0] {
        let (dec2, _) = decrements(&sf2, l, &eps)?;
        ok &= dec2.iter().all(|d| *d > 0.0);
        if let Some(p) = &previous {
            ok &= dec2.iter().zip(p).all(|(a, b)| a > b);
        }
        parts.push(format!("d=2 ball L={l} [{}]", fmt(&dec2)));
        previous = Some(dec2);
    }
    Ok((ok, parts.join("; ")))
}

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "spectral vs direct variance", criterion_1),
        (2, "white-noise volume law", criterion_2),
        (3, "d=1 stealthy variance limit", criterion_3),
        (4, "d=2 axes-stealthy covariance grid", criterion_4),
        (5, "radial-power cube exponents", criterion_5),
        (6, "ball vs cube contrast", criterion_6),
        (7, "theta sandwich", criterion_7),
        (8, "Bessel asymptotic remainder", criterion_8),
        (9, "partition algebra", criterion_9),
        (10, "CLT diagnostic", criterion_10),
        (11, "Szego convergence", criterion_11),
        (12, "entropic degeneracy", criterion_12),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {id:>2} {:<4} {name} ({secs:.1}s): {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
