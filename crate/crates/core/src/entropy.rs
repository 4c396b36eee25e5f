//! Gaussian covariance matrices on lattice windows, their entropy, and the
//! epsilon-perturbation scan against Szego references.
//!
//! Entropy is the differential entropy of the Gaussian vector,
//! `h = n log(2 pi e) / 2 + log det(Sigma) / 2`.

use crate::fluctuations::fmt_real;
use crate::geometry::{Domain, Shape};
use crate::numerics::linalg::{log_det_psd, SymMatrix};
use crate::numerics::ExtReal;
use crate::spectral_models::{KernelTable, StructureFunction};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Largest window handled by the dense path.
pub const MAX_DENSE_POINTS: usize = 4096;

/// Entropy of one standard normal coordinate, `log(2 pi e) / 2`.
pub fn entropy_per_unit() -> f64 {
    0.5 * (2.0 * PI * std::f64::consts::E).ln()
}

fn max_separation(points: &[Vec<i64>]) -> usize {
    let d = points.first().map_or(0, Vec::len);
    (0..d)
        .map(|k| {
            let lo = points.iter().map(|p| p[k]).min().unwrap();
            let hi = points.iter().map(|p| p[k]).max().unwrap();
            (hi - lo) as usize
        })
        .max()
        .unwrap_or(0)
}

/// Gram matrix (K(p_i - p_j)) from a kernel table.
pub fn covariance_matrix_from_kernel(kernel: &KernelTable, points: &[Vec<i64>]) -> Result<SymMatrix> {
    if points.len() > MAX_DENSE_POINTS {
        return Err(Error::Resource(format!(
            "{} points exceed the dense budget of {MAX_DENSE_POINTS}; use a smaller L",
            points.len()
        )));
    }
    if points.iter().any(|p| p.len() != kernel.dim) {
        return Err(Error::Invalid("point dimension differs from the kernel".into()));
    }
    let need = max_separation(points);
    if need > kernel.radius {
        return Err(Error::Invalid(format!("kernel radius {} is below the point spread {need}", kernel.radius)));
    }
    Ok(SymMatrix::from_fn(points.len(), |i, j| {
        let lag: Vec<i64> = points[i].iter().zip(&points[j]).map(|(a, b)| a - b).collect();
        kernel.get(&lag).expect("lag within radius")
    }))
}

pub fn covariance_matrix(sf: &StructureFunction, points: &[Vec<i64>]) -> Result<SymMatrix> {
    if points.len() > MAX_DENSE_POINTS {
        return Err(Error::Resource(format!(
            "{} points exceed the dense budget of {MAX_DENSE_POINTS}; use a smaller L",
            points.len()
        )));
    }
    let kernel = sf.covariance_kernel(max_separation(points))?;
    covariance_matrix_from_kernel(&kernel, points)
}

/// Gaussian entropy of a covariance matrix with `jitter` added to the diagonal.
pub fn gaussian_entropy(m: &SymMatrix, jitter: f64) -> Result<ExtReal> {
    let ld = log_det_psd(m, jitter)?;
    Ok(match ld {
        ExtReal::Finite(v) => ExtReal::Finite(m.n() as f64 * entropy_per_unit() + 0.5 * v),
        other => other,
    })
}

/// `(2 pi)^{-d} integral log S`, `-inf` for gap families.
pub fn szego_limit(sf: &StructureFunction) -> Result<ExtReal> {
    sf.szego_limit()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyRow {
    pub l: f64,
    /// 0 for the unperturbed column.
    pub eps: f64,
    pub n_points: usize,
    pub logdet_per_site: ExtReal,
    pub entropy_per_site: ExtReal,
    pub szego_ref: ExtReal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyScan {
    pub model: String,
    pub shape: Shape,
    /// False for cube and box windows, which lack the curvature hypothesis.
    pub hypothesis_met: bool,
    pub rows: Vec<EntropyRow>,
}

impl EntropyScan {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("L,eps,n_points,logdet_per_site,entropy_per_site,szego_ref\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_real(r.l),
                fmt_real(r.eps),
                r.n_points,
                r.logdet_per_site,
                r.entropy_per_site,
                r.szego_ref
            ));
        }
        s
    }

    /// Rows for one L, in scan order.
    pub fn at(&self, l: f64) -> Vec<&EntropyRow> {
        self.rows.iter().filter(|r| r.l == l).collect()
    }
}

/// Per-site log det and entropy on `shape` windows for each (L, eps), plus the
/// eps = 0 column. An unperturbed matrix that is singular at working
/// precision is reported as `-inf`.
pub fn entropy_scan(sf: &StructureFunction, shape: &Shape, l_grid: &[f64], eps_grid: &[f64]) -> Result<EntropyScan> {
    if l_grid.is_empty() || eps_grid.is_empty() {
        return Err(Error::Invalid("entropy scan needs nonempty L and eps grids".into()));
    }
    if eps_grid.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::Invalid("eps values must be positive".into()));
    }
    let domains: Vec<Domain> =
        l_grid.iter().map(|&l| Domain::new(sf.dim(), shape.clone(), l)).collect::<Result<_>>()?;
    for d in &domains {
        if d.n_points() > MAX_DENSE_POINTS {
            return Err(Error::Resource(format!(
                "window at L = {} has {} points, above the dense budget of {MAX_DENSE_POINTS}; use a smaller L",
                d.scale,
                d.n_points()
            )));
        }
    }
    let radius = domains.iter().map(Domain::max_lag).max().unwrap();
    let kernel = sf.covariance_kernel(radius)?;
    let mut refs = vec![sf.szego_limit()?];
    for &e in eps_grid {
        refs.push(sf.szego_limit_shifted(e)?);
    }
    let eps_all: Vec<f64> = std::iter::once(0.0).chain(eps_grid.iter().copied()).collect();
    let mut rows = Vec::new();
    for dom in &domains {
        let pts = dom.lattice_points();
        let m = covariance_matrix_from_kernel(&kernel, &pts)?;
        let n = pts.len() as f64;
        let cells: Vec<Result<EntropyRow>> = eps_all
            .par_iter()
            .enumerate()
            .map(|(i, &e)| {
                let ld = match log_det_psd(&m, e) {
                    Ok(v) => v,
                    Err(Error::Numeric(_)) if e == 0.0 => ExtReal::NegInfinity,
                    Err(err) => return Err(err),
                };
                let (per_site, entropy) = match ld {
                    ExtReal::Finite(v) => (ExtReal::Finite(v / n), ExtReal::Finite(entropy_per_unit() + 0.5 * v / n)),
                    other => (other, other),
                };
                Ok(EntropyRow {
                    l: dom.scale,
                    eps: e,
                    n_points: pts.len(),
                    logdet_per_site: per_site,
                    entropy_per_site: entropy,
                    szego_ref: refs[i],
                })
            })
            .collect();
        for c in cells {
            rows.push(c?);
        }
    }
    Ok(EntropyScan { model: sf.id(), hypothesis_met: matches!(shape, Shape::Ball), shape: shape.clone(), rows })
}
