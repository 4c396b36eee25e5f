//! Observation windows: balls, cubes and offset boxes, their lattice points,
//! indicator Fourier transforms and local masses of sampled fields.
//!
//! Conventions:
//! - ball `B_L = { x : |x|_2 <= L }`, closed;
//! - cube `[-L, L]^d`, closed;
//! - offset box `C_L^(n) = prod_k [n_k L, (n_k + 1) L)`, half-open on the
//!   lattice so adjacent boxes tile without sharing points. The continuum
//!   transform uses the closed box (the difference has measure zero).

use crate::numerics::bessel::bessel_j_unchecked;
use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Which indicator transform a spectral functional uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformMode {
    /// Lattice sum `sum_{i in window} e^{-i xi . i}`.
    #[default]
    Lattice,
    /// Continuum transform `integral over window of e^{-i xi . x} dx`.
    Continuum,
}

impl TransformMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransformMode::Lattice => "lattice",
            TransformMode::Continuum => "continuum",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum Shape {
    Ball,
    Cube,
    Box { offset: Vec<i64> },
}

/// A window of scale `scale` in dimension `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub dim: usize,
    #[serde(flatten)]
    pub shape: Shape,
    pub scale: f64,
}

/// A maximal run of lattice points along axis 0 sharing the other coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Run {
    pub others: Vec<i64>,
    pub lo: i64,
    pub hi: i64,
}

const MEMBERSHIP_TOL: f64 = 1e-9;

fn floor_tol(x: f64) -> i64 {
    (x + MEMBERSHIP_TOL * x.abs().max(1.0)).floor() as i64
}

/// Largest w >= 0 with w^2 <= r2 (up to a relative tolerance), or -1 when r2 < 0.
fn half_width(r2: f64, l2: f64) -> i64 {
    let tol = MEMBERSHIP_TOL * l2.max(1.0);
    if r2 < -tol {
        return -1;
    }
    let mut w = r2.max(0.0).sqrt().floor() as i64;
    while ((w + 1) * (w + 1)) as f64 <= r2 + tol {
        w += 1;
    }
    while w > 0 && (w * w) as f64 > r2 + tol {
        w -= 1;
    }
    w
}

impl Domain {
    pub fn new(dim: usize, shape: Shape, scale: f64) -> Result<Self> {
        let d = Domain { dim, shape, scale };
        d.validate()?;
        Ok(d)
    }

    pub fn ball(dim: usize, scale: f64) -> Result<Self> {
        Self::new(dim, Shape::Ball, scale)
    }

    pub fn cube(dim: usize, scale: f64) -> Result<Self> {
        Self::new(dim, Shape::Cube, scale)
    }

    pub fn offset_box(offset: Vec<i64>, scale: f64) -> Result<Self> {
        Self::new(offset.len(), Shape::Box { offset }, scale)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Invalid("dimension must be >= 1".into()));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Invalid(format!("window scale {} must be finite and > 0", self.scale)));
        }
        if let Shape::Box { offset } = &self.shape {
            if offset.len() != self.dim {
                return Err(Error::Invalid(format!(
                    "box offset has {} entries for dimension {}",
                    offset.len(),
                    self.dim
                )));
            }
        }
        Ok(())
    }

    /// Human-readable statement of the membership rule.
    pub fn convention(&self) -> String {
        match &self.shape {
            Shape::Ball => format!("closed ball |x|_2 <= {}", self.scale),
            Shape::Cube => format!("closed cube [-{0}, {0}]^{1}", self.scale, self.dim),
            Shape::Box { offset } => {
                format!("half-open box prod [n_k L, (n_k + 1) L), n = {offset:?}, L = {}", self.scale)
            }
        }
    }

    /// Inclusive index range along `axis` of the bounding box.
    pub fn axis_range(&self, axis: usize) -> (i64, i64) {
        let l = self.scale;
        match &self.shape {
            Shape::Ball | Shape::Cube => {
                let w = if matches!(self.shape, Shape::Ball) { half_width(l * l, l * l) } else { floor_tol(l) };
                (-w, w)
            }
            Shape::Box { offset } => {
                let n = offset[axis] as f64;
                let tol = MEMBERSHIP_TOL * l.max(1.0);
                let lo = (n * l - tol).ceil() as i64;
                let hi = ((n + 1.0) * l - tol).ceil() as i64 - 1;
                (lo, hi)
            }
        }
    }

    /// Runs along axis 0, in lexicographic order of the other coordinates.
    pub fn runs(&self) -> Vec<Run> {
        let d = self.dim;
        let ranges: Vec<(i64, i64)> = (1..d).map(|k| self.axis_range(k)).collect();
        let mut out = Vec::new();
        let mut others: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        if ranges.iter().any(|r| r.1 < r.0) {
            return out;
        }
        loop {
            let (lo, hi) = match &self.shape {
                Shape::Ball => {
                    let s: f64 = others.iter().map(|&v| (v * v) as f64).sum();
                    let l2 = self.scale * self.scale;
                    let w = half_width(l2 - s, l2);
                    (-w, w)
                }
                _ => self.axis_range(0),
            };
            if hi >= lo {
                out.push(Run { others: others.clone(), lo, hi });
            }
            let mut k = ranges.len();
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                others[k] += 1;
                if others[k] <= ranges[k].1 {
                    break;
                }
                others[k] = ranges[k].0;
            }
        }
    }

    /// Lattice points in lexicographic order (axis 0 slowest).
    pub fn lattice_points(&self) -> Vec<Vec<i64>> {
        let runs = self.runs();
        let (lo, hi) = runs.iter().fold((i64::MAX, i64::MIN), |acc, r| (acc.0.min(r.lo), acc.1.max(r.hi)));
        let mut pts = Vec::new();
        for i0 in lo..=hi {
            for r in &runs {
                if i0 >= r.lo && i0 <= r.hi {
                    let mut p = Vec::with_capacity(self.dim);
                    p.push(i0);
                    p.extend_from_slice(&r.others);
                    pts.push(p);
                }
            }
        }
        pts
    }

    pub fn n_points(&self) -> usize {
        self.runs().iter().map(|r| (r.hi - r.lo + 1) as usize).sum()
    }

    /// Largest coordinate difference between two window points along any axis.
    pub fn max_lag(&self) -> usize {
        let runs = self.runs();
        let mut ext = 0i64;
        if let (Some(lo), Some(hi)) = (runs.iter().map(|r| r.lo).min(), runs.iter().map(|r| r.hi).max()) {
            ext = ext.max(hi - lo);
        }
        for k in 1..self.dim {
            let (a, b) = self.axis_range(k);
            ext = ext.max(b - a);
        }
        ext.max(0) as usize
    }

    /// True when the window is invariant under each coordinate reflection.
    pub fn reflection_symmetric(&self) -> bool {
        !matches!(self.shape, Shape::Box { .. })
    }

    /// Volume of the continuum window.
    pub fn volume(&self) -> f64 {
        let l = self.scale;
        match &self.shape {
            Shape::Ball => {
                let d = self.dim as f64;
                PI.powf(d / 2.0) * l.powf(d) / gamma_half(self.dim + 2)
            }
            Shape::Cube => (2.0 * l).powi(self.dim as i32),
            Shape::Box { .. } => l.powi(self.dim as i32),
        }
    }

    /// Lattice transform `sum_{i in window} e^{-i xi . i}`.
    pub fn lattice_ft(&self, xi: &[f64]) -> Complex64 {
        match &self.shape {
            Shape::Ball => {
                let mut total = Complex64::new(0.0, 0.0);
                for r in self.runs() {
                    let phase: f64 = r.others.iter().zip(&xi[1..]).map(|(i, x)| *i as f64 * x).sum();
                    total += dirichlet(xi[0], r.lo, r.hi) * Complex64::from_polar(1.0, -phase);
                }
                total
            }
            _ => (0..self.dim).fold(Complex64::new(1.0, 0.0), |acc, k| {
                let (a, b) = self.axis_range(k);
                acc * dirichlet(xi[k], a, b)
            }),
        }
    }

    /// Continuum transform `integral over window of e^{-i xi . x} dx`.
    pub fn continuum_ft(&self, xi: &[f64]) -> Result<Complex64> {
        let l = self.scale;
        match &self.shape {
            Shape::Ball => {
                if self.dim > 3 {
                    return Err(Error::Domain(format!(
                        "continuum ball transform needs J_(d/2); d = {} is unsupported",
                        self.dim
                    )));
                }
                let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r * l < 1e-8 {
                    return Ok(Complex64::new(self.volume(), 0.0));
                }
                let nu = self.dim as f64 / 2.0;
                Ok(Complex64::new((2.0 * PI * l / r).powf(nu) * bessel_j_unchecked(nu, l * r), 0.0))
            }
            Shape::Cube => Ok(Complex64::new(xi.iter().map(|&x| 2.0 * sinc_scaled(x, l)).product(), 0.0)),
            Shape::Box { offset } => Ok(xi.iter().zip(offset).fold(Complex64::new(1.0, 0.0), |acc, (&x, &n)| {
                let centre = (n as f64 + 0.5) * l;
                acc * Complex64::from_polar(2.0 * sinc_scaled(x, l / 2.0), -x * centre)
            })),
        }
    }

    pub fn indicator_ft(&self, xi: &[f64], mode: TransformMode) -> Result<Complex64> {
        if xi.len() != self.dim || xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("frequency must be a finite {}-vector", self.dim)));
        }
        match mode {
            TransformMode::Lattice => Ok(self.lattice_ft(xi)),
            TransformMode::Continuum => self.continuum_ft(xi),
        }
    }

    /// Sum of `field` (an N^d torus in row-major order) over `anchor + window`.
    pub fn local_mass(&self, field: &[f64], n: usize, anchor: &[i64]) -> Result<f64> {
        if anchor.len() != self.dim {
            return Err(Error::Invalid("anchor dimension mismatch".into()));
        }
        if n.checked_pow(self.dim as u32) != Some(field.len()) {
            return Err(Error::Invalid(format!("field has {} sites, expected {n}^{}", field.len(), self.dim)));
        }
        let runs = self.runs();
        let mut span0 = (i64::MAX, i64::MIN);
        for r in &runs {
            span0 = (span0.0.min(r.lo), span0.1.max(r.hi));
        }
        let mut extent = span0.1 - span0.0;
        for k in 1..self.dim {
            let (a, b) = self.axis_range(k);
            extent = extent.max(b - a);
        }
        if extent >= n as i64 {
            return Err(Error::Invalid(format!(
                "window extent {} does not fit in a torus of side {n} without wrap",
                extent + 1
            )));
        }
        let ni = n as i64;
        let mut total = 0.0;
        for r in &runs {
            let mut base = 0usize;
            for (k, &o) in r.others.iter().enumerate() {
                let c = (o + anchor[k + 1]).rem_euclid(ni) as usize;
                base += c * n.pow((self.dim - 2 - k) as u32);
            }
            let stride = n.pow(self.dim as u32 - 1);
            for i0 in r.lo..=r.hi {
                let c0 = (i0 + anchor[0]).rem_euclid(ni) as usize;
                total += field[c0 * stride + base];
            }
        }
        Ok(total)
    }
}

/// Gamma(m / 2) for integer m >= 1.
fn gamma_half(m: usize) -> f64 {
    if m.is_multiple_of(2) {
        (1..m / 2).fold(1.0, |acc, k| acc * k as f64)
    } else {
        let mut g = PI.sqrt();
        let mut x = 0.5;
        while x < m as f64 / 2.0 - 0.75 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

/// sin(l x) / x with the limit l at x = 0.
fn sinc_scaled(x: f64, l: f64) -> f64 {
    if (x * l).abs() < 1e-8 {
        l
    } else {
        (l * x).sin() / x
    }
}

/// sin(n t / 2) / sin(t / 2), the symmetric Dirichlet kernel for a run of n points.
pub fn dirichlet_ratio(t: f64, n: i64) -> f64 {
    if n <= 0 {
        return 0.0;
    }
    let s = (0.5 * t).sin();
    if s.abs() < 1e-7 {
        // expansion around t = 2 pi k; only k = 0 occurs for t in [-pi, pi]
        let nf = n as f64;
        return nf * (1.0 - (nf * nf - 1.0) * t * t / 24.0);
    }
    (0.5 * n as f64 * t).sin() / s
}

/// `sum_{t=a}^{b} e^{-i theta t}`.
pub fn dirichlet(theta: f64, a: i64, b: i64) -> Complex64 {
    if b < a {
        return Complex64::new(0.0, 0.0);
    }
    let centre = 0.5 * (a + b) as f64;
    Complex64::from_polar(dirichlet_ratio(theta, b - a + 1), -theta * centre)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_point_counts() {
        assert_eq!(Domain::ball(2, 1.0).unwrap().n_points(), 5);
        assert_eq!(Domain::ball(2, 5.0).unwrap().n_points(), 81);
        assert_eq!(Domain::ball(1, 3.0).unwrap().n_points(), 7);
        assert_eq!(Domain::ball(3, 1.0).unwrap().n_points(), 7);
        // brute force
        let l = 7.3;
        let want = (-8..=8)
            .flat_map(|a| (-8..=8).map(move |b| (a, b)))
            .filter(|(a, b)| ((a * a + b * b) as f64) <= l * l)
            .count();
        assert_eq!(Domain::ball(2, l).unwrap().n_points(), want);
    }

    #[test]
    fn cube_and_box_counts() {
        assert_eq!(Domain::cube(2, 3.0).unwrap().n_points(), 49);
        let b = Domain::offset_box(vec![1, 0], 4.0).unwrap();
        assert_eq!(b.n_points(), 16);
        assert_eq!(b.axis_range(0), (4, 7));
        assert_eq!(b.axis_range(1), (0, 3));
    }

    #[test]
    fn lattice_points_are_lexicographic_and_complete() {
        let d = Domain::ball(2, 2.0).unwrap();
        let pts = d.lattice_points();
        assert_eq!(pts.len(), d.n_points());
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
        assert!(pts.iter().all(|p| p[0] * p[0] + p[1] * p[1] <= 4));
    }

    #[test]
    fn lattice_ft_matches_direct_sum() {
        for dom in [
            Domain::ball(2, 4.5).unwrap(),
            Domain::cube(2, 3.0).unwrap(),
            Domain::offset_box(vec![1, 2], 3.0).unwrap(),
            Domain::ball(3, 2.2).unwrap(),
        ] {
            let xi: Vec<f64> = (0..dom.dim).map(|k| 0.37 + 0.91 * k as f64).collect();
            let direct: Complex64 = dom
                .lattice_points()
                .iter()
                .map(|p| {
                    let ph: f64 = p.iter().zip(&xi).map(|(a, b)| *a as f64 * b).sum();
                    Complex64::from_polar(1.0, -ph)
                })
                .sum();
            let got = dom.lattice_ft(&xi);
            assert!((got - direct).norm() < 1e-10, "{dom:?}");
        }
    }

    /// Direct polar-coordinate quadrature of the disk transform.
    fn disk_ft_oracle(l: f64, xi: [f64; 2]) -> f64 {
        let (nr, na) = (400, 400);
        let mut s = 0.0;
        for i in 0..nr {
            let r = l * (i as f64 + 0.5) / nr as f64;
            for j in 0..na {
                let a = 2.0 * PI * j as f64 / na as f64;
                s += (r * (xi[0] * a.cos() + xi[1] * a.sin())).cos() * r;
            }
        }
        s * (l / nr as f64) * (2.0 * PI / na as f64)
    }

    #[test]
    fn continuum_ball_transform_constant() {
        let dom = Domain::ball(2, 3.0).unwrap();
        for xi in [[0.4, 0.3], [1.0, -0.2], [0.0, 0.0]] {
            let got = dom.continuum_ft(&xi).unwrap().re;
            let want = disk_ft_oracle(3.0, xi);
            assert!((got - want).abs() < 1e-3 * want.abs().max(1.0), "{xi:?}: {got} vs {want}");
        }
        // d = 1 ball is the interval [-L, L]
        let seg = Domain::ball(1, 2.0).unwrap().continuum_ft(&[0.7]).unwrap().re;
        assert!((seg - 2.0 * (1.4f64).sin() / 0.7).abs() < 1e-10);
        // d = 3 at the origin gives the volume
        let b3 = Domain::ball(3, 2.0).unwrap();
        assert!((b3.continuum_ft(&[1e-12, 0.0, 0.0]).unwrap().re - 4.0 / 3.0 * PI * 8.0).abs() < 1e-9);
        let small = b3.continuum_ft(&[1e-3, 0.0, 0.0]).unwrap().re;
        assert!((small - b3.volume()).abs() < 1e-3);
    }

    #[test]
    fn continuum_ball_above_three_dimensions_is_unsupported() {
        let dom = Domain::ball(4, 2.0).unwrap();
        assert!(matches!(dom.continuum_ft(&[0.1; 4]), Err(Error::Domain(_))));
    }

    #[test]
    fn local_mass_sums_and_checks_wrap() {
        let n = 8;
        let field: Vec<f64> = (0..n * n).map(|v| v as f64).collect();
        let dom = Domain::cube(2, 1.0).unwrap();
        let m = dom.local_mass(&field, n, &[3, 3]).unwrap();
        let want: f64 = (2..=4).flat_map(|a| (2..=4).map(move |b| (a * n + b) as f64)).sum();
        assert_eq!(m, want);
        assert!(Domain::cube(2, 4.0).unwrap().local_mass(&field, n, &[0, 0]).is_err());
        // periodic wrap of the anchor itself is allowed
        assert!(dom.local_mass(&field, n, &[0, 7]).is_ok());
    }

    #[test]
    fn invalid_windows_rejected() {
        assert!(Domain::ball(2, 0.0).is_err());
        assert!(Domain::ball(2, f64::NAN).is_err());
        assert!(Domain::new(2, Shape::Box { offset: vec![1] }, 2.0).is_err());
    }
}
