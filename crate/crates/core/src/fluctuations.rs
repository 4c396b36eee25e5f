//! Variances and covariances of window masses, the Theta functional, and
//! exponent scans over window scales.
//!
//! Lattice mode computes the exact lattice quantities
//! `(2 pi)^{-d} integral D_A conj(D_B) S`. Continuum mode computes the
//! functional `integral phi_hat_A conj(phi_hat_B) S d xi` over the torus with no
//! `(2 pi)^{-d}` factor, whose limits are the continuum sigma_d^2 conventions.

use crate::geometry::{dirichlet, dirichlet_ratio, Domain, Shape, TransformMode};
use crate::numerics::quadrature::{refine_scalar, shell_points, AxisRule, Cubature, Nodes, Piece, Refinement, Shell};
use crate::numerics::{Estimate, ExtReal};
use crate::sampler::GaussianSampler;
use crate::spectral_models::{cos_table, Family, KernelTable, StructureFunction};
use crate::util::par_sum;
use crate::{Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Controls for spectral functionals.
#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    pub refinement: Refinement,
    /// Upper bound on cubature nodes per evaluation.
    pub max_nodes: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            refinement: Refinement { tolerance: 1e-9, abs_floor: 1e-12, max_depth: 4, order: 16 },
            max_nodes: 400_000_000,
        }
    }
}

/// What is integrated against the spectral measure.
#[derive(Debug, Clone)]
enum Functional {
    /// |transform of the window|^2
    Variance,
    /// transform(A) * conj(transform(B)) for two boxes of the same scale
    Cross { a: Vec<i64>, b: Vec<i64> },
}

/// Var(Q_window) from the spectral side.
pub fn variance_spectral(sf: &StructureFunction, dom: &Domain, mode: TransformMode) -> Result<Estimate> {
    variance_spectral_with(sf, dom, mode, &SpectralOptions::default())
}

pub fn variance_spectral_with(
    sf: &StructureFunction,
    dom: &Domain,
    mode: TransformMode,
    opts: &SpectralOptions,
) -> Result<Estimate> {
    check_dims(sf, dom)?;
    spectral_functional(sf, dom, mode, &Functional::Variance, opts)
}

/// Cov(Q_{C_L^(0)}, Q_{C_L^(n)}).
pub fn covariance_boxes(sf: &StructureFunction, scale: f64, offset: &[i64], mode: TransformMode) -> Result<Estimate> {
    covariance_boxes_with(sf, scale, offset, mode, &SpectralOptions::default())
}

pub fn covariance_boxes_with(
    sf: &StructureFunction,
    scale: f64,
    offset: &[i64],
    mode: TransformMode,
    opts: &SpectralOptions,
) -> Result<Estimate> {
    let d = sf.dim();
    if offset.len() != d {
        return Err(Error::Invalid(format!("offset {offset:?} is not a {d}-vector")));
    }
    let dom = Domain::offset_box(vec![0; d], scale)?;
    let f = Functional::Cross { a: vec![0; d], b: offset.to_vec() };
    spectral_functional(sf, &dom, mode, &f, opts)
}

/// Predicted limit of Cov(Q_{C^(0)}, Q_{C^(n)}): `(-1)^j sigma^2 / 2^j` with
/// j the number of unit entries, and 0 once some |n_k| >= 2.
pub fn covariance_limit(sigma_sq: f64, offset: &[i64]) -> f64 {
    if offset.iter().any(|v| v.abs() >= 2) {
        return 0.0;
    }
    let j = offset.iter().filter(|v| v.abs() == 1).count() as i32;
    (-1f64).powi(j) * sigma_sq / 2f64.powi(j)
}

fn check_dims(sf: &StructureFunction, dom: &Domain) -> Result<()> {
    dom.validate()?;
    if sf.dim() != dom.dim {
        return Err(Error::Invalid(format!("model dimension {} differs from window dimension {}", sf.dim(), dom.dim)));
    }
    Ok(())
}

fn spectral_functional(
    sf: &StructureFunction,
    dom: &Domain,
    mode: TransformMode,
    func: &Functional,
    opts: &SpectralOptions,
) -> Result<Estimate> {
    let d = dom.dim;
    let mut bandwidth = dom.max_lag().max(1) as f64;
    if mode == TransformMode::Continuum {
        bandwidth = bandwidth.max(2.0 * dom.scale);
    }
    if let Functional::Cross { a, b } = func {
        let shift = a.iter().zip(b).map(|(x, y)| (x - y).unsigned_abs()).max().unwrap_or(0) as f64;
        bandwidth += shift * dom.scale;
    }
    let fold = sf.coordinate_even();
    let ctx = Ctx::new(dom, mode, func)?;
    let scale = if mode == TransformMode::Continuum { (2.0 * PI).powi(d as i32) } else { 1.0 };
    let est = refine_scalar(&opts.refinement, |level, order| {
        let w = sf.mesh_width(bandwidth, level);
        let cub = sf.measure(w, order, fold)?;
        if cub.len() > opts.max_nodes {
            return Err(Error::Resource(format!(
                "spectral quadrature needs {} nodes (limit {})",
                cub.len(),
                opts.max_nodes
            )));
        }
        let mut total = 0.0;
        for piece in &cub.pieces {
            total += piece.scale * ctx.piece_sum(sf, piece, fold)?;
        }
        Ok(total * scale)
    })?;
    Ok(est)
}

/// Precomputed description of the integrand.
struct Ctx<'a> {
    dom: &'a Domain,
    mode: TransformMode,
    func: &'a Functional,
    /// Per-axis (lo, hi) index ranges of the two windows (cube/box).
    ranges: Vec<((i64, i64), (i64, i64))>,
    /// Ball half-widths along axis 0 indexed by |other coordinates|.
    widths: Vec<i64>,
    kmax: usize,
}

impl<'a> Ctx<'a> {
    fn new(dom: &'a Domain, mode: TransformMode, func: &'a Functional) -> Result<Self> {
        let d = dom.dim;
        let mut ranges = Vec::new();
        let mut widths = Vec::new();
        let mut kmax = 0;
        match (&dom.shape, func) {
            (Shape::Ball, Functional::Cross { .. }) => {
                return Err(Error::Invalid("cross functionals are defined for boxes".into()));
            }
            (Shape::Ball, _) if d >= 2 => {
                let w0 = dom.axis_range(0).1;
                kmax = w0.max(0) as usize;
                let k = kmax + 1;
                widths = vec![-1; k.pow(d as u32 - 1)];
                for run in dom.runs() {
                    if run.others.iter().all(|&v| v >= 0) {
                        let idx = run.others.iter().fold(0usize, |acc, &v| acc * k + v as usize);
                        widths[idx] = run.hi;
                    }
                }
            }
            (_, Functional::Cross { a, b }) => {
                for k in 0..d {
                    let da = Domain::offset_box(a.clone(), dom.scale)?;
                    let db = Domain::offset_box(b.clone(), dom.scale)?;
                    ranges.push((da.axis_range(k), db.axis_range(k)));
                }
            }
            _ => {
                for k in 0..d {
                    let r = dom.axis_range(k);
                    ranges.push((r, r));
                }
            }
        }
        Ok(Ctx { dom, mode, func, ranges, widths, kmax })
    }

    fn is_ball(&self) -> bool {
        matches!(self.dom.shape, Shape::Ball) && self.dom.dim >= 2
    }

    /// Per-axis factor G_k(x) with integrand Re prod_k G_k.
    fn axis_factor(&self, k: usize, x: f64) -> Complex64 {
        let ((a0, a1), (b0, b1)) = self.ranges[k];
        match self.mode {
            TransformMode::Lattice => {
                if (a0, a1) == (b0, b1) {
                    let r = dirichlet_ratio(x, a1 - a0 + 1);
                    Complex64::new(r * r, 0.0)
                } else {
                    dirichlet(x, a0, a1) * dirichlet(x, b0, b1).conj()
                }
            }
            TransformMode::Continuum => {
                let l = self.dom.scale;
                match (&self.dom.shape, self.func) {
                    (Shape::Box { .. }, Functional::Cross { a, b }) => {
                        box_ft(x, a[k] as f64 * l, l) * box_ft(x, b[k] as f64 * l, l).conj()
                    }
                    (Shape::Box { offset }, _) => box_ft(x, offset[k] as f64 * l, l).norm_sqr().into(),
                    _ => {
                        // cube [-L, L] and the d = 1 ball
                        let v = if (x * l).abs() < 1e-8 { 2.0 * l } else { 2.0 * (l * x).sin() / x };
                        Complex64::new(v * v, 0.0)
                    }
                }
            }
        }
    }

    /// Integrand at a single point.
    fn point_value(&self, x: &[f64], fold: bool) -> f64 {
        if self.is_ball() {
            return match self.mode {
                TransformMode::Lattice => self.dom.lattice_ft(x).norm_sqr(),
                TransformMode::Continuum => {
                    let v = self.dom.continuum_ft(x).map(|c| c.re).unwrap_or(f64::NAN);
                    v * v
                }
            };
        }
        if fold {
            x.iter().enumerate().map(|(k, &v)| self.axis_factor(k, v).re).product()
        } else {
            x.iter().enumerate().fold(Complex64::new(1.0, 0.0), |acc, (k, &v)| acc * self.axis_factor(k, v)).re
        }
    }

    fn piece_sum(&self, sf: &StructureFunction, piece: &Piece, fold: bool) -> Result<f64> {
        let dens = |x: &[f64]| if piece.weighted { sf.raw(x) } else { 1.0 };
        let v = match &piece.nodes {
            Nodes::Tensor(axes) => {
                if self.is_ball() && self.mode == TransformMode::Lattice {
                    self.ball_tensor_sum(axes, &dens)
                } else if !self.is_ball() && !piece.weighted {
                    self.separable_sum(axes, fold)
                } else {
                    tensor_sum(axes, |x| dens(x) * self.point_value(x, fold))
                }
            }
            Nodes::Scattered { coords, weights, columns } => {
                let d = self.dom.dim;
                if self.is_ball() && self.mode == TransformMode::Lattice && !columns.is_empty() {
                    self.ball_columns_sum(coords, weights, columns, &dens)
                } else {
                    par_sum(weights.len(), 2048, |p| {
                        let x = &coords[p * d..(p + 1) * d];
                        let s = dens(x);
                        if s == 0.0 {
                            0.0
                        } else {
                            weights[p] * s * self.point_value(x, fold)
                        }
                    })
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric("spectral integrand produced non-finite values".into()))
        }
    }

    fn separable_sum(&self, axes: &[AxisRule], fold: bool) -> f64 {
        let sums: Vec<Complex64> = axes
            .iter()
            .enumerate()
            .map(|(k, ax)| {
                ax.nodes.iter().zip(&ax.weights).fold(Complex64::new(0.0, 0.0), |acc, (&x, &w)| {
                    let g = self.axis_factor(k, x);
                    acc + w * if fold { Complex64::new(g.re, 0.0) } else { g }
                })
            })
            .collect();
        sums.iter().fold(Complex64::new(1.0, 0.0), |acc, s| acc * s).re
    }

    /// Lattice ball on a tensor grid: D(x) = sum_k A_k(x_1) prod cos(k x_other),
    /// assembled block-wise by matrix products.
    fn ball_tensor_sum(&self, axes: &[AxisRule], dens: &(dyn Fn(&[f64]) -> f64 + Sync)) -> f64 {
        let d = self.dom.dim;
        let kk = self.kmax + 1;
        let tables: Vec<Vec<f64>> = axes[1..]
            .iter()
            .map(|ax| {
                let n = ax.len();
                let mut t = vec![0.0; kk * n];
                let mut col = vec![0.0; kk];
                for (b, &x) in ax.nodes.iter().enumerate() {
                    cos_table(x, self.kmax, &mut col);
                    for k in 0..kk {
                        t[k * n + b] = col[k] * if k == 0 { 1.0 } else { 2.0 };
                    }
                }
                t
            })
            .collect();
        let first = &axes[0];
        let block = 32;
        let nblocks = first.len().div_ceil(block);
        let parts: Vec<f64> = (0..nblocks)
            .into_par_iter()
            .map(|bi| {
                let a0 = bi * block;
                let a1 = (a0 + block).min(first.len());
                let m = a1 - a0;
                let inner = kk.pow(d as u32 - 1);
                let mut amat = vec![0.0; m * inner];
                for (r, a) in (a0..a1).enumerate() {
                    let x = first.nodes[a];
                    for (idx, &w) in self.widths.iter().enumerate() {
                        if w >= 0 {
                            amat[r * inner + idx] = dirichlet_ratio(x, 2 * w + 1);
                        }
                    }
                }
                let dvals = if d == 2 {
                    matmul(&amat, m, kk, &tables[0], axes[1].len())
                } else {
                    let (n2, n3) = (axes[1].len(), axes[2].len());
                    let t = matmul(&amat, m * kk, kk, &tables[1], n3);
                    let mut out = vec![0.0; m * n2 * n3];
                    for r in 0..m {
                        // D_r = T2^T (n2 x kk) . t_r (kk x n3)
                        unsafe {
                            matrixmultiply::dgemm(
                                n2,
                                kk,
                                n3,
                                1.0,
                                tables[0].as_ptr(),
                                1,
                                n2 as isize,
                                t[r * kk * n3..].as_ptr(),
                                n3 as isize,
                                1,
                                0.0,
                                out[r * n2 * n3..].as_mut_ptr(),
                                n3 as isize,
                                1,
                            );
                        }
                    }
                    out
                };
                let rest: usize = axes[1..].iter().map(AxisRule::len).product();
                let mut acc = 0.0;
                let mut x = vec![0.0; d];
                for (r, a) in (a0..a1).enumerate() {
                    x[0] = first.nodes[a];
                    let wa = first.weights[a];
                    let mut row = 0.0;
                    for flat in 0..rest {
                        let mut rem = flat;
                        let mut w = 1.0;
                        for k in (1..d).rev() {
                            let n = axes[k].len();
                            let i = rem % n;
                            rem /= n;
                            x[k] = axes[k].nodes[i];
                            w *= axes[k].weights[i];
                        }
                        let s = dens(&x);
                        if s != 0.0 {
                            let dv = dvals[r * rest + flat];
                            row += w * s * dv * dv;
                        }
                    }
                    acc += wa * row;
                }
                acc
            })
            .collect();
        parts.iter().sum()
    }

    /// Lattice ball on column-structured points (Clenshaw along the column).
    fn ball_columns_sum(
        &self,
        coords: &[f64],
        weights: &[f64],
        columns: &[usize],
        dens: &(dyn Fn(&[f64]) -> f64 + Sync),
    ) -> f64 {
        let d = self.dom.dim;
        let kk = self.kmax + 1;
        let n = weights.len();
        let parts: Vec<f64> = (0..columns.len())
            .into_par_iter()
            .map(|c| {
                let start = columns[c];
                let end = if c + 1 < columns.len() { columns[c + 1] } else { n };
                if start == end {
                    return 0.0;
                }
                let x1 = coords[start * d];
                let a: Vec<f64> =
                    self.widths.iter().map(|&w| if w >= 0 { dirichlet_ratio(x1, 2 * w + 1) } else { 0.0 }).collect();
                let mut acc = 0.0;
                if d == 2 {
                    let np = end - start;
                    let cx: Vec<f64> = (start..end).map(|p| coords[p * 2 + 1].cos()).collect();
                    let mut b1 = vec![0.0; np];
                    let mut b2 = vec![0.0; np];
                    for k in (1..kk).rev() {
                        let ak = 2.0 * a[k];
                        for i in 0..np {
                            let b0 = ak + 2.0 * cx[i] * b1[i] - b2[i];
                            b2[i] = b1[i];
                            b1[i] = b0;
                        }
                    }
                    for i in 0..np {
                        let p = start + i;
                        let dv = a[0] + cx[i] * b1[i] - b2[i];
                        let s = dens(&coords[p * 2..p * 2 + 2]);
                        acc += weights[p] * s * dv * dv;
                    }
                } else {
                    let mut c2 = vec![0.0; kk];
                    let mut c3 = vec![0.0; kk];
                    for p in start..end {
                        let x = &coords[p * 3..p * 3 + 3];
                        cos_table(x[1], self.kmax, &mut c2);
                        cos_table(x[2], self.kmax, &mut c3);
                        let mut dv = 0.0;
                        for k2 in 0..kk {
                            let f2 = if k2 == 0 { 1.0 } else { 2.0 } * c2[k2];
                            let mut s3 = 0.0;
                            for k3 in 0..kk {
                                let f3 = if k3 == 0 { 1.0 } else { 2.0 } * c3[k3];
                                s3 += a[k2 * kk + k3] * f3;
                            }
                            dv += f2 * s3;
                        }
                        let s = dens(x);
                        acc += weights[p] * s * dv * dv;
                    }
                }
                acc
            })
            .collect();
        parts.iter().sum()
    }
}

fn box_ft(x: f64, start: f64, l: f64) -> Complex64 {
    // integral_{start}^{start+l} e^{-i x t} dt
    let centre = start + 0.5 * l;
    let mag = if (x * l).abs() < 1e-8 { l } else { 2.0 * (0.5 * l * x).sin() / x };
    Complex64::from_polar(mag, -x * centre)
}

fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 {
        return c;
    }
    // SAFETY: a is m x k, b is k x n, c is m x n, all row-major and in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

fn tensor_sum(axes: &[AxisRule], f: impl Fn(&[f64]) -> f64 + Sync) -> f64 {
    let d = axes.len();
    let rest: usize = axes[1..].iter().map(AxisRule::len).product();
    par_sum(axes[0].len(), 1, |a| {
        let mut x = vec![0.0; d];
        x[0] = axes[0].nodes[a];
        let mut acc = 0.0;
        for flat in 0..rest {
            let mut rem = flat;
            let mut w = 1.0;
            for k in (1..d).rev() {
                let n = axes[k].len();
                let i = rem % n;
                rem /= n;
                x[k] = axes[k].nodes[i];
                w *= axes[k].weights[i];
            }
            let v = f(&x);
            if v != 0.0 {
                acc += w * v;
            }
        }
        axes[0].weights[a] * acc
    })
}

/// Pair counts c(m) = #{(i, j) in window^2 : i - j = m} on the lag cube of
/// radius `max_lag`, row-major with axis 0 slowest.
pub fn lag_counts(dom: &Domain) -> (usize, Vec<u64>) {
    let d = dom.dim;
    let r = dom.max_lag();
    let side = 2 * r + 1;
    let runs = dom.runs();
    let mut counts = vec![0u64; side.pow(d as u32)];
    for ra in &runs {
        for rb in &runs {
            // lag m = i - j with i in ra, j in rb
            let mut base = 0usize;
            for (oa, ob) in ra.others.iter().zip(&rb.others) {
                base = base * side + (oa - ob + r as i64) as usize;
            }
            let stride = side.pow(d as u32 - 1);
            for m0 in (ra.lo - rb.hi)..=(ra.hi - rb.lo) {
                let lo = ra.lo.max(rb.lo + m0);
                let hi = ra.hi.min(rb.hi + m0);
                if hi >= lo {
                    counts[(m0 + r as i64) as usize * stride + base] += (hi - lo + 1) as u64;
                }
            }
        }
    }
    (r, counts)
}

/// Var(Q_window) = sum_{i, j} K(i - j) from a precomputed kernel table.
pub fn variance_from_kernel(kernel: &KernelTable, dom: &Domain) -> Result<f64> {
    if kernel.dim != dom.dim {
        return Err(Error::Invalid("kernel and window dimensions differ".into()));
    }
    let (r, counts) = lag_counts(dom);
    if r > kernel.radius {
        return Err(Error::Invalid(format!("kernel radius {} is smaller than the window diameter {r}", kernel.radius)));
    }
    let side = 2 * r + 1;
    let d = dom.dim;
    let mut total = 0.0;
    for (flat, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let mut rem = flat;
        let mut lag = vec![0i64; d];
        for k in (0..d).rev() {
            lag[k] = (rem % side) as i64 - r as i64;
            rem /= side;
        }
        total += c as f64 * kernel.get(&lag).expect("lag within radius");
    }
    Ok(total)
}

/// Var(Q_window) as the double sum of the covariance kernel over the window.
pub fn variance_direct(sf: &StructureFunction, dom: &Domain) -> Result<Estimate> {
    check_dims(sf, dom)?;
    let kernel = sf.covariance_kernel(dom.max_lag())?;
    let value = variance_from_kernel(&kernel, dom)?;
    let n = dom.n_points() as f64;
    Ok(Estimate { value, error: kernel.error * n * n, converged: kernel.converged })
}

/// The two-term Theta functional for balls:
/// `L^{2d} int_{|xi| <= c/L} S + L^{d-1} int_{|xi| > c/L} S / |xi|^{d+1}`
/// over the torus (Lebesgue measure, normalized S).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThetaBall {
    pub inner: f64,
    pub outer: f64,
    pub total: f64,
    pub error: f64,
    pub converged: bool,
}

pub fn theta_ball(sf: &StructureFunction, scale: f64, c: f64) -> Result<ThetaBall> {
    if !(scale > 0.0) || !(c > 0.0) || !scale.is_finite() || !c.is_finite() {
        return Err(Error::Invalid("theta_ball needs L > 0 and c > 0".into()));
    }
    let d = sf.dim();
    let radius = c / scale;
    let fold = sf.coordinate_even();
    let folds = if fold { 2f64.powi(d as i32) } else { 1.0 };
    let breaks = |dir: &[f64]| -> Vec<f64> {
        match sf.family() {
            Family::StealthyGap { delta } => vec![*delta],
            Family::AxesStealthy { delta } => {
                dir.iter().filter(|v| v.abs() > 1e-300).map(|v| delta / v.abs()).collect()
            }
            _ => Vec::new(),
        }
    };
    let r = Refinement { tolerance: 1e-7, abs_floor: 1e-300, max_depth: 5, order: 12 };
    let norm = sf.normalization();
    let run = |inner: f64, outer: Option<f64>, g: &(dyn Fn(&[f64]) -> f64 + Sync)| -> Result<Estimate> {
        refine_scalar(&r, |level, order| {
            let shell = Shell {
                dim: d,
                inner,
                outer,
                fold,
                width: (PI / 4.0) / 2f64.powi(level as i32),
                ray_breaks: &breaks,
                log_radial: true,
            };
            let mut piece = shell_points(&shell, order)?;
            piece.weighted = true;
            let cub = Cubature { dim: d, pieces: vec![piece] };
            cub.try_integrate(&|x| sf.raw(x), g).map(|v| v * folds * norm)
        })
    };
    let one = |_: &[f64]| 1.0;
    let inv = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().powf(-(d as f64 + 1.0) / 2.0);
    let inner_int = run(0.0, Some(radius), &with_density(&one))?;
    let outer_int = run(radius, None, &with_density(&inv))?;
    let li = scale.powi(2 * d as i32);
    let lo = scale.powi(d as i32 - 1);
    let inner = li * inner_int.value;
    let outer = lo * outer_int.value;
    Ok(ThetaBall {
        inner,
        outer,
        total: inner + outer,
        error: li * inner_int.error + lo * outer_int.error,
        converged: inner_int.converged && outer_int.converged,
    })
}

fn with_density<'a>(g: &'a (dyn Fn(&[f64]) -> f64 + Sync)) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
    move |x| g(x)
}

/// One row of a scan: `scan_var, value, stat, stat_err, mode`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanRow {
    /// Value of the scanned variable (e.g. L).
    pub scan_var: f64,
    /// Value of the statistic.
    pub value: f64,
    /// Statistic name.
    pub stat: String,
    /// Error estimate of `value`.
    pub stat_err: f64,
    pub mode: String,
    pub converged: bool,
}

/// Power-law fit `log(V / (log L)^tau) = intercept + beta log L`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentFit {
    pub beta: f64,
    pub beta_se: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Log-power divided out before fitting.
    pub tau: u32,
    /// Exponents predicted by the model family, when known.
    pub predicted_beta: Option<f64>,
    pub predicted_tau: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanReport {
    pub scan_name: String,
    pub model: String,
    pub window: String,
    pub rows: Vec<ScanRow>,
    pub fit: Option<ExponentFit>,
}

impl ScanReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scan_var,value,stat,stat_err,mode\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_real(r.scan_var),
                fmt_real(r.value),
                r.stat,
                fmt_real(r.stat_err),
                r.mode
            ));
        }
        s
    }

    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }
}

/// Reals with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        ExtReal::from_f64(x).map(|e| e.to_string()).unwrap_or_else(|| "nan".into())
    }
}

/// Least-squares slope of y on x with its standard error and R^2.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64, f64)> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return Err(Error::Invalid("line fit needs at least 3 paired points".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Invalid("line fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok((slope, se, intercept, r2))
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 5 {
        return Err(Error::Invalid(format!("scan needs at least 5 grid points, got {}", grid.len())));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || !(grid[0] > 0.0) {
        return Err(Error::Invalid("scan grid must be positive and strictly increasing".into()));
    }
    if grid[grid.len() - 1] / grid[0] < 10.0 - 1e-9 {
        return Err(Error::Invalid("scan grid must span at least one decade".into()));
    }
    Ok(())
}

/// Variance over `shape` windows for each L in `grid`, with a power-law fit.
pub fn exponent_scan(sf: &StructureFunction, shape: &Shape, grid: &[f64], mode: TransformMode) -> Result<ScanReport> {
    exponent_scan_with(sf, shape, grid, mode, &SpectralOptions::default())
}

pub fn exponent_scan_with(
    sf: &StructureFunction,
    shape: &Shape,
    grid: &[f64],
    mode: TransformMode,
    opts: &SpectralOptions,
) -> Result<ScanReport> {
    check_grid(grid)?;
    let predicted = match shape {
        Shape::Ball => sf.ball_exponents(),
        Shape::Cube => sf.cube_exponents(),
        Shape::Box { .. } => sf.cube_exponents(),
    };
    let tau = predicted.map(|p| p.1).unwrap_or(0);
    let mut rows = Vec::new();
    for &l in grid {
        let dom = Domain::new(sf.dim(), shape.clone(), l)?;
        let e = variance_spectral_with(sf, &dom, mode, opts)?;
        rows.push(ScanRow {
            scan_var: l,
            value: e.value,
            stat: "variance".into(),
            stat_err: e.error,
            mode: mode.as_str().into(),
            converged: e.converged,
        });
    }
    let xs: Vec<f64> = grid.iter().map(|l| l.ln()).collect();
    let ys: Vec<f64> = rows.iter().zip(grid).map(|(r, l)| r.value.ln() - tau as f64 * l.ln().ln()).collect();
    let fit = if ys.iter().all(|v| v.is_finite()) {
        let (beta, se, intercept, r2) = fit_line(&xs, &ys)?;
        Some(ExponentFit {
            beta,
            beta_se: se,
            intercept,
            r_squared: r2,
            tau,
            predicted_beta: predicted.map(|p| p.0),
            predicted_tau: predicted.map(|p| p.1),
        })
    } else {
        None
    };
    let window = format!("{shape:?}");
    Ok(ScanReport { scan_name: "L".into(), model: sf.id(), window, rows, fit })
}

/// Variance over balls divided by theta_ball for each L, with the slope of the
/// log-ratio against log L.
pub fn theta_scan(
    sf: &StructureFunction,
    grid: &[f64],
    c: f64,
    mode: TransformMode,
    opts: &SpectralOptions,
) -> Result<ScanReport> {
    check_grid(grid)?;
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for &l in grid {
        let dom = Domain::ball(sf.dim(), l)?;
        let v = variance_spectral_with(sf, &dom, mode, opts)?;
        let t = theta_ball(sf, l, c)?;
        let ratio = v.value / t.total;
        let ratio_err = ratio * (v.error / v.value.abs().max(1e-300) + t.error / t.total.abs().max(1e-300));
        let m = mode.as_str().to_string();
        rows.push(ScanRow {
            scan_var: l,
            value: v.value,
            stat: "variance".into(),
            stat_err: v.error,
            mode: m.clone(),
            converged: v.converged,
        });
        rows.push(ScanRow {
            scan_var: l,
            value: t.total,
            stat: "theta".into(),
            stat_err: t.error,
            mode: m.clone(),
            converged: t.converged,
        });
        rows.push(ScanRow {
            scan_var: l,
            value: ratio,
            stat: "ratio".into(),
            stat_err: ratio_err,
            mode: m,
            converged: v.converged && t.converged,
        });
        ratios.push(ratio);
    }
    let xs: Vec<f64> = grid.iter().map(|l| l.ln()).collect();
    let ys: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
    let (beta, se, intercept, r2) = fit_line(&xs, &ys)?;
    let fit = ExponentFit {
        beta,
        beta_se: se,
        intercept,
        r_squared: r2,
        tau: 0,
        predicted_beta: Some(0.0),
        predicted_tau: Some(0),
    };
    Ok(ScanReport { scan_name: "L".into(), model: sf.id(), window: "ball".into(), rows, fit: Some(fit) })
}

/// One entry of the offset-box covariance grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridEntry {
    pub offset: Vec<i64>,
    pub value: f64,
    pub error: f64,
    pub predicted_limit: f64,
    /// value / sigma_d^2
    pub ratio: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceGrid {
    pub scale: f64,
    pub mode: TransformMode,
    pub sigma_sq: f64,
    pub entries: Vec<GridEntry>,
}

impl CovarianceGrid {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,value,predicted_limit,ratio\n");
        for e in &self.entries {
            let n: Vec<String> = e.offset.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!(
                "{},{},{},{}\n",
                n.join(";"),
                fmt_real(e.value),
                fmt_real(e.predicted_limit),
                fmt_real(e.ratio)
            ));
        }
        s
    }
}

/// Covariances Cov(Q_{C^(0)}, Q_{C^(n)}) for n in {0, 1, 2}^d with their limits.
pub fn covariance_grid(
    sf: &StructureFunction,
    scale: f64,
    mode: TransformMode,
    opts: &SpectralOptions,
) -> Result<CovarianceGrid> {
    let sigma = sf.sigma_sq_d(mode)?;
    let sigma_sq = sigma.finite().ok_or_else(|| {
        Error::Invalid(format!("{} has infinite sigma_d^2; the covariance grid needs a finite limit", sf.id()))
    })?;
    let d = sf.dim();
    let mut entries = Vec::new();
    for flat in 0..3usize.pow(d as u32) {
        let mut rem = flat;
        let mut offset = vec![0i64; d];
        for k in (0..d).rev() {
            offset[k] = (rem % 3) as i64;
            rem /= 3;
        }
        let e = covariance_boxes_with(sf, scale, &offset, mode, opts)?;
        entries.push(GridEntry {
            predicted_limit: covariance_limit(sigma_sq, &offset),
            ratio: e.value / sigma_sq,
            value: e.value,
            error: e.error,
            offset,
            converged: e.converged,
        });
    }
    Ok(CovarianceGrid { scale, mode, sigma_sq, entries })
}

/// Sum of Cov(Q_{C^(0)}, Q_{C^(q)}) over q in {-1, 0, 1}^d, divided by sigma_d^2.
/// Tends to 0 when the covariance limits hold.
pub fn neighbourhood_sum(
    sf: &StructureFunction,
    scale: f64,
    mode: TransformMode,
    opts: &SpectralOptions,
) -> Result<Estimate> {
    let sigma_sq = sf
        .sigma_sq_d(mode)?
        .finite()
        .ok_or_else(|| Error::Invalid("neighbourhood sum needs a finite sigma_d^2".into()))?;
    let d = sf.dim();
    let mut total = Estimate { value: 0.0, error: 0.0, converged: true };
    for flat in 0..3usize.pow(d as u32) {
        let mut rem = flat;
        let mut q = vec![0i64; d];
        for k in (0..d).rev() {
            q[k] = (rem % 3) as i64 - 1;
            rem /= 3;
        }
        let e = covariance_boxes_with(sf, scale, &q, mode, opts)?;
        total.value += e.value;
        total.error += e.error;
        total.converged &= e.converged;
    }
    total.value /= sigma_sq;
    total.error /= sigma_sq;
    Ok(total)
}

/// Sampled counterpart of a variance: mean of Q^2 over independent fields
/// (one window per field, centred on the torus) with its standard error.
pub fn variance_monte_carlo(
    sf: &StructureFunction,
    dom: &Domain,
    torus: usize,
    replicates: usize,
    seed: u64,
) -> Result<Estimate> {
    check_dims(sf, dom)?;
    if replicates < 2 {
        return Err(Error::Invalid("Monte Carlo needs at least 2 replicates".into()));
    }
    let sampler = GaussianSampler::new(sf, torus)?;
    let anchor = vec![(torus / 2) as i64; dom.dim];
    let q2: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            let f = sampler.sample(seed, i);
            dom.local_mass(f.values(), torus, &anchor).map(|q| q * q)
        })
        .collect::<Result<_>>()?;
    let m = replicates as f64;
    let mean = q2.iter().sum::<f64>() / m;
    let var = q2.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(Estimate { value: mean, error: (var / m).sqrt(), converged: true })
}
