//! Composite Gauss-Legendre cubature on the torus [-pi, pi]^d.
//!
//! Rules are assembled from per-axis composite panels with breakpoints at
//! declared discontinuities, geometric grading toward declared singular
//! coordinates, and optional excluded intervals. Ball-shaped regions use
//! nested angle substitutions (columns) or cube-face pyramid coordinates.
//! Adaptivity compares GL order q against q + 4 on the same mesh and doubles
//! the panel count until the two agree.

use super::Estimate;
use crate::util::par_sum;
use crate::{Error, Result};
use rayon::prelude::*;
use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::{Arc, Mutex, OnceLock};

/// Phase (radians) a panel may cover per GL node.
pub const PHASE_PER_NODE: f64 = 0.55;

type Rule = Arc<(Vec<f64>, Vec<f64>)>;

/// Gauss-Legendre nodes and weights on [-1, 1], cached per order.
pub fn gauss_legendre(n: usize) -> Rule {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().unwrap().get(&n) {
        return r.clone();
    }
    let rule = Arc::new(compute_gauss_legendre(n));
    cache.lock().unwrap().insert(n, rule.clone());
    rule
}

fn compute_gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Nodes and weights of a composite rule along one axis.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AxisRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AxisRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_panel(&mut self, a: f64, b: f64, order: usize) {
        if b <= a {
            return;
        }
        let gl = gauss_legendre(order);
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        for (x, w) in gl.0.iter().zip(&gl.1) {
            self.nodes.push(c + h * x);
            self.weights.push(h * w);
        }
    }

    /// Uniform panels of width at most `width` on [a, b].
    pub fn uniform(a: f64, b: f64, width: f64, order: usize) -> AxisRule {
        let mut r = AxisRule::default();
        r.push_uniform(a, b, width, order);
        r
    }

    fn push_uniform(&mut self, a: f64, b: f64, width: f64, order: usize) {
        if b <= a {
            return;
        }
        let n = ((b - a) / width).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        for k in 0..n {
            self.push_panel(a + k as f64 * h, if k + 1 == n { b } else { a + (k + 1) as f64 * h }, order);
        }
    }

    /// Panels on [a, b] refined geometrically (ratio 1/2) toward `a` and/or `b`.
    #[allow(clippy::too_many_arguments)]
    fn push_graded(&mut self, a: f64, b: f64, width: f64, order: usize, toward_a: bool, toward_b: bool, levels: u32) {
        if b <= a {
            return;
        }
        let n = ((b - a) / width).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        for k in 0..n {
            let pa = a + k as f64 * h;
            let pb = if k + 1 == n { b } else { a + (k + 1) as f64 * h };
            let grade_a = toward_a && k == 0;
            let grade_b = toward_b && k + 1 == n;
            match (grade_a, grade_b) {
                (false, false) => self.push_panel(pa, pb, order),
                (true, false) => self.push_geometric(pa, pb, order, levels, true),
                (false, true) => self.push_geometric(pa, pb, order, levels, false),
                (true, true) => {
                    let mid = 0.5 * (pa + pb);
                    self.push_geometric(pa, mid, order, levels, true);
                    self.push_geometric(mid, pb, order, levels, false);
                }
            }
        }
    }

    fn push_geometric(&mut self, a: f64, b: f64, order: usize, levels: u32, toward_a: bool) {
        let len = b - a;
        let mut cuts: Vec<f64> = (0..=levels).map(|k| len * 0.5f64.powi(k as i32)).collect();
        cuts.push(0.0);
        cuts.reverse();
        for w in cuts.windows(2) {
            if toward_a {
                self.push_panel(a + w[0], a + w[1], order);
            } else {
                self.push_panel(b - w[1], b - w[0], order);
            }
        }
    }

    pub fn scale(mut self, factor: f64) -> AxisRule {
        for w in &mut self.weights {
            *w *= factor;
        }
        self
    }

    pub fn sum_weights(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Description of one axis of a tensor rule.
#[derive(Debug, Clone)]
pub struct AxisSpec {
    pub lo: f64,
    pub hi: f64,
    /// Target panel width.
    pub width: f64,
    /// Discontinuities of the integrand along this axis.
    pub breaks: Vec<f64>,
    /// Coordinates toward which panels are graded geometrically.
    pub graded: Vec<f64>,
    /// Intervals removed from the domain.
    pub excluded: Vec<(f64, f64)>,
    pub grading_levels: u32,
}

impl AxisSpec {
    pub fn new(lo: f64, hi: f64, width: f64) -> Self {
        AxisSpec { lo, hi, width, breaks: Vec::new(), graded: Vec::new(), excluded: Vec::new(), grading_levels: 60 }
    }

    pub fn rule(&self, order: usize) -> AxisRule {
        let eps = 1e-14 * (self.hi - self.lo).abs().max(1.0);
        let mut pts = vec![self.lo, self.hi];
        for &b in self.breaks.iter().chain(&self.graded) {
            if b > self.lo && b < self.hi {
                pts.push(b);
            }
        }
        for &(a, b) in &self.excluded {
            for x in [a, b] {
                if x > self.lo && x < self.hi {
                    pts.push(x);
                }
            }
        }
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup_by(|a, b| (*a - *b).abs() <= eps);
        let near_graded = |x: f64| self.graded.iter().any(|&g| (g - x).abs() <= eps);
        let mut rule = AxisRule::default();
        for seg in pts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let mid = 0.5 * (a + b);
            if self.excluded.iter().any(|&(ea, eb)| mid > ea && mid < eb) {
                continue;
            }
            rule.push_graded(a, b, self.width, order, near_graded(a), near_graded(b), self.grading_levels);
        }
        rule
    }
}

/// Node set of a cubature piece.
#[derive(Debug, Clone)]
pub enum Nodes {
    /// Tensor product of per-axis rules.
    Tensor(Vec<AxisRule>),
    /// Scattered points. `columns` holds the start offsets of runs of points
    /// sharing their first coordinate (empty when there is no such grouping).
    Scattered { coords: Vec<f64>, weights: Vec<f64>, columns: Vec<usize> },
}

/// A weighted node set. Effective weight at a node is `scale * w`, further
/// multiplied by the density when `weighted` is set.
#[derive(Debug, Clone)]
pub struct Piece {
    pub nodes: Nodes,
    pub scale: f64,
    pub weighted: bool,
}

impl Piece {
    pub fn len(&self, dim: usize) -> usize {
        match &self.nodes {
            Nodes::Tensor(axes) => axes.iter().map(AxisRule::len).product(),
            Nodes::Scattered { coords, .. } => coords.len() / dim.max(1),
        }
    }
}

/// A cubature rule assembled from pieces whose weights add (possibly with signs).
#[derive(Debug, Clone)]
pub struct Cubature {
    pub dim: usize,
    pub pieces: Vec<Piece>,
}

/// A density evaluated at cubature nodes.
pub type Density<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

impl Cubature {
    pub fn len(&self) -> usize {
        self.pieces.iter().map(|p| p.len(self.dim)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum over nodes of weight * density * g.
    pub fn integrate(&self, density: Density, g: &(dyn Fn(&[f64]) -> f64 + Sync)) -> f64 {
        let mut total = 0.0;
        for piece in &self.pieces {
            let s = for_each_weighted(self.dim, piece, density, g);
            total += piece.scale * s;
        }
        total
    }

    /// As `integrate`, but fails on non-finite samples.
    pub fn try_integrate(&self, density: Density, g: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Result<f64> {
        let v = self.integrate(density, g);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric("integrand produced non-finite values".into()))
        }
    }
}

fn for_each_weighted(dim: usize, piece: &Piece, density: Density, g: &(dyn Fn(&[f64]) -> f64 + Sync)) -> f64 {
    match &piece.nodes {
        Nodes::Tensor(axes) => {
            let first = &axes[0];
            let rest = &axes[1..];
            let inner: usize = rest.iter().map(AxisRule::len).product();
            par_sum(first.len(), 1, |a| {
                let mut x = vec![0.0; dim];
                x[0] = first.nodes[a];
                let mut idx = vec![0usize; rest.len()];
                let mut acc = 0.0;
                for _ in 0..inner {
                    let mut w = first.weights[a];
                    for (k, ax) in rest.iter().enumerate() {
                        x[k + 1] = ax.nodes[idx[k]];
                        w *= ax.weights[idx[k]];
                    }
                    let dens = if piece.weighted { density(&x) } else { 1.0 };
                    if dens != 0.0 {
                        acc += w * dens * g(&x);
                    }
                    for k in (0..rest.len()).rev() {
                        idx[k] += 1;
                        if idx[k] < rest[k].len() {
                            break;
                        }
                        idx[k] = 0;
                    }
                }
                acc
            })
        }
        Nodes::Scattered { coords, weights, .. } => par_sum(weights.len(), 4096, |i| {
            let x = &coords[i * dim..(i + 1) * dim];
            let dens = if piece.weighted { density(x) } else { 1.0 };
            if dens == 0.0 {
                0.0
            } else {
                weights[i] * dens * g(x)
            }
        }),
    }
}

/// Closed ball of radius `rho` (rho <= pi) centred at the origin, in nested
/// angle coordinates x_1 = rho sin(phi_1), ... so every axis integrand is smooth.
/// With `fold`, only the positive orthant is covered (weights not doubled).
/// Points are grouped in columns sharing x_1.
pub fn ball_columns(dim: usize, rho: f64, fold: bool, width: f64, order: usize) -> Result<Piece> {
    if !(1..=3).contains(&dim) {
        return Err(Error::Domain(format!("ball cubature supports d <= 3, got {dim}")));
    }
    let lo_sym = |half: f64| if fold { 0.0 } else { -half };
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    let mut columns = Vec::new();
    match dim {
        1 => {
            let r = AxisRule::uniform(lo_sym(rho), rho, width, order);
            for (x, w) in r.nodes.iter().zip(&r.weights) {
                columns.push(weights.len());
                coords.push(*x);
                weights.push(*w);
            }
        }
        _ => {
            // angle panels sized so that rho * dphi <= width
            let awidth = width / rho;
            let phi1 = AxisRule::uniform(lo_sym(FRAC_PI_2), FRAC_PI_2, awidth, order);
            for (p1, w1) in phi1.nodes.iter().zip(&phi1.weights) {
                let x1 = rho * p1.sin();
                let r2 = rho * p1.cos();
                let j1 = w1 * r2;
                columns.push(weights.len());
                if dim == 2 {
                    let inner = AxisRule::uniform(lo_sym(r2), r2, width, order);
                    for (x2, w2) in inner.nodes.iter().zip(&inner.weights) {
                        coords.extend_from_slice(&[x1, *x2]);
                        weights.push(j1 * w2);
                    }
                } else {
                    let n2 = ((r2 * PI / width).ceil().max(1.0)) as usize;
                    let phi2 = AxisRule::uniform(lo_sym(FRAC_PI_2), FRAC_PI_2, PI / n2 as f64, order);
                    for (p2, w2) in phi2.nodes.iter().zip(&phi2.weights) {
                        let x2 = r2 * p2.sin();
                        let r3 = r2 * p2.cos();
                        let inner = AxisRule::uniform(lo_sym(r3), r3, width, order);
                        for (x3, w3) in inner.nodes.iter().zip(&inner.weights) {
                            coords.extend_from_slice(&[x1, x2, *x3]);
                            weights.push(j1 * w2 * r3 * w3);
                        }
                    }
                }
            }
        }
    }
    Ok(Piece { nodes: Nodes::Scattered { coords, weights, columns }, scale: 1.0, weighted: false })
}

/// Region { x in [-pi, pi]^d : inner <= |x|_2 <= outer } in cube-face pyramid
/// coordinates x = s u (u on a face of [-1, 1]^d, Jacobian s^{d-1}).
#[derive(Clone)]
pub struct Shell<'a> {
    pub dim: usize,
    pub inner: f64,
    pub outer: Option<f64>,
    /// Only the positive orthant (weights not multiplied).
    pub fold: bool,
    /// Target panel width in x-space.
    pub width: f64,
    /// Discontinuities along the ray through direction u, returned as radii |x|.
    pub ray_breaks: &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync),
    /// Geometric radial panels starting at the inner radius.
    pub log_radial: bool,
}

pub fn shell_points(shell: &Shell, order: usize) -> Result<Piece> {
    let d = shell.dim;
    if !(1..=3).contains(&d) {
        return Err(Error::Domain(format!("shell cubature supports d <= 3, got {d}")));
    }
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    let faces: Vec<(usize, f64)> =
        (0..d).flat_map(|k| if shell.fold { vec![(k, 1.0)] } else { vec![(k, 1.0), (k, -1.0)] }).collect();
    let ulo = if shell.fold { 0.0 } else { -1.0 };
    // x = s u with s <= pi, so du maps to dx scaled by at most pi
    let mut uspec = AxisSpec::new(ulo, 1.0, shell.width / PI);
    uspec.breaks = vec![0.0];
    let urule = uspec.rule(order);
    for (k, sign) in faces {
        let others = d - 1;
        let count = urule.len().pow(others as u32);
        for idx in 0..count {
            let mut u = vec![0.0; d];
            u[k] = sign;
            let mut wu = 1.0;
            let mut rem = idx;
            for j in (0..d).filter(|&j| j != k) {
                let i = rem % urule.len();
                rem /= urule.len();
                u[j] = urule.nodes[i];
                wu *= urule.weights[i];
            }
            let un = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            let s_lo = shell.inner / un;
            let s_hi = match shell.outer {
                Some(o) => (o / un).min(PI),
                None => PI,
            };
            if s_hi <= s_lo {
                continue;
            }
            let dir: Vec<f64> = u.iter().map(|v| v / un).collect();
            let mut cuts: Vec<f64> = (shell.ray_breaks)(&dir).into_iter().map(|r| r / un).collect();
            if shell.log_radial && s_lo > 0.0 {
                let mut c = 2.0 * s_lo;
                while c < s_hi {
                    cuts.push(c);
                    c *= 2.0;
                }
            }
            let mut sspec = AxisSpec::new(s_lo, s_hi, shell.width / un.max(1.0));
            sspec.breaks = cuts;
            if shell.log_radial && s_lo == 0.0 {
                sspec.graded = vec![0.0];
            }
            let srule = sspec.rule(order);
            for (s, ws) in srule.nodes.iter().zip(&srule.weights) {
                coords.extend(u.iter().take(d).map(|v| s * v));
                weights.push(wu * ws * s.powi(d as i32 - 1));
            }
        }
    }
    Ok(Piece { nodes: Nodes::Scattered { coords, weights, columns: Vec::new() }, scale: 1.0, weighted: false })
}

/// Panel width such that a phase rate `bandwidth` fits the node budget of `order`.
pub fn width_for_bandwidth(bandwidth: f64, order: usize, base_width: f64) -> f64 {
    if bandwidth <= 0.0 {
        base_width
    } else {
        base_width.min(PHASE_PER_NODE * order as f64 / bandwidth)
    }
}

/// Controls for adaptive refinement.
#[derive(Debug, Clone, Copy)]
pub struct Refinement {
    /// Relative tolerance.
    pub tolerance: f64,
    /// Absolute tolerance floor.
    pub abs_floor: f64,
    pub max_depth: u32,
    /// Base GL order; the check uses order + 4.
    pub order: usize,
}

impl Default for Refinement {
    fn default() -> Self {
        Refinement { tolerance: 1e-10, abs_floor: 1e-13, max_depth: 6, order: 16 }
    }
}

/// Vector-valued adaptive result.
#[derive(Debug, Clone)]
pub struct VecEstimate {
    pub values: Vec<f64>,
    pub error: f64,
    pub converged: bool,
    pub level: u32,
}

/// Run `eval(level, order)` at increasing levels until orders q and q + 4
/// agree to `tolerance * max|value| + abs_floor`.
pub fn refine<F>(r: &Refinement, mut eval: F) -> Result<VecEstimate>
where
    F: FnMut(u32, usize) -> Result<Vec<f64>>,
{
    let mut last = None;
    for level in 0..=r.max_depth {
        let lo = eval(level, r.order)?;
        let hi = eval(level, r.order + 4)?;
        if lo.len() != hi.len() {
            return Err(Error::Numeric("refinement produced inconsistent shapes".into()));
        }
        if hi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("integrand produced non-finite values".into()));
        }
        let err = lo.iter().zip(&hi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = hi.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if err <= r.tolerance * scale + r.abs_floor {
            return Ok(VecEstimate { values: hi, error: err, converged: true, level });
        }
        last = Some(VecEstimate { values: hi, error: err, converged: false, level });
    }
    Ok(last.expect("max_depth >= 0 evaluates at least once"))
}

/// Scalar convenience wrapper around [`refine`].
pub fn refine_scalar<F>(r: &Refinement, mut eval: F) -> Result<Estimate>
where
    F: FnMut(u32, usize) -> Result<f64>,
{
    let v = refine(r, |l, q| eval(l, q).map(|x| vec![x]))?;
    Ok(Estimate { value: v.values[0], error: v.error, converged: v.converged })
}

/// Specification for [`integrate_torus`].
#[derive(Debug, Clone)]
pub struct QuadratureSpec {
    pub dim: usize,
    /// Base panel count per axis over [-pi, pi].
    pub panels: usize,
    pub refinement: Refinement,
    /// Per-axis discontinuities.
    pub breaks: Vec<Vec<f64>>,
    /// Per-axis singular coordinates (geometric grading toward them).
    pub graded: Vec<Vec<f64>>,
    /// Per-axis excluded intervals; the integration region is the product of
    /// the remaining sets.
    pub excluded: Vec<Vec<(f64, f64)>>,
    pub grading_levels: u32,
}

impl QuadratureSpec {
    pub fn new(dim: usize) -> Self {
        QuadratureSpec {
            dim,
            panels: 8,
            refinement: Refinement::default(),
            breaks: vec![Vec::new(); dim],
            graded: vec![Vec::new(); dim],
            excluded: vec![Vec::new(); dim],
            grading_levels: 60,
        }
    }

    pub fn with_breaks_all(mut self, b: &[f64]) -> Self {
        for v in &mut self.breaks {
            v.extend_from_slice(b);
        }
        self
    }

    pub fn with_graded_all(mut self, g: &[f64]) -> Self {
        for v in &mut self.graded {
            v.extend_from_slice(g);
        }
        self
    }

    pub fn with_excluded_all(mut self, e: (f64, f64)) -> Self {
        for v in &mut self.excluded {
            v.push(e);
        }
        self
    }

    pub fn tolerance(mut self, tol: f64) -> Self {
        self.refinement.tolerance = tol;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(Error::Invalid(format!("dimension {} outside 1..=3", self.dim)));
        }
        let lens = [self.breaks.len(), self.graded.len(), self.excluded.len()];
        if lens.iter().any(|&l| l != self.dim) {
            return Err(Error::Invalid("per-axis lists must have one entry per dimension".into()));
        }
        if self.panels == 0 || self.refinement.order < 2 {
            return Err(Error::Invalid("panels and order must be positive".into()));
        }
        if !(self.refinement.tolerance > 0.0) {
            return Err(Error::Invalid("tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Tensor rule at refinement `level` and GL `order`.
    pub fn cubature(&self, level: u32, order: usize) -> Cubature {
        let width = 2.0 * PI / (self.panels as f64 * 2f64.powi(level as i32));
        let axes = (0..self.dim)
            .map(|k| {
                let mut a = AxisSpec::new(-PI, PI, width);
                a.breaks = self.breaks[k].clone();
                a.graded = self.graded[k].clone();
                a.excluded = self.excluded[k].clone();
                a.grading_levels = self.grading_levels;
                a.rule(order)
            })
            .collect();
        Cubature { dim: self.dim, pieces: vec![Piece { nodes: Nodes::Tensor(axes), scale: 1.0, weighted: false }] }
    }
}

/// Adaptive integral of `f` over [-pi, pi]^d (minus excluded sets).
///
/// Non-finite samples within 1e-9 of a declared singular coordinate count as
/// zero (the singular set has measure zero); elsewhere they are an error.
pub fn integrate_torus<F>(f: F, spec: &QuadratureSpec) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    spec.validate()?;
    let bad = std::sync::atomic::AtomicBool::new(false);
    let guarded = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            let near = x.iter().zip(&spec.graded).any(|(xi, gs)| gs.iter().any(|g| (xi - g).abs() < 1e-9));
            if !near {
                bad.store(true, std::sync::atomic::Ordering::Relaxed);
            }
            0.0
        }
    };
    let one = |_: &[f64]| 1.0;
    refine_scalar(&spec.refinement, |level, order| {
        let v = spec.cubature(level, order).integrate(&one, &guarded);
        if bad.load(std::sync::atomic::Ordering::Relaxed) {
            return Err(Error::Numeric("integrand is non-finite away from declared singular sets".into()));
        }
        Ok(v)
    })
}

/// Weighted node count summary, used by callers to stay inside resource limits.
pub fn node_budget_check(nodes: usize, limit: usize) -> Result<()> {
    if nodes > limit {
        Err(Error::Resource(format!("cubature needs {nodes} nodes, limit is {limit}")))
    } else {
        Ok(())
    }
}

/// Apply `f` to every node of a tensor piece in parallel over the first axis,
/// collecting per-node values in lexicographic order.
pub fn tensor_map<T, F>(axes: &[AxisRule], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[f64]) -> T + Sync,
{
    let inner: usize = axes[1..].iter().map(AxisRule::len).product();
    (0..axes[0].len())
        .into_par_iter()
        .flat_map_iter(|a| {
            let mut out = Vec::with_capacity(inner);
            let mut x = vec![0.0; axes.len()];
            x[0] = axes[0].nodes[a];
            for flat in 0..inner {
                let mut rem = flat;
                for k in (1..axes.len()).rev() {
                    let n = axes[k].len();
                    x[k] = axes[k].nodes[rem % n];
                    rem /= n;
                }
                out.push(f(&x));
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in [1usize, 2, 5, 16, 20] {
            let r = gauss_legendre(n);
            for p in 0..(2 * n) {
                let got: f64 = r.0.iter().zip(&r.1).map(|(x, w)| w * x.powi(p as i32)).sum();
                let want = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert!((got - want).abs() < 1e-13, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn constant_integrates_to_torus_volume() {
        for d in 1..=3 {
            let e = integrate_torus(|_| 1.0, &QuadratureSpec::new(d)).unwrap();
            assert!(e.converged);
            assert!((e.value - (2.0 * PI).powi(d as i32)).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_squared_in_two_dimensions() {
        let e = integrate_torus(|x| (3.0 * x[0]).cos().powi(2), &QuadratureSpec::new(2)).unwrap();
        assert!((e.value - 2.0 * PI * PI).abs() < 1e-9);
    }

    #[test]
    fn graded_mesh_handles_inverse_sqrt() {
        let spec = QuadratureSpec::new(1).with_graded_all(&[0.0]);
        let e = integrate_torus(|x| 1.0 / x[0].abs().sqrt(), &spec).unwrap();
        assert!(e.converged);
        assert!((e.value - 4.0 * PI.sqrt()).abs() < 1e-8, "{}", e.value);
    }

    #[test]
    fn non_finite_at_singular_point_is_tolerated() {
        let spec = QuadratureSpec::new(1).with_graded_all(&[0.0]);
        // every node is away from 0, so a hand-made infinity exactly there never shows
        assert!(integrate_torus(|x| if x[0] == 0.0 { f64::INFINITY } else { 1.0 }, &spec).is_ok());
        let r = integrate_torus(|x| if x[0] > 1.0 { f64::NAN } else { 1.0 }, &QuadratureSpec::new(1));
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn excluded_strips_remove_their_measure() {
        let spec = QuadratureSpec::new(2).with_excluded_all((-1.0, 1.0));
        let e = integrate_torus(|_| 1.0, &spec).unwrap();
        assert!((e.value - (2.0 * PI - 2.0).powi(2)).abs() < 1e-10);
    }

    #[test]
    fn unconverged_is_flagged() {
        let mut spec = QuadratureSpec::new(1);
        spec.refinement.max_depth = 0;
        spec.panels = 1;
        spec.refinement.order = 2;
        let e = integrate_torus(|x| (40.0 * x[0]).cos().powi(2) + x[0].abs(), &spec).unwrap();
        assert!(!e.converged);
    }

    #[test]
    fn ball_columns_measure_volume() {
        let r = 1.3;
        let vols = [2.0 * r, PI * r * r, 4.0 / 3.0 * PI * r.powi(3)];
        for d in 1..=3 {
            let one = |_: &[f64]| 1.0;
            let full = Cubature { dim: d, pieces: vec![ball_columns(d, r, false, 0.5, 12).unwrap()] };
            assert!((full.integrate(&one, &one) - vols[d - 1]).abs() < 1e-12, "d={d}");
            let half = Cubature { dim: d, pieces: vec![ball_columns(d, r, true, 0.5, 12).unwrap()] };
            let v = half.integrate(&one, &one) * 2f64.powi(d as i32);
            assert!((v - vols[d - 1]).abs() < 1e-12, "d={d} folded");
        }
    }

    #[test]
    fn shell_covers_torus_minus_ball() {
        let nb = |_: &[f64]| Vec::new();
        for d in 1..=3 {
            for fold in [false, true] {
                let shell =
                    Shell { dim: d, inner: 0.7, outer: None, fold, width: 0.5, ray_breaks: &nb, log_radial: true };
                let c = Cubature { dim: d, pieces: vec![shell_points(&shell, 12).unwrap()] };
                let one = |_: &[f64]| 1.0;
                let v = c.integrate(&one, &one) * if fold { 2f64.powi(d as i32) } else { 1.0 };
                let ball = [2.0 * 0.7, PI * 0.49, 4.0 / 3.0 * PI * 0.343][d - 1];
                let want = (2.0 * PI).powi(d as i32) - ball;
                assert!((v - want).abs() < 1e-9, "d={d} fold={fold}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn shell_gaussian_moment() {
        // integral over R^2 of |x|^{-3} on pi/4 <= |x| <= 2 = 2 pi (4/pi - 1/2)
        let nb = |_: &[f64]| Vec::new();
        let shell = Shell {
            dim: 2,
            inner: PI / 4.0,
            outer: Some(2.0),
            fold: false,
            width: 0.4,
            ray_breaks: &nb,
            log_radial: true,
        };
        let c = Cubature { dim: 2, pieces: vec![shell_points(&shell, 16).unwrap()] };
        let one = |_: &[f64]| 1.0;
        let v = c.integrate(&one, &|x: &[f64]| (x[0] * x[0] + x[1] * x[1]).powf(-1.5));
        let want = 2.0 * PI * (4.0 / PI - 0.5);
        assert!((v - want).abs() < 1e-6, "{v} vs {want}");
    }
}
