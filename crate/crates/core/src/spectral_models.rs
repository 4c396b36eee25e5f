//! Structure functions S on the torus [-pi, pi]^d and their covariance kernels.
//!
//! Conventions: `S(theta) = sum_j K(j) e^{i theta . j}` and
//! `K(j) = (2 pi)^{-d} integral of S(theta) e^{-i j . theta}`. Every model is
//! normalized so that `(2 pi)^{-d} integral of S = 1`, i.e. `K(0) = 1`.

use crate::geometry::TransformMode;
use crate::numerics::quadrature::{
    ball_columns, refine, refine_scalar, AxisRule, AxisSpec, Cubature, Nodes, Piece, Refinement, PHASE_PER_NODE,
};
use crate::numerics::tensor::{contract, contract_complex};
use crate::numerics::{Estimate, ExtReal};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

/// One cosine term `amplitude * cos(lag . theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineTerm {
    pub lag: Vec<i64>,
    pub amplitude: f64,
}

/// Model families. Raw (pre-normalization) forms:
///
/// | family | raw S(theta) |
/// |---|---|
/// | constant | 1 |
/// | stealthy-gap | 1 if \|theta\|_2 >= delta, else 0 |
/// | radial-power | \|theta\|_p^alpha |
/// | anisotropic-product | prod \|theta_k\|^alpha_k |
/// | axes-stealthy | 1 if every \|theta_k\| >= delta, else 0 |
/// | tabulated | multilinear interpolation of an N^d grid on [-pi, pi]^d |
/// | cosine-series | constant + sum amplitude cos(lag . theta) |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    Constant,
    StealthyGap {
        delta: f64,
    },
    RadialPower {
        alpha: f64,
        #[serde(default = "default_p")]
        p: f64,
    },
    AnisotropicProduct {
        alphas: Vec<f64>,
    },
    AxesStealthy {
        delta: f64,
    },
    Tabulated {
        n: usize,
        values: Vec<f64>,
    },
    CosineSeries {
        constant: f64,
        terms: Vec<CosineTerm>,
    },
}

fn default_p() -> f64 {
    2.0
}

/// Serializable model description: dimension plus family parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dim: usize,
    #[serde(flatten)]
    pub family: Family,
}

/// A validated, normalized structure function.
#[derive(Debug, Clone)]
pub struct StructureFunction {
    spec: ModelSpec,
    norm: f64,
    norm_error: f64,
    even: bool,
}

/// Covariance kernel on the lag cube `[-R, R]^d`, row-major with axis 0 slowest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelTable {
    pub dim: usize,
    pub radius: usize,
    pub values: Vec<f64>,
    pub error: f64,
    pub converged: bool,
}

impl KernelTable {
    fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn get(&self, lag: &[i64]) -> Option<f64> {
        if lag.len() != self.dim {
            return None;
        }
        let r = self.radius as i64;
        let mut idx = 0usize;
        for &j in lag {
            if j.abs() > r {
                return None;
            }
            idx = idx * self.side() + (j + r) as usize;
        }
        Some(self.values[idx])
    }

    /// Lags in storage order.
    pub fn lags(&self) -> Vec<Vec<i64>> {
        let r = self.radius as i64;
        let side = self.side();
        (0..self.values.len())
            .map(|mut flat| {
                let mut lag = vec![0i64; self.dim];
                for k in (0..self.dim).rev() {
                    lag[k] = (flat % side) as i64 - r;
                    flat /= side;
                }
                lag
            })
            .collect()
    }
}

const GRADING_LEVELS: u32 = 60;

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn in_torus(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite() && v.abs() <= PI * (1.0 + 1e-12))
}

impl StructureFunction {
    pub fn new(dim: usize, family: Family) -> Result<Self> {
        Self::from_spec(ModelSpec { dim, family })
    }

    /// Validate parameters and compute the normalization constant by quadrature.
    pub fn from_spec(spec: ModelSpec) -> Result<Self> {
        validate(&spec)?;
        let mut sf = StructureFunction { spec, norm: 1.0, norm_error: 0.0, even: true };
        sf.even = sf.compute_even();
        let r = Refinement { tolerance: 1e-13, abs_floor: 1e-13, max_depth: 6, order: 16 };
        let fold = sf.even;
        let est = refine_scalar(&r, |level, order| {
            let w = sf.mesh_width(0.0, level);
            Ok(sf.measure_scaled(w, order, fold, sf.fold_factor(fold))?.integrate(&|x| sf.raw(x), &|_| 1.0))
        })?;
        let total = est.require_converged("normalization")?;
        if !(total > 0.0) {
            return Err(Error::Invalid("structure function integrates to zero".into()));
        }
        sf.norm =
            if matches!(sf.spec.family, Family::Constant) { 1.0 } else { (2.0 * PI).powi(sf.spec.dim as i32) / total };
        sf.norm_error = est.error / total * sf.norm;
        Ok(sf)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn family(&self) -> &Family {
        &self.spec.family
    }

    /// Multiplier c with S = c * raw S.
    pub fn normalization(&self) -> f64 {
        self.norm
    }

    /// Stable identifier recorded in provenance.
    pub fn id(&self) -> String {
        let d = self.dim();
        match &self.spec.family {
            Family::Constant => format!("constant(d={d})"),
            Family::StealthyGap { delta } => format!("stealthy-gap(d={d},delta={delta:?})"),
            Family::RadialPower { alpha, p } => format!("radial-power(d={d},alpha={alpha:?},p={p:?})"),
            Family::AnisotropicProduct { alphas } => format!("anisotropic-product(d={d},alphas={alphas:?})"),
            Family::AxesStealthy { delta } => format!("axes-stealthy(d={d},delta={delta:?})"),
            Family::Tabulated { n, .. } => format!("tabulated(d={d},n={n})"),
            Family::CosineSeries { constant, terms } => {
                format!("cosine-series(d={d},constant={constant:?},terms={})", terms.len())
            }
        }
    }

    /// Normalized S at a point of the torus.
    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::Invalid(format!("expected a {}-vector", self.dim())));
        }
        if !in_torus(theta) {
            return Err(Error::Domain(format!("{theta:?} lies outside [-pi, pi]^{}", self.dim())));
        }
        Ok(self.density(theta))
    }

    /// Normalized S without argument checks.
    pub fn density(&self, x: &[f64]) -> f64 {
        self.norm * self.raw(x)
    }

    pub(crate) fn raw(&self, x: &[f64]) -> f64 {
        match &self.spec.family {
            Family::Constant => 1.0,
            Family::StealthyGap { delta } => {
                if norm2(x) >= *delta {
                    1.0
                } else {
                    0.0
                }
            }
            Family::RadialPower { alpha, p } => {
                let n =
                    if *p == 2.0 { norm2(x) } else { x.iter().map(|v| v.abs().powf(*p)).sum::<f64>().powf(1.0 / p) };
                n.powf(*alpha)
            }
            Family::AnisotropicProduct { alphas } => {
                x.iter().zip(alphas).map(|(v, a)| if *a == 0.0 { 1.0 } else { v.abs().powf(*a) }).product()
            }
            Family::AxesStealthy { delta } => {
                if x.iter().all(|v| v.abs() >= *delta) {
                    1.0
                } else {
                    0.0
                }
            }
            Family::Tabulated { n, values } => interpolate(*n, values, x),
            Family::CosineSeries { constant, terms } => {
                constant
                    + terms
                        .iter()
                        .map(|t| t.amplitude * t.lag.iter().zip(x).map(|(j, v)| *j as f64 * v).sum::<f64>().cos())
                        .sum::<f64>()
            }
        }
    }

    /// True when S is invariant under every single-coordinate reflection.
    pub fn coordinate_even(&self) -> bool {
        self.even
    }

    fn compute_even(&self) -> bool {
        match &self.spec.family {
            Family::Tabulated { n, values } => {
                let d = self.dim();
                (0..values.len()).all(|flat| {
                    let idx = unflatten(flat, *n, d);
                    (0..d).all(|k| {
                        let mut r = idx.clone();
                        r[k] = n - 1 - r[k];
                        let v = values[flatten(&r, *n)];
                        (v - values[flat]).abs() <= 1e-12 * v.abs().max(values[flat].abs()).max(1e-300)
                    })
                })
            }
            Family::CosineSeries { terms, .. } => {
                // even iff every reflected term carries the same amplitude
                let d = self.dim();
                let canon = |lag: &[i64]| -> Vec<i64> {
                    let neg = lag.iter().find(|&&v| v != 0).map(|&v| v < 0).unwrap_or(false);
                    lag.iter().map(|&v| if neg { -v } else { v }).collect()
                };
                let mut table: std::collections::BTreeMap<Vec<i64>, f64> = Default::default();
                for t in terms {
                    *table.entry(canon(&t.lag)).or_default() += t.amplitude;
                }
                table.iter().all(|(lag, a)| {
                    (0..d).all(|k| {
                        let mut r = lag.clone();
                        r[k] = -r[k];
                        let b = table.get(&canon(&r)).copied().unwrap_or(0.0);
                        (a - b).abs() <= 1e-12 * a.abs().max(1.0)
                    })
                })
            }
            _ => true,
        }
    }

    /// Largest lag frequency present in S itself (nonzero only for cosine series).
    fn own_bandwidth(&self) -> f64 {
        match &self.spec.family {
            Family::CosineSeries { terms, .. } => {
                terms.iter().flat_map(|t| t.lag.iter().map(|v| v.unsigned_abs() as f64)).fold(0.0, f64::max)
            }
            _ => 0.0,
        }
    }

    /// Panel width for integrands of per-axis phase rate `bandwidth` at `level`.
    pub fn mesh_width(&self, bandwidth: f64, level: u32) -> f64 {
        let b = bandwidth + self.own_bandwidth();
        let base = PI / 4.0;
        let w = if b > 0.0 { base.min(PHASE_PER_NODE * 16.0 / b) } else { base };
        w / 2f64.powi(level as i32)
    }

    fn fold_factor(&self, fold: bool) -> f64 {
        if fold {
            2f64.powi(self.dim() as i32)
        } else {
            1.0
        }
    }

    fn axis_spec(&self, width: f64, fold: bool) -> AxisSpec {
        let mut a = AxisSpec::new(if fold { 0.0 } else { -PI }, PI, width);
        a.grading_levels = GRADING_LEVELS;
        match &self.spec.family {
            Family::RadialPower { .. } | Family::AnisotropicProduct { .. } => a.graded = vec![0.0],
            Family::AxesStealthy { delta } => a.excluded = vec![(-delta, *delta)],
            Family::StealthyGap { delta } if self.dim() == 1 => a.excluded = vec![(-delta, *delta)],
            Family::Tabulated { n, .. } => {
                let h = 2.0 * PI / (*n as f64 - 1.0);
                a.breaks = (1..n - 1).map(|i| -PI + i as f64 * h).collect();
            }
            _ => {}
        }
        a
    }

    /// Cubature for integrals `sum w * S(theta) * g(theta)`, i.e. the measure
    /// `(2 pi)^{-d} S(theta) d theta`, times `factor * (2 pi)^d / norm` relative
    /// to the normalized measure. With `fold`, only [0, pi]^d is covered.
    fn measure_scaled(&self, width: f64, order: usize, fold: bool, factor: f64) -> Result<Cubature> {
        let d = self.dim();
        let axis = self.axis_spec(width, fold).rule(order);
        let axes = vec![axis; d];
        let weighted =
            !matches!(self.spec.family, Family::Constant | Family::StealthyGap { .. } | Family::AxesStealthy { .. });
        let mut pieces = vec![Piece { nodes: Nodes::Tensor(axes), scale: factor, weighted }];
        if let Family::StealthyGap { delta } = &self.spec.family {
            if d > 1 {
                let mut ball = ball_columns(d, *delta, fold, width, order)?;
                ball.scale = -factor;
                pieces.push(ball);
            }
        }
        Ok(Cubature { dim: d, pieces })
    }

    /// Cubature of the normalized spectral measure `(2 pi)^{-d} S d theta`.
    /// Densities passed to `Cubature::integrate` must be `raw`.
    pub(crate) fn measure(&self, width: f64, order: usize, fold: bool) -> Result<Cubature> {
        if fold && !self.even {
            return Err(Error::Invalid("folding requires a coordinate-even structure function".into()));
        }
        let factor = self.norm / (2.0 * PI).powi(self.dim() as i32) * self.fold_factor(fold);
        self.measure_scaled(width, order, fold, factor)
    }

    /// Plain Lebesgue cubature of the torus with this model's breakpoints and grading.
    fn torus_rule(&self, width: f64, order: usize, fold: bool) -> Cubature {
        let mut a = self.axis_spec(width, fold);
        a.excluded.clear();
        let axes = vec![a.rule(order); self.dim()];
        Cubature {
            dim: self.dim(),
            pieces: vec![Piece { nodes: Nodes::Tensor(axes), scale: self.fold_factor(fold), weighted: false }],
        }
    }

    /// `(2 pi)^{-d} integral of S g`, adaptively. `g_even` declares g invariant
    /// under coordinate reflections, which enables folding.
    pub fn integrate_against<G>(&self, g: G, g_bandwidth: f64, g_even: bool, r: &Refinement) -> Result<Estimate>
    where
        G: Fn(&[f64]) -> f64 + Sync,
    {
        let fold = g_even && self.even;
        refine_scalar(r, |level, order| {
            let w = self.mesh_width(g_bandwidth, level);
            self.measure(w, order, fold)?.try_integrate(&|x| self.raw(x), &g)
        })
    }

    /// Kernel values K(j) for all lags with |j|_inf <= radius.
    pub fn covariance_kernel(&self, radius: usize) -> Result<KernelTable> {
        self.covariance_kernel_with(radius, &Refinement { tolerance: 0.0, abs_floor: 1e-13, max_depth: 6, order: 16 })
    }

    pub fn covariance_kernel_with(&self, radius: usize, r: &Refinement) -> Result<KernelTable> {
        let d = self.dim();
        let side = 2 * radius + 1;
        let count = side
            .checked_pow(d as u32)
            .filter(|&c| c <= 1 << 26)
            .ok_or_else(|| Error::Resource(format!("kernel table of radius {radius} in d = {d} is too large")))?;
        let exact = |constant: f64, terms: &[CosineTerm]| {
            let mut values = vec![0.0; count];
            let r = radius as i64;
            let index = |lag: &[i64]| -> Option<usize> {
                lag.iter().try_fold(0usize, |acc, &j| (j.abs() <= r).then(|| acc * side + (j + r) as usize))
            };
            values[index(&vec![0; d]).unwrap()] += self.norm * constant;
            for t in terms {
                let neg: Vec<i64> = t.lag.iter().map(|v| -v).collect();
                for lag in [&t.lag, &neg] {
                    if let Some(i) = index(lag) {
                        values[i] += 0.5 * self.norm * t.amplitude;
                    }
                }
            }
            KernelTable { dim: d, radius, values, error: 0.0, converged: true }
        };
        match &self.spec.family {
            Family::Constant => return Ok(exact(1.0, &[])),
            Family::CosineSeries { constant, terms } => return Ok(exact(*constant, terms)),
            _ => {}
        }
        let fold = self.even;
        let est = refine(r, |level, order| {
            let w = self.mesh_width(radius as f64, level);
            let cub = self.measure(w, order, fold)?;
            Ok(kernel_from_cubature(&cub, &|x| self.raw(x), radius, fold))
        })?;
        debug_assert_eq!(est.values.len(), count);
        if !est.converged {
            return Err(Error::Numeric(format!(
                "covariance kernel did not converge (error estimate {:.3e})",
                est.error
            )));
        }
        Ok(KernelTable { dim: d, radius, values: est.values, error: est.error, converged: est.converged })
    }

    /// Exponents (beta, tau) predicted for `Var ~ L^beta (log L)^tau` over
    /// cubes `[-L, L]^d`, when the family determines them.
    pub fn cube_exponents(&self) -> Option<(f64, u32)> {
        let d = self.dim() as f64;
        match &self.spec.family {
            Family::Constant => Some((d, 0)),
            Family::RadialPower { alpha, .. } => Some((d - alpha, u32::from(*alpha == 1.0))),
            Family::AnisotropicProduct { alphas } => {
                Some((d - alphas.iter().sum::<f64>(), alphas.iter().filter(|&&a| a == 1.0).count() as u32))
            }
            Family::AxesStealthy { .. } => Some((0.0, 0)),
            Family::StealthyGap { .. } => Some((d - 1.0, 0)),
            _ => None,
        }
    }

    /// Exponents (beta, tau) predicted over balls.
    pub fn ball_exponents(&self) -> Option<(f64, u32)> {
        let d = self.dim() as f64;
        let from_total = |m: f64| -> (f64, u32) {
            if m < 1.0 {
                (d - m, 0)
            } else if m == 1.0 {
                (d - 1.0, 1)
            } else {
                (d - 1.0, 0)
            }
        };
        match &self.spec.family {
            Family::Constant => Some((d, 0)),
            Family::RadialPower { alpha, .. } => Some(from_total(*alpha)),
            Family::AnisotropicProduct { alphas } => Some(from_total(alphas.iter().sum())),
            Family::AxesStealthy { .. } | Family::StealthyGap { .. } => Some((d - 1.0, 0)),
            _ => None,
        }
    }

    /// Fraction of the torus on which S vanishes identically.
    pub fn gap_fraction(&self) -> f64 {
        let d = self.dim() as i32;
        match &self.spec.family {
            Family::StealthyGap { delta } => {
                let vol = match d {
                    1 => 2.0 * delta,
                    2 => PI * delta * delta,
                    _ => 4.0 / 3.0 * PI * delta.powi(3),
                };
                vol / (2.0 * PI).powi(d)
            }
            Family::AxesStealthy { delta } => 1.0 - ((PI - delta) / PI).powi(d),
            Family::Tabulated { n, values } => {
                let cells = zero_cells(*n, values, self.dim());
                cells as f64 / ((*n - 1) as f64).powi(d)
            }
            _ => 0.0,
        }
    }

    /// Whether `integral S / prod theta_k^2` is finite.
    pub fn sigma_sq_finite(&self) -> bool {
        let d = self.dim();
        match &self.spec.family {
            Family::AxesStealthy { .. } => true,
            Family::StealthyGap { .. } => d == 1,
            Family::Tabulated { n, values } => {
                let h = 2.0 * PI / (*n as f64 - 1.0);
                (0..values.len()).all(|flat| {
                    let idx = unflatten(flat, *n, d);
                    let near_axis = idx.iter().any(|&i| (-PI + i as f64 * h).abs() <= h * (1.0 + 1e-9));
                    !near_axis || values[flat] == 0.0
                })
            }
            Family::CosineSeries { constant, terms } => {
                let scale = constant.abs() + terms.iter().map(|t| t.amplitude.abs()).sum::<f64>();
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
                (0..d).all(|k| {
                    (0..64).all(|_| {
                        let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(-PI..PI)).collect();
                        x[k] = 0.0;
                        self.raw(&x).abs() <= 1e-12 * scale
                    })
                })
            }
            _ => false,
        }
    }

    /// Limiting box variance sigma_d^2.
    ///
    /// Continuum mode: `2^d integral S / prod x_k^2 dx` over the torus (no
    /// `(2 pi)^{-d}`), the limit of the continuum functional
    /// `integral |phi_hat|^2 S`. Lattice mode:
    /// `2^d (2 pi)^{-d} integral S / prod 4 sin^2(x_k / 2)`, the limit of the
    /// exact lattice box variance. `+inf` when the integrand is not integrable.
    pub fn sigma_sq_d(&self, mode: TransformMode) -> Result<ExtReal> {
        if !self.sigma_sq_finite() {
            return Ok(ExtReal::PosInfinity);
        }
        let d = self.dim() as i32;
        let r = Refinement { tolerance: 1e-11, abs_floor: 1e-14, max_depth: 8, order: 16 };
        let est = match mode {
            TransformMode::Continuum => {
                let e = self.integrate_against(|x| 1.0 / x.iter().map(|v| v * v).product::<f64>(), 0.0, true, &r)?;
                let f = 2f64.powi(d) * (2.0 * PI).powi(d);
                Estimate { value: e.value * f, error: e.error * f, converged: e.converged }
            }
            TransformMode::Lattice => {
                let g = |x: &[f64]| 1.0 / x.iter().map(|v| 4.0 * (0.5 * v).sin().powi(2)).product::<f64>();
                let e = self.integrate_against(g, 0.0, true, &r)?;
                let f = 2f64.powi(d);
                Estimate { value: e.value * f, error: e.error * f, converged: e.converged }
            }
        };
        Ok(ExtReal::Finite(est.require_converged("sigma_d^2")?))
    }

    /// Szego reference `(2 pi)^{-d} integral log(S + eps)`.
    ///
    /// `-inf` when `eps = 0` and S vanishes on a set of positive measure.
    pub fn szego_limit_shifted(&self, eps: f64) -> Result<ExtReal> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::Invalid(format!("shift {eps} must be finite and >= 0")));
        }
        let f = self.gap_fraction();
        match &self.spec.family {
            Family::StealthyGap { .. } | Family::AxesStealthy { .. } => {
                if eps == 0.0 {
                    return Ok(ExtReal::NegInfinity);
                }
                return Ok(ExtReal::Finite((1.0 - f) * (self.norm + eps).ln() + f * eps.ln()));
            }
            _ => {}
        }
        if f > 0.0 && eps == 0.0 {
            return Ok(ExtReal::NegInfinity);
        }
        let r = Refinement { tolerance: 1e-10, abs_floor: 1e-12, max_depth: 8, order: 16 };
        let fold = self.even;
        let scale = (2.0 * PI).powi(-(self.dim() as i32));
        let est = refine_scalar(&r, |level, order| {
            let w = self.mesh_width(0.0, level);
            self.torus_rule(w, order, fold)
                .try_integrate(&|_| 1.0, &|x| (self.density(x) + eps).ln())
                .map(|v| v * scale)
        })?;
        Ok(ExtReal::Finite(est.require_converged("Szego limit")?))
    }

    pub fn szego_limit(&self) -> Result<ExtReal> {
        self.szego_limit_shifted(0.0)
    }

    /// Number of nodes in the spectral measure at the given bandwidth and level.
    pub fn measure_size(&self, bandwidth: f64, level: u32, order: usize) -> Result<usize> {
        Ok(self.measure(self.mesh_width(bandwidth, level), order, self.even)?.len())
    }
}

fn validate(spec: &ModelSpec) -> Result<()> {
    let d = spec.dim;
    if !(1..=3).contains(&d) {
        return Err(Error::Invalid(format!("dimension {d} outside the supported range 1..=3")));
    }
    let finite = |name: &str, v: f64| -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(Error::Invalid(format!("{name} must be finite")))
        }
    };
    match &spec.family {
        Family::Constant => {}
        Family::StealthyGap { delta } | Family::AxesStealthy { delta } => {
            finite("delta", *delta)?;
            if !(*delta > 0.0 && *delta < PI) {
                return Err(Error::Invalid(format!("delta = {delta} must lie in (0, pi)")));
            }
        }
        Family::RadialPower { alpha, p } => {
            finite("alpha", *alpha)?;
            finite("p", *p)?;
            if !(*alpha > 0.0 && *alpha <= 1.0) {
                return Err(Error::Invalid(format!("alpha = {alpha} must lie in (0, 1]")));
            }
            if *p < 1.0 {
                return Err(Error::Invalid(format!("norm index p = {p} must be >= 1")));
            }
        }
        Family::AnisotropicProduct { alphas } => {
            if alphas.len() != d {
                return Err(Error::Invalid(format!("expected {d} exponents, got {}", alphas.len())));
            }
            for a in alphas {
                finite("alpha", *a)?;
                if !(0.0..=1.0).contains(a) {
                    return Err(Error::Invalid(format!("exponent {a} must lie in [0, 1]")));
                }
            }
        }
        Family::Tabulated { n, values } => {
            if *n < 2 {
                return Err(Error::Invalid("tabulated grid needs N >= 2".into()));
            }
            if n.checked_pow(d as u32) != Some(values.len()) {
                return Err(Error::Invalid(format!("expected {n}^{d} values, got {}", values.len())));
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::Invalid(format!("tabulated value {v} is negative or non-finite")));
            }
            // S(-theta) = S(theta): index i maps to N - 1 - i on every axis at once
            for flat in 0..values.len() {
                let idx: Vec<usize> = unflatten(flat, *n, d).into_iter().map(|i| n - 1 - i).collect();
                let (a, b) = (values[flat], values[flatten(&idx, *n)]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1e-300) {
                    return Err(Error::Invalid("tabulated grid is not symmetric under theta -> -theta".into()));
                }
            }
        }
        Family::CosineSeries { constant, terms } => {
            finite("constant", *constant)?;
            for t in terms {
                finite("amplitude", t.amplitude)?;
                if t.lag.len() != d {
                    return Err(Error::Invalid(format!("cosine lag {:?} is not a {d}-vector", t.lag)));
                }
                if t.lag.iter().all(|&v| v == 0) {
                    return Err(Error::Invalid("cosine lag must be nonzero; use the constant".into()));
                }
            }
            let raw = |x: &[f64]| {
                constant
                    + terms
                        .iter()
                        .map(|t| t.amplitude * t.lag.iter().zip(x).map(|(j, v)| *j as f64 * v).sum::<f64>().cos())
                        .sum::<f64>()
            };
            let scale = constant.abs() + terms.iter().map(|t| t.amplitude.abs()).sum::<f64>();
            let per_axis = [4096usize, 192, 40][d - 1];
            let probes = per_axis.pow(d as u32);
            let min_grid = (0..probes)
                .into_par_iter()
                .map(|flat| {
                    let idx = unflatten(flat, per_axis, d);
                    let x: Vec<f64> = idx.iter().map(|&i| -PI + 2.0 * PI * i as f64 / per_axis as f64).collect();
                    raw(&x)
                })
                .reduce(|| f64::INFINITY, f64::min);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xc05);
            let min_rand = (0..2000)
                .map(|_| {
                    let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-PI..PI)).collect();
                    raw(&x)
                })
                .fold(f64::INFINITY, f64::min);
            if min_grid.min(min_rand) < -1e-12 * scale {
                return Err(Error::Invalid(format!(
                    "cosine series takes the negative value {:.3e}",
                    min_grid.min(min_rand)
                )));
            }
        }
    }
    Ok(())
}

fn unflatten(mut flat: usize, n: usize, d: usize) -> Vec<usize> {
    let mut idx = vec![0; d];
    for k in (0..d).rev() {
        idx[k] = flat % n;
        flat /= n;
    }
    idx
}

fn flatten(idx: &[usize], n: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * n + i)
}

fn interpolate(n: usize, values: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    let h = 2.0 * PI / (n as f64 - 1.0);
    let mut base = vec![0usize; d];
    let mut frac = vec![0.0; d];
    for k in 0..d {
        let t = ((x[k] + PI) / h).clamp(0.0, (n - 1) as f64);
        let i = (t.floor() as usize).min(n - 2);
        base[k] = i;
        frac[k] = t - i as f64;
    }
    let mut total = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut flat = 0;
        for k in 0..d {
            let bit = (corner >> k) & 1;
            w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
            flat = flat * n + base[k] + bit;
        }
        if w != 0.0 {
            total += w * values[flat];
        }
    }
    total
}

fn zero_cells(n: usize, values: &[f64], d: usize) -> usize {
    let cells = (n - 1).pow(d as u32);
    (0..cells)
        .filter(|&c| {
            let base = unflatten(c, n - 1, d);
            (0..(1usize << d)).all(|corner| {
                let idx: Vec<usize> = (0..d).map(|k| base[k] + ((corner >> k) & 1)).collect();
                values[flatten(&idx, n)] == 0.0
            })
        })
        .count()
}

/// Read a tabulated model: header `d N`, then N^d whitespace-separated values.
pub fn read_tabulated(path: &Path) -> Result<ModelSpec> {
    let text = std::fs::read_to_string(path)?;
    let mut tokens = text.split_whitespace();
    let mut next_usize = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::Invalid(format!("{}: missing {what}", path.display())))?
            .parse::<usize>()
            .map_err(|e| Error::Invalid(format!("{}: bad {what}: {e}", path.display())))
    };
    let d = next_usize("dimension")?;
    let n = next_usize("grid size")?;
    let values = tokens
        .map(|t| t.parse::<f64>().map_err(|e| Error::Invalid(format!("{}: bad value {t:?}: {e}", path.display()))))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ModelSpec { dim: d, family: Family::Tabulated { n, values } })
}

/// cos(j x) for j = 0..=m, by complex rotation with periodic resynchronization.
pub(crate) fn cos_table(x: f64, m: usize, out: &mut [f64]) {
    let (s1, c1) = x.sin_cos();
    let (mut c, mut s) = (1.0, 0.0);
    for (j, o) in out.iter_mut().enumerate().take(m + 1) {
        if j % 64 == 0 && j > 0 {
            let (sj, cj) = (j as f64 * x).sin_cos();
            c = cj;
            s = sj;
        }
        *o = c;
        let nc = c * c1 - s * s1;
        s = s * c1 + c * s1;
        c = nc;
    }
}

fn sin_table(x: f64, m: usize, out: &mut [f64]) {
    let (s1, c1) = x.sin_cos();
    let (mut c, mut s) = (1.0, 0.0);
    for (j, o) in out.iter_mut().enumerate().take(m + 1) {
        if j % 64 == 0 && j > 0 {
            let (sj, cj) = (j as f64 * x).sin_cos();
            c = cj;
            s = sj;
        }
        *o = s;
        let nc = c * c1 - s * s1;
        s = s * c1 + c * s1;
        c = nc;
    }
}

/// Weighted sums `sum_p mu_p cos(j . theta_p)` over lags |j|_inf <= radius.
fn kernel_from_cubature(
    cub: &Cubature,
    density: &(dyn Fn(&[f64]) -> f64 + Sync),
    radius: usize,
    fold: bool,
) -> Vec<f64> {
    let d = cub.dim;
    let side = 2 * radius + 1;
    let mut total = vec![0.0; side.pow(d as u32)];
    for piece in &cub.pieces {
        let part = if fold {
            let half = piece_kernel_folded(d, piece, density, radius);
            mirror(&half, d, radius)
        } else {
            piece_kernel_full(d, piece, density, radius)
        };
        for (t, p) in total.iter_mut().zip(&part) {
            *t += piece.scale * p;
        }
    }
    total
}

/// Extend a table on j in [0, R]^d to [-R, R]^d by evenness in each coordinate.
fn mirror(half: &[f64], d: usize, radius: usize) -> Vec<f64> {
    let side = 2 * radius + 1;
    let m = radius + 1;
    (0..side.pow(d as u32))
        .map(|flat| {
            let idx = unflatten(flat, side, d);
            let h: Vec<usize> = idx.iter().map(|&i| (i as i64 - radius as i64).unsigned_abs() as usize).collect();
            half[flatten(&h, m)]
        })
        .collect()
}

fn node_weights(axes: &[AxisRule], piece: &Piece, density: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Vec<f64> {
    crate::numerics::quadrature::tensor_map(axes, |x| if piece.weighted { density(x) } else { 1.0 })
        .into_iter()
        .enumerate()
        .map(|(flat, s)| {
            let mut w = s;
            let mut rem = flat;
            for ax in axes.iter().rev() {
                w *= ax.weights[rem % ax.len()];
                rem /= ax.len();
            }
            w
        })
        .collect()
}

fn piece_kernel_folded(d: usize, piece: &Piece, density: &(dyn Fn(&[f64]) -> f64 + Sync), radius: usize) -> Vec<f64> {
    let m = radius + 1;
    match &piece.nodes {
        Nodes::Tensor(axes) => {
            let mut data = node_weights(axes, piece, density);
            let mut shape: Vec<usize> = axes.iter().map(AxisRule::len).collect();
            for k in 0..d {
                let n = shape[k];
                let mut table = vec![0.0; m * n];
                let mut col = vec![0.0; m];
                for a in 0..n {
                    cos_table(axes[k].nodes[a], radius, &mut col);
                    for j in 0..m {
                        table[j * n + a] = col[j];
                    }
                }
                data = contract(&data, &shape, k, &table, m);
                shape[k] = m;
            }
            data
        }
        Nodes::Scattered { coords, weights, .. } => {
            scattered_accumulate(d, coords, weights, piece.weighted, density, m, |x, tabs| {
                for (k, t) in tabs.iter_mut().enumerate() {
                    cos_table(x[k], radius, t);
                }
            })
        }
    }
}

fn scattered_accumulate(
    d: usize,
    coords: &[f64],
    weights: &[f64],
    weighted: bool,
    density: &(dyn Fn(&[f64]) -> f64 + Sync),
    m: usize,
    fill: impl Fn(&[f64], &mut [Vec<f64>]) + Sync,
) -> Vec<f64> {
    let len = m.pow(d as u32);
    let n = weights.len();
    let chunk = 2048;
    let parts: Vec<Vec<f64>> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; len];
            let mut tabs = vec![vec![0.0; m]; d];
            for p in c * chunk..((c + 1) * chunk).min(n) {
                let x = &coords[p * d..(p + 1) * d];
                let mut w = weights[p];
                if weighted {
                    w *= density(x);
                }
                if w == 0.0 {
                    continue;
                }
                fill(x, &mut tabs);
                outer_accumulate(&mut acc, &tabs, w);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; len];
    for p in parts {
        for (t, v) in total.iter_mut().zip(&p) {
            *t += v;
        }
    }
    total
}

fn outer_accumulate(acc: &mut [f64], tabs: &[Vec<f64>], w: f64) {
    match tabs.len() {
        1 => {
            for (a, t) in acc.iter_mut().zip(&tabs[0]) {
                *a += w * t;
            }
        }
        2 => {
            let m = tabs[1].len();
            for (i, &a0) in tabs[0].iter().enumerate() {
                let f = w * a0;
                for (a, t) in acc[i * m..(i + 1) * m].iter_mut().zip(&tabs[1]) {
                    *a += f * t;
                }
            }
        }
        _ => {
            let m1 = tabs[1].len();
            let m2 = tabs[2].len();
            for (i, &a0) in tabs[0].iter().enumerate() {
                for (j, &a1) in tabs[1].iter().enumerate() {
                    let f = w * a0 * a1;
                    let base = (i * m1 + j) * m2;
                    for (a, t) in acc[base..base + m2].iter_mut().zip(&tabs[2]) {
                        *a += f * t;
                    }
                }
            }
        }
    }
}

fn piece_kernel_full(d: usize, piece: &Piece, density: &(dyn Fn(&[f64]) -> f64 + Sync), radius: usize) -> Vec<f64> {
    let side = 2 * radius + 1;
    let r = radius as i64;
    match &piece.nodes {
        Nodes::Tensor(axes) => {
            let mut re = node_weights(axes, piece, density);
            let mut im = vec![0.0; re.len()];
            let mut shape: Vec<usize> = axes.iter().map(AxisRule::len).collect();
            for k in 0..d {
                let n = shape[k];
                let mut tre = vec![0.0; side * n];
                let mut tim = vec![0.0; side * n];
                let mut c = vec![0.0; radius + 1];
                let mut s = vec![0.0; radius + 1];
                for a in 0..n {
                    cos_table(axes[k].nodes[a], radius, &mut c);
                    sin_table(axes[k].nodes[a], radius, &mut s);
                    for j in -r..=r {
                        let row = (j + r) as usize;
                        let ja = j.unsigned_abs() as usize;
                        tre[row * n + a] = c[ja];
                        // e^{-i j x}
                        tim[row * n + a] = -s[ja] * j.signum() as f64;
                    }
                }
                let (a, b) = contract_complex(&re, &im, &shape, k, &tre, &tim, side);
                re = a;
                im = b;
                shape[k] = side;
            }
            re
        }
        Nodes::Scattered { coords, weights, .. } => {
            // real part of prod_k e^{-i j_k x_k}: accumulate cos and sin parts
            let n = weights.len();
            let len = side.pow(d as u32);
            let parts: Vec<Vec<f64>> = (0..n.div_ceil(1024))
                .into_par_iter()
                .map(|cidx| {
                    let mut acc = vec![0.0; len];
                    let mut c = vec![0.0; radius + 1];
                    let mut s = vec![0.0; radius + 1];
                    for p in cidx * 1024..((cidx + 1) * 1024).min(n) {
                        let x = &coords[p * d..(p + 1) * d];
                        let mut w = weights[p];
                        if piece.weighted {
                            w *= density(x);
                        }
                        if w == 0.0 {
                            continue;
                        }
                        let mut tabs: Vec<Vec<(f64, f64)>> = Vec::with_capacity(d);
                        for &xk in x {
                            cos_table(xk, radius, &mut c);
                            sin_table(xk, radius, &mut s);
                            tabs.push(
                                (-r..=r)
                                    .map(|j| {
                                        let ja = j.unsigned_abs() as usize;
                                        (c[ja], -s[ja] * j.signum() as f64)
                                    })
                                    .collect(),
                            );
                        }
                        for (flat, a) in acc.iter_mut().enumerate() {
                            let idx = unflatten(flat, side, d);
                            let mut z = (1.0, 0.0);
                            for k in 0..d {
                                let t = tabs[k][idx[k]];
                                z = (z.0 * t.0 - z.1 * t.1, z.0 * t.1 + z.1 * t.0);
                            }
                            *a += w * z.0;
                        }
                    }
                    acc
                })
                .collect();
            let mut total = vec![0.0; len];
            for p in parts {
                for (t, v) in total.iter_mut().zip(&p) {
                    *t += v;
                }
            }
            total
        }
    }
}
