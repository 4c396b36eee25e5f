//! Spectral synthesis of stationary Gaussian fields on the discrete torus
//! `(Z/NZ)^d`, pointwise transforms, and empirical kernels.
//!
//! A field is `X = N^{-d} IFFT(sqrt(S_k) FFT(W))` with `W` real white noise.
//! `N^{-d/2} FFT(W)` is exactly the Hermitian family of standard complex
//! Gaussians with real self-conjugate modes, so the covariance of `X` is the
//! circulant kernel `K_N(j) = N^{-d} sum_k S(2 pi k / N) e^{2 pi i k.j / N}`.

use crate::spectral_models::StructureFunction;
use crate::{Error, Result};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

/// Largest torus (in sites) the sampler will allocate.
pub const MAX_SITES: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    None,
    Sign,
    Cube,
}

impl Transform {
    pub fn as_str(self) -> &'static str {
        match self {
            Transform::None => "none",
            Transform::Sign => "sign",
            Transform::Cube => "cube",
        }
    }
}

/// One realization on the torus, row-major with axis 0 slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub dim: usize,
    pub n: usize,
    /// Master seed.
    pub seed: u64,
    /// Stream index under the master seed.
    pub stream: u64,
    pub model: String,
    pub transform: Transform,
    values: Vec<f64>,
}

impl FieldSample {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at a site, coordinates taken mod N.
    pub fn get(&self, site: &[i64]) -> f64 {
        let n = self.n as i64;
        let idx = site.iter().fold(0usize, |acc, &c| acc * self.n + c.rem_euclid(n) as usize);
        self.values[idx]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// The binary dump: "SPF1", u32 d, u32 N, u64 seed, then N^d f64 (LE).
    pub fn spf1_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + 8 * self.values.len());
        buf.extend_from_slice(b"SPF1");
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n as u32).to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn write_spf1(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.spf1_bytes())?;
        Ok(())
    }

    /// Read a dump. Model and stream are not stored and come back empty/zero.
    pub fn read_spf1(path: &Path) -> Result<FieldSample> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 20 || &bytes[..4] != b"SPF1" {
            return Err(Error::Invalid(format!("{} is not an SPF1 dump", path.display())));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let dim = u32_at(4);
        let n = u32_at(8);
        let seed = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let sites = n.checked_pow(dim as u32).filter(|s| 20 + 8 * s == bytes.len());
        let Some(sites) = sites else {
            return Err(Error::Invalid(format!("{}: payload does not match {n}^{dim} sites", path.display())));
        };
        let values =
            (0..sites).map(|i| f64::from_le_bytes(bytes[20 + 8 * i..28 + 8 * i].try_into().unwrap())).collect();
        Ok(FieldSample { dim, n, seed, stream: 0, model: String::new(), transform: Transform::None, values })
    }
}

fn check_torus(dim: usize, n: usize) -> Result<usize> {
    if n < 8 || !n.is_multiple_of(2) {
        return Err(Error::Invalid(format!("torus side {n} must be even and at least 8")));
    }
    match n.checked_pow(dim as u32) {
        Some(s) if s <= MAX_SITES => Ok(s),
        _ => Err(Error::Resource(format!("torus {n}^{dim} exceeds the {MAX_SITES}-site budget"))),
    }
}

/// Frequency 2 pi k / N folded into [-pi, pi).
fn grid_frequency(k: usize, n: usize) -> f64 {
    let kk = if k >= n / 2 { k as f64 - n as f64 } else { k as f64 };
    2.0 * PI * kk / n as f64
}

/// Multi-dimensional FFT on a cube, axis by axis.
struct CubeFft {
    dim: usize,
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl CubeFft {
    fn new(dim: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        CubeFft { dim, n, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inverse } else { &self.forward };
        let n = self.n;
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                for chunk in data.chunks_mut(n) {
                    plan.process(chunk);
                }
                continue;
            }
            let block = stride * n;
            for outer in (0..data.len()).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (t, v) in line.iter_mut().enumerate() {
                        *v = data[base + t * stride];
                    }
                    plan.process(&mut line);
                    for (t, v) in line.iter().enumerate() {
                        data[base + t * stride] = *v;
                    }
                }
            }
        }
    }
}

/// Reusable sampler for one (S, N).
pub struct GaussianSampler {
    dim: usize,
    n: usize,
    model: String,
    amplitude: Vec<f64>,
    white: bool,
    fft: CubeFft,
}

impl GaussianSampler {
    pub fn new(sf: &StructureFunction, n: usize) -> Result<Self> {
        let dim = sf.dim();
        let sites = check_torus(dim, n)?;
        let grid = spectrum_grid(sf, n, sites)?;
        let white = grid.iter().all(|&s| s == 1.0);
        let amplitude = grid.iter().map(|s| s.sqrt()).collect();
        Ok(GaussianSampler { dim, n, model: sf.id(), amplitude, white, fft: CubeFft::new(dim, n) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.n
    }

    /// Realization for stream `stream` of master seed `seed`.
    pub fn sample(&self, seed: u64, stream: u64) -> FieldSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let sites = self.amplitude.len();
        let noise: Vec<f64> = (0..sites).map(|_| StandardNormal.sample(&mut rng)).collect();
        let values = if self.white {
            noise
        } else {
            let mut buf: Vec<Complex64> = noise.iter().map(|&w| Complex64::new(w, 0.0)).collect();
            self.fft.run(&mut buf, false);
            for (b, a) in buf.iter_mut().zip(&self.amplitude) {
                *b *= *a;
            }
            self.fft.run(&mut buf, true);
            let scale = 1.0 / sites as f64;
            buf.iter().map(|c| c.re * scale).collect()
        };
        FieldSample {
            dim: self.dim,
            n: self.n,
            seed,
            stream,
            model: self.model.clone(),
            transform: Transform::None,
            values,
        }
    }
}

fn spectrum_grid(sf: &StructureFunction, n: usize, sites: usize) -> Result<Vec<f64>> {
    let d = sf.dim();
    let mut out = Vec::with_capacity(sites);
    let mut theta = vec![0.0; d];
    for flat in 0..sites {
        let mut rem = flat;
        for k in (0..d).rev() {
            theta[k] = grid_frequency(rem % n, n);
            rem /= n;
        }
        let s = sf.eval(&theta)?;
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::Invalid(format!("S({theta:?}) = {s} is not a valid spectral value")));
        }
        out.push(s);
    }
    Ok(out)
}

/// Gaussian field with covariance K_N, stream 0 of `seed`.
pub fn sample_gaussian_field(sf: &StructureFunction, n: usize, seed: u64) -> Result<FieldSample> {
    Ok(GaussianSampler::new(sf, n)?.sample(seed, 0))
}

/// Circulant kernel K_N on the full torus.
#[derive(Debug, Clone)]
pub struct PeriodicKernel {
    pub dim: usize,
    pub n: usize,
    pub values: Vec<f64>,
}

impl PeriodicKernel {
    pub fn get(&self, lag: &[i64]) -> f64 {
        let n = self.n as i64;
        let idx = lag.iter().fold(0usize, |acc, &c| acc * self.n + c.rem_euclid(n) as usize);
        self.values[idx]
    }
}

/// K_N(j) = N^{-d} sum_k S(2 pi k / N) e^{2 pi i k.j / N}.
pub fn periodized_kernel(sf: &StructureFunction, n: usize) -> Result<PeriodicKernel> {
    let dim = sf.dim();
    let sites = check_torus(dim, n)?;
    let grid = spectrum_grid(sf, n, sites)?;
    let mut buf: Vec<Complex64> = grid.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    CubeFft::new(dim, n).run(&mut buf, true);
    let scale = 1.0 / sites as f64;
    Ok(PeriodicKernel { dim, n, values: buf.iter().map(|c| c.re * scale).collect() })
}

/// Across-sample mean and standard error of torus-averaged products
/// `N^{-d} sum_i X_i X_{i+j}` for lags with |j|_inf <= radius.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalKernel {
    pub dim: usize,
    pub radius: usize,
    pub samples: usize,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl EmpiricalKernel {
    fn index(&self, lag: &[i64]) -> Option<usize> {
        let r = self.radius as i64;
        let side = 2 * self.radius + 1;
        if lag.len() != self.dim || lag.iter().any(|v| v.abs() > r) {
            return None;
        }
        Some(lag.iter().fold(0usize, |acc, &j| acc * side + (j + r) as usize))
    }

    pub fn get(&self, lag: &[i64]) -> Option<(f64, f64)> {
        self.index(lag).map(|i| (self.mean[i], self.std_error[i]))
    }
}

pub fn empirical_kernel(fields: &[FieldSample], radius: usize) -> Result<EmpiricalKernel> {
    if fields.len() < 2 {
        return Err(Error::Invalid("empirical kernel needs at least 2 fields".into()));
    }
    let f0 = &fields[0];
    if fields.iter().any(|f| f.dim != f0.dim || f.n != f0.n || f.model != f0.model || f.transform != f0.transform) {
        return Err(Error::Invalid("fields differ in dimension, side, model or transform".into()));
    }
    if 2 * radius >= f0.n {
        return Err(Error::Invalid(format!("lag radius {radius} needs a torus side above {}", 2 * radius)));
    }
    let (d, n) = (f0.dim, f0.n);
    let side = 2 * radius + 1;
    let nlags = side.pow(d as u32);
    let fft = CubeFft::new(d, n);
    let sites = f0.values.len() as f64;
    let per_field: Vec<Vec<f64>> = fields
        .iter()
        .map(|f| {
            let mut buf: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft.run(&mut buf, false);
            for b in buf.iter_mut() {
                *b = Complex64::new(b.norm_sqr(), 0.0);
            }
            fft.run(&mut buf, true);
            (0..nlags)
                .map(|flat| {
                    let mut rem = flat;
                    let mut idx = 0usize;
                    let mut stride = 1usize;
                    for _ in 0..d {
                        let j = (rem % side) as i64 - radius as i64;
                        rem /= side;
                        idx += j.rem_euclid(n as i64) as usize * stride;
                        stride *= n;
                    }
                    buf[idx].re / (sites * sites)
                })
                .collect()
        })
        .collect();
    let m = fields.len() as f64;
    let mut mean = vec![0.0; nlags];
    let mut se = vec![0.0; nlags];
    for l in 0..nlags {
        let mu = per_field.iter().map(|v| v[l]).sum::<f64>() / m;
        let var = per_field.iter().map(|v| (v[l] - mu).powi(2)).sum::<f64>() / (m - 1.0);
        mean[l] = mu;
        se[l] = (var / m).sqrt();
    }
    Ok(EmpiricalKernel { dim: d, radius, samples: fields.len(), mean, std_error: se })
}

/// Pointwise sign or cube, then recentred and rescaled to empirical mean 0
/// and variance 1 over the torus.
pub fn transform_field(field: &FieldSample, kind: Transform) -> Result<FieldSample> {
    if field.transform != Transform::None {
        return Err(Error::Invalid(format!("field already carries the {} transform", field.transform.as_str())));
    }
    let mapped: Vec<f64> = match kind {
        Transform::None => return Err(Error::Invalid("transform kind must be sign or cube".into())),
        Transform::Sign => field.values.iter().map(|&x| if x < 0.0 { -1.0 } else { 1.0 }).collect(),
        Transform::Cube => field.values.iter().map(|&x| x * x * x).collect(),
    };
    let m = mapped.len() as f64;
    let mean = mapped.iter().sum::<f64>() / m;
    let var = mapped.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    if !(var > 0.0) {
        return Err(Error::Invalid("transformed field has zero variance".into()));
    }
    let sd = var.sqrt();
    Ok(FieldSample {
        values: mapped.iter().map(|v| (v - mean) / sd).collect(),
        transform: kind,
        model: field.model.clone(),
        ..*field
    })
}
