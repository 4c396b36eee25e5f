//! Batch runner: one JSON config in, CSV files and a JSON manifest out.
//!
//! Exit codes: 0 success, 2 validation, 3 numeric or unconverged,
//! 4 resource or I/O.

use crate::entropy::entropy_scan;
use crate::fluctuations::{
    covariance_grid, exponent_scan_with, fmt_real, theta_scan, variance_direct, variance_monte_carlo, ScanReport,
    ScanRow, SpectralOptions,
};
use crate::geometry::{Domain, Shape, TransformMode};
use crate::moments::{clt_scan, CltOptions};
use crate::sampler::{empirical_kernel, periodized_kernel, transform_field, GaussianSampler, Transform};
use crate::spectral_models::{read_tabulated, ModelSpec, StructureFunction};
use crate::{Error, Result};
use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Environment variable that overrides the config seed.
pub const SEED_ENV: &str = "SPECTRALFIELD_SEED";

#[derive(Debug, Parser)]
#[command(name = "spectralfield", version, about = "Run one spectral-field experiment from a JSON config")]
pub struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Progress messages on stderr.
    #[arg(long)]
    pub verbose: bool,
}

/// Where the structure function comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ModelSpec>,
    /// Tabulated grid file, used instead of `spec`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl ModelSource {
    pub fn load(&self, base: &Path) -> Result<StructureFunction> {
        match (&self.spec, &self.file) {
            (Some(spec), None) => StructureFunction::from_spec(spec.clone()),
            (None, Some(file)) => StructureFunction::from_spec(read_tabulated(&base.join(file))?),
            _ => Err(Error::Invalid("model: give exactly one of `spec` or `file`".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMethod {
    #[default]
    Spectral,
    Direct,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSpec {
    pub replicates: usize,
    /// Torus side; defaults to the smallest even N >= 8 max L.
    #[serde(default)]
    pub torus: Option<usize>,
}

fn default_count() -> usize {
    1
}

fn default_c() -> f64 {
    std::f64::consts::PI
}

fn default_transform() -> Transform {
    Transform::None
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub model: ModelSource,
    pub n: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_transform")]
    pub transform: Transform,
    /// Write each field as an SPF1 dump.
    #[serde(default)]
    pub dump: bool,
    /// Compare the empirical kernel with K_N up to this lag radius.
    #[serde(default)]
    pub kernel_radius: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub model: ModelSource,
    pub radius: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceScanConfig {
    pub model: ModelSource,
    pub window: Shape,
    pub grid: Vec<f64>,
    #[serde(default)]
    pub mode: TransformMode,
    #[serde(default)]
    pub method: VarianceMethod,
    #[serde(default)]
    pub monte_carlo: Option<MonteCarloSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceGridConfig {
    pub model: ModelSource,
    #[serde(rename = "L")]
    pub scale: f64,
    #[serde(default)]
    pub mode: TransformMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaScanConfig {
    pub model: ModelSource,
    pub grid: Vec<f64>,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub mode: TransformMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltConfig {
    pub model: ModelSource,
    pub grid: Vec<f64>,
    #[serde(default = "default_transform")]
    pub transform: Transform,
    pub replicates: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub torus: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyScanConfig {
    pub model: ModelSource,
    pub window: Shape,
    pub grid: Vec<f64>,
    pub eps: Vec<f64>,
}

/// One experiment. The `command` field selects the variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    /// Gaussian fields on the torus with summary statistics.
    Sample(SampleConfig),
    /// Covariance kernel K(j) for |j|_inf <= radius.
    Kernel(KernelConfig),
    /// Window variance over an L grid with a power-law fit.
    VarianceScan(VarianceScanConfig),
    /// Offset-box covariances for n in {0, 1, 2}^d.
    CovarianceGrid(CovarianceGridConfig),
    /// Ball variance against the Theta functional.
    ThetaScan(ThetaScanConfig),
    /// Cumulants and KS distance of normalized ball masses.
    Clt(CltConfig),
    /// Per-site log det and entropy over (L, eps).
    EntropyScan(EntropyScanConfig),
}

/// Command names accepted in configs.
pub const COMMANDS: [&str; 7] =
    ["sample", "kernel", "variance-scan", "covariance-grid", "theta-scan", "clt", "entropy-scan"];

impl ExperimentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentConfig::Sample(_) => COMMANDS[0],
            ExperimentConfig::Kernel(_) => COMMANDS[1],
            ExperimentConfig::VarianceScan(_) => COMMANDS[2],
            ExperimentConfig::CovarianceGrid(_) => COMMANDS[3],
            ExperimentConfig::ThetaScan(_) => COMMANDS[4],
            ExperimentConfig::Clt(_) => COMMANDS[5],
            ExperimentConfig::EntropyScan(_) => COMMANDS[6],
        }
    }

    fn seed_slot(&mut self) -> Option<&mut Option<u64>> {
        match self {
            ExperimentConfig::Sample(c) => Some(&mut c.seed),
            ExperimentConfig::Clt(c) => Some(&mut c.seed),
            ExperimentConfig::VarianceScan(c) if c.monte_carlo.is_some() => Some(&mut c.seed),
            _ => None,
        }
    }

    /// Apply the environment override and require a seed where sampling happens.
    pub fn resolve_seed(&mut self, env: Option<&str>) -> Result<()> {
        let name = self.name();
        if let Some(slot) = self.seed_slot() {
            if let Some(text) = env {
                let v = text
                    .trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Invalid(format!("{SEED_ENV}={text} is not a 64-bit unsigned integer")))?;
                *slot = Some(v);
            }
            if slot.is_none() {
                return Err(Error::Invalid(format!("{name} is stochastic and needs a seed")));
            }
        }
        Ok(())
    }
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        Error::Invalid(format!("config at `{path}`: {}", e.into_inner()))
    })
}

/// Parse a config with path-specific error messages.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut v: Value =
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("config is not valid JSON: {e}")))?;
    let obj = v.as_object_mut().ok_or_else(|| Error::Invalid("config must be a JSON object".into()))?;
    let command = match obj.remove("command") {
        Some(Value::String(c)) => c,
        _ => return Err(Error::Invalid(format!("config needs a `command`, one of: {}", COMMANDS.join(", ")))),
    };
    Ok(match command.as_str() {
        "sample" => ExperimentConfig::Sample(from_value(v)?),
        "kernel" => ExperimentConfig::Kernel(from_value(v)?),
        "variance-scan" => ExperimentConfig::VarianceScan(from_value(v)?),
        "covariance-grid" => ExperimentConfig::CovarianceGrid(from_value(v)?),
        "theta-scan" => ExperimentConfig::ThetaScan(from_value(v)?),
        "clt" => ExperimentConfig::Clt(from_value(v)?),
        "entropy-scan" => ExperimentConfig::EntropyScan(from_value(v)?),
        other => {
            return Err(Error::Invalid(format!("unknown command `{other}`; expected one of: {}", COMMANDS.join(", "))));
        }
    })
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// (file name, contents) pairs.
    pub files: Vec<(String, Vec<u8>)>,
    /// Extra manifest entries (fits, error estimates).
    pub details: Value,
    pub converged: bool,
}

/// Execute an experiment without touching the file system (apart from
/// tabulated model files relative to `base`).
pub fn execute(cfg: &ExperimentConfig, base: &Path, verbose: bool) -> Result<RunOutput> {
    let log = |msg: String| {
        if verbose {
            eprintln!("[spectralfield] {msg}");
        }
    };
    match cfg {
        ExperimentConfig::Sample(SampleConfig { model, n, seed, count, transform, dump, kernel_radius }) => {
            let sf = model.load(base)?;
            if *count == 0 {
                return Err(Error::Invalid("count must be at least 1".into()));
            }
            let sampler = GaussianSampler::new(&sf, *n)?;
            let seed = seed.expect("seed resolved");
            let mut csv = String::from("stream,mean,variance\n");
            let mut fields = Vec::new();
            let mut files = Vec::new();
            for i in 0..*count as u64 {
                let mut f = sampler.sample(seed, i);
                if *transform != Transform::None {
                    f = transform_field(&f, *transform)?;
                }
                let m = f.mean();
                let var = f.values().iter().map(|v| (v - m).powi(2)).sum::<f64>() / f.values().len() as f64;
                csv.push_str(&format!("{i},{},{}\n", fmt_real(m), fmt_real(var)));
                if *dump {
                    files.push((format!("field_{i}.spf"), f.spf1_bytes()));
                }
                fields.push(f);
            }
            log(format!("sampled {count} field(s) on a {n}^{} torus", sf.dim()));
            let mut out = vec![("sample.csv".to_string(), csv.into_bytes())];
            let mut details = json!({ "model": sf.id(), "torus": n });
            if let Some(r) = kernel_radius {
                let emp = empirical_kernel(&fields, *r)?;
                let kn = periodized_kernel(&sf, *n)?;
                let mut k = String::from("lag,mean,std_error,periodized\n");
                let side = 2 * r + 1;
                for flat in 0..emp.mean.len() {
                    let mut rem = flat;
                    let mut lag = vec![0i64; sf.dim()];
                    for c in (0..sf.dim()).rev() {
                        lag[c] = (rem % side) as i64 - *r as i64;
                        rem /= side;
                    }
                    let label: Vec<String> = lag.iter().map(|v| v.to_string()).collect();
                    k.push_str(&format!(
                        "{},{},{},{}\n",
                        label.join(";"),
                        fmt_real(emp.mean[flat]),
                        fmt_real(emp.std_error[flat]),
                        fmt_real(kn.get(&lag))
                    ));
                }
                out.push(("empirical_kernel.csv".into(), k.into_bytes()));
                details["empirical_kernel_samples"] = json!(emp.samples);
            }
            out.extend(files);
            Ok(RunOutput { files: out, details, converged: true })
        }
        ExperimentConfig::Kernel(KernelConfig { model, radius }) => {
            let sf = model.load(base)?;
            let k = sf.covariance_kernel(*radius)?;
            let mut csv = String::from("lag,value\n");
            for (lag, v) in k.lags().iter().zip(&k.values) {
                let label: Vec<String> = lag.iter().map(|v| v.to_string()).collect();
                csv.push_str(&format!("{},{}\n", label.join(";"), fmt_real(*v)));
            }
            log(format!("kernel of {} with {} lags", sf.id(), k.values.len()));
            Ok(RunOutput {
                files: vec![("kernel.csv".into(), csv.into_bytes())],
                details: json!({ "model": sf.id(), "error": k.error }),
                converged: k.converged,
            })
        }
        ExperimentConfig::VarianceScan(VarianceScanConfig { model, window, grid, mode, method, monte_carlo, seed }) => {
            let sf = model.load(base)?;
            let mut report = match method {
                VarianceMethod::Spectral => exponent_scan_with(&sf, window, grid, *mode, &SpectralOptions::default())?,
                VarianceMethod::Direct => {
                    if *mode != TransformMode::Lattice {
                        return Err(Error::Invalid("the direct method computes lattice variances only".into()));
                    }
                    direct_scan(&sf, window, grid)?
                }
            };
            if let Some(mc) = monte_carlo {
                let lmax = grid.iter().cloned().fold(0.0, f64::max);
                let need = ((8.0 * lmax).ceil() as usize).max(8);
                let torus = mc.torus.unwrap_or(need + need % 2);
                for &l in grid {
                    let dom = Domain::new(sf.dim(), window.clone(), l)?;
                    let e = variance_monte_carlo(&sf, &dom, torus, mc.replicates, seed.expect("seed resolved"))?;
                    report.rows.push(ScanRow {
                        scan_var: l,
                        value: e.value,
                        stat: "variance_mc".into(),
                        stat_err: e.error,
                        mode: TransformMode::Lattice.as_str().into(),
                        converged: true,
                    });
                }
            }
            log(format!("variance scan of {} over {} scales", sf.id(), grid.len()));
            let converged = report.all_converged();
            Ok(RunOutput {
                files: vec![("variance_scan.csv".into(), report.to_csv().into_bytes())],
                details: json!({ "model": sf.id(), "fit": report.fit, "window": window }),
                converged,
            })
        }
        ExperimentConfig::CovarianceGrid(CovarianceGridConfig { model, scale, mode }) => {
            let sf = model.load(base)?;
            let g = covariance_grid(&sf, *scale, *mode, &SpectralOptions::default())?;
            let errors: Vec<f64> = g.entries.iter().map(|e| e.error).collect();
            let converged = g.entries.iter().all(|e| e.converged);
            log(format!("covariance grid of {} at L = {scale}", sf.id()));
            Ok(RunOutput {
                files: vec![("covariance_grid.csv".into(), g.to_csv().into_bytes())],
                details: json!({ "model": sf.id(), "sigma_sq": g.sigma_sq, "errors": errors }),
                converged,
            })
        }
        ExperimentConfig::ThetaScan(ThetaScanConfig { model, grid, c, mode }) => {
            let sf = model.load(base)?;
            let r = theta_scan(&sf, grid, *c, *mode, &SpectralOptions::default())?;
            log(format!("theta scan of {} over {} scales", sf.id(), grid.len()));
            let converged = r.all_converged();
            Ok(RunOutput {
                files: vec![("theta_scan.csv".into(), r.to_csv().into_bytes())],
                details: json!({ "model": sf.id(), "fit": r.fit, "c": c }),
                converged,
            })
        }
        ExperimentConfig::Clt(CltConfig { model, grid, transform, replicates, seed, torus }) => {
            let sf = model.load(base)?;
            let opts = CltOptions {
                transform: *transform,
                replicates: *replicates,
                seed: seed.expect("seed resolved"),
                torus: *torus,
            };
            let r = clt_scan(&sf, grid, &opts)?;
            log(format!("CLT scan of {} with {replicates} replicates", sf.id()));
            Ok(RunOutput {
                files: vec![("clt.csv".into(), r.to_csv().into_bytes())],
                details: json!({ "model": sf.id(), "replicates": replicates }),
                converged: true,
            })
        }
        ExperimentConfig::EntropyScan(EntropyScanConfig { model, window, grid, eps }) => {
            let sf = model.load(base)?;
            let s = entropy_scan(&sf, window, grid, eps)?;
            log(format!("entropy scan of {} over {} x {} cells", sf.id(), grid.len(), eps.len() + 1));
            Ok(RunOutput {
                files: vec![("entropy_scan.csv".into(), s.to_csv().into_bytes())],
                details: json!({ "model": sf.id(), "hypothesis_met": s.hypothesis_met }),
                converged: true,
            })
        }
    }
}

fn direct_scan(sf: &StructureFunction, window: &Shape, grid: &[f64]) -> Result<ScanReport> {
    if grid.len() < 5 {
        return Err(Error::Invalid(format!("scan needs at least 5 grid points, got {}", grid.len())));
    }
    let mut rows = Vec::new();
    for &l in grid {
        let dom = Domain::new(sf.dim(), window.clone(), l)?;
        let e = variance_direct(sf, &dom)?;
        rows.push(ScanRow {
            scan_var: l,
            value: e.value,
            stat: "variance".into(),
            stat_err: e.error,
            mode: TransformMode::Lattice.as_str().into(),
            converged: e.converged,
        });
    }
    let xs: Vec<f64> = grid.iter().map(|l| l.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.value.ln()).collect();
    let fit = crate::fluctuations::fit_line(&xs, &ys).ok().map(|(beta, se, intercept, r2)| {
        crate::fluctuations::ExponentFit {
            beta,
            beta_se: se,
            intercept,
            r_squared: r2,
            tau: 0,
            predicted_beta: None,
            predicted_tau: None,
        }
    });
    Ok(ScanReport { scan_name: "L".into(), model: sf.id(), window: format!("{window:?}"), rows, fit })
}

/// Exit status for an error category.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Invalid(_) | Error::Domain(_) => 2,
        Error::Numeric(_) => 3,
        Error::Resource(_) | Error::Io(_) => 4,
    }
}

/// Run with parsed arguments: read config, execute, write outputs and the
/// manifest. Returns the process exit code.
pub fn run(args: &Args) -> i32 {
    match run_inner(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run_inner(args: &Args) -> Result<i32> {
    let started = Instant::now();
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg = parse_config(&text)?;
    cfg.resolve_seed(std::env::var(SEED_ENV).ok().as_deref())?;
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let workers = match args.workers {
        Some(0) => return Err(Error::Invalid("--workers must be at least 1".into())),
        Some(w) => w,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Resource(format!("thread pool: {e}")))?;
    let output = pool.install(|| execute(&cfg, &base, args.verbose))?;
    std::fs::create_dir_all(&args.out)?;
    let mut names = Vec::new();
    for (name, body) in &output.files {
        let path = args.out.join(name);
        std::fs::write(&path, body)?;
        names.push(name.clone());
    }
    let manifest = json!({
        "command": cfg.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "workers": workers,
        "wall_time_s": started.elapsed().as_secs_f64(),
        "converged": output.converged,
        "outputs": names,
        "details": output.details,
    });
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Invalid(e.to_string()))?;
    std::fs::write(args.out.join("manifest.json"), body + "\n")?;
    if args.verbose {
        eprintln!("[spectralfield] wrote {} file(s) to {}", names.len() + 1, args.out.display());
    }
    if output.converged {
        Ok(0)
    } else {
        eprintln!("error: some estimates did not converge; see manifest.json");
        Ok(3)
    }
}
