//! Seeded convergence studies and their reports.
//!
//! Every study draws `G` exactly on the finest grid and subsamples it for the
//! coarse levels, so all levels share randomness path by path. Work is split
//! into fixed blocks of paths; per-path results are collected in path order
//! and reduced sequentially, which makes the output independent of the
//! number of threads.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convolution_sampler::{build_exact_sampler, riemann_covariance, subsample, ConvolutionSampler, SAMPLE_BLOCK};
use crate::density::{kde, l1_distance, pooled_grid, silverman_bandwidth, Bandwidth, DEFAULT_GRID_POINTS, MIN_SAMPLES};
use crate::em_integrator::{check_quota, EmScheme};
use crate::error::{FgleError, Result};
use crate::fractional_noise::{fgn_autocovariance, FgnSampler};
use crate::hilbert_space::GCovariance;
use crate::malliavin::{
    check_positivity, check_upper_bound, coarse_covariance, h_norm_sq, r_subgrid, MalliavinField, TerminalDerivative,
};
use crate::model::{Drift, ModelParams};
use crate::stream::{path_stream, Purpose};
use crate::volterra_kernel::GridSpec;

/// Errors below this are treated as exact zeros.
pub const ZERO_ERROR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Strong,
    Density,
    Malliavin,
    NoiseValidation,
}

impl StudyKind {
    pub const ALL: [StudyKind; 4] = [StudyKind::Strong, StudyKind::Density, StudyKind::Malliavin, StudyKind::NoiseValidation];

    pub fn as_str(&self) -> &'static str {
        match self {
            StudyKind::Strong => "strong",
            StudyKind::Density => "density",
            StudyKind::Malliavin => "malliavin",
            StudyKind::NoiseValidation => "noise_validation",
        }
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StudyKind {
    type Err = FgleError;

    fn from_str(s: &str) -> Result<Self> {
        StudyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| FgleError::InvalidParameter(format!("unknown study kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub study: StudyKind,
    pub model: ModelParams,
    pub fine_n: usize,
    pub ratios: Vec<usize>,
    pub paths: usize,
    pub seed: u64,
    /// Defaults to the exponent predicted for the study kind.
    #[serde(default)]
    pub expected_slope: Option<f64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl StudyConfig {
    /// Desk-scale defaults for `kind` at `(alpha, hurst)` with cosine drift.
    pub fn preset(kind: StudyKind, alpha: f64, hurst: f64) -> Result<Self> {
        let model = ModelParams::new(alpha, hurst, 1.0, 0.0, 1.0, Drift::Cos)?;
        let (fine_n, ratios, paths) = match kind {
            StudyKind::Strong => (2048, vec![8, 16, 32, 64], 2000),
            StudyKind::Density => (1024, vec![16, 32, 64, 128], 200_000),
            StudyKind::Malliavin => (2048, vec![8, 16, 32], 500),
            StudyKind::NoiseValidation => (512, vec![1, 2, 4, 8], 100_000),
        };
        Ok(Self { study: kind, model, fine_n, ratios, paths, seed: 20_240_601, expected_slope: None, tolerance: None, output: None })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| FgleError::InvalidParameter(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !self.fine_n.is_power_of_two() {
            return Err(FgleError::InvalidParameter(format!("fine_n must be a power of two, got {}", self.fine_n)));
        }
        if self.ratios.is_empty() {
            return Err(FgleError::InvalidParameter("need at least one level ratio".into()));
        }
        if let Some(&r) = self.ratios.iter().find(|&&r| r == 0 || self.fine_n % r != 0) {
            return Err(FgleError::NonDivisibleRatio { ratio: r, n: self.fine_n });
        }
        if self.paths < 100 {
            return Err(FgleError::InvalidParameter(format!("need at least 100 paths, got {}", self.paths)));
        }
        Ok(())
    }

    /// Slope the study is checked against, if any.
    pub fn expected(&self) -> Option<f64> {
        let rate = self.model.rate_exponent();
        self.expected_slope.or(match self.study {
            StudyKind::Strong | StudyKind::Density => Some(rate),
            StudyKind::Malliavin => Some(2.0 * rate),
            StudyKind::NoiseValidation => None,
        })
    }

    pub fn tol(&self) -> f64 {
        self.tolerance.unwrap_or(match self.study {
            StudyKind::Strong => 0.15,
            StudyKind::Density => 0.25,
            StudyKind::Malliavin => 0.3,
            StudyKind::NoiseValidation => 0.0,
        })
    }

    fn fine_grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.model.horizon, self.fine_n)
    }

    /// Ratios from coarsest to finest level.
    fn sorted_ratios(&self) -> Vec<usize> {
        let mut r = self.ratios.clone();
        r.sort_unstable_by(|a, b| b.cmp(a));
        r.dedup();
        r
    }
}

/// Least-squares fit of `log error = slope log h + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub h_levels: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_rate(h_levels: &[f64], errors: &[f64]) -> Result<RateFit> {
    if h_levels.len() != errors.len() {
        return Err(FgleError::LengthMismatch { expected: h_levels.len(), got: errors.len() });
    }
    if h_levels.len() < 3 {
        return Err(FgleError::InvalidFit(format!("need at least 3 levels, got {}", h_levels.len())));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(FgleError::InvalidFit(format!("errors must be positive, got {e}")));
    }
    if h_levels.iter().any(|h| !(*h > 0.0)) {
        return Err(FgleError::InvalidFit("step sizes must be positive".into()));
    }
    let x: Vec<f64> = h_levels.iter().map(|h| h.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(FgleError::InvalidFit("all step sizes coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(RateFit { h_levels: h_levels.to_vec(), errors: errors.to_vec(), slope, intercept, r_squared })
}

/// One row of the per-level table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    /// Number of steps on this level.
    pub level: usize,
    pub h: f64,
    pub error: f64,
    pub stderr_of_error: f64,
}

/// A named pass/fail check with its measured value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub pass: bool,
    pub detail: String,
    /// Per-level measurements behind `value`, when there are several.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), value, pass, detail: detail.into(), values: Vec::new() }
    }

    fn with_values(mut self, values: Vec<f64>) -> Self {
        self.values = values;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub rows: Vec<LevelRow>,
    pub fit: Option<RateFit>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub pass: bool,
    pub wall_clock_seconds: f64,
}

/// The JSON summary written next to the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub study: StudyKind,
    pub alpha: f64,
    pub hurst: f64,
    pub slope: Option<f64>,
    pub expected: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
    pub r_squared: Option<f64>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl StudyReport {
    pub fn summary(&self) -> Summary {
        Summary {
            study: self.config.study,
            alpha: self.config.model.alpha,
            hurst: self.config.model.hurst,
            slope: self.fit.as_ref().map(|f| f.slope),
            expected: self.config.expected(),
            tolerance: self.config.tol(),
            pass: self.pass,
            r_squared: self.fit.as_ref().map(|f| f.r_squared),
            checks: self.checks.clone(),
            notes: self.notes.clone(),
        }
    }

    /// `level,h,error,stderr_of_error`.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("level,h,error,stderr_of_error\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.level, r.h, r.error, r.stderr_of_error));
        }
        s
    }

    /// Writes `config.json`, `levels.csv`, `summary.json` and `timing.json`.
    /// Only the last one depends on the machine.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), self.config.to_json() + "\n")?;
        fs::write(dir.join("levels.csv"), self.table_csv())?;
        let summary = serde_json::to_string_pretty(&self.summary()).expect("summary serializes");
        fs::write(dir.join("summary.json"), summary + "\n")?;
        let timing = serde_json::json!({ "wall_clock_seconds": self.wall_clock_seconds });
        fs::write(dir.join("timing.json"), format!("{timing:#}\n"))?;
        Ok(())
    }
}

/// Run `config` on a pool of `threads` workers (all cores when `None`).
pub fn run_with_threads(config: &StudyConfig, threads: Option<usize>) -> Result<StudyReport> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| FgleError::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| run_study(config))
}

pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let start = Instant::now();
    let mut report = match config.study {
        StudyKind::Strong => run_strong_study(config)?,
        StudyKind::Density => run_density_study(config)?,
        StudyKind::Malliavin => run_malliavin_study(config)?,
        StudyKind::NoiseValidation => run_noise_validation(config)?,
    };
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Apply `f(path_index, g_fine)` to every path, in path order.
fn map_paths<T, F>(sampler: &ConvolutionSampler, seed: u64, paths: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &[f64]) -> T + Sync,
{
    let blocks = paths.div_ceil(SAMPLE_BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let first = b * SAMPLE_BLOCK;
            let count = SAMPLE_BLOCK.min(paths - first);
            sampler.sample_paths(seed, first, count).iter().enumerate().map(|(k, g)| f(first + k, g)).collect::<Vec<T>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

struct Levels {
    fine: EmScheme,
    coarse: Vec<(usize, EmScheme)>,
}

impl Levels {
    fn new(config: &StudyConfig) -> Result<Self> {
        let fine_grid = config.fine_grid()?;
        let fine = EmScheme::new(config.model, fine_grid)?;
        let coarse = config
            .sorted_ratios()
            .into_iter()
            .map(|r| Ok((r, EmScheme::new(config.model, fine_grid.coarsen(r)?)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { fine, coarse })
    }

    /// Fine path and one coarse path per level; `None` if any is non-finite.
    fn run(&self, g: &[f64]) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
        let (fine, ok) = self.fine.path(g);
        if !ok {
            return None;
        }
        let mut coarse = Vec::with_capacity(self.coarse.len());
        for (ratio, scheme) in &self.coarse {
            let (p, ok) = scheme.path(&subsample(g, *ratio).expect("ratio divides fine grid"));
            if !ok {
                return None;
            }
            coarse.push(p);
        }
        Some((fine, coarse))
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

fn slope_check(config: &StudyConfig, fit: &RateFit) -> Check {
    let expected = config.expected().expect("rate studies have an expectation");
    let tol = config.tol();
    let pass = (fit.slope - expected).abs() <= tol;
    Check::new("slope", fit.slope, pass, format!("expected {expected} +- {tol}, r^2 = {:.4}", fit.r_squared))
}

fn finish(config: &StudyConfig, rows: Vec<LevelRow>, fit: Option<RateFit>, checks: Vec<Check>, notes: Vec<String>) -> StudyReport {
    let pass = checks.iter().all(|c| c.pass);
    StudyReport { config: config.clone(), rows, fit, checks, notes, pass, wall_clock_seconds: 0.0 }
}

/// Fit the rows, or report a degenerate fit when every error vanishes.
fn fit_rows(config: &StudyConfig, rows: &[LevelRow], checks: &mut Vec<Check>, notes: &mut Vec<String>) -> Result<Option<RateFit>> {
    if rows.iter().all(|r| r.error < ZERO_ERROR) {
        notes.push("no signal: every level error vanishes, slope not fitted".into());
        let flat = config.model.drift.is_flat();
        checks.push(Check::new("zero_error", rows.iter().map(|r| r.error).fold(0.0, f64::max), flat, "expected only for flat drift"));
        return Ok(None);
    }
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let e: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let fit = fit_rate(&h, &e)?;
    checks.push(slope_check(config, &fit));
    Ok(Some(fit))
}

/// RMS coupled error at `T` per level.
pub fn run_strong_study(config: &StudyConfig) -> Result<StudyReport> {
    let fine_grid = config.fine_grid()?;
    let m = &config.model;
    let sampler = build_exact_sampler(fine_grid, m.alpha, m.hurst, m.sigma)?;
    let levels = Levels::new(config)?;
    let outcomes: Vec<Option<Vec<f64>>> = map_paths(&sampler, config.seed, config.paths, |_, g| {
        levels.run(g).map(|(fine, coarse)| {
            let xf = *fine.last().expect("non-empty");
            coarse.iter().map(|p| (p.last().expect("non-empty") - xf).powi(2)).collect()
        })
    });
    let invalid = outcomes.iter().filter(|o| o.is_none()).count();
    check_quota(invalid, config.paths)?;
    let valid: Vec<&Vec<f64>> = outcomes.iter().flatten().collect();
    let mut rows = Vec::new();
    for (k, (ratio, scheme)) in levels.coarse.iter().enumerate() {
        let sq: Vec<f64> = valid.iter().map(|v| v[k]).collect();
        let (msq, se_msq) = mean_and_stderr(&sq);
        let rms = msq.sqrt();
        let se = if rms > 0.0 { se_msq / (2.0 * rms) } else { 0.0 };
        rows.push(LevelRow { level: fine_grid.n_steps() / ratio, h: scheme.grid().step(), error: rms, stderr_of_error: se });
    }
    let mut checks = Vec::new();
    let mut notes = vec![format!("{invalid} invalid paths of {}", config.paths)];
    let fit = fit_rows(config, &rows, &mut checks, &mut notes)?;
    Ok(finish(config, rows, fit, checks, notes))
}

/// Batches used for the density error bars.
const DENSITY_BATCHES: usize = 10;

/// L1 distance between coarse and fine KDEs of `x_N` per level.
pub fn run_density_study(config: &StudyConfig) -> Result<StudyReport> {
    let fine_grid = config.fine_grid()?;
    let m = &config.model;
    let sampler = build_exact_sampler(fine_grid, m.alpha, m.hurst, m.sigma)?;
    let levels = Levels::new(config)?;
    let outcomes: Vec<Option<Vec<f64>>> = map_paths(&sampler, config.seed, config.paths, |_, g| {
        levels.run(g).map(|(fine, coarse)| {
            let mut v = vec![*fine.last().expect("non-empty")];
            v.extend(coarse.iter().map(|p| *p.last().expect("non-empty")));
            v
        })
    });
    let invalid = outcomes.iter().filter(|o| o.is_none()).count();
    check_quota(invalid, config.paths)?;
    let valid: Vec<&Vec<f64>> = outcomes.iter().flatten().collect();
    let fine: Vec<f64> = valid.iter().map(|v| v[0]).collect();
    let mut rows = Vec::new();
    for (k, (ratio, scheme)) in levels.coarse.iter().enumerate() {
        let coarse: Vec<f64> = valid.iter().map(|v| v[k + 1]).collect();
        let grid = pooled_grid(&[&coarse, &fine], DEFAULT_GRID_POINTS)?;
        let bw = silverman_bandwidth(&coarse)?.max(silverman_bandwidth(&fine)?);
        let l1 = l1_distance(&kde(&coarse, Bandwidth::Fixed(bw), &grid)?, &kde(&fine, Bandwidth::Fixed(bw), &grid)?)?;
        // batch means with the same grid and bandwidth
        let batches = DENSITY_BATCHES.min(coarse.len() / MIN_SAMPLES);
        let size = coarse.len() / batches.max(1);
        let batch: Vec<f64> = (0..batches)
            .map(|b| {
                let r = b * size..(b + 1) * size;
                l1_distance(&kde(&coarse[r.clone()], Bandwidth::Fixed(bw), &grid)?, &kde(&fine[r], Bandwidth::Fixed(bw), &grid)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let spread = if batches >= 2 { mean_and_stderr(&batch).1 } else { f64::NAN };
        rows.push(LevelRow { level: fine_grid.n_steps() / ratio, h: scheme.grid().step(), error: l1, stderr_of_error: spread });
    }
    let mut checks = Vec::new();
    let mut notes = vec![
        format!("{invalid} invalid paths of {}", config.paths),
        format!("stderr_of_error: spread of up to {DENSITY_BATCHES} batch distances over the square root of their count"),
    ];
    let fit = fit_rows(config, &rows, &mut checks, &mut notes)?;
    if fit.is_some() {
        // rows run from coarse to fine: distances should not grow as h shrinks
        let worst = rows
            .windows(2)
            .map(|p| p[1].error - p[0].error - 2.0 * (p[0].stderr_of_error.powi(2) + p[1].stderr_of_error.powi(2)).sqrt())
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::new("monotone", worst, worst <= 0.0, "largest increase beyond two standard errors"));
    }
    Ok(finish(config, rows, fit, checks, notes))
}

/// Levels with at most this many steps are used for the pointwise bound check.
const BOUND_CHECK_MAX_STEPS: usize = 128;
/// Paths used for the pointwise bound check.
const BOUND_CHECK_PATHS: usize = 4;

/// D^{1,2} error per level, positivity of the terminal H-norm and the
/// weighted sup bound under subgrid refinement.
pub fn run_malliavin_study(config: &StudyConfig) -> Result<StudyReport> {
    let fine_grid = config.fine_grid()?;
    let m = &config.model;
    let sampler = build_exact_sampler(fine_grid, m.alpha, m.hurst, m.sigma)?;
    let cov = sampler.covariance();
    let levels = Levels::new(config)?;
    let coarse_covs = levels.coarse.iter().map(|(r, _)| coarse_covariance(cov, *r)).collect::<Result<Vec<_>>>()?;

    // per path: (d12 term, coarse H-norm^2) per level
    let outcomes: Vec<Option<Vec<(f64, f64)>>> = map_paths(&sampler, config.seed, config.paths, |_, g| {
        let (fine, coarse) = levels.run(g)?;
        let fd = TerminalDerivative::from_path(&fine, m, levels.fine.weights()).ok()?;
        let nf = fine_grid.n_steps();
        let mut out = Vec::with_capacity(coarse.len());
        for (k, ((ratio, scheme), states)) in levels.coarse.iter().zip(&coarse).enumerate() {
            let cd = TerminalDerivative::from_path(states, m, scheme.weights()).ok()?;
            let mut delta = fd.coeffs.clone();
            for (i, c) in cd.coeffs.iter().enumerate() {
                delta[(i + 1) * ratio - 1] -= c;
            }
            let dx = cd.x_n - fd.x_n;
            let d12 = dx * dx + h_norm_sq(&delta, cov).max(0.0);
            out.push((d12, h_norm_sq(&cd.coeffs, &coarse_covs[k])));
            debug_assert_eq!(delta.len(), nf);
        }
        Some(out)
    });
    let invalid = outcomes.iter().filter(|o| o.is_none()).count();
    check_quota(invalid, config.paths)?;
    let valid: Vec<&Vec<(f64, f64)>> = outcomes.iter().flatten().collect();

    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut notes = vec![format!("{invalid} invalid paths of {}", config.paths)];
    let mut positivity = Vec::new();
    for (k, (ratio, scheme)) in levels.coarse.iter().enumerate() {
        let d12: Vec<f64> = valid.iter().map(|v| v[k].0).collect();
        let (mean, se) = mean_and_stderr(&d12);
        rows.push(LevelRow { level: fine_grid.n_steps() / ratio, h: scheme.grid().step(), error: mean, stderr_of_error: se });
        let norms: Vec<f64> = valid.iter().map(|v| v[k].1).collect();
        positivity.push(check_positivity(&norms, m, scheme.grid()));
    }
    let fit = fit_rows(config, &rows, &mut checks, &mut notes)?;

    let all_positive = positivity.iter().all(|p| *p > 0.0 && p.is_finite());
    let adjacent = positivity.windows(2).map(|p| p[0].max(p[1]) / p[0].min(p[1])).fold(1.0, f64::max);
    let spread = positivity.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / positivity.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(Check::new(
        "positivity",
        adjacent,
        all_positive && adjacent <= 2.0,
        format!("min-path ratio per level, coarse to fine; largest adjacent-level factor shown, all-level spread {spread:.4}"),
    )
    .with_values(positivity));

    // weighted sup bound on a moderate grid, three nested subgrids
    let (b_ratio, b_scheme) = levels
        .coarse
        .iter()
        .filter(|(_, s)| s.grid().n_steps() <= BOUND_CHECK_MAX_STEPS)
        .min_by_key(|(r, _)| *r)
        .unwrap_or_else(|| levels.coarse.first().expect("at least one level"));
    let b_grid = *b_scheme.grid();
    let b_cov = coarse_covariance(cov, *b_ratio)?;
    let n = b_grid.n_steps();
    let draws = sampler.sample_paths(config.seed, 0, BOUND_CHECK_PATHS.min(config.paths));
    let mut bounds = vec![0.0_f64; 3];
    for g in &draws {
        let (states, ok) = b_scheme.path(&subsample(g, *b_ratio)?);
        if !ok {
            continue;
        }
        for (level, b) in bounds.iter_mut().enumerate() {
            let field = MalliavinField::compute(&states, m, &b_grid, r_subgrid(&b_grid, n, level as u32), &[n], &b_cov)?;
            *b = b.max(check_upper_bound(&field, m));
        }
    }
    let drift_bound = bounds.windows(2).map(|p| (p[1] / p[0] - 1.0).abs()).fold(0.0, f64::max);
    checks.push(Check::new(
        "upper_bound",
        drift_bound,
        bounds.iter().all(|b| b.is_finite() && *b > 0.0) && drift_bound <= 0.05,
        format!("sup |D_r x_n| (t_n - r)^(1-a) on {n} steps per subgrid level; largest relative change shown"),
    )
    .with_values(bounds));
    Ok(finish(config, rows, fit, checks, notes))
}

/// Path length for the fGn autocovariance test.
const FGN_TEST_LENGTH: usize = 32;
/// Lags tested.
const FGN_TEST_LAGS: usize = 5;

/// Statistical checks of the noise and of the two `G` constructions.
pub fn run_noise_validation(config: &StudyConfig) -> Result<StudyReport> {
    let m = &config.model;
    let mut checks = Vec::new();
    let mut notes = Vec::new();

    let mut hursts = vec![0.6, 0.75, 0.9];
    if !hursts.contains(&m.hurst) {
        hursts.push(m.hurst);
    }
    for (k, &hurst) in hursts.iter().enumerate() {
        let fgn = FgnSampler::new(FGN_TEST_LENGTH, hurst)?;
        let seed = config.seed.wrapping_add(k as u64);
        let stats: Vec<[f64; FGN_TEST_LAGS]> = (0..config.paths)
            .into_par_iter()
            .map(|i| {
                let x = fgn.sample(&mut path_stream(seed, Purpose::Validation, i as u64));
                let mut s = [0.0; FGN_TEST_LAGS];
                for (lag, v) in s.iter_mut().enumerate() {
                    *v = (0..FGN_TEST_LENGTH - lag).map(|j| x[j] * x[j + lag]).sum::<f64>() / (FGN_TEST_LENGTH - lag) as f64;
                }
                s
            })
            .collect();
        for lag in 0..FGN_TEST_LAGS {
            let col: Vec<f64> = stats.iter().map(|s| s[lag]).collect();
            let (mean, se) = mean_and_stderr(&col);
            let z = (mean - fgn_autocovariance(lag, hurst)) / se;
            checks.push(Check::new(format!("fgn_autocovariance_h{hurst}_lag{lag}"), z, z.abs() <= 4.0, "standard scores, limit 4"));
        }
    }

    let g = GCovariance::new(m.alpha, m.hurst, m.sigma)?;
    let target = 2f64.powf(g.scaling_exponent());
    let closed = g.variance(2.0 * m.horizon) / g.variance(m.horizon);
    checks.push(Check::new("variance_scaling", closed / target - 1.0, (closed / target - 1.0).abs() <= 1e-3, format!("Var G(2T) / Var G(T) against {target}")));
    let quad = g.covariance(2.0 * m.horizon, m.horizon)? / g.covariance(m.horizon, 0.5 * m.horizon)?;
    checks.push(Check::new("covariance_scaling", quad / target - 1.0, (quad / target - 1.0).abs() <= 1e-3, "off-diagonal quadrature under time doubling"));

    let mut rows = Vec::new();
    for n in [64, 128, 256, 512] {
        let grid = GridSpec::new(m.horizon, n)?;
        let rc = riemann_covariance(&grid, m.alpha, m.hurst, m.sigma)?;
        let exact = g.matrix(&grid)?;
        let err = (rc - exact).amax();
        rows.push(LevelRow { level: n, h: grid.step(), error: err, stderr_of_error: 0.0 });
    }
    let decreasing = rows.windows(2).all(|p| p[1].error < p[0].error);
    let fit = fit_rate(&rows.iter().map(|r| r.h).collect::<Vec<_>>(), &rows.iter().map(|r| r.error).collect::<Vec<_>>())?;
    checks.push(Check::new("riemann_covariance_decreasing", fit.slope, decreasing, "max_ij |Cov G~ - Cov G| strictly decreasing in N"));
    notes.push(format!("fGn checks use {} paths of length {FGN_TEST_LENGTH} per Hurst index", config.paths));
    Ok(finish(config, rows, Some(fit), checks, notes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn exact_power_laws() {
        let h = [0.1, 0.05, 0.025, 0.0125];
        let lin: Vec<f64> = h.iter().map(|x| 3.0 * x).collect();
        let f = fit_rate(&h, &lin).unwrap();
        assert_relative_eq!(f.slope, 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, epsilon = 1e-12);
        let p: Vec<f64> = h.iter().map(|x| 0.7 * x.powf(0.4)).collect();
        assert_relative_eq!(fit_rate(&h, &p).unwrap().slope, 0.4, epsilon = 1e-10);
        assert!(fit_rate(&h[..2], &p[..2]).is_err());
        assert!(fit_rate(&h, &[1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn noisy_fit_within_confidence_band() {
        let mut rng = path_stream(77, Purpose::Validation, 0);
        let sd = 0.05;
        let h: Vec<f64> = (0..8).map(|k| 0.5f64.powi(k + 2)).collect();
        let e: Vec<f64> = h.iter().map(|x| 2.0 * x.powf(0.5) * (sd * rng.sample::<f64, _>(StandardNormal)).exp()).collect();
        let f = fit_rate(&h, &e).unwrap();
        let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
        let mx = x.iter().sum::<f64>() / 8.0;
        let se = sd / x.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
        assert!((f.slope - 0.5).abs() <= 4.0 * se, "{} vs band {}", f.slope, 4.0 * se);
        assert!(f.r_squared > 0.9 && f.r_squared <= 1.0);
    }

    #[test]
    fn config_validation_and_json() {
        let c = StudyConfig::preset(StudyKind::Strong, 0.7, 0.7).unwrap();
        let back = StudyConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_relative_eq!(c.expected().unwrap(), 0.4, epsilon = 1e-12);
        let mut bad = c.clone();
        bad.fine_n = 1000;
        assert!(bad.validate().is_err());
        let mut bad = c.clone();
        bad.ratios = vec![3];
        assert!(bad.validate().is_err());
        let mut bad = c.clone();
        bad.paths = 10;
        assert!(bad.validate().is_err());
        assert_eq!("noise_validation".parse::<StudyKind>().unwrap(), StudyKind::NoiseValidation);
        assert!("weak".parse::<StudyKind>().is_err());
        let text = r#"{"study":"density","model":{"alpha":0.9,"hurst":0.8,"sigma":1.0,"x0":0.0,"horizon":1.0,"drift":{"kind":"constant","c":0.5}},
                       "fine_n":256,"ratios":[4,8],"paths":500,"seed":3}"#;
        let c = StudyConfig::from_json(text).unwrap();
        assert_eq!(c.model.drift, Drift::Constant { c: 0.5 });
        assert_relative_eq!(c.tol(), 0.25);
    }

    fn small(kind: StudyKind, drift: Drift) -> StudyConfig {
        let mut c = StudyConfig::preset(kind, 0.7, 0.7).unwrap();
        c.model.drift = drift;
        c.fine_n = 128;
        c.ratios = vec![4, 8, 16];
        c.paths = 200;
        c
    }

    #[test]
    fn flat_drift_strong_study_is_degenerate() {
        let r = run_study(&small(StudyKind::Strong, Drift::Zero)).unwrap();
        assert!(r.fit.is_none());
        assert!(r.rows.iter().all(|row| row.error < ZERO_ERROR));
        assert!(r.pass);
        let r = run_study(&small(StudyKind::Density, Drift::Constant { c: 0.3 })).unwrap();
        assert!(r.fit.is_none() && r.pass);
    }

    #[test]
    fn small_studies_are_thread_independent() {
        for kind in [StudyKind::Strong, StudyKind::Malliavin] {
            let c = small(kind, Drift::Cos);
            let a = run_with_threads(&c, Some(1)).unwrap();
            let b = run_with_threads(&c, Some(3)).unwrap();
            assert_eq!(a.table_csv(), b.table_csv());
            assert_eq!(a.summary(), b.summary());
            assert!(a.rows.windows(2).all(|p| p[1].error < p[0].error), "{kind}: {:?}", a.rows);
        }
    }

    #[test]
    fn flat_drift_malliavin_study() {
        let c = small(StudyKind::Malliavin, Drift::Zero);
        let r = run_study(&c).unwrap();
        assert!(r.fit.is_none());
        let g = GCovariance::new(0.7, 0.7, 1.0).unwrap();
        let pos = r.checks.iter().find(|c| c.name == "positivity").unwrap();
        assert!(pos.pass);
        // with f' = 0 the ratio is Var G(T) / h^(2a+2H-2) at every level
        for (row, ratio) in r.rows.iter().zip(&pos.values) {
            assert_relative_eq!(*ratio, g.variance(1.0) / row.h.powf(0.8), max_relative = 1e-12);
        }
    }

    #[test]
    fn report_files() {
        let c = small(StudyKind::Strong, Drift::Cos);
        let r = run_study(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("levels.csv")).unwrap();
        assert!(csv.starts_with("level,h,error,stderr_of_error\n"));
        assert_eq!(csv.lines().count(), 4);
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        for key in ["study", "alpha", "hurst", "slope", "expected", "tolerance", "pass"] {
            assert!(summary.get(key).is_some(), "{key}");
        }
        assert_eq!(StudyConfig::from_json(&fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap(), c);
    }
}
