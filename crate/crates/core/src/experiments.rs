//! Seeded experiment sweeps: scaling in `n`, fixed `n` with a prescribed
//! number of conjugate pairs, and statistics of `t` for random stochastic
//! matrices.
//!
//! Samples run on the rayon pool; results are collected in input order, so
//! output is independent of scheduling.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::kernel;
use crate::manifold::{RetractionMode, TransportMode};
use crate::model::{ModelKind, Problem};
use crate::solver::{self, InitStepMode, SolverConfig, SolverError, Status};
use crate::spectra::{
    self, greedy_distance, sample_disk_spectrum, sample_stochastic, spectrum_of_matrix, SpectrumError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("bad experiment specification: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Scaling,
    FixedN,
    TStatistics,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Scaling => "scaling",
            Family::FixedN => "fixed-n",
            Family::TStatistics => "t-statistics",
        }
    }
}

/// Solver settings applied on top of the per-model defaults.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub retraction: Option<RetractionMode>,
    pub transport: Option<TransportMode>,
    pub init_step: Option<InitStepMode>,
    pub additional_step: Option<bool>,
    pub max_iter: Option<usize>,
    pub residual_tol: Option<f64>,
}

impl ConfigOverrides {
    pub fn apply(&self, mut config: SolverConfig) -> SolverConfig {
        if let Some(r) = self.retraction {
            config.retraction = r;
        }
        if let Some(t) = self.transport {
            config.transport = t;
        }
        if let Some(i) = self.init_step {
            config.init_step = i;
        }
        if let Some(a) = self.additional_step {
            config.additional_step = a;
        }
        if let Some(m) = self.max_iter {
            config.max_iter = m;
        }
        if let Some(r) = self.residual_tol {
            config.residual_tol = r;
        }
        config
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub family: Family,
    pub sizes: Vec<usize>,
    pub t_values: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    pub models: Vec<ModelKind>,
    pub overrides: ConfigOverrides,
}

impl ExperimentSpec {
    pub fn new(family: Family, sizes: Vec<usize>, samples: usize, seed: u64) -> Self {
        Self {
            family,
            sizes,
            t_values: Vec::new(),
            samples,
            seed,
            models: vec![ModelKind::Isospectral, ModelKind::Sl2Extended],
            overrides: ConfigOverrides::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::BadSpec(m));
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return bad("sizes must be a nonempty list of positive integers".into());
        }
        if self.family != Family::TStatistics && self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        if self.family == Family::FixedN {
            if self.sizes.len() != 1 {
                return bad("the fixed-n family takes exactly one size".into());
            }
            let n = self.sizes[0];
            if self.t_values.is_empty() {
                return bad("the fixed-n family needs at least one t".into());
            }
            if let Some(&t) = self.t_values.iter().find(|&&t| t == 0 || 2 * t >= n) {
                return bad(format!("t = {t} is outside 1 <= t <= (n - 1)/2 for n = {n}"));
            }
        }
        Ok(())
    }
}

/// Per-sample seed, independent of scheduling order.
pub fn derive_seed(seed: u64, n: usize, t: usize, sample: usize) -> u64 {
    let mut z = seed;
    for part in [n as u64, t as u64, sample as u64] {
        z = splitmix(z ^ splitmix(part.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    z
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One solve within a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub family: Family,
    pub model: ModelKind,
    pub n: usize,
    pub t: usize,
    pub sample_id: usize,
    pub status: Status,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub final_residual: f64,
    pub eig_distance: f64,
    pub min_eig_distance: Option<f64>,
    pub min_eig_distance_iter: Option<usize>,
    /// Least-squares slope and R² of `log10(residual)` over the final two
    /// thirds of the run.
    pub log_residual_fit: Option<(f64, f64)>,
}

pub const ROW_HEADER: &str = "family,model,n,t,sample_id,status,iterations,wall_time_s,final_residual,eig_distance,min_eig_distance,min_eig_distance_iter";

impl ResultRow {
    pub fn succeeded(&self) -> bool {
        self.status == Status::ResidualMet
    }

    fn csv_line(&self, with_time: bool) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{:e},{:e},{},{}",
            self.family.as_str(),
            self.model.label(),
            self.n,
            self.t,
            self.sample_id,
            self.status.as_str(),
            self.iterations,
            if with_time { self.wall_time_s.to_string() } else { String::new() },
            self.final_residual,
            self.eig_distance,
            opt(self.min_eig_distance.map(|v| format!("{v:e}"))),
            opt(self.min_eig_distance_iter.map(|v| v.to_string())),
        )
    }
}

/// Rows as CSV. With `with_time = false` the timing column is left empty,
/// which makes the output reproducible bit for bit.
pub fn rows_to_csv(rows: &[ResultRow], with_time: bool) -> String {
    let mut out = String::from(ROW_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line(with_time));
        out.push('\n');
    }
    out
}

/// Aggregate over the rows of one `(n, t, model)` group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub model: ModelKind,
    pub n: usize,
    /// `None` when the group mixes several `t` (scaling family).
    pub t: Option<usize>,
    pub samples: usize,
    pub successes: usize,
    pub mean_iterations: f64,
    pub stderr_iterations: f64,
    pub mean_time_s: f64,
    pub mean_eig_distance: f64,
    pub median_eig_distance: f64,
    pub mean_min_eig_distance: Option<f64>,
    pub median_min_eig_distance: Option<f64>,
    pub mean_min_eig_distance_iter: Option<f64>,
}

pub const SUMMARY_HEADER: &str = "model,n,t,samples,successes,mean_iterations,stderr_iterations,mean_time_s,mean_eig_distance,median_eig_distance,mean_min_eig_distance,median_min_eig_distance,mean_min_eig_distance_iter";

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard error of the mean (sample standard deviation over `sqrt(len)`).
pub fn std_error(values: &[f64]) -> f64 {
    let len = values.len();
    if len < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (len - 1) as f64;
    (var / len as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let len = v.len();
    if len == 0 {
        return f64::NAN;
    }
    if len % 2 == 1 {
        v[len / 2]
    } else {
        0.5 * (v[len / 2 - 1] + v[len / 2])
    }
}

/// Groups rows by `(n, model)` for the scaling family and by `(n, t, model)`
/// otherwise, in order of first appearance.
pub fn summarize(rows: &[ResultRow]) -> Vec<GroupSummary> {
    let mut keys: Vec<(usize, Option<usize>, ModelKind)> = Vec::new();
    for r in rows {
        let key = (r.n, (r.family != Family::Scaling).then_some(r.t), r.model);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(n, t, model)| {
            let group: Vec<&ResultRow> =
                rows.iter().filter(|r| r.n == n && r.model == model && t.is_none_or(|t| r.t == t)).collect();
            let iters: Vec<f64> = group.iter().map(|r| r.iterations as f64).collect();
            let dists: Vec<f64> = group.iter().map(|r| r.eig_distance).collect();
            let mins: Vec<f64> = group.iter().filter_map(|r| r.min_eig_distance).collect();
            let min_iters: Vec<f64> = group.iter().filter_map(|r| r.min_eig_distance_iter.map(|k| k as f64)).collect();
            GroupSummary {
                model,
                n,
                t,
                samples: group.len(),
                successes: group.iter().filter(|r| r.succeeded()).count(),
                mean_iterations: mean(&iters),
                stderr_iterations: std_error(&iters),
                mean_time_s: mean(&group.iter().map(|r| r.wall_time_s).collect::<Vec<_>>()),
                mean_eig_distance: mean(&dists),
                median_eig_distance: median(&dists),
                mean_min_eig_distance: (!mins.is_empty()).then(|| mean(&mins)),
                median_min_eig_distance: (!mins.is_empty()).then(|| median(&mins)),
                mean_min_eig_distance_iter: (!min_iters.is_empty()).then(|| mean(&min_iters)),
            }
        })
        .collect()
}

pub fn summaries_to_csv(summaries: &[GroupSummary]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:e},{:e},{},{},{}",
            s.model.label(),
            s.n,
            s.t.map(|t| t.to_string()).unwrap_or_default(),
            s.samples,
            s.successes,
            s.mean_iterations,
            s.stderr_iterations,
            s.mean_time_s,
            s.mean_eig_distance,
            s.median_eig_distance,
            opt(s.mean_min_eig_distance),
            opt(s.median_min_eig_distance),
            s.mean_min_eig_distance_iter.map(|x| x.to_string()).unwrap_or_default(),
        );
    }
    out
}

/// Slope and R² of a least-squares line through `log10(residual)` over the
/// final two thirds of the trace; `None` for runs with fewer than 3 points there.
pub fn log_residual_fit(residuals: &[f64]) -> Option<(f64, f64)> {
    let start = residuals.len() / 3;
    let pts: Vec<(f64, f64)> = residuals[start..]
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > 0.0)
        .map(|(i, r)| ((start + i) as f64, r.log10()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, r2))
}

fn solve_row(
    family: Family,
    model: ModelKind,
    spectrum: &spectra::Spectrum,
    x0: &crate::manifold::Point,
    config: &SolverConfig,
    sample_id: usize,
    track_min: bool,
) -> Result<ResultRow> {
    let problem = Problem::new(spectrum.clone(), model);
    let target = spectrum.full();
    let mut best: Option<(f64, usize)> = None;
    let outcome = solver::solve_observed(&problem, x0.clone(), config, |k, x, _| {
        if track_min {
            let a = crate::model::recover_stochastic(x);
            if let Ok(eig) = kernel::eigenvalues(&a) {
                let dist = greedy_distance(&eig, &target).expect("equal lengths");
                if best.is_none_or(|(b, _)| dist < b) {
                    best = Some((dist, k));
                }
            }
        }
    })?;
    let eig_distance = kernel::eigenvalues(&outcome.matrix)
        .ok()
        .and_then(|eig| greedy_distance(&eig, &target).ok())
        .unwrap_or(f64::NAN);
    let residuals: Vec<f64> = outcome.trace.records.iter().map(|r| r.residual).collect();
    Ok(ResultRow {
        family,
        model,
        n: spectrum.n(),
        t: spectrum.t(),
        sample_id,
        status: outcome.status(),
        iterations: outcome.trace.iterations(),
        wall_time_s: outcome.wall_time_s,
        final_residual: outcome.final_residual(),
        eig_distance,
        min_eig_distance: best.map(|b| b.0),
        min_eig_distance_iter: best.map(|b| b.1),
        log_residual_fit: log_residual_fit(&residuals),
    })
}

/// Spectra of random stochastic matrices, solved by every requested model
/// from a shared start point. Rows are ordered by `(n, sample, model)`.
pub fn run_scaling(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = spec.sizes.iter().flat_map(|&n| (0..spec.samples).map(move |i| (n, i))).collect();
    let nested: Vec<Result<Vec<ResultRow>>> = jobs
        .par_iter()
        .map(|&(n, sample)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, n, 0, sample));
            let a = sample_stochastic(n, &mut rng);
            let spectrum = spectrum_of_matrix(&a)?;
            let x0 = solver::init_point(&spectrum, &mut rng)?;
            spec.models
                .iter()
                .map(|&model| {
                    let config = spec.overrides.apply(SolverConfig::for_model(model));
                    solve_row(Family::Scaling, model, &spectrum, &x0, &config, sample, false)
                })
                .collect()
        })
        .collect();
    flatten(nested)
}

/// Disk spectra with `t` pairs at a fixed `n`; each run goes to the
/// iteration cap (3000 unless overridden), or until the line search can no
/// longer decrease `F`, with the residual and gradient stops disabled. The
/// iterate closest to the target spectrum is tracked along the way.
pub fn run_fixed_n(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let n = spec.sizes[0];
    let jobs: Vec<(usize, usize)> =
        spec.t_values.iter().flat_map(|&t| (0..spec.samples).map(move |i| (t, i))).collect();
    let nested: Vec<Result<Vec<ResultRow>>> = jobs
        .par_iter()
        .map(|&(t, sample)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, n, t, sample));
            let spectrum = sample_disk_spectrum(n, t, &mut rng)?;
            let x0 = solver::init_point(&spectrum, &mut rng)?;
            spec.models
                .iter()
                .map(|&model| {
                    let mut config = SolverConfig::for_model(model);
                    config.max_iter = 3000;
                    config.residual_stop = false;
                    config.grad_tol = 0.0;
                    let config = spec.overrides.apply(config);
                    solve_row(Family::FixedN, model, &spectrum, &x0, &config, sample, true)
                })
                .collect()
        })
        .collect();
    flatten(nested)
}

fn flatten(nested: Vec<Result<Vec<ResultRow>>>) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for r in nested {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Number of conjugate pairs of one random stochastic matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TCount {
    pub n: usize,
    pub sample_id: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TStatistics {
    pub n: usize,
    pub samples: usize,
    pub mean_t: f64,
    /// `histogram[t]` counts samples with exactly `t` pairs.
    pub histogram: Vec<usize>,
}

pub fn run_t_statistics(spec: &ExperimentSpec) -> Result<(Vec<TCount>, Vec<TStatistics>)> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = spec.sizes.iter().flat_map(|&n| (0..spec.samples).map(move |i| (n, i))).collect();
    let counts: Vec<Result<TCount>> = jobs
        .par_iter()
        .map(|&(n, sample_id)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, n, 0, sample_id));
            let a = sample_stochastic(n, &mut rng);
            Ok(TCount { n, sample_id, t: spectrum_of_matrix(&a)?.t() })
        })
        .collect();
    let counts: Vec<TCount> = counts.into_iter().collect::<Result<_>>()?;
    let stats = spec
        .sizes
        .iter()
        .map(|&n| {
            let mut histogram = vec![0; n / 2 + 1];
            let mut total = 0usize;
            for c in counts.iter().filter(|c| c.n == n) {
                histogram[c.t] += 1;
                total += c.t;
            }
            TStatistics { n, samples: spec.samples, mean_t: total as f64 / spec.samples as f64, histogram }
        })
        .collect();
    Ok((counts, stats))
}

pub const T_COUNT_HEADER: &str = "n,sample_id,t";
pub const T_STATS_HEADER: &str = "n,samples,mean_t,mean_t_over_n";
pub const T_HISTOGRAM_HEADER: &str = "n,t,count";

pub fn t_counts_to_csv(counts: &[TCount]) -> String {
    let mut out = format!("{T_COUNT_HEADER}\n");
    for c in counts {
        let _ = writeln!(out, "{},{},{}", c.n, c.sample_id, c.t);
    }
    out
}

pub fn t_stats_to_csv(stats: &[TStatistics]) -> String {
    let mut out = format!("{T_STATS_HEADER}\n");
    for s in stats {
        let _ = writeln!(out, "{},{},{},{}", s.n, s.samples, s.mean_t, s.mean_t / s.n as f64);
    }
    out
}

pub fn t_histogram_to_csv(stats: &[TStatistics]) -> String {
    let mut out = format!("{T_HISTOGRAM_HEADER}\n");
    for s in stats {
        for (t, count) in s.histogram.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", s.n, t, count);
        }
    }
    out
}
