use std::fmt;

use serde::{Deserialize, Serialize};

use crate::designs::Design;
use crate::error::{Error, Result};
use crate::estimator::{estimate, EstimateOptions, EstimateStatus};
use crate::family::Family;
use crate::model::{eval_moments, Dataset, MomentModel};
use crate::tilt::{solve_carrier, TiltOptions};

use super::rng::{rep_seed, SplitMix64};
use super::sample::sample_design;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub design: Design,
    /// Observations per replication.
    pub n: usize,
    /// Target number of valid replications.
    pub replications: usize,
    pub families: Vec<Family>,
    pub base_seed: u64,
    /// Cap on drawn samples; `3 × replications` when absent.
    pub max_attempts: Option<usize>,
}

impl StudyConfig {
    pub fn new(design: Design, n: usize, replications: usize, families: Vec<Family>, base_seed: u64) -> Self {
        Self { design, n, replications, families, base_seed, max_attempts: None }
    }

    pub fn attempt_cap(&self) -> usize {
        self.max_attempts.unwrap_or(3 * self.replications)
    }

    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        if self.replications == 0 {
            return Err(Error::BadDesign("replications must be at least 1".into()));
        }
        if self.families.is_empty() {
            return Err(Error::BadDesign("at least one family is required".into()));
        }
        if self.n == 0 {
            return Err(Error::BadDesign("sample size must be positive".into()));
        }
        if self.attempt_cap() < self.replications {
            return Err(Error::BadDesign("max_attempts is below the replication target".into()));
        }
        Ok(())
    }
}

/// How replications are scheduled. Output is identical in every mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Data-parallel over replications; `None` uses the global thread pool.
    /// Runs sequentially when the crate is built without `parallel`.
    Parallel { workers: Option<usize> },
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel { workers: None }
        } else {
            Execution::Sequential
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepStatus {
    Converged,
    NoConvexHull,
    MaxIter,
    /// Any other estimation error.
    Failed,
}

impl fmt::Display for RepStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RepStatus::Converged => "converged",
            RepStatus::NoConvexHull => "no_convex_hull",
            RepStatus::MaxIter => "max_iter",
            RepStatus::Failed => "failed",
        })
    }
}

/// One drawn sample and every family's estimate on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep_index: u64,
    pub seed: u64,
    /// Per family, in config order; `None` when estimation failed.
    pub theta_hat: Vec<Option<Vec<f64>>>,
    pub statuses: Vec<RepStatus>,
}

impl ReplicationRecord {
    /// Valid iff every family converged.
    pub fn is_valid(&self) -> bool {
        self.statuses.iter().all(|s| *s == RepStatus::Converged)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub family: Family,
    /// `mean(θ̂) − θ*` per component.
    pub mean_bias: Vec<f64>,
    /// Standard deviation with `R − 1` denominator; absent when `R = 1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_dev: Option<Vec<f64>>,
    /// Sorted first components of θ̂ over valid replications.
    #[serde(skip)]
    pub ecdf: Vec<f64>,
    pub n_discarded: usize,
    pub n_attempted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub config: StudyConfig,
    pub theta_star: Vec<f64>,
    pub n_valid: usize,
    pub n_attempted: usize,
    pub n_discarded: usize,
    pub families: Vec<FamilySummary>,
    /// Every attempted replication up to the last accepted one.
    #[serde(skip)]
    pub records: Vec<ReplicationRecord>,
}

impl StudySummary {
    pub fn family(&self, family: Family) -> Option<&FamilySummary> {
        self.families.iter().find(|f| f.family == family)
    }

    /// Valid θ̂ (all components) for the family at config position `k`.
    pub fn estimates(&self, k: usize) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .filter(|r| r.is_valid())
            .filter_map(|r| r.theta_hat[k].clone())
            .collect()
    }
}

/// A study that could not finish; `partial` holds what was computed.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyFailure {
    pub error: Error,
    pub partial: Option<Box<StudySummary>>,
}

impl fmt::Display for StudyFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for StudyFailure {}

impl From<Error> for StudyFailure {
    fn from(error: Error) -> Self {
        Self { error, partial: None }
    }
}

/// Draws replication `rep_index` and estimates every family on it.
pub fn run_replication(config: &StudyConfig, model: &dyn MomentModel, rep_index: u64) -> ReplicationRecord {
    let seed = rep_seed(config.base_seed, rep_index);
    let data = sample_design(&config.design, config.n, SplitMix64::new(seed));
    let opts = EstimateOptions::default();
    let mut theta_hat = Vec::with_capacity(config.families.len());
    let mut statuses = Vec::with_capacity(config.families.len());
    for &family in &config.families {
        let (theta, status) = match estimate(family, model, &data, &opts) {
            Ok(est) => {
                let status = match est.status {
                    EstimateStatus::Converged => RepStatus::Converged,
                    EstimateStatus::NoConvexHull => RepStatus::NoConvexHull,
                    EstimateStatus::MaxIter => RepStatus::MaxIter,
                };
                (Some(est.theta_hat), status)
            }
            Err(Error::NoConvexHull) => (None, RepStatus::NoConvexHull),
            Err(Error::MaxIter) => (None, RepStatus::MaxIter),
            Err(_) => (None, RepStatus::Failed),
        };
        theta_hat.push(theta);
        statuses.push(status);
    }
    ReplicationRecord { rep_index, seed, theta_hat, statuses }
}

fn run_batch(config: &StudyConfig, model: &dyn MomentModel, range: std::ops::Range<u64>, exec: Execution) -> Vec<ReplicationRecord> {
    match exec {
        Execution::Sequential => range.map(|r| run_replication(config, model, r)).collect(),
        Execution::Parallel { workers } => parallel_batch(config, model, range, workers),
    }
}

#[cfg(feature = "parallel")]
fn parallel_batch(
    config: &StudyConfig,
    model: &dyn MomentModel,
    range: std::ops::Range<u64>,
    workers: Option<usize>,
) -> Vec<ReplicationRecord> {
    use rayon::prelude::*;
    // `collect` on an indexed parallel iterator keeps index order.
    let job = || range.clone().into_par_iter().map(|r| run_replication(config, model, r)).collect();
    match workers.and_then(|w| rayon::ThreadPoolBuilder::new().num_threads(w).build().ok()) {
        Some(pool) => pool.install(job),
        None => job(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_batch(
    config: &StudyConfig,
    model: &dyn MomentModel,
    range: std::ops::Range<u64>,
    _workers: Option<usize>,
) -> Vec<ReplicationRecord> {
    range.map(|r| run_replication(config, model, r)).collect()
}

/// [`run_study_with`] under the default execution mode.
pub fn run_study(config: &StudyConfig) -> std::result::Result<StudySummary, StudyFailure> {
    run_study_with(config, Execution::default())
}

/// Draws replications in index order until `replications` of them are valid
/// for every family, or the attempt cap is reached.
pub fn run_study_with(config: &StudyConfig, exec: Execution) -> std::result::Result<StudySummary, StudyFailure> {
    config.validate()?;
    let model = config.design.model()?;
    let cap = config.attempt_cap() as u64;
    let target = config.replications;

    let mut records: Vec<ReplicationRecord> = Vec::new();
    let mut valid = 0usize;
    let mut next = 0u64;
    'outer: while valid < target && next < cap {
        let want = (target - valid) as u64;
        let end = (next + want).min(cap);
        for rec in run_batch(config, model.as_ref(), next..end, exec) {
            let ok = rec.is_valid();
            records.push(rec);
            if ok {
                valid += 1;
                if valid == target {
                    break 'outer;
                }
            }
        }
        next = end;
    }

    let summary = summarize(config, records, valid);
    if valid < target {
        return Err(StudyFailure {
            error: Error::TooManyDiscards { valid, attempts: summary.n_attempted },
            partial: Some(Box::new(summary)),
        });
    }
    Ok(summary)
}

fn summarize(config: &StudyConfig, records: Vec<ReplicationRecord>, n_valid: usize) -> StudySummary {
    let theta_star = config.design.theta_star();
    let n_attempted = records.len();
    let n_discarded = n_attempted - n_valid;
    let families = config
        .families
        .iter()
        .enumerate()
        .map(|(k, &family)| {
            let est: Vec<&Vec<f64>> = records
                .iter()
                .filter(|r| r.is_valid())
                .filter_map(|r| r.theta_hat[k].as_ref())
                .collect();
            let dim = theta_star.len();
            let r = est.len() as f64;
            let mean: Vec<f64> = (0..dim).map(|j| est.iter().map(|t| t[j]).sum::<f64>() / r).collect();
            let mean_bias = mean.iter().zip(&theta_star).map(|(m, t)| m - t).collect();
            let std_dev = (est.len() > 1).then(|| {
                (0..dim)
                    .map(|j| (est.iter().map(|t| (t[j] - mean[j]).powi(2)).sum::<f64>() / (r - 1.0)).sqrt())
                    .collect()
            });
            let mut ecdf: Vec<f64> = est.iter().map(|t| t[0]).collect();
            ecdf.sort_by(f64::total_cmp);
            FamilySummary { family, mean_bias, std_dev, ecdf, n_discarded, n_attempted }
        })
        .collect();
    StudySummary { config: config.clone(), theta_star, n_valid, n_attempted, n_discarded, families, records }
}

/// Two-sample Kolmogorov–Smirnov distance between sorted samples.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// `(x_i1, n·ŵ_i)` at `theta`, sorted by the first data coordinate.
pub fn weights_dump<M: MomentModel + ?Sized>(
    family: Family,
    model: &M,
    data: &Dataset,
    theta: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let gmat = eval_moments(model, data, theta)?;
    let sol = solve_carrier(family.carrier(), &gmat, None, &TiltOptions::default()).into_result()?;
    let n = data.n() as f64;
    let mut out: Vec<(f64, f64)> = data.rows().zip(&sol.weights).map(|(x, w)| (x[0], n * w)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(out)
}
