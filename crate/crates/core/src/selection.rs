//! Trajectory cutting, 60/20/20 splits, and the two-stage grid search.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::integrate::Integrator;
use crate::kernels::{median_pairwise_distance, KernelFamily, KernelSpec, RffConfig};
use crate::ode::{AssembledSystem, RockModel, Trajectory, TrajectorySet};

/// Cuts each trajectory into windows of `length` samples. Consecutive
/// windows share their endpoint sample; a final window shorter than
/// `length` is kept when it has at least two samples.
pub fn cut_trajectories(data: &TrajectorySet, length: usize) -> Result<TrajectorySet> {
    if length < 2 {
        return Err(Error::Config(format!("cut length must be at least 2, got {length}")));
    }
    let mut out = Vec::new();
    for t in data.trajectories() {
        let mut start = 0;
        while start + 1 < t.len() {
            let end = (start + length).min(t.len());
            out.push(t.slice(start..end));
            start = end - 1;
        }
    }
    TrajectorySet::new(out)
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: TrajectorySet,
    pub val1: TrajectorySet,
    pub val2: TrajectorySet,
}

fn split_sizes(n: usize) -> (usize, usize) {
    let train = (0.6 * n as f64).round() as usize;
    let val1 = (0.2 * n as f64).round() as usize;
    (train, val1)
}

/// Random trajectory-level 60/20/20 split.
pub fn split_dataset(data: &TrajectorySet, seed: u64) -> Result<Split> {
    let n = data.len();
    if n < 5 {
        return Err(Error::Data(format!(
            "{n} trajectories are too few for a 60/20/20 split; provide the splits explicitly"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = split_sizes(n);
    Ok(Split {
        train: data.subset(&idx[..a])?,
        val1: data.subset(&idx[a..a + b])?,
        val2: data.subset(&idx[a + b..])?,
    })
}

/// Splits one long trajectory by time order: cut into windows, then the
/// first 60% of windows train, the next 20% validate, the rest validate again.
pub fn split_by_time(trajectory: &Trajectory, length: usize) -> Result<Split> {
    let windows = cut_trajectories(&TrajectorySet::new(vec![trajectory.clone()])?, length)?;
    let n = windows.len();
    if n < 5 {
        return Err(Error::Data(format!(
            "trajectory yields {n} windows of length {length}, need at least 5"
        )));
    }
    let (a, b) = split_sizes(n);
    let range = |r: std::ops::Range<usize>| windows.subset(&r.collect::<Vec<_>>());
    Ok(Split {
        train: range(0..a)?,
        val1: range(a..a + b)?,
        val2: range(a + b..n)?,
    })
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub kernels: Vec<KernelFamily>,
    /// Kernel scales, as multiples of the median pairwise distance of the
    /// training states unless `absolute_scales` is set.
    pub scales: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub ps: Vec<usize>,
    pub cut_lengths: Vec<usize>,
    #[serde(default)]
    pub absolute_scales: bool,
    /// Feature settings for the random Fourier family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rff: Option<RffConfig>,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub seed: u64,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("kernels", self.kernels.is_empty()),
            ("scales", self.scales.is_empty()),
            ("lambdas", self.lambdas.is_empty()),
            ("ps", self.ps.is_empty()),
            ("cut_lengths", self.cut_lengths.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("search grid {name} is empty")));
        }
        if self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("search scales must be positive".into()));
        }
        if self.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::Config("search regularization values must be positive".into()));
        }
        if self.ps.contains(&0) {
            return Err(Error::Config("test feature counts must be positive".into()));
        }
        if self.cut_lengths.iter().any(|l| *l < 2) {
            return Err(Error::Config("cut lengths must be at least 2".into()));
        }
        if self.kernels.contains(&KernelFamily::RandomFourier) && self.rff.is_none() {
            return Err(Error::Config("random Fourier kernels need an rff section".into()));
        }
        Ok(())
    }

    fn kernel(&self, family: KernelFamily, scale: f64) -> Result<KernelSpec> {
        match family {
            KernelFamily::RandomFourier => KernelSpec::random_fourier(scale, self.rff.expect("validated")),
            f => KernelSpec::new(f, scale),
        }
    }
}

/// One candidate configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub p: usize,
    pub cut_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub stage: u8,
    /// Which validation set scored this entry.
    pub scored_on: String,
    pub config: SearchConfig,
    pub scale_factor: f64,
    pub report: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl LogEntry {
    fn score(&self) -> (f64, f64, usize) {
        match &self.report {
            Some(r) => (nan_to_inf(r.err), nan_to_inf(r.one_err), r.model_size),
            None => (f64::INFINITY, f64::INFINITY, usize::MAX),
        }
    }
}

fn nan_to_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Lower Err wins, then lower 1-Err, then the smaller model.
fn compare(a: &LogEntry, b: &LogEntry) -> Ordering {
    let (ea, oa, sa) = a.score();
    let (eb, ob, sb) = b.score();
    ea.total_cmp(&eb).then(oa.total_cmp(&ob)).then(sa.cmp(&sb))
}

fn best_index(entries: &[LogEntry]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in entries.iter().enumerate() {
        if e.report.as_ref().is_none_or(|r| r.diverged()) {
            continue;
        }
        if best.is_none_or(|b| compare(e, &entries[b]) == Ordering::Less) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: SearchConfig,
    pub model: RockModel,
    /// Final model scored on the secondary validation set.
    pub report: EvalReport,
    pub log: Vec<LogEntry>,
}

impl SearchOutcome {
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.log {
            serde_json::to_writer(&mut f, e).map_err(|e| Error::Format {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Fits every `(scale, λ)` for fixed `(family, p, L)` on `train` and scores on `val`.
/// Returns entries in grid order with their models.
#[allow(clippy::too_many_arguments)]
fn tune_scale_lambda(
    space: &SearchSpace,
    family: KernelFamily,
    p: usize,
    length: usize,
    train: &TrajectorySet,
    val: &TrajectorySet,
    stage: u8,
    scored_on: &str,
) -> Vec<(LogEntry, Option<RockModel>)> {
    let entry = |scale_factor: f64, config: SearchConfig, report: Option<EvalReport>, failure: Option<String>| LogEntry {
        stage,
        scored_on: scored_on.to_string(),
        config,
        scale_factor,
        report,
        failure,
    };
    let config = |kernel: KernelSpec, lambda: f64| SearchConfig {
        kernel,
        lambda,
        p,
        cut_length: length,
    };
    // Stand-in kernel for entries whose kernel could not be built.
    let nominal = |factor: f64| space.kernel(family, factor).or_else(|_| KernelSpec::gaussian(1.0)).expect("valid");
    let all_failed = |factor: f64, kernel: KernelSpec, msg: &str| -> Vec<(LogEntry, Option<RockModel>)> {
        space
            .lambdas
            .iter()
            .map(|&l| (entry(factor, config(kernel, l), None, Some(msg.to_string())), None))
            .collect()
    };
    let prepared = cut_trajectories(train, length).and_then(|cut| {
        let base = if space.absolute_scales {
            1.0
        } else {
            median_pairwise_distance(&train.points(), 2000, space.seed)?
        };
        Ok((cut, base))
    });
    let (cut, base) = match prepared {
        Ok(v) => v,
        Err(e) => {
            let msg = e.to_string();
            return space.scales.iter().flat_map(|&f| all_failed(f, nominal(f), &msg)).collect();
        }
    };
    space
        .scales
        .par_iter()
        .map(|&factor| {
            let setup = space
                .kernel(family, factor * base)
                .and_then(|kernel| Ok((kernel, AssembledSystem::new(&cut, &kernel, p)?)));
            match setup {
                Err(e) => all_failed(factor, nominal(factor), &e.to_string()),
                Ok((kernel, sys)) => space
                    .lambdas
                    .iter()
                    .map(|&lambda| {
                        let c = config(kernel, lambda);
                        match sys
                            .solve(&cut, &kernel, lambda)
                            .and_then(|m| evaluate(&m, val, space.integrator).map(|r| (m, r)))
                        {
                            Ok((model, report)) => (entry(factor, c, Some(report), None), Some(model)),
                            Err(e) => (entry(factor, c, None, Some(e.to_string())), None),
                        }
                    })
                    .collect(),
            }
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn diagnostics(log: &[LogEntry]) -> String {
    let failed = log.iter().filter(|e| e.failure.is_some()).count();
    let diverged = log
        .iter()
        .filter(|e| e.report.as_ref().is_some_and(|r| r.diverged()))
        .count();
    let first = log.iter().find_map(|e| e.failure.clone()).unwrap_or_default();
    format!(
        "{} candidates: {failed} failed, {diverged} diverged; first failure: {first}",
        log.len()
    )
}

/// Two-stage protocol on a pre-made split.
///
/// Stage 1 picks `(scale, λ)` on `val1` for every `(kernel, p, L)`, then
/// picks `(kernel, p, L)` on `val2`. Stage 2 retrains on `train ∪ val1`
/// and re-tunes `(scale, λ)` on `val2`.
pub fn two_stage_search_split(split: &Split, space: &SearchSpace) -> Result<SearchOutcome> {
    space.validate()?;
    let mut log = Vec::new();
    let mut combos = Vec::new();
    for &family in &space.kernels {
        for &p in &space.ps {
            for &length in &space.cut_lengths {
                combos.push((family, p, length));
            }
        }
    }
    let mut finalists: Vec<LogEntry> = Vec::new();
    for &(family, p, length) in &combos {
        let tuned = tune_scale_lambda(space, family, p, length, &split.train, &split.val1, 1, "val1");
        let entries: Vec<LogEntry> = tuned.iter().map(|(e, _)| e.clone()).collect();
        if let Some(b) = best_index(&entries) {
            let model = tuned[b].1.as_ref().expect("scored entries have models");
            let scored = evaluate(model, &split.val2, space.integrator);
            let mut e = entries[b].clone();
            e.scored_on = "val2".into();
            match scored {
                Ok(r) => e.report = Some(r),
                Err(err) => {
                    e.report = None;
                    e.failure = Some(err.to_string());
                }
            }
            finalists.push(e);
        }
        log.extend(entries);
    }
    log.extend(finalists.iter().cloned());
    let chosen = best_index(&finalists).ok_or_else(|| Error::SearchFailed(diagnostics(&log)))?;
    let (family, p, length) = {
        let c = &finalists[chosen].config;
        (c.kernel.family, c.p, c.cut_length)
    };

    let combined = split.train.concat(&split.val1)?;
    let tuned = tune_scale_lambda(space, family, p, length, &combined, &split.val2, 2, "val2");
    let entries: Vec<LogEntry> = tuned.iter().map(|(e, _)| e.clone()).collect();
    log.extend(entries.iter().cloned());
    let b = best_index(&entries).ok_or_else(|| Error::SearchFailed(diagnostics(&log)))?;
    let (entry, model) = tuned.into_iter().nth(b).expect("index in range");
    Ok(SearchOutcome {
        best: entry.config,
        model: model.expect("scored entries have models"),
        report: entry.report.expect("scored entries have reports"),
        log,
    })
}

/// Splits `data` (60/20/20 by trajectory, or by time for a single
/// trajectory cut at the largest grid length) and runs the two-stage search.
pub fn two_stage_search(data: &TrajectorySet, space: &SearchSpace) -> Result<SearchOutcome> {
    space.validate()?;
    let split = if data.len() == 1 {
        let length = *space.cut_lengths.iter().max().expect("validated");
        split_by_time(&data.trajectories()[0], length)?
    } else {
        split_dataset(data, space.seed)?
    };
    two_stage_search_split(&split, space)
}
