//! k-sweeps over schedules and seeds, with resumable on-disk cells.
//!
//! Each cell `(schedule id, k, seed)` is one training run written to
//! `<out>/cells/<id>__k<k>__seed<seed>.jsonl`. A cell's randomness comes
//! only from its own seed and the plan's dataset seed, so cells run in
//! parallel and a resumed sweep reuses finished cells verbatim.

use std::path::PathBuf;

use rayon::prelude::*;

use crate::config::{RunConfig, SweepConfig};
use crate::error::{Error, Result};
use crate::harness::{train, Dataset, RunRecord, TrainConfig};
use crate::report::{aggregate_csv, write_atomic, Aggregate, RunReport};

pub const CELLS_DIR: &str = "cells";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub config: SweepConfig,
    /// Directory that relative dataset paths resolve against.
    pub base_dir: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    /// Reuse cells whose report is complete and matches the plan.
    pub resume: bool,
    /// Record wall time in reports (makes them non-reproducible).
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub schedule_id: String,
    pub k: f64,
    pub seed: u64,
    pub final_test_error: f64,
    pub final_train_loss: Option<f64>,
    pub diverged: bool,
    pub record_path: PathBuf,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<Aggregate>,
    /// Cells taken from disk instead of recomputed.
    pub reused: usize,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        if c.schedules.is_empty() {
            return Err(Error::config(
                "schedules",
                "at least one schedule is required",
            ));
        }
        if c.k_values.is_empty() {
            return Err(Error::config("k_values", "must not be empty"));
        }
        if c.seeds.is_empty() {
            return Err(Error::config("seeds", "must not be empty"));
        }
        if let Some(k) = c.k_values.iter().find(|k| !(k.is_finite() && **k >= 1.0)) {
            return Err(Error::config(
                "k_values",
                format!("every k must be >= 1, got {k}"),
            ));
        }
        for (i, k) in c.k_values.iter().enumerate() {
            if c.k_values[..i].contains(k) {
                return Err(Error::config("k_values", format!("duplicate k {k}")));
            }
        }
        for (i, s) in c.seeds.iter().enumerate() {
            if c.seeds[..i].contains(s) {
                return Err(Error::config("seeds", format!("duplicate seed {s}")));
            }
        }
        for (i, s) in c.schedules.iter().enumerate() {
            if !valid_id(&s.id) {
                return Err(Error::config(
                    "schedules.id",
                    format!("{:?} must be non-empty and use only [A-Za-z0-9_-]", s.id),
                ));
            }
            if c.schedules[..i].iter().any(|o| o.id == s.id) {
                return Err(Error::config(
                    "schedules.id",
                    format!("duplicate id {:?}", s.id),
                ));
            }
        }
        Ok(())
    }

    pub fn cell_path(&self, schedule_id: &str, k: f64, seed: u64) -> PathBuf {
        self.output_dir
            .join(CELLS_DIR)
            .join(format!("{schedule_id}__k{k}__seed{seed}.jsonl"))
    }

    pub fn aggregate_path(&self) -> PathBuf {
        self.output_dir.join(AGGREGATE_FILE)
    }

    /// Every cell in plan order: schedules, then k, then seeds.
    fn cells(&self) -> Vec<(String, f64, u64, RunConfig)> {
        let c = &self.config;
        let mut out = Vec::with_capacity(c.schedules.len() * c.k_values.len() * c.seeds.len());
        for s in &c.schedules {
            for &k in &c.k_values {
                for &seed in &c.seeds {
                    out.push((s.id.clone(), k, seed, c.cell_config(s, k, seed)));
                }
            }
        }
        out
    }
}

fn run_cell(
    plan: &SweepPlan,
    dataset: &Dataset,
    options: SweepOptions,
    (schedule_id, k, seed, config): (String, f64, u64, RunConfig),
) -> Result<(CellResult, bool)> {
    let path = plan.cell_path(&schedule_id, k, seed);
    let mut resolved = config.resolve_with(dataset.clone())?;

    let existing = if options.resume {
        RunReport::read(&path)
            .ok()
            .filter(|r| r.summary.config == resolved.echo)
    } else {
        None
    };
    let reused = existing.is_some();
    let report = match existing {
        Some(r) => r,
        None => {
            let record = train(&mut resolved.model, &resolved.dataset, &resolved.train)?;
            let report = RunReport::from_record(&record, &resolved.echo, options.timing);
            write_atomic(&path, report.to_jsonl().as_bytes())?;
            report
        }
    };
    Ok((
        CellResult {
            schedule_id,
            k,
            seed,
            final_test_error: report.summary.final_test_error,
            final_train_loss: report.summary.final_train_loss,
            diverged: report.summary.diverged,
            record_path: path,
            report,
        },
        reused,
    ))
}

/// Runs (or resumes) every cell, then writes `aggregate.csv`. Divergence is
/// recorded per cell and never aborts the sweep.
pub fn run_sweep(plan: &SweepPlan, options: SweepOptions) -> Result<SweepResult> {
    plan.validate()?;
    let cells_dir = plan.output_dir.join(CELLS_DIR);
    std::fs::create_dir_all(&cells_dir).map_err(|e| Error::io(&cells_dir, e))?;
    let dataset = plan.config.dataset.build(&plan.base_dir)?;

    let cells = plan.cells();
    // surface config errors before any training starts
    for (.., config) in &cells {
        config.resolve_with(dataset.clone())?;
    }
    let outcomes: Vec<(CellResult, bool)> = cells
        .into_par_iter()
        .map(|cell| run_cell(plan, &dataset, options, cell))
        .collect::<Result<_>>()?;
    let reused = outcomes.iter().filter(|(_, r)| *r).count();
    let cells: Vec<CellResult> = outcomes.into_iter().map(|(c, _)| c).collect();

    let aggregates = aggregate(&plan.config, &cells);
    write_atomic(
        &plan.aggregate_path(),
        aggregate_csv(&aggregates).as_bytes(),
    )?;
    Ok(SweepResult {
        cells,
        aggregates,
        reused,
    })
}

/// Median of the values; the mean of the middle pair for even counts.
/// NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Per `(schedule, k)` statistics over seeds, in plan order. Diverged cells
/// count toward `n_diverged` and are left out of the error statistics.
pub fn aggregate(config: &SweepConfig, cells: &[CellResult]) -> Vec<Aggregate> {
    let mut rows = Vec::new();
    for s in &config.schedules {
        for &k in &config.k_values {
            let group: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.schedule_id == s.id && c.k == k)
                .collect();
            let errors: Vec<f64> = group
                .iter()
                .filter(|c| !c.diverged)
                .map(|c| c.final_test_error)
                .collect();
            let (min_err, max_err) = if errors.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (
                    errors.iter().copied().fold(f64::INFINITY, f64::min),
                    errors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            };
            rows.push(Aggregate {
                schedule: s.id.clone(),
                k,
                median_err: median(&errors),
                min_err,
                max_err,
                n_seeds: group.len(),
                n_diverged: group.len() - errors.len(),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestK {
    pub k: f64,
    pub median_error: f64,
    /// k values left out because every seed diverged.
    pub excluded: Vec<f64>,
}

/// The k with the lowest median final test error; ties go to the smaller k.
pub fn best_k(result: &SweepResult, schedule_id: &str) -> Result<BestK> {
    let mut rows: Vec<&Aggregate> = result
        .aggregates
        .iter()
        .filter(|a| a.schedule == schedule_id)
        .collect();
    if rows.is_empty() {
        return Err(Error::domain(format!(
            "schedule {schedule_id:?} is not part of the sweep"
        )));
    }
    rows.sort_by(|a, b| a.k.total_cmp(&b.k));
    let mut best: Option<&Aggregate> = None;
    let mut excluded = Vec::new();
    for row in rows {
        if row.median_err.is_nan() {
            excluded.push(row.k);
            continue;
        }
        if best.is_none_or(|b| row.median_err < b.median_err) {
            best = Some(row);
        }
    }
    let best = best.ok_or_else(|| {
        Error::domain(format!(
            "every k diverged on every seed for schedule {schedule_id:?}"
        ))
    })?;
    Ok(BestK {
        k: best.k,
        median_error: best.median_err,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDominance {
    pub k_lo: f64,
    pub k_hi: f64,
    /// Share of in-window epochs with `loss(k_hi) >= loss(k_lo)`.
    pub fraction: f64,
    pub epochs_compared: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    pub window: (f64, f64),
    pub pairs: Vec<PairDominance>,
}

impl OrderingReport {
    pub fn fraction(&self, k_lo: f64, k_hi: f64) -> Option<f64> {
        self.pairs
            .iter()
            .find(|p| p.k_lo == k_lo && p.k_hi == k_hi)
            .map(|p| p.fraction)
    }
}

fn without_k(config: &TrainConfig) -> TrainConfig {
    let mut c = config.clone();
    c.schedule.params.k = 1.0;
    c
}

/// For every pair of runs (ordered by k), the fraction of epochs whose
/// midpoint falls in `window` (a sub-interval of `[0, 1]` of training) where
/// the larger-k run's mean train loss is at least the smaller-k run's.
/// Ties count as satisfying the ordering.
pub fn compare_loss_ordering(records: &[RunRecord], window: (f64, f64)) -> Result<OrderingReport> {
    let (lo, hi) = window;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::domain(format!(
            "window must satisfy 0 <= a <= b <= 1, got [{lo}, {hi}]"
        )));
    }
    if records.len() < 2 {
        return Err(Error::domain("loss ordering needs at least two runs"));
    }
    let reference = without_k(&records[0].config);
    if records.iter().any(|r| without_k(&r.config) != reference) {
        return Err(Error::domain(
            "runs must share one configuration apart from k",
        ));
    }
    let epochs = records[0].config.epochs;
    let in_window: Vec<usize> = (1..=epochs)
        .filter(|&e| {
            let pos = (e as f64 - 0.5) / epochs as f64;
            pos >= lo && pos <= hi
        })
        .collect();

    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.config
            .schedule
            .params
            .k
            .total_cmp(&b.config.schedule.params.k)
    });
    let mut pairs = Vec::new();
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            let (a, b) = (sorted[i], sorted[j]);
            // diverged runs stop early; compare the epochs both completed
            let shared: Vec<usize> = in_window
                .iter()
                .copied()
                .filter(|&e| e <= a.epochs.len() && e <= b.epochs.len())
                .collect();
            let wins = shared
                .iter()
                .filter(|&&e| b.epochs[e - 1].mean_train_loss >= a.epochs[e - 1].mean_train_loss)
                .count();
            pairs.push(PairDominance {
                k_lo: a.config.schedule.params.k,
                k_hi: b.config.schedule.params.k,
                fraction: if shared.is_empty() {
                    f64::NAN
                } else {
                    wins as f64 / shared.len() as f64
                },
                epochs_compared: shared.len(),
            });
        }
    }
    Ok(OrderingReport { window, pairs })
}

impl RunReport {
    /// Rebuilds the per-epoch part of a run record; the per-step series is
    /// not stored in reports and comes back empty.
    pub fn to_run_record(&self) -> Result<RunRecord> {
        let cfg = &self.summary.config;
        let t0 = cfg.schedule.t0.ok_or_else(|| {
            Error::config("schedule.t0", "report config lacks a resolved horizon")
        })?;
        let schedule = cfg.schedule.resolve(t0)?;
        Ok(RunRecord {
            steps: Vec::new(),
            epochs: self.epochs.clone(),
            final_test_error: self.summary.final_test_error,
            diverged: self.summary.diverged,
            config: TrainConfig {
                epochs: cfg.train.epochs,
                batch_size: cfg.train.batch_size,
                momentum: cfg.train.momentum,
                seed: cfg.train.seed,
                schedule,
                loss: cfg.train.loss,
            },
            wall_time_s: self.summary.wall_time_s.unwrap_or(0.0),
        })
    }
}

/// Dominance fraction of `k_hi` over `k_lo` for each seed of a schedule.
pub fn dominance_by_seed(
    result: &SweepResult,
    schedule_id: &str,
    k_lo: f64,
    k_hi: f64,
    window: (f64, f64),
) -> Result<Vec<(u64, f64)>> {
    let find = |k: f64, seed: u64| {
        result
            .cells
            .iter()
            .find(|c| c.schedule_id == schedule_id && c.k == k && c.seed == seed)
    };
    let mut seeds: Vec<u64> = result
        .cells
        .iter()
        .filter(|c| c.schedule_id == schedule_id && c.k == k_lo)
        .map(|c| c.seed)
        .collect();
    seeds.dedup();
    if seeds.is_empty() {
        return Err(Error::domain(format!(
            "no cells for schedule {schedule_id:?} at k={k_lo}"
        )));
    }
    seeds
        .into_iter()
        .map(|seed| {
            let lo = find(k_lo, seed);
            let hi = find(k_hi, seed);
            let (lo, hi) = lo.zip(hi).ok_or_else(|| {
                Error::domain(format!(
                    "missing cell for seed {seed} at k={k_lo} or k={k_hi}"
                ))
            })?;
            let records = [lo.report.to_run_record()?, hi.report.to_run_record()?];
            let report = compare_loss_ordering(&records, window)?;
            Ok((seed, report.fraction(k_lo, k_hi).unwrap_or(f64::NAN)))
        })
        .collect()
}
