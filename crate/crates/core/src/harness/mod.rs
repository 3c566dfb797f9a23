//! Experiment configs, the ablation runner, feature caches and reports.
//!
//! A grid cell is `(architecture, n, trial)`. Trial `t` draws its networks
//! from base seed `base_seed + t * 2^32`. Train and test features of a trial
//! come from the same networks, and smaller `n` reuse the leading columns of
//! the largest extraction, so one extraction per `(architecture, trial)`
//! serves the whole `n` grid.

mod cache;
mod config;
mod report;

use std::time::Instant;

use rayon::prelude::*;

use crate::datasets::DatasetSplit;
use crate::features::{extract_features_with, ExtractOptions};
use crate::probe::{accuracy, train_probe, tune_l2, DesignMatrix, ProbeModel, Standardizer};
use crate::{derive_stream, ArchitectureSpec, Error, Result, Tensor};

pub use cache::{decode_features, encode_features, load_features, save_features, CACHE_MAGIC, CACHE_VERSION};
pub use config::{load_dataset, DatasetSpec, ExperimentConfig, ProbeSettings, CONFIG_VERSION};
pub use report::{emit_report, Aggregate, Report, ReportFormat, ReportRow, CSV_HEADER};

/// Stream index reserved for the validation shuffle.
const VALIDATION_STREAM: u64 = u64::MAX;

/// Base seed of trial `trial`.
pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    base_seed.wrapping_add((trial as u64) << 32)
}

/// `(fit, validation)` index sets; the validation set holds
/// `ceil(fraction * n)` examples picked by a seeded shuffle. Both are sorted.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    derive_stream(seed, VALIDATION_STREAM).shuffle(&mut idx);
    let n_val = ((fraction * n as f64).ceil() as usize).min(n.saturating_sub(1));
    let mut val = idx[..n_val].to_vec();
    let mut fit = idx[n_val..].to_vec();
    val.sort_unstable();
    fit.sort_unstable();
    (fit, val)
}

#[derive(Clone, Debug)]
pub struct ProbeOutcome {
    pub train_acc: f64,
    pub test_acc: f64,
    pub best_l2: f64,
    pub model: ProbeModel,
}

/// Tunes `l2` on a held-out part of the training set, refits on all of it
/// and scores both splits.
pub fn fit_and_score(
    train_x: &DesignMatrix,
    train_y: &[usize],
    test_x: &DesignMatrix,
    test_y: &[usize],
    classes: usize,
    settings: &ProbeSettings,
    split_seed: u64,
) -> Result<ProbeOutcome> {
    let (train_x, test_x) = if settings.standardize {
        let st = Standardizer::fit(train_x);
        (st.apply(train_x)?, st.apply(test_x)?)
    } else {
        (train_x.clone(), test_x.clone())
    };
    let best_l2 = if settings.l2_grid.len() == 1 {
        settings.l2_grid[0]
    } else {
        let (fit, val) = validation_split(train_x.rows(), settings.validation_fraction, split_seed);
        let fit_y: Vec<usize> = fit.iter().map(|&i| train_y[i]).collect();
        let val_y: Vec<usize> = val.iter().map(|&i| train_y[i]).collect();
        let (best, _) = tune_l2(
            &train_x.select_rows(&fit),
            &fit_y,
            &train_x.select_rows(&val),
            &val_y,
            classes,
            &settings.l2_grid,
            &settings.opt,
        )?;
        best
    };
    let model = train_probe(&train_x, train_y, classes, best_l2, &settings.opt)?;
    Ok(ProbeOutcome {
        train_acc: accuracy(&model, &train_x, train_y)?,
        test_acc: accuracy(&model, &test_x, test_y)?,
        best_l2,
        model,
    })
}

/// Loaded splits plus the name used in reports.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub name: String,
    pub train: DatasetSplit,
    pub test: DatasetSplit,
}

impl ExperimentData {
    pub fn load(config: &ExperimentConfig, data_dir: Option<&std::path::Path>) -> Result<Self> {
        let (train, test) = load_dataset(&config.dataset, data_dir)?;
        Ok(ExperimentData { name: config.dataset.name.clone(), train, test })
    }

    fn classes(&self) -> usize {
        self.train.classes()
    }

    fn all_images(&self) -> Result<Tensor<f32>> {
        Tensor::concat(&[self.train.images().clone(), self.test.images().clone()])
    }
}

/// Everything `run_experiment` needs besides the data.
#[derive(Clone, Debug)]
pub struct CellSettings<'a> {
    pub probe: &'a ProbeSettings,
    pub extract: ExtractOptions,
    pub split_seed: u64,
    pub record_wall_time: bool,
}

fn failed_row(data: &ExperimentData, arch: &ArchitectureSpec, n: usize, trial: usize, err: &Error) -> ReportRow {
    ReportRow {
        dataset: data.name.clone(),
        arch: arch.id(),
        init: arch.init.label(),
        activation: arch.activation_label(),
        n,
        trial,
        train_acc: None,
        test_acc: None,
        best_l2: None,
        wall_time_s: None,
        error: Some(err.to_string()),
    }
}

/// All rows of one `(architecture, trial)`: a single extraction at the
/// largest `n`, then one probe per `n` on the leading columns.
fn run_arch_trial(
    data: &ExperimentData,
    arch: &ArchitectureSpec,
    n_grid: &[usize],
    trial: usize,
    base_seed: u64,
    settings: &CellSettings,
) -> Vec<ReportRow> {
    let start = Instant::now();
    let n_max = n_grid.iter().copied().max().unwrap_or(0);
    let features = data
        .all_images()
        .and_then(|images| extract_features_with(arch, &images, n_max, trial_seed(base_seed, trial), settings.extract));
    let features = match features {
        Ok(f) => f,
        Err(e) => return n_grid.iter().map(|&n| failed_row(data, arch, n, trial, &e)).collect(),
    };
    let extract_time = start.elapsed().as_secs_f64();
    let n_train = data.train.len();
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..n_train + data.test.len()).collect();
    n_grid
        .iter()
        .map(|&n| {
            let probe_start = Instant::now();
            let outcome = features.prefix(n).and_then(|f| {
                let x = DesignMatrix::from_features(&f);
                fit_and_score(
                    &x.select_rows(&train_idx),
                    data.train.labels(),
                    &x.select_rows(&test_idx),
                    data.test.labels(),
                    data.classes(),
                    settings.probe,
                    settings.split_seed,
                )
            });
            match outcome {
                Ok(o) => ReportRow {
                    dataset: data.name.clone(),
                    arch: arch.id(),
                    init: arch.init.label(),
                    activation: arch.activation_label(),
                    n,
                    trial,
                    train_acc: Some(o.train_acc),
                    test_acc: Some(o.test_acc),
                    best_l2: Some(o.best_l2),
                    wall_time_s: settings
                        .record_wall_time
                        .then(|| extract_time + probe_start.elapsed().as_secs_f64()),
                    error: None,
                },
                Err(e) => failed_row(data, arch, n, trial, &e),
            }
        })
        .collect()
}

/// Single grid cell.
pub fn run_experiment(
    data: &ExperimentData,
    arch: &ArchitectureSpec,
    n: usize,
    trial: usize,
    base_seed: u64,
    settings: &CellSettings,
) -> ReportRow {
    run_arch_trial(data, arch, &[n], trial, base_seed, settings).remove(0)
}

/// Probe on the flattened inputs; `n` is the input dimension.
pub fn run_raw_baseline(data: &ExperimentData, trial: usize, settings: &CellSettings) -> ReportRow {
    let start = Instant::now();
    let dim = data.train.images().item_len();
    let outcome = fit_and_score(
        &DesignMatrix::from_tensor(data.train.images()),
        data.train.labels(),
        &DesignMatrix::from_tensor(data.test.images()),
        data.test.labels(),
        data.classes(),
        settings.probe,
        settings.split_seed,
    );
    let (train_acc, test_acc, best_l2, error) = match outcome {
        Ok(o) => (Some(o.train_acc), Some(o.test_acc), Some(o.best_l2), None),
        Err(e) => (None, None, None, Some(e.to_string())),
    };
    ReportRow {
        dataset: data.name.clone(),
        arch: "raw".into(),
        init: "NA".into(),
        activation: "NA".into(),
        n: dim,
        trial,
        train_acc,
        test_acc,
        best_l2,
        wall_time_s: settings.record_wall_time.then(|| start.elapsed().as_secs_f64()),
        error,
    }
}

/// Full grid. Rows are ordered by architecture, then `n`, then trial, with
/// raw-baseline rows first; failures are recorded, not dropped.
pub fn run_ablation(config: &ExperimentConfig, data: &ExperimentData) -> Result<Report> {
    config.validate()?;
    let settings = CellSettings {
        probe: &config.probe,
        extract: ExtractOptions { scaled: true, accumulation: config.accumulation },
        split_seed: config.base_seed,
        record_wall_time: config.record_wall_time,
    };
    let workers = config.workers.unwrap_or_else(rayon::current_num_threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let jobs: Vec<(usize, usize)> = (0..config.architectures.len())
        .flat_map(|a| (0..config.trials).map(move |t| (a, t)))
        .collect();
    let (raw, per_job) = pool.install(|| {
        let raw = config.raw_baseline.then(|| run_raw_baseline(data, 0, &settings));
        let per_job: Vec<Vec<ReportRow>> = jobs
            .par_iter()
            .map(|&(a, t)| run_arch_trial(data, &config.architectures[a], &config.n_grid, t, config.base_seed, &settings))
            .collect();
        (raw, per_job)
    });

    let mut rows = Vec::new();
    if let Some(raw) = raw {
        // the inputs do not depend on the network seed: every trial is the same
        for t in 0..config.trials {
            rows.push(ReportRow { trial: t, ..raw.clone() });
        }
    }
    for a in 0..config.architectures.len() {
        for ni in 0..config.n_grid.len() {
            for t in 0..config.trials {
                rows.push(per_job[a * config.trials + t][ni].clone());
            }
        }
    }
    Ok(Report::from_rows(data.name.clone(), rows))
}
