//! Experiment matrix runner, report emitters, and the weighting benchmark
//! behind the `mtl` command-line tool.

mod bench;
mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

pub use bench::{bench_weighting, BenchReport, BenchRow, BENCH_HEADER};
pub use config::{DatasetConfig, DatasetSource, ExperimentConfig, SchemeName};
pub use report::{
    loss_curve_csv, loss_curves_svg, metrics_csv, AccuracyTable, LossCurve, METRICS_HEADER,
};

use crate::error::{Error, Result};
use crate::model::{MlpConfig, MultiHeadModel};
use crate::taskdata::MultiTaskDataset;
use crate::trainer::{train_mtl, train_stl, RunResult, TrainConfig};

/// One cell of the matrix. STL expands to one run per task.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSpec {
    pub scheme: SchemeName,
    pub seed: u64,
    pub task: Option<usize>,
}

impl RunSpec {
    pub fn file_stem(&self) -> String {
        match self.task {
            Some(k) => format!("{}_task{k}_seed{}", self.scheme, self.seed),
            None => format!("{}_seed{}", self.scheme, self.seed),
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub result: std::result::Result<RunResult, String>,
}

#[derive(Debug)]
pub struct ExperimentSummary {
    pub outcomes: Vec<RunOutcome>,
    pub table: AccuracyTable,
}

impl ExperimentSummary {
    pub fn failures(&self) -> impl Iterator<Item = (&RunSpec, &str)> {
        self.outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().err().map(|e| (&o.spec, e.as_str())))
    }

    pub fn all_failed(&self) -> bool {
        self.outcomes.iter().all(|o| o.result.is_err())
    }
}

pub fn plan_runs(config: &ExperimentConfig, n_tasks: usize) -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for &scheme in &config.schemes {
        for &seed in &config.seeds {
            if scheme == SchemeName::Stl {
                specs.extend((0..n_tasks).map(|k| RunSpec {
                    scheme,
                    seed,
                    task: Some(k),
                }));
            } else {
                specs.push(RunSpec {
                    scheme,
                    seed,
                    task: None,
                });
            }
        }
    }
    specs
}

pub fn execute_run(
    config: &ExperimentConfig,
    spec: RunSpec,
    train: &MultiTaskDataset,
    test: &MultiTaskDataset,
) -> Result<RunResult> {
    let base = TrainConfig {
        seed: spec.seed,
        ..config.train.clone()
    };
    match (spec.scheme.weighting(&config.train.weighting), spec.task) {
        (None, Some(k)) => train_stl(&base, train, test, k, &config.trunk_widths),
        (Some(weighting), None) => {
            let mut model = MultiHeadModel::init(MlpConfig {
                input_dim: train.dim(),
                trunk_widths: config.trunk_widths.clone(),
                head_class_counts: train.task_class_counts.clone(),
                init_seed: spec.seed,
            })?;
            train_mtl(&TrainConfig { weighting, ..base }, train, test, &mut model)
        }
        _ => Err(Error::Contract(format!("malformed run spec {spec:?}"))),
    }
}

/// Runs every cell on at most `jobs` threads; results come back in plan order.
pub fn run_matrix(
    config: &ExperimentConfig,
    train: &MultiTaskDataset,
    test: &MultiTaskDataset,
    jobs: usize,
) -> Result<Vec<RunOutcome>> {
    use rayon::prelude::*;
    let specs = plan_runs(config, train.n_tasks());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        specs
            .par_iter()
            .map(|&spec| RunOutcome {
                spec,
                result: execute_run(config, spec, train, test).map_err(|e| e.to_string()),
            })
            .collect()
    }))
}

/// Mean-over-seeds final accuracy, one row per scheme and one column per task.
pub fn accuracy_table(
    config: &ExperimentConfig,
    task_class_counts: &[usize],
    outcomes: &[RunOutcome],
) -> AccuracyTable {
    let columns = task_class_counts
        .iter()
        .enumerate()
        .map(|(k, c)| format!("task{k} ({c}-class)"))
        .collect();
    let rows = config
        .schemes
        .iter()
        .map(|&scheme| {
            let cells = (0..task_class_counts.len())
                .map(|k| {
                    let vals: Vec<f64> = outcomes
                        .iter()
                        .filter(|o| o.spec.scheme == scheme)
                        .filter_map(|o| o.result.as_ref().ok())
                        .filter_map(|r| {
                            r.tasks
                                .iter()
                                .position(|&t| t == k)
                                .map(|col| r.final_accuracy[col])
                        })
                        .collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect();
            (scheme.to_string(), cells)
        })
        .collect();
    AccuracyTable { columns, rows }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// Executes the whole matrix and writes every report under `out_dir`:
///
/// - `config.json` (the input document, verbatim)
/// - `metrics/<scheme>[_task<k>]_seed<s>.csv` per run
/// - `accuracy.csv`, `accuracy.md`
/// - `loss_curves/<scheme>.csv` and `loss_curves.svg`
/// - `failures.csv`
///
/// A failing run is recorded and the rest of the matrix continues.
pub fn run_experiment(
    config: &ExperimentConfig,
    raw_config: &str,
    out_dir: &Path,
    jobs: usize,
) -> Result<ExperimentSummary> {
    config.validate()?;
    let (train, test) = config.build_data()?;
    fs::create_dir_all(out_dir)?;
    write(&out_dir.join("config.json"), raw_config)?;

    let outcomes = run_matrix(config, &train, &test, jobs)?;

    let mut failures = String::from("run,error\n");
    for o in &outcomes {
        match &o.result {
            Ok(r) => write(
                &out_dir
                    .join("metrics")
                    .join(format!("{}.csv", o.spec.file_stem())),
                &metrics_csv(r),
            )?,
            Err(e) => failures.push_str(&format!(
                "{},\"{}\"\n",
                o.spec.file_stem(),
                e.replace('"', "'")
            )),
        }
    }
    write(&out_dir.join("failures.csv"), &failures)?;

    let table = accuracy_table(config, &train.task_class_counts, &outcomes);
    write(&out_dir.join("accuracy.csv"), &table.to_csv())?;
    write(&out_dir.join("accuracy.md"), &table.to_markdown())?;

    let mut curves = Vec::new();
    for &scheme in &config.schemes {
        let runs: Vec<&RunResult> = outcomes
            .iter()
            .filter(|o| o.spec.scheme == scheme)
            .filter_map(|o| o.result.as_ref().ok())
            .collect();
        if let Some(curve) = LossCurve::average(scheme.as_str(), &runs) {
            write(
                &out_dir.join("loss_curves").join(format!("{scheme}.csv")),
                &loss_curve_csv(&curve),
            )?;
            curves.push(curve);
        }
    }
    write(&out_dir.join("loss_curves.svg"), &loss_curves_svg(&curves))?;

    Ok(ExperimentSummary { outcomes, table })
}

/// Resolves the output directory: explicit argument, then the config's own.
pub fn output_dir(config: &ExperimentConfig, cli: Option<PathBuf>) -> Result<PathBuf> {
    cli.or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::config("no output directory given (use --out or output_dir)"))
}
