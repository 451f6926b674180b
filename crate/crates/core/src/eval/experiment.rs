//! STL-versus-MTL comparison: trains every configured run, scores it on the
//! test split and aggregates the runs of each mode.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalReport, Summary};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Split};
use crate::net::train::{delineation_confusion, load_split, run_trainer, with_workers, EpochRecord, TrainConfig, Trainer};
use crate::net::{Mode, MtlNetwork};

pub const MODEL_NAME: &str = "U-Net-S (scratch)";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "table.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub mode: Mode,
    pub seed: u64,
}

/// The three-seed STL and MTL runs of the comparison.
pub fn standard_runs(seeds: &[u64]) -> Vec<RunSpec> {
    [Mode::Stl, Mode::Mtl]
        .into_iter()
        .flat_map(|mode| seeds.iter().map(move |&seed| RunSpec { mode, seed }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: Mode,
    pub seed: u64,
    /// Set when training or evaluation failed; the other fields are then empty.
    pub error: Option<String>,
    pub test: Option<EvalReport>,
    pub best_epoch: Option<usize>,
    pub best_val_f1: Option<f64>,
    pub params: usize,
    pub mean_epoch_seconds: Option<f64>,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub mode: Mode,
    pub model: String,
    pub runs: usize,
    pub failed_runs: usize,
    pub f1: Option<Summary>,
    pub iou: Option<Summary>,
    pub burned_iou: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub mode: Mode,
    pub model: String,
    pub params: usize,
    /// Parameters added over the STL network.
    pub extra_params: usize,
    pub epoch_seconds: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: TrainConfig,
    pub runs: Vec<RunResult>,
    pub table: Vec<TableRow>,
    pub costs: Vec<CostRow>,
}

impl ExperimentReport {
    pub fn row(&self, mode: Mode) -> Option<&TableRow> {
        self.table.iter().find(|r| r.mode == mode)
    }

    pub fn cost(&self, mode: Mode) -> Option<&CostRow> {
        self.costs.iter().find(|r| r.mode == mode)
    }

    /// Plain-text rendering of both tables.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let cell = |v: &Option<Summary>| v.map_or("n/a".to_string(), |x| x.to_string());
        let _ = writeln!(s, "Delineation on the test split (macro scores in %, mean ± sample std over seeds)");
        let _ = writeln!(s, "{:<5} {:<20} {:<26} {:<26} {:<26} {:>4}", "Mode", "Model", "F1", "IoU", "Burned IoU", "Runs");
        for r in &self.table {
            let runs = if r.failed_runs > 0 {
                format!("{} ({} failed)", r.runs, r.failed_runs)
            } else {
                r.runs.to_string()
            };
            let _ = writeln!(
                s,
                "{:<5} {:<20} {:<26} {:<26} {:<26} {:>4}",
                r.mode.to_string().to_uppercase(),
                r.model,
                cell(&r.f1),
                cell(&r.iou),
                cell(&r.burned_iou),
                runs
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Computational cost");
        let _ = writeln!(s, "{:<5} {:<20} {:>10} {:>12} {:>22}", "Mode", "Model", "Params", "Extra", "Epoch time (s)");
        for c in &self.costs {
            let t = c
                .epoch_seconds
                .map_or("n/a".to_string(), |x| format!("{:.1} ± {:.1}", x.mean, x.std));
            let _ = writeln!(
                s,
                "{:<5} {:<20} {:>10} {:>12} {:>22}",
                c.mode.to_string().to_uppercase(),
                c.model,
                c.params,
                format!("+{}", c.extra_params),
                t
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Runs");
        for r in &self.runs {
            match (&r.test, &r.error) {
                (Some(t), _) => {
                    let _ = writeln!(
                        s,
                        "  {} seed {:<6} F1 {:.4}  IoU {:.4}  best epoch {}",
                        r.mode.to_string().to_uppercase(),
                        r.seed,
                        t.macro_f1,
                        t.macro_iou,
                        r.best_epoch.map_or("-".into(), |e| (e + 1).to_string())
                    );
                }
                (None, e) => {
                    let _ = writeln!(
                        s,
                        "  {} seed {:<6} failed: {}",
                        r.mode.to_string().to_uppercase(),
                        r.seed,
                        e.as_deref().unwrap_or("unknown error")
                    );
                }
            }
        }
        s
    }
}

fn check_runs(runs: &[RunSpec]) -> Result<()> {
    if runs.is_empty() {
        return Err(Error::Config("an experiment needs at least one run".into()));
    }
    let mut seen = BTreeSet::new();
    for r in runs {
        if !seen.insert((r.mode == Mode::Mtl, r.seed)) {
            return Err(Error::Config(format!("seed {} is repeated for {}", r.seed, r.mode)));
        }
    }
    Ok(())
}

/// Aggregates finished runs into the comparison and cost tables.
pub fn aggregate(config: &TrainConfig, runs: Vec<RunResult>) -> ExperimentReport {
    let modes: Vec<Mode> = [Mode::Stl, Mode::Mtl]
        .into_iter()
        .filter(|m| runs.iter().any(|r| r.mode == *m))
        .collect();
    let stl_params = MtlNetwork::new(config.bands.len(), Mode::Stl, 0).param_count();
    let mut table = Vec::new();
    let mut costs = Vec::new();
    for mode in modes {
        let of_mode: Vec<&RunResult> = runs.iter().filter(|r| r.mode == mode).collect();
        let tests: Vec<&EvalReport> = of_mode.iter().filter_map(|r| r.test.as_ref()).collect();
        let summary = |f: &dyn Fn(&EvalReport) -> Option<f64>| Summary::of(&tests.iter().filter_map(|t| f(t)).collect::<Vec<_>>());
        table.push(TableRow {
            mode,
            model: MODEL_NAME.into(),
            runs: of_mode.len(),
            failed_runs: of_mode.len() - tests.len(),
            f1: summary(&|t| Some(t.macro_f1)),
            iou: summary(&|t| Some(t.macro_iou)),
            burned_iou: summary(&|t| t.burned_iou),
        });
        let params = MtlNetwork::new(config.bands.len(), mode, 0).param_count();
        costs.push(CostRow {
            mode,
            model: MODEL_NAME.into(),
            params,
            extra_params: params - stl_params,
            epoch_seconds: Summary::of(&of_mode.iter().filter_map(|r| r.mean_epoch_seconds).collect::<Vec<_>>()),
        });
    }
    ExperimentReport {
        config: config.clone(),
        runs,
        table,
        costs,
    }
}

fn failed(spec: RunSpec, params: usize, e: Error) -> RunResult {
    RunResult {
        mode: spec.mode,
        seed: spec.seed,
        error: Some(e.to_string()),
        test: None,
        best_epoch: None,
        best_val_f1: None,
        params,
        mean_epoch_seconds: None,
        history: Vec::new(),
    }
}

/// Trains and scores every run. A failing run is recorded and the remaining
/// runs still execute. With `out_dir`, each run's checkpoints go to
/// `<out>/<mode>-seed<seed>/` and the tables to `report.json`/`table.txt`.
pub fn run_experiment(
    manifest: &DatasetManifest,
    base_dir: &Path,
    base: &TrainConfig,
    runs: &[RunSpec],
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    check_runs(runs)?;
    base.validate()?;
    let report = with_workers(base.workers, || -> Result<ExperimentReport> {
        let train = load_split(manifest, base_dir, Split::Train, &base.bands)?;
        let val = load_split(manifest, base_dir, Split::Val, &base.bands)?;
        let test = load_split(manifest, base_dir, Split::Test, &base.bands)?;
        if test.is_empty() {
            return Err(Error::Config("the test split is empty".into()));
        }
        let mut results = Vec::with_capacity(runs.len());
        for &spec in runs {
            let config = TrainConfig {
                mode: spec.mode,
                seed: spec.seed,
                ..base.clone()
            };
            let params = MtlNetwork::new(config.bands.len(), spec.mode, 0).param_count();
            let run_dir = out_dir.map(|d| d.join(format!("{}-seed{}", spec.mode, spec.seed)));
            let outcome = Trainer::new(config.clone(), &train, &val).and_then(|mut t| run_trainer(&mut t, Vec::new(), run_dir.as_deref()));
            let result = outcome.and_then(|o| {
                let cm = delineation_confusion(&o.best, &test, &config.tiler)?;
                let epochs = o.history.len().max(1) as f64;
                Ok(RunResult {
                    mode: spec.mode,
                    seed: spec.seed,
                    error: None,
                    test: Some(evaluate(&cm)?),
                    best_epoch: o.best_epoch,
                    best_val_f1: o.best_val_f1,
                    params,
                    mean_epoch_seconds: Some(o.history.iter().map(|h| h.train_seconds).sum::<f64>() / epochs),
                    history: o.history,
                })
            });
            let result = result.unwrap_or_else(|e| {
                eprintln!("run {} seed {} failed: {e}", spec.mode, spec.seed);
                failed(spec, params, e)
            });
            results.push(result);
        }
        Ok(aggregate(base, results))
    })??;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(REPORT_FILE);
        std::fs::write(&path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
        let path = dir.join(TABLE_FILE);
        std::fs::write(&path, report.to_text()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::ConfusionMatrix;

    fn run(mode: Mode, seed: u64, f1_counts: [u64; 4]) -> RunResult {
        let cm = ConfusionMatrix {
            k: 2,
            counts: f1_counts.to_vec(),
        };
        RunResult {
            mode,
            seed,
            error: None,
            test: Some(evaluate(&cm).unwrap()),
            best_epoch: Some(0),
            best_val_f1: Some(0.5),
            params: 0,
            mean_epoch_seconds: Some(seed as f64),
            history: Vec::new(),
        }
    }

    #[test]
    fn single_run_row() {
        let cfg = TrainConfig::default();
        let r = aggregate(&cfg, vec![run(Mode::Stl, 1, [5, 1, 2, 4])]);
        assert_eq!(r.table.len(), 1);
        let f1 = r.table[0].f1.unwrap();
        assert_eq!((f1.n, f1.std), (1, 0.0));
        assert!(r.to_text().contains("single run"));
    }

    #[test]
    fn mean_of_three_seeds() {
        let cfg = TrainConfig::default();
        let runs = vec![
            run(Mode::Mtl, 1, [5, 1, 2, 4]),
            run(Mode::Mtl, 2, [6, 0, 1, 5]),
            run(Mode::Mtl, 3, [4, 2, 2, 4]),
        ];
        let direct: Vec<f64> = runs.iter().map(|r| r.test.as_ref().unwrap().macro_f1).collect();
        let r = aggregate(&cfg, runs);
        let f1 = r.row(Mode::Mtl).unwrap().f1.unwrap();
        assert!((f1.mean - direct.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        assert_eq!(r.cost(Mode::Mtl).unwrap().extra_params, 187);
        assert!(r.row(Mode::Stl).is_none());
    }

    #[test]
    fn failed_runs_are_reported() {
        let cfg = TrainConfig::default();
        let runs = vec![run(Mode::Stl, 1, [5, 1, 2, 4]), failed(RunSpec { mode: Mode::Stl, seed: 2 }, 10, Error::Config("boom".into()))];
        let r = aggregate(&cfg, runs);
        assert_eq!(r.table[0].failed_runs, 1);
        assert_eq!(r.table[0].f1.unwrap().n, 1);
        assert!(r.to_text().contains("boom"));
    }

    #[test]
    fn run_lists_are_validated() {
        assert!(check_runs(&[]).is_err());
        assert!(check_runs(&[RunSpec { mode: Mode::Stl, seed: 1 }, RunSpec { mode: Mode::Stl, seed: 1 }]).is_err());
        assert!(check_runs(&standard_runs(&[1, 2, 3])).is_ok());
    }
}
