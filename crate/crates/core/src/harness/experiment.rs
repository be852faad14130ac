//! Experiment protocols over synthetic data.
//!
//! * `intra`: k-fold cross-validation on the biased domain; per-seed values
//!   are fold means.
//! * `cross`: train on the biased domain, test on the unbiased domain.
//! * `ablation`: joint training, detached + CE and detached + DAW under both
//!   protocols.
//! * `loss-study`: single-task models trained with CE, focal, GCE and DAW.
//!
//! Every `(method, seed, fold)` cell is an independent training run with its
//! own model, graph and RNG, so cells are dispatched through
//! [`Execution`](crate::exec::Execution) and collected in a fixed order.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{generate, kfold_indices, Dataset, Domain, GeneratorConfig};
use crate::error::{LabError, Result};
use crate::losses::{CurriculumSchedule, LossKind};
use crate::metrics::{MetricsReport, TaskMetrics};
use crate::model::Wiring;

use super::config::{LabConfig, TrainConfig};
use super::table::ResultsTable;
use super::train::train_with_eval;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Intra,
    Cross,
    Ablation,
    LossStudy,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Intra => "intra",
            Self::Cross => "cross",
            Self::Ablation => "ablation",
            Self::LossStudy => "loss-study",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intra" => Ok(Self::Intra),
            "cross" => Ok(Self::Cross),
            "ablation" => Ok(Self::Ablation),
            "loss-study" | "loss_study" => Ok(Self::LossStudy),
            other => Err(LabError::Config(format!("unknown experiment kind `{other}`"))),
        }
    }
}

/// A model/loss combination compared in a table.
#[derive(Clone, Debug, PartialEq)]
pub struct Method {
    pub name: String,
    pub wiring: Wiring,
    pub loss_a: LossKind,
    pub loss_b: LossKind,
}

impl Method {
    fn new(name: &str, wiring: Wiring, loss_a: LossKind, loss_b: LossKind) -> Self {
        Self { name: name.into(), wiring, loss_a, loss_b }
    }
}

/// Joint training (one shared encoder, CE), DETACH with CE, DETACH with DAW.
pub fn ablation_methods() -> Vec<Method> {
    vec![
        Method::new("joint_training", Wiring::Shared, LossKind::Ce, LossKind::Ce),
        Method::new("detach_ce", Wiring::Detached, LossKind::Ce, LossKind::Ce),
        Method::new("detach_daw", Wiring::Detached, LossKind::daw(), LossKind::daw()),
    ]
}

/// CE, focal (focus 2), GCE (q 0.7) and DAW over the full range `[0, 1]`.
pub fn loss_study_losses(decay_epochs: usize) -> Vec<LossKind> {
    let full_range = CurriculumSchedule { gamma_start: 1.0, gamma_end: 0.0, decay_epochs };
    vec![
        LossKind::Ce,
        LossKind::focal_default(),
        LossKind::gce_default(),
        LossKind::Daw { schedule: Some(full_range), alpha_grad: false },
    ]
}

const BASE_METRICS: [&str; 3] = ["auc", "f1", "acc"];
const CROSS_METRICS: [&str; 5] = ["auc", "f1", "acc", "rec", "pre"];

fn columns(metrics: &[&str]) -> Vec<String> {
    ["a", "b"].iter().flat_map(|t| metrics.iter().map(move |m| format!("{t}_{m}"))).collect()
}

fn metric(t: &TaskMetrics, name: &str) -> f64 {
    match name {
        "auc" => t.macro_auc,
        "f1" => t.macro_f1,
        "acc" => t.accuracy,
        "rec" => t.macro_recall,
        "pre" => t.macro_precision,
        _ => unreachable!("unknown metric column {name}"),
    }
}

fn task_values(t: Option<&TaskMetrics>, metrics: &[&str]) -> Vec<f64> {
    metrics.iter().map(|m| t.map_or(f64::NAN, |t| metric(t, m))).collect()
}

fn report_values(r: &MetricsReport, metrics: &[&str]) -> Vec<f64> {
    let mut v = task_values(r.task_a.as_ref(), metrics);
    v.extend(task_values(r.task_b.as_ref(), metrics));
    v
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n).collect()
}

/// One training run.
struct Cell<'a> {
    label: String,
    config: TrainConfig,
    train: &'a Dataset,
    test: &'a Dataset,
}

fn run_cells(config: &LabConfig, cells: &[Cell<'_>]) -> Result<Vec<MetricsReport>> {
    let results = config.experiment.execution.map(cells, |cell| {
        train_with_eval(&cell.config, cell.train, Some(cell.test)).and_then(|(_, record)| {
            record
                .final_reports
                .into_iter()
                .next()
                .map(|(_, r)| r)
                .ok_or_else(|| LabError::Contract("run produced no final report".into()))
        })
    });
    results
        .into_iter()
        .zip(cells)
        .map(|(r, cell)| {
            r.map_err(|e| LabError::Experiment { cell: cell.label.clone(), source: Box::new(e) })
        })
        .collect()
}

struct Plan<'c> {
    config: &'c LabConfig,
}

impl<'c> Plan<'c> {
    fn generator(&self, seed: u64) -> GeneratorConfig {
        GeneratorConfig { seed: self.config.generator.seed.wrapping_add(seed), ..self.config.generator.clone() }
    }

    /// Base training config for one seed, with model dims taken from the generator.
    fn train_config(&self, seed: u64, wiring: Wiring, loss_a: LossKind, loss_b: LossKind) -> TrainConfig {
        let mut t = self.config.train_config();
        let g = &self.config.generator;
        t.model.input_dim = g.d;
        t.model.classes_a = g.classes_a;
        t.model.classes_b = g.classes_b;
        t.model.wiring = wiring;
        t.loss_a = loss_a;
        t.loss_b = loss_b;
        t.seed = self.config.train.seed.wrapping_add(seed);
        t
    }

    fn seeds(&self) -> Result<&[u64]> {
        let s = &self.config.experiment.seeds;
        if s.is_empty() {
            return Err(LabError::Config("experiment needs at least one seed".into()));
        }
        Ok(s)
    }

    fn sizes(&self) -> (usize, usize) {
        (self.config.experiment.n_train, self.config.experiment.n_test)
    }

    /// Per-method, per-seed fold-mean metric vectors for the k-fold protocol.
    fn intra(&self, methods: &[Method], metrics: &[&str]) -> Result<Vec<Vec<(u64, Vec<f64>)>>> {
        let seeds = self.seeds()?;
        let (n_train, n_test) = self.sizes();
        let k = self.config.experiment.folds;
        let folds: Vec<Vec<(Dataset, Dataset)>> = seeds
            .iter()
            .map(|&s| {
                let ds = generate(&self.generator(s), n_train + n_test, Domain::Biased)?;
                Ok(kfold_indices(ds.len(), k, s)?
                    .into_iter()
                    .map(|(tr, te)| (ds.select(&tr), ds.select(&te)))
                    .collect())
            })
            .collect::<Result<_>>()?;

        let mut cells = Vec::new();
        for m in methods {
            for (si, &seed) in seeds.iter().enumerate() {
                for (fi, (train, test)) in folds[si].iter().enumerate() {
                    cells.push(Cell {
                        label: format!("intra/{}/seed={seed}/fold={fi}", m.name),
                        config: self.train_config(seed, m.wiring, m.loss_a, m.loss_b),
                        train,
                        test,
                    });
                }
            }
        }
        let reports = run_cells(self.config, &cells)?;
        let mut it = reports.iter();
        Ok(methods
            .iter()
            .map(|_| {
                seeds
                    .iter()
                    .map(|&seed| {
                        let rows: Vec<Vec<f64>> = (0..k)
                            .map(|_| report_values(it.next().expect("one report per cell"), metrics))
                            .collect();
                        (seed, mean_rows(&rows))
                    })
                    .collect()
            })
            .collect())
    }

    fn cross(&self, methods: &[Method], metrics: &[&str]) -> Result<Vec<Vec<(u64, Vec<f64>)>>> {
        let seeds = self.seeds()?;
        let (n_train, n_test) = self.sizes();
        let data: Vec<(Dataset, Dataset)> = seeds
            .iter()
            .map(|&s| {
                let g = self.generator(s);
                Ok((generate(&g, n_train, Domain::Biased)?, generate(&g, n_test, Domain::Unbiased)?))
            })
            .collect::<Result<_>>()?;
        let mut cells = Vec::new();
        for m in methods {
            for (&seed, (train, test)) in seeds.iter().zip(&data) {
                cells.push(Cell {
                    label: format!("cross/{}/seed={seed}", m.name),
                    config: self.train_config(seed, m.wiring, m.loss_a, m.loss_b),
                    train,
                    test,
                });
            }
        }
        let reports = run_cells(self.config, &cells)?;
        let mut it = reports.iter();
        Ok(methods
            .iter()
            .map(|_| seeds.iter().map(|&s| (s, report_values(it.next().expect("report"), metrics))).collect())
            .collect())
    }

    fn loss_study(&self) -> Result<ResultsTable> {
        let seeds = self.seeds()?;
        let (n_train, n_test) = self.sizes();
        let data: Vec<(Dataset, Dataset)> = seeds
            .iter()
            .map(|&s| Ok(generate(&self.generator(s), n_train + n_test, Domain::Biased)?.split_at(n_train)))
            .collect::<Result<_>>()?;
        let losses = loss_study_losses(self.config.schedule.decay_epochs);
        let mut cells = Vec::new();
        for loss in &losses {
            for (&seed, (train, test)) in seeds.iter().zip(&data) {
                for wiring in [Wiring::SingleTaskA, Wiring::SingleTaskB] {
                    cells.push(Cell {
                        label: format!("loss-study/{}/{wiring:?}/seed={seed}", loss.name()),
                        config: self.train_config(seed, wiring, *loss, *loss),
                        train,
                        test,
                    });
                }
            }
        }
        let reports = run_cells(self.config, &cells)?;
        let mut table = ResultsTable::new("Loss study (single-task, held-out)", columns(&BASE_METRICS));
        let mut it = reports.iter();
        for loss in &losses {
            let rows: Vec<(u64, Vec<f64>)> = seeds
                .iter()
                .map(|&s| {
                    let a = it.next().expect("task A report");
                    let b = it.next().expect("task B report");
                    let mut v = task_values(a.task_a.as_ref(), &BASE_METRICS);
                    v.extend(task_values(b.task_b.as_ref(), &BASE_METRICS));
                    (s, v)
                })
                .collect();
            table.push_group(loss.name(), "intra", &rows);
        }
        Ok(table)
    }
}

/// Runs one experiment protocol and returns its results table.
pub fn run_experiment(kind: ExperimentKind, config: &LabConfig) -> Result<ResultsTable> {
    config.generator.validate()?;
    config.train_config().validate()?;
    let plan = Plan { config };
    let methods = ablation_methods();
    match kind {
        ExperimentKind::Intra => {
            let groups = plan.intra(&methods, &BASE_METRICS)?;
            let mut t = ResultsTable::new(
                format!("Intra-domain, {}-fold cross-validation", config.experiment.folds),
                columns(&BASE_METRICS),
            );
            for (m, g) in methods.iter().zip(&groups) {
                t.push_group(&m.name, "intra", g);
            }
            Ok(t)
        }
        ExperimentKind::Cross => {
            let groups = plan.cross(&methods, &CROSS_METRICS)?;
            let mut t = ResultsTable::new("Cross-domain (train biased, test unbiased)", columns(&CROSS_METRICS));
            for (m, g) in methods.iter().zip(&groups) {
                t.push_group(&m.name, "cross", g);
            }
            Ok(t)
        }
        ExperimentKind::Ablation => {
            let intra = plan.intra(&methods, &BASE_METRICS)?;
            let cross = plan.cross(&methods, &BASE_METRICS)?;
            let mut t = ResultsTable::new("Ablation", columns(&BASE_METRICS));
            for (m, g) in methods.iter().zip(&intra) {
                t.push_group(&m.name, "intra", g);
            }
            for (m, g) in methods.iter().zip(&cross) {
                t.push_group(&m.name, "cross", g);
            }
            Ok(t)
        }
        ExperimentKind::LossStudy => plan.loss_study(),
    }
}
