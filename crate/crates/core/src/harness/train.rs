use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{Dataset, Task};
use crate::error::{shape_err, LabError, Result};
use crate::losses::loss_value;
use crate::metrics::{MetricsReport, TaskMetrics};
use crate::model::DualStreamModel;
use crate::optim::AdamState;

use super::config::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Shared schedule value for this epoch.
    pub gamma: f64,
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub loss_a: Option<f64>,
    pub loss_b: Option<f64>,
    /// Mean over batches of `loss_a + loss_b`.
    pub loss_total: f64,
    pub eval: Option<MetricsReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    /// Final reports keyed by evaluation-set name.
    pub final_reports: Vec<(String, MetricsReport)>,
}

/// Model, optimizer and progress; enough to resume training exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: DualStreamModel,
    pub optimizer: AdamState,
    pub epochs_completed: usize,
}

impl TrainState {
    pub fn fresh(config: &TrainConfig) -> Result<Self> {
        let model = DualStreamModel::build(config.model.clone(), config.seed)?;
        let optimizer = AdamState::new(config.adam, model.named_parameters().into_iter().map(|(_, t)| t))?;
        Ok(Self { model, optimizer, epochs_completed: 0 })
    }
}

fn check_dataset(model: &DualStreamModel, data: &Dataset) -> Result<()> {
    let cfg = &model.config;
    if data.meta.d != cfg.input_dim {
        return Err(shape_err("dataset", format!("d = {}", cfg.input_dim), data.meta.d));
    }
    for (task, classes, present) in [
        (Task::A, cfg.classes_a, cfg.wiring.has_task_a()),
        (Task::B, cfg.classes_b, cfg.wiring.has_task_b()),
    ] {
        if let Some(&g) = data.grades(task).iter().find(|&&g| g >= classes) {
            if present {
                return Err(LabError::Index { op: "dataset grade", index: g, bound: classes });
            }
        }
    }
    Ok(())
}

/// Per-epoch shuffle, derived from the run seed and the epoch index only.
fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Trains from a fresh model seeded by `config.seed`.
pub fn train(config: &TrainConfig, train_set: &Dataset) -> Result<(DualStreamModel, RunRecord)> {
    let (state, record) = train_with_eval(config, train_set, None)?;
    Ok((state.model, record))
}

/// Trains from scratch, evaluating on `eval_set` every `eval_every` epochs and at the end.
pub fn train_with_eval(
    config: &TrainConfig,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
) -> Result<(TrainState, RunRecord)> {
    let mut state = TrainState::fresh(config)?;
    let record = resume(config, &mut state, train_set, eval_set, config.epochs)?;
    Ok((state, record))
}

/// Continues training `state` until `until_epoch` epochs are complete.
pub fn resume(
    config: &TrainConfig,
    state: &mut TrainState,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    until_epoch: usize,
) -> Result<RunRecord> {
    config.validate()?;
    if state.model.config != config.model {
        return Err(LabError::Config("model in state does not match config".into()));
    }
    check_dataset(&state.model, train_set)?;
    if let Some(e) = eval_set {
        check_dataset(&state.model, e)?;
    }
    if train_set.is_empty() {
        return Err(LabError::EmptyDataset);
    }
    if config.batch_size > train_set.len() {
        return Err(LabError::Config(format!(
            "batch_size {} exceeds dataset size {}",
            config.batch_size,
            train_set.len()
        )));
    }

    let wiring = config.model.wiring;
    let labels_a = train_set.grades(Task::A);
    let labels_b = train_set.grades(Task::B);
    let sched_a = config.loss_a.schedule_or(config.schedule);
    let sched_b = config.loss_b.schedule_or(config.schedule);
    let mut record = RunRecord::default();

    for epoch in state.epochs_completed..until_epoch {
        let gamma = config.schedule.gamma_at(epoch);
        let (gamma_a, gamma_b) = (sched_a.gamma_at(epoch), sched_b.gamma_at(epoch));
        let order = epoch_order(config.seed, epoch, train_set.len());
        let (mut sum_a, mut sum_b, mut sum_total) = (0.0, 0.0, 0.0);
        let mut batches = 0usize;

        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let abort = |message: String| LabError::Training { epoch, batch, message };
            let mut g = Graph::new();
            let params = state.model.bind(&mut g);
            let x = g.constant(train_set.features_tensor(idx)?);
            let logits = state.model.forward(&mut g, &params, x)?;
            let pick = |labels: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();

            let la = match logits.a {
                Some(z) => Some(loss_value(&mut g, config.loss_a, z, &pick(&labels_a), gamma_a)?),
                None => None,
            };
            let lb = match logits.b {
                Some(z) => Some(loss_value(&mut g, config.loss_b, z, &pick(&labels_b), gamma_b)?),
                None => None,
            };
            let total = match (la, lb) {
                (Some(a), Some(b)) => g.add(a, b)?,
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => return Err(abort("model has no task heads".into())),
            };
            let scalar = |v| g.value(v).data()[0];
            let total_value = scalar(total);
            if !total_value.is_finite() {
                return Err(abort(format!("non-finite loss {total_value}")));
            }
            sum_a += la.map_or(0.0, scalar);
            sum_b += lb.map_or(0.0, scalar);
            sum_total += total_value;
            batches += 1;

            g.backward(total)?;
            let grads = params.grads(&g);
            state
                .optimizer
                .step(&mut state.model.parameters_mut(), &grads)
                .map_err(|e| abort(e.to_string()))?;
        }
        state.epochs_completed = epoch + 1;

        let eval = match eval_set {
            Some(e) if (epoch + 1) % config.eval_every == 0 || epoch + 1 == until_epoch => {
                Some(evaluate(&state.model, e)?)
            }
            _ => None,
        };
        let nb = batches as f64;
        record.epochs.push(EpochRecord {
            epoch,
            gamma,
            gamma_a,
            gamma_b,
            loss_a: wiring.has_task_a().then_some(sum_a / nb),
            loss_b: wiring.has_task_b().then_some(sum_b / nb),
            loss_total: sum_total / nb,
            eval,
        });
        log::debug!("epoch {epoch}: gamma {gamma:.4}, loss {:.5}", sum_total / nb);
    }
    if let Some(e) = eval_set {
        let report = match record.epochs.last().and_then(|r| r.eval.clone()) {
            Some(r) => r,
            None => evaluate(&state.model, e)?,
        };
        record.final_reports.push((e.meta.provenance.clone(), report));
    }
    Ok(record)
}

/// Single deterministic pass over `dataset`; reports every task the model has.
pub fn evaluate(model: &DualStreamModel, dataset: &Dataset) -> Result<MetricsReport> {
    check_dataset(model, dataset)?;
    if dataset.is_empty() {
        return Err(LabError::EmptyDataset);
    }
    let (pa, pb) = model.predict_proba(&dataset.all_features()?)?;
    let report = |p: Option<crate::autodiff::Tensor>, task: Task, classes: usize| {
        p.map(|p| TaskMetrics::from_scores(p.data(), classes, &dataset.grades(task)))
            .transpose()
    };
    Ok(MetricsReport {
        task_a: report(pa, Task::A, model.config.classes_a)?,
        task_b: report(pb, Task::B, model.config.classes_b)?,
    })
}

/// Counts of the true-class probability `p_t` over `bins` uniform bins of `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyHistogram {
    pub bins: usize,
    pub task_a: Option<Vec<u64>>,
    pub task_b: Option<Vec<u64>>,
}

impl DifficultyHistogram {
    /// Bin edges `[lo, hi)` (the last bin also includes 1.0).
    pub fn edges(&self, bin: usize) -> (f64, f64) {
        (bin as f64 / self.bins as f64, (bin + 1) as f64 / self.bins as f64)
    }
}

fn bin_of(p: f64, bins: usize) -> usize {
    ((p * bins as f64).floor() as usize).min(bins - 1)
}

pub fn difficulty_histogram(model: &DualStreamModel, dataset: &Dataset, bins: usize) -> Result<DifficultyHistogram> {
    if bins < 2 {
        return Err(LabError::Config("histogram needs at least two bins".into()));
    }
    check_dataset(model, dataset)?;
    let (pa, pb) = model.predict_proba(&dataset.all_features()?)?;
    let hist = |p: Option<crate::autodiff::Tensor>, task: Task| {
        p.map(|p| {
            let c = p.shape()[1];
            let mut counts = vec![0u64; bins];
            for (row, &label) in p.data().chunks(c).zip(&dataset.grades(task)) {
                counts[bin_of(row[label], bins)] += 1;
            }
            counts
        })
    };
    Ok(DifficultyHistogram { bins, task_a: hist(pa, Task::A), task_b: hist(pb, Task::B) })
}
