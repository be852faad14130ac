//! Training loop, evaluation, histograms, checkpoints, experiments and the CLI.

use std::process::Command;

use detach_lab::data::{generate, Dataset, DatasetMeta, Domain, GeneratorConfig, Sample};
use detach_lab::exec::Execution;
use detach_lab::harness::{
    difficulty_histogram, evaluate, resume, run_experiment, train, train_with_eval, Checkpoint, ExperimentKind,
    LabConfig, TrainConfig, TrainState,
};
use detach_lab::losses::{CurriculumSchedule, LossKind};
use detach_lab::model::{DualStreamModel, ModelConfig, Wiring};
use detach_lab::LabError;

fn small_config(wiring: Wiring, epochs: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig { wiring, ..ModelConfig::default() },
        epochs,
        schedule: CurriculumSchedule { gamma_start: 1.0, gamma_end: 0.15, decay_epochs: (epochs * 4 / 5).max(1) },
        ..TrainConfig::default()
    }
}

fn data(n: usize, seed: u64, domain: Domain) -> Dataset {
    generate(&GeneratorConfig { seed, ..GeneratorConfig::default() }, n, domain).unwrap()
}

fn params_bits(model: &DualStreamModel) -> Vec<u64> {
    model.named_parameters().iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn training_is_deterministic() {
    let cfg = small_config(Wiring::Detached, 4);
    let ds = data(200, 0, Domain::Biased);
    let (m1, r1) = train(&cfg, &ds).unwrap();
    let (m2, r2) = train(&cfg, &ds).unwrap();
    assert_eq!(params_bits(&m1), params_bits(&m2));
    assert_eq!(r1, r2);
    let (m3, _) = train(&TrainConfig { seed: 1, ..cfg }, &ds).unwrap();
    assert_ne!(params_bits(&m1), params_bits(&m3));
}

#[test]
fn gamma_trace_follows_schedule_exactly() {
    let sched = CurriculumSchedule { gamma_start: 1.0, gamma_end: 0.15, decay_epochs: 400 };
    let cfg = TrainConfig {
        model: ModelConfig { input_dim: 16, hidden_dims: vec![4], feature_dim: 2, ..ModelConfig::default() },
        schedule: sched,
        epochs: 500,
        ..TrainConfig::default()
    };
    let (_, record) = train(&cfg, &data(32, 0, Domain::Biased)).unwrap();
    assert_eq!(record.epochs.len(), 500);
    for e in &record.epochs {
        assert_eq!(e.gamma, sched.gamma_at(e.epoch));
        assert_eq!(e.gamma_a, e.gamma);
        assert_eq!(e.gamma_b, e.gamma);
    }
    let at = |k: usize| record.epochs[k].gamma;
    assert_eq!(at(0), 1.0);
    assert!((at(100) - 0.7875).abs() < 1e-15);
    assert_eq!(at(400), 0.15);
    assert_eq!(at(499), 0.15);
}

#[test]
fn per_task_schedule_overrides_shared_one() {
    let own = CurriculumSchedule { gamma_start: 0.5, gamma_end: 0.0, decay_epochs: 2 };
    let cfg = TrainConfig {
        loss_b: LossKind::Daw { schedule: Some(own), alpha_grad: false },
        ..small_config(Wiring::Detached, 3)
    };
    let (_, record) = train(&cfg, &data(64, 0, Domain::Biased)).unwrap();
    let gb: Vec<f64> = record.epochs.iter().map(|e| e.gamma_b).collect();
    assert_eq!(gb, vec![0.5, 0.25, 0.0]);
    assert_eq!(record.epochs[1].gamma_a, cfg.schedule.gamma_at(1));
}

#[test]
fn recorded_total_loss_decomposes() {
    let (_, record) = train(&small_config(Wiring::Detached, 3), &data(200, 1, Domain::Biased)).unwrap();
    for e in &record.epochs {
        let sum = e.loss_a.unwrap() + e.loss_b.unwrap();
        assert!((e.loss_total - sum).abs() < 1e-12);
    }
}

#[test]
fn single_task_a_fits_training_data() {
    let ds = data(400, 2, Domain::Biased);
    let cfg = TrainConfig { loss_a: LossKind::Ce, ..small_config(Wiring::SingleTaskA, 60) };
    let (model, record) = train(&cfg, &ds).unwrap();
    assert!(model.encoder_b.is_none() && model.classifier_b.is_none());
    assert!(record.epochs.iter().all(|e| e.loss_b.is_none()));
    let report = evaluate(&model, &ds).unwrap();
    assert!(report.task_b.is_none());
    let acc = report.task_a.unwrap().accuracy;
    assert!(acc > 0.9, "train accuracy {acc}");
}

#[test]
fn training_accuracy_at_least_held_out_accuracy() {
    let mut gaps: Vec<f64> = (0..5)
        .map(|seed| {
            let ds = data(900, seed, Domain::Biased);
            let (tr, te) = ds.split_at(600);
            let (model, _) = train(&TrainConfig { seed, ..small_config(Wiring::Detached, 30) }, &tr).unwrap();
            let acc = |d: &Dataset| evaluate(&model, d).unwrap().task_a.unwrap().accuracy;
            acc(&tr) - acc(&te)
        })
        .collect();
    gaps.sort_by(f64::total_cmp);
    assert!(gaps[2] >= 0.0, "median train-minus-test accuracy {}", gaps[2]);
}

#[test]
fn untrained_model_is_at_chance_on_balanced_labels() {
    // All-zero parameters give uniform outputs; argmax then always picks
    // class 0, so accuracy equals the class-0 share of a uniform label draw.
    let gen = GeneratorConfig { class_priors_a: vec![0.25; 4], ..GeneratorConfig::default() };
    let ds = generate(&gen, 4000, Domain::Unbiased).unwrap();
    let mut model = DualStreamModel::build(ModelConfig::default(), 0).unwrap();
    for t in model.parameters_mut() {
        t.data_mut().fill(0.0);
    }
    let report = evaluate(&model, &ds).unwrap();
    let n = ds.len() as f64;
    for (acc, c) in [(report.task_a.unwrap().accuracy, 4.0), (report.task_b.unwrap().accuracy, 3.0)] {
        let p = 1.0 / c;
        assert!((acc - p).abs() <= 3.0 * (p * (1.0 - p) / n).sqrt(), "accuracy {acc} vs chance {p}");
    }
}

#[test]
fn evaluation_is_repeatable_and_checks_dimensions() {
    let ds = data(300, 3, Domain::Unbiased);
    let model = DualStreamModel::build(ModelConfig::default(), 5).unwrap();
    assert_eq!(evaluate(&model, &ds).unwrap(), evaluate(&model, &ds).unwrap());
    let narrow = DualStreamModel::build(ModelConfig { input_dim: 3, ..ModelConfig::default() }, 5).unwrap();
    assert!(matches!(evaluate(&narrow, &ds), Err(LabError::Shape { .. })));
}

#[test]
fn histogram_of_uniform_model_sits_in_the_chance_bin() {
    let ds = data(250, 4, Domain::Biased);
    let mut model = DualStreamModel::build(ModelConfig::default(), 0).unwrap();
    for t in model.parameters_mut() {
        t.data_mut().fill(0.0);
    }
    let h = difficulty_histogram(&model, &ds, 10).unwrap();
    // 1/4 falls in bin 2 ([0.2, 0.3)); 1/3 in bin 3 ([0.3, 0.4))
    assert_eq!(h.task_a.as_ref().unwrap()[2], 250);
    assert_eq!(h.task_b.as_ref().unwrap()[3], 250);
    assert!(matches!(difficulty_histogram(&model, &ds, 1), Err(LabError::Config(_))));
}

#[test]
fn histogram_of_confident_correct_model_sits_in_the_top_bin() {
    let samples = (0..50).map(|i| Sample { features: vec![i as f64 * 0.1; 16], grade_a: 0, grade_b: 1 }).collect();
    let meta = DatasetMeta { d: 16, classes_a: 4, classes_b: 3, provenance: "fixture".into() };
    let ds = Dataset { samples, meta, ambiguous: None };
    let mut model = DualStreamModel::build(ModelConfig::default(), 0).unwrap();
    for t in model.parameters_mut() {
        t.data_mut().fill(0.0);
    }
    model.classifier_a.as_mut().unwrap().bias.data_mut()[0] = 50.0;
    model.classifier_b.as_mut().unwrap().bias.data_mut()[1] = 50.0;
    let h = difficulty_histogram(&model, &ds, 4).unwrap();
    assert_eq!(h.task_a.unwrap(), vec![0, 0, 0, 50]);
    assert_eq!(h.task_b.unwrap(), vec![0, 0, 0, 50]);
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let cfg = small_config(Wiring::Detached, 6);
    let (tr, te) = data(300, 5, Domain::Biased).split_at(200);
    let (full, full_record) = train_with_eval(&cfg, &tr, Some(&te)).unwrap();

    let mut state = TrainState::fresh(&cfg).unwrap();
    let first = resume(&cfg, &mut state, &tr, None, 2).unwrap();
    let json = Checkpoint::from_state(&state).to_json();
    let mut restored = Checkpoint::from_json(&json).unwrap().train_state().unwrap();
    assert_eq!(restored, state);
    let rest = resume(&cfg, &mut restored, &tr, Some(&te), 6).unwrap();

    assert_eq!(params_bits(&restored.model), params_bits(&full.model));
    assert_eq!(restored.epochs_completed, 6);
    let gammas: Vec<f64> = first.epochs.iter().chain(&rest.epochs).map(|e| e.loss_total).collect();
    assert_eq!(gammas, full_record.epochs.iter().map(|e| e.loss_total).collect::<Vec<_>>());
    assert_eq!(rest.final_reports, full_record.final_reports);
}

#[test]
fn checkpoint_rejects_mismatched_parameters() {
    let model = DualStreamModel::build(ModelConfig::default(), 1).unwrap();
    let mut ck = Checkpoint::from_model(&model);
    assert_eq!(ck.model().unwrap(), model);
    ck.params[0].data.pop();
    assert!(matches!(ck.model(), Err(LabError::Checkpoint(_))));
    assert!(Checkpoint::from_json("{\"format\":\"other\"}").is_err());
}

#[test]
fn oversized_batch_and_grade_overflow_are_rejected() {
    let ds = data(10, 0, Domain::Biased);
    let cfg = TrainConfig { batch_size: 11, ..small_config(Wiring::Detached, 1) };
    assert!(matches!(train(&cfg, &ds), Err(LabError::Config(_))));
    let cfg = TrainConfig {
        model: ModelConfig { classes_a: 2, ..ModelConfig::default() },
        ..small_config(Wiring::Detached, 1)
    };
    let err = train(&cfg, &data(200, 0, Domain::Biased)).unwrap_err();
    assert!(matches!(err, LabError::Index { .. }), "{err:?}");
}

fn tiny_lab() -> LabConfig {
    let mut c = LabConfig::default();
    c.train.epochs = 3;
    c.schedule.decay_epochs = 2;
    c.experiment.seeds = vec![0, 1];
    c.experiment.n_train = 120;
    c.experiment.n_test = 60;
    c.experiment.folds = 3;
    c
}

#[test]
fn experiment_tables_have_the_documented_shape() {
    let cfg = tiny_lab();
    let ablation = run_experiment(ExperimentKind::Ablation, &cfg).unwrap();
    assert_eq!(ablation.methods(), vec!["joint_training", "detach_ce", "detach_daw"]);
    assert_eq!(ablation.columns, vec!["a_auc", "a_f1", "a_acc", "b_auc", "b_f1", "b_acc"]);
    // 3 methods x 2 protocols x (2 seeds + median)
    assert_eq!(ablation.rows.len(), 18);

    let cross = run_experiment(ExperimentKind::Cross, &cfg).unwrap();
    for col in ["a_rec", "a_pre", "b_rec", "b_pre"] {
        assert!(cross.column(col).is_some(), "{col}");
    }
    let study = run_experiment(ExperimentKind::LossStudy, &cfg).unwrap();
    assert_eq!(study.methods(), vec!["CE", "FL", "GCE", "DAW"]);
    let csv = study.to_csv();
    assert!(csv.starts_with("method,protocol,seed,a_auc,"));
    assert!(csv.lines().any(|l| l.starts_with("DAW,intra,median,")));
}

#[test]
fn intra_protocol_averages_fold_metrics() {
    let cfg = tiny_lab();
    let table = run_experiment(ExperimentKind::Intra, &cfg).unwrap();
    assert_eq!(table.rows.len(), 9);
    assert!(table.rows.iter().all(|r| r.values.iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn execution_modes_produce_identical_tables() {
    let mut cfg = tiny_lab();
    cfg.experiment.execution = Execution::Sequential;
    let seq = run_experiment(ExperimentKind::Cross, &cfg).unwrap().to_csv();
    cfg.experiment.execution = Execution::Parallel;
    assert_eq!(seq, run_experiment(ExperimentKind::Cross, &cfg).unwrap().to_csv());
}

#[test]
fn failing_cell_is_named() {
    let mut cfg = tiny_lab();
    cfg.train.batch_size = 500;
    match run_experiment(ExperimentKind::Cross, &cfg) {
        Err(LabError::Experiment { cell, .. }) => assert!(cell.starts_with("cross/joint_training/seed=0"), "{cell}"),
        other => panic!("expected a cell failure, got {other:?}"),
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_detach-lab")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn cli_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    std::fs::write(p("lab.toml"), "[train]\nepochs = 2\n[schedule]\ndecay_epochs = 2\n").unwrap();

    ok(&["generate", "--config", &p("lab.toml"), "--n", "120", "--domain", "biased", "--out", &p("train.csv")]);
    ok(&["generate", "--n", "80", "--domain", "unbiased", "--out", &p("test.csv")]);
    ok(&["train", "--config", &p("lab.toml"), "--data", &p("train.csv"), "--out", &p("m.json"), "--log", &p("log.csv")]);
    let log = std::fs::read_to_string(p("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch,gamma,"));

    let stdout = ok(&["eval", "--ckpt", &p("m.json"), "--data", &p("test.csv"), "--out", &p("eval.csv")]);
    let eval = std::fs::read_to_string(p("eval.csv")).unwrap();
    assert_eq!(stdout, eval);
    assert_eq!(eval.lines().count(), 3);

    ok(&["histogram", "--ckpt", &p("m.json"), "--data", &p("test.csv"), "--bins", "4", "--out", &p("h.csv")]);
    let hist = std::fs::read_to_string(p("h.csv")).unwrap();
    let total: u64 = hist.lines().skip(1).filter(|l| l.starts_with("a,")).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 80);

    let bad = cli(&["train", "--data", &p("missing.csv"), "--out", &p("x.json"), "--log", &p("x.csv")]);
    assert!(!bad.status.success());
}

#[test]
fn cli_experiment_writes_csv_and_text() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lab.toml");
    std::fs::write(&cfg, tiny_lab().to_toml_string()).unwrap();
    let out = dir.path().join("out");
    ok(&["experiment", "--kind", "loss-study", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    let csv = std::fs::read_to_string(out.join("loss-study.csv")).unwrap();
    let txt = std::fs::read_to_string(out.join("loss-study.txt")).unwrap();
    assert!(csv.starts_with("method,protocol,seed,"));
    assert!(txt.contains("DAW"));
    assert!(!cli(&["experiment", "--kind", "table9", "--out-dir", out.to_str().unwrap()]).status.success());
}
