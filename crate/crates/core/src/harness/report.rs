//! CSV renderings for run logs, evaluation reports and histograms.

use crate::metrics::{MetricsReport, TaskMetrics};

use super::train::{DifficultyHistogram, RunRecord};

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn write(records: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// One row per epoch; evaluation columns are empty on epochs without evaluation.
pub fn run_record_csv(record: &RunRecord) -> String {
    let header = [
        "epoch", "gamma", "gamma_a", "gamma_b", "loss_a", "loss_b", "loss_total", "eval_a_auc", "eval_a_f1",
        "eval_a_acc", "eval_b_auc", "eval_b_f1", "eval_b_acc",
    ];
    let mut rows = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for e in &record.epochs {
        let task = |t: Option<&TaskMetrics>| {
            [t.map(|t| t.macro_auc), t.map(|t| t.macro_f1), t.map(|t| t.accuracy)].map(opt)
        };
        let (a, b) = match &e.eval {
            Some(r) => (task(r.task_a.as_ref()), task(r.task_b.as_ref())),
            None => (task(None), task(None)),
        };
        let mut row = vec![
            e.epoch.to_string(),
            e.gamma.to_string(),
            e.gamma_a.to_string(),
            e.gamma_b.to_string(),
            opt(e.loss_a),
            opt(e.loss_b),
            e.loss_total.to_string(),
        ];
        row.extend(a);
        row.extend(b);
        rows.push(row);
    }
    write(rows)
}

/// `task,n,accuracy,macro_f1,macro_auc,macro_recall,macro_precision,confusion`.
pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut rows = vec![[
        "task",
        "n",
        "accuracy",
        "macro_f1",
        "macro_auc",
        "macro_recall",
        "macro_precision",
        "confusion",
    ]
    .map(String::from)
    .to_vec()];
    for (name, t) in [("a", &report.task_a), ("b", &report.task_b)] {
        if let Some(t) = t {
            let confusion = t
                .confusion
                .rows()
                .iter()
                .map(|r| r.iter().map(u64::to_string).collect::<Vec<_>>().join(" "))
                .collect::<Vec<_>>()
                .join(";");
            rows.push(vec![
                name.into(),
                t.n.to_string(),
                t.accuracy.to_string(),
                t.macro_f1.to_string(),
                t.macro_auc.to_string(),
                t.macro_recall.to_string(),
                t.macro_precision.to_string(),
                confusion,
            ]);
        }
    }
    write(rows)
}

/// `task,bin,lo,hi,count`.
pub fn histogram_csv(h: &DifficultyHistogram) -> String {
    let mut rows = vec![["task", "bin", "lo", "hi", "count"].map(String::from).to_vec()];
    for (name, counts) in [("a", &h.task_a), ("b", &h.task_b)] {
        for (bin, c) in counts.iter().flatten().enumerate() {
            let (lo, hi) = h.edges(bin);
            rows.push(vec![name.into(), bin.to_string(), lo.to_string(), hi.to_string(), c.to_string()]);
        }
    }
    write(rows)
}
