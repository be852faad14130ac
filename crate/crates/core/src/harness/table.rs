use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Value of the `seed` column for aggregate rows.
pub const MEDIAN: &str = "median";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub protocol: String,
    /// A seed number, or [`MEDIAN`].
    pub seed: String,
    pub values: Vec<f64>,
}

/// Long-form result table: per-seed rows followed by a median row per
/// `(method, protocol)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

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

impl ResultsTable {
    pub fn new(title: impl Into<String>, columns: Vec<String>) -> Self {
        Self { title: title.into(), columns, rows: Vec::new() }
    }

    /// Appends per-seed rows and their column-wise median.
    pub fn push_group(&mut self, method: &str, protocol: &str, per_seed: &[(u64, Vec<f64>)]) {
        for (seed, values) in per_seed {
            debug_assert_eq!(values.len(), self.columns.len());
            self.rows.push(TableRow {
                method: method.into(),
                protocol: protocol.into(),
                seed: seed.to_string(),
                values: values.clone(),
            });
        }
        let medians = (0..self.columns.len())
            .map(|c| median(&per_seed.iter().map(|(_, v)| v[c]).collect::<Vec<_>>()))
            .collect();
        self.rows.push(TableRow {
            method: method.into(),
            protocol: protocol.into(),
            seed: MEDIAN.into(),
            values: medians,
        });
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn median_row(&self, method: &str, protocol: &str) -> Option<&TableRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.protocol == protocol && r.seed == MEDIAN)
    }

    /// Median value of `column` for `(method, protocol)`.
    pub fn median_of(&self, method: &str, protocol: &str, column: &str) -> Option<f64> {
        let c = self.column(column)?;
        self.median_row(method, protocol).map(|r| r.values[c])
    }

    /// Distinct method names in first-appearance order.
    pub fn methods(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method.as_str()) {
                out.push(&r.method);
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string(), "protocol".into(), "seed".into()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.method.clone(), r.protocol.clone(), r.seed.clone()];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Fixed-width rendering of the median rows.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let _ = writeln!(out, "(medians over seeds; macro one-vs-rest AUC)");
        let mut line = format!("{:<16} {:<9}", "method", "protocol");
        for c in &self.columns {
            let _ = write!(line, " {c:>8}");
        }
        let _ = writeln!(out, "{line}");
        let _ = writeln!(out, "{}", "-".repeat(line.len()));
        for r in self.rows.iter().filter(|r| r.seed == MEDIAN) {
            let _ = write!(out, "{:<16} {:<9}", r.method, r.protocol);
            for v in &r.values {
                let _ = write!(out, " {v:>8.4}");
            }
            let _ = writeln!(out);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn groups_and_csv() {
        let mut t = ResultsTable::new("demo", vec!["a_auc".into(), "a_f1".into()]);
        t.push_group("ce", "intra", &[(0, vec![0.5, 0.25]), (1, vec![0.7, 0.75]), (2, vec![0.6, 0.5])]);
        assert_eq!(t.median_of("ce", "intra", "a_auc"), Some(0.6));
        assert_eq!(t.median_of("ce", "intra", "a_f1"), Some(0.5));
        assert_eq!(t.median_of("ce", "cross", "a_f1"), None);
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,protocol,seed,a_auc,a_f1");
        assert_eq!(lines[1], "ce,intra,0,0.5,0.25");
        assert_eq!(lines[4], "ce,intra,median,0.6,0.5");
        assert!(t.render_text().contains("0.6000"));
    }
}
