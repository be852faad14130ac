//! Synthetic two-task data, grade remapping, k-fold splits and CSV I/O.
//!
//! The generator places one mean vector per grade of each task and adds them:
//! `mean(a, b) = separation * (u_a + v_b)`. In the biased domain task B's grade
//! follows a severity map of task A's grade with probability `correlation`,
//! so features carrying task B's signal are also predictive of task A there
//! but not in the unbiased domain. An `ambiguous_fraction` of samples sit at
//! the midpoint between their own mean and an adjacent grade's mean.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{LabError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub grade_a: usize,
    pub grade_b: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub d: usize,
    pub classes_a: usize,
    pub classes_b: usize,
    pub provenance: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub meta: DatasetMeta,
    /// Per-sample ambiguity flags; known only for generated data.
    pub ambiguous: Option<Vec<bool>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Biased,
    Unbiased,
}

impl std::str::FromStr for Domain {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biased" => Ok(Domain::Biased),
            "unbiased" => Ok(Domain::Unbiased),
            other => Err(LabError::Config(format!("unknown domain `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub d: usize,
    pub classes_a: usize,
    pub classes_b: usize,
    pub class_priors_a: Vec<f64>,
    pub correlation: f64,
    pub separation: f64,
    pub noise_sigma: f64,
    pub ambiguous_fraction: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            d: 16,
            classes_a: 4,
            classes_b: 3,
            class_priors_a: vec![0.45, 0.25, 0.20, 0.10],
            correlation: 0.95,
            separation: 2.5,
            noise_sigma: 1.0,
            ambiguous_fraction: 0.15,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(LabError::Config(m.to_string()));
        if self.d == 0 {
            return err("d must be positive");
        }
        if self.classes_a < 2 || self.classes_b < 2 {
            return err("each task needs at least two classes");
        }
        if self.class_priors_a.len() != self.classes_a {
            return err("class_priors_a must have classes_a entries");
        }
        if self.class_priors_a.iter().any(|&p| !(p >= 0.0)) {
            return err("class priors must be non-negative");
        }
        if (self.class_priors_a.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return err("class_priors_a must sum to 1");
        }
        if !(0.0..=1.0).contains(&self.correlation) || !(0.0..=1.0).contains(&self.ambiguous_fraction) {
            return err("correlation and ambiguous_fraction must lie in [0, 1]");
        }
        if !(self.separation > 0.0) || !(self.noise_sigma > 0.0) {
            return err("separation and noise_sigma must be positive");
        }
        Ok(())
    }

    /// Task B grade stereotypically paired with task A grade `grade_a`.
    pub fn stereotyped_map(&self, grade_a: usize) -> usize {
        stereotyped_map(grade_a, self.classes_a, self.classes_b)
    }
}

/// `round(g_a * (classes_b - 1) / (classes_a - 1))`.
pub fn stereotyped_map(grade_a: usize, classes_a: usize, classes_b: usize) -> usize {
    (grade_a as f64 * (classes_b - 1) as f64 / (classes_a - 1) as f64).round() as usize
}

/// Seeded per-grade mean directions for both tasks.
struct ClassMeans {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    separation: f64,
}

impl ClassMeans {
    fn new(config: &GeneratorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut unit = |d: usize| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
        };
        let a = (0..config.classes_a).map(|_| unit(config.d)).collect();
        let b = (0..config.classes_b).map(|_| unit(config.d)).collect();
        Self { a, b, separation: config.separation }
    }

    fn mean(&self, ga: usize, gb: usize) -> Vec<f64> {
        self.a[ga].iter().zip(&self.b[gb]).map(|(u, v)| self.separation * (u + v)).collect()
    }
}

fn adjacent(g: usize, classes: usize, rng: &mut ChaCha8Rng) -> usize {
    if g == 0 {
        1
    } else if g == classes - 1 || rng.random_bool(0.5) {
        g - 1
    } else {
        g + 1
    }
}

fn sample_categorical(priors: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in priors.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    priors.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Draws `n` samples. Fully determined by `(config, n, domain)`.
pub fn generate(config: &GeneratorConfig, n: usize, domain: Domain) -> Result<Dataset> {
    config.validate()?;
    if n == 0 {
        return Err(LabError::EmptyDataset);
    }
    let means = ClassMeans::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(match domain {
        Domain::Biased => 1,
        Domain::Unbiased => 2,
    });

    let (ca, cb) = (config.classes_a, config.classes_b);
    let mut samples = Vec::with_capacity(n);
    let mut ambiguous = Vec::with_capacity(n);
    for _ in 0..n {
        let grade_a = sample_categorical(&config.class_priors_a, &mut rng);
        let grade_b = match domain {
            Domain::Biased if rng.random_bool(config.correlation) => config.stereotyped_map(grade_a),
            _ => rng.random_range(0..cb),
        };
        let is_ambiguous = rng.random_bool(config.ambiguous_fraction);
        let center = if is_ambiguous {
            let own = means.mean(grade_a, grade_b);
            let other = means.mean(adjacent(grade_a, ca, &mut rng), adjacent(grade_b, cb, &mut rng));
            own.iter().zip(&other).map(|(x, y)| 0.5 * (x + y)).collect()
        } else {
            means.mean(grade_a, grade_b)
        };
        let features = center
            .into_iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c + config.noise_sigma * z
            })
            .collect();
        samples.push(Sample { features, grade_a, grade_b });
        ambiguous.push(is_ambiguous);
    }
    let tag = match domain {
        Domain::Biased => "biased",
        Domain::Unbiased => "unbiased",
    };
    Ok(Dataset {
        samples,
        meta: DatasetMeta {
            d: config.d,
            classes_a: ca,
            classes_b: cb,
            provenance: format!("synthetic:{tag}:seed={}:n={n}", config.seed),
        },
        ambiguous: Some(ambiguous),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Subset by indices, keeping order of `indices`.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            meta: self.meta.clone(),
            ambiguous: self.ambiguous.as_ref().map(|f| indices.iter().map(|&i| f[i]).collect()),
        }
    }

    /// First `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }

    pub fn features_tensor(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.meta.d);
        for &i in indices {
            data.extend_from_slice(&self.samples[i].features);
        }
        Tensor::new(vec![indices.len(), self.meta.d], data)
    }

    pub fn all_features(&self) -> Result<Tensor> {
        self.features_tensor(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn grades(&self, task: Task) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| match task {
                Task::A => s.grade_a,
                Task::B => s.grade_b,
            })
            .collect()
    }

    pub fn classes(&self, task: Task) -> usize {
        match task {
            Task::A => self.meta.classes_a,
            Task::B => self.meta.classes_b,
        }
    }
}

/// Relabels one task's grades. The image of `mapping` must be `0..k` for some `k`.
pub fn remap_grades(dataset: &Dataset, task: Task, mapping: &BTreeMap<usize, usize>) -> Result<Dataset> {
    let image: std::collections::BTreeSet<usize> = mapping.values().copied().collect();
    let new_classes = image.len();
    if image.iter().copied().ne(0..new_classes) {
        return Err(LabError::Mapping(format!("mapping image {image:?} is not contiguous from 0")));
    }
    let mut out = dataset.clone();
    for (row, s) in out.samples.iter_mut().enumerate() {
        let g = match task {
            Task::A => &mut s.grade_a,
            Task::B => &mut s.grade_b,
        };
        *g = *mapping
            .get(g)
            .ok_or_else(|| LabError::Mapping(format!("grade {g} at row {row} has no mapping")))?;
    }
    match task {
        Task::A => out.meta.classes_a = new_classes,
        Task::B => out.meta.classes_b = new_classes,
    }
    Ok(out)
}

/// Seeded k-fold partition; returns `(train, test)` index lists per fold.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(LabError::Split(format!("k = {k} must be at least 2")));
    }
    if k > n {
        return Err(LabError::Split(format!("k = {k} exceeds dataset size {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let test = order[start..start + size].to_vec();
        let train = order[..start].iter().chain(&order[start + size..]).copied().collect();
        folds.push((train, test));
        start += size;
    }
    Ok(folds)
}

pub fn kfold_split(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    Ok(kfold_indices(dataset.len(), k, seed)?
        .into_iter()
        .map(|(tr, te)| (dataset.select(&tr), dataset.select(&te)))
        .collect())
}

/// Writes `id, f0..f{d-1}, grade_a, grade_b` with shortest round-trip floats.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..dataset.meta.d).map(|i| format!("f{i}")));
    header.extend(["grade_a".to_string(), "grade_b".to_string()]);
    w.write_record(&header)?;
    for (id, s) in dataset.samples.iter().enumerate() {
        let mut rec = vec![id.to_string()];
        rec.extend(s.features.iter().map(|v| format!("{v:e}")));
        rec.push(s.grade_a.to_string());
        rec.push(s.grade_b.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the CSV schema written by [`write_csv`]. Class counts are
/// `max grade + 1` per task, floored at 2.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| LabError::Parse {
            row: 0,
            column: name.to_string(),
            message: "missing column".into(),
        })
    };
    col("id")?;
    let (ia, ib) = (col("grade_a")?, col("grade_b")?);
    let mut fcols = Vec::new();
    while let Some(i) = header.iter().position(|h| *h == format!("f{}", fcols.len())) {
        fcols.push(i);
    }
    if fcols.is_empty() {
        return Err(LabError::Parse { row: 0, column: "f0".into(), message: "missing column".into() });
    }

    let mut samples = Vec::new();
    for (row_idx, rec) in r.records().enumerate() {
        let row = row_idx + 1;
        let rec = rec?;
        let cell = |i: usize| rec.get(i).unwrap_or("");
        let features = fcols
            .iter()
            .map(|&i| {
                cell(i).parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| LabError::Parse {
                    row,
                    column: header[i].clone(),
                    message: format!("`{}` is not a finite number", cell(i)),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let grade = |i: usize| {
            cell(i).parse::<usize>().map_err(|_| LabError::Parse {
                row,
                column: header[i].clone(),
                message: format!("`{}` is not a non-negative integer grade", cell(i)),
            })
        };
        samples.push(Sample { features, grade_a: grade(ia)?, grade_b: grade(ib)? });
    }
    let classes = |f: fn(&Sample) -> usize| samples.iter().map(f).max().map_or(2, |m| (m + 1).max(2));
    let meta = DatasetMeta {
        d: fcols.len(),
        classes_a: classes(|s| s.grade_a),
        classes_b: classes(|s| s.grade_b),
        provenance: format!("csv:{}", path.display()),
    };
    Ok(Dataset { samples, meta, ambiguous: None })
}

/// Plug-in mutual information (nats) between the two tasks' grades.
pub fn empirical_mutual_information(dataset: &Dataset) -> f64 {
    let (ca, cb) = (dataset.meta.classes_a, dataset.meta.classes_b);
    let n = dataset.len() as f64;
    let mut joint = vec![0.0; ca * cb];
    for s in &dataset.samples {
        joint[s.grade_a * cb + s.grade_b] += 1.0;
    }
    let pa: Vec<f64> = (0..ca).map(|i| (0..cb).map(|j| joint[i * cb + j]).sum::<f64>() / n).collect();
    let pb: Vec<f64> = (0..cb).map(|j| (0..ca).map(|i| joint[i * cb + j]).sum::<f64>() / n).collect();
    let mut mi = 0.0;
    for i in 0..ca {
        for j in 0..cb {
            let p = joint[i * cb + j] / n;
            if p > 0.0 {
                mi += p * (p / (pa[i] * pb[j])).ln();
            }
        }
    }
    mi
}
