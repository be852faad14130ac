//! Dual-stream two-task classifier.
//!
//! Each task owns an MLP encoder and a linear classifier. In the detached
//! wiring, task A's classifier sees `[f_a, detach(f_b)]` and task B's sees
//! `[detach(f_a), f_b]`: each classifier can use the other task's features,
//! but no loss on one task ever reaches the other task's encoder.
//!
//! The other wirings exist for ablations:
//! * `Entangled` is the same concatenation without detaching.
//! * `Shared` is joint training: one encoder feeding two linear heads.
//! * `SingleTaskA` / `SingleTaskB` keep only one stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{shape_err, LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wiring {
    Detached,
    Entangled,
    Shared,
    SingleTaskA,
    SingleTaskB,
}

impl Wiring {
    pub fn has_task_a(self) -> bool {
        self != Wiring::SingleTaskB
    }

    pub fn has_task_b(self) -> bool {
        self != Wiring::SingleTaskA
    }

    /// Number of distinct encoders.
    pub fn encoders(self) -> usize {
        match self {
            Wiring::Detached | Wiring::Entangled => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub classes_a: usize,
    pub classes_b: usize,
    pub wiring: Wiring,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_dims: vec![32],
            feature_dim: 8,
            classes_a: 4,
            classes_b: 3,
            wiring: Wiring::Detached,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(LabError::Config("layer widths must be positive".into()));
        }
        if self.classes_a < 2 || self.classes_b < 2 {
            return Err(LabError::Config("each task needs at least two classes".into()));
        }
        Ok(())
    }

    /// Input width of the task classifiers.
    pub fn classifier_width(&self) -> usize {
        match self.wiring {
            Wiring::Detached | Wiring::Entangled => 2 * self.feature_dim,
            _ => self.feature_dim,
        }
    }
}

/// Fully connected layer `x W + b` with `W: [in x out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform He initialisation, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`; zero bias.
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            weight: Tensor::new(vec![fan_in, fan_out], data).expect("positive layer dims"),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }
}

/// MLP with ReLU after every layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub layers: Vec<Linear>,
}

impl Encoder {
    fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut widths = vec![config.input_dim];
        widths.extend(&config.hidden_dims);
        widths.push(config.feature_dim);
        let layers = widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self { layers }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualStreamModel {
    pub config: ModelConfig,
    pub encoder_a: Option<Encoder>,
    pub encoder_b: Option<Encoder>,
    pub classifier_a: Option<Linear>,
    pub classifier_b: Option<Linear>,
}

/// Graph handles of a model's parameters, in [`DualStreamModel::named_parameters`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients of every parameter, zero where no gradient arrived.
    pub fn grads(&self, graph: &Graph) -> Vec<Tensor> {
        self.vars.iter().map(|&v| graph.grad_tensor(v)).collect()
    }
}

/// Logit nodes produced by a forward pass; absent for a missing task.
#[derive(Debug, Clone, Copy)]
pub struct Logits {
    pub a: Option<Var>,
    pub b: Option<Var>,
}

impl DualStreamModel {
    /// Builds a model with seeded parameters.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.wiring;
        let width = config.classifier_width();
        let encoder_a = (w != Wiring::SingleTaskB).then(|| Encoder::init(&config, &mut rng));
        let encoder_b = matches!(w, Wiring::Detached | Wiring::Entangled | Wiring::SingleTaskB)
            .then(|| Encoder::init(&config, &mut rng));
        let classifier_a = w.has_task_a().then(|| Linear::init(width, config.classes_a, &mut rng));
        let classifier_b = w.has_task_b().then(|| Linear::init(width, config.classes_b, &mut rng));
        Ok(Self { config, encoder_a, encoder_b, classifier_a, classifier_b })
    }

    /// `(name, tensor)` for every parameter, in a fixed order.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        fn push<'m>(out: &mut Vec<(String, &'m Tensor)>, prefix: String, l: &'m Linear) {
            out.push((format!("{prefix}.weight"), &l.weight));
            out.push((format!("{prefix}.bias"), &l.bias));
        }
        let mut out = Vec::new();
        for (name, enc) in [("encoder_a", &self.encoder_a), ("encoder_b", &self.encoder_b)] {
            for (i, l) in enc.iter().flat_map(|e| e.layers.iter()).enumerate() {
                push(&mut out, format!("{name}.{i}"), l);
            }
        }
        for (name, cls) in [("classifier_a", &self.classifier_a), ("classifier_b", &self.classifier_b)] {
            if let Some(l) = cls {
                push(&mut out, name.to_string(), l);
            }
        }
        out
    }

    /// Mutable parameters, same order as [`Self::named_parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for enc in [&mut self.encoder_a, &mut self.encoder_b].into_iter().flatten() {
            for l in &mut enc.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        for l in [&mut self.classifier_a, &mut self.classifier_b].into_iter().flatten() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// Inserts every parameter as a differentiable leaf.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        self.bind_with(graph, true)
    }

    /// Inserts parameters as constants, for inference.
    pub fn bind_frozen(&self, graph: &mut Graph) -> BoundParams {
        self.bind_with(graph, false)
    }

    fn bind_with(&self, graph: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .named_parameters()
            .into_iter()
            .map(|(_, t)| if trainable { graph.leaf(t.clone()) } else { graph.constant(t.clone()) })
            .collect();
        BoundParams { vars }
    }

    pub fn forward(&self, graph: &mut Graph, params: &BoundParams, x: Var) -> Result<Logits> {
        let (_, d) = graph.value(x).dims2("forward")?;
        if d != self.config.input_dim {
            return Err(shape_err("forward", format!("input_dim {}", self.config.input_dim), d));
        }
        let mut cursor = params.vars.iter().copied();
        let next_linear = |cursor: &mut dyn Iterator<Item = Var>| {
            let w = cursor.next().expect("bound parameters match model");
            let b = cursor.next().expect("bound parameters match model");
            (w, b)
        };
        let encode = |enc: &Encoder, graph: &mut Graph, cursor: &mut dyn Iterator<Item = Var>| -> Result<Var> {
            let mut h = x;
            for _ in &enc.layers {
                let (w, b) = next_linear(cursor);
                let z = graph.matmul(h, w)?;
                let z = graph.add_bias(z, b)?;
                h = graph.relu(z);
            }
            Ok(h)
        };
        let f_a = match &self.encoder_a {
            Some(enc) => Some(encode(enc, graph, &mut cursor)?),
            None => None,
        };
        let f_b = match &self.encoder_b {
            Some(enc) => Some(encode(enc, graph, &mut cursor)?),
            None => None,
        };

        let (in_a, in_b) = match self.config.wiring {
            Wiring::Detached => {
                let (fa, fb) = (f_a.expect("encoder_a"), f_b.expect("encoder_b"));
                let fb_stop = graph.detach(fb);
                let fa_stop = graph.detach(fa);
                (Some(graph.concat_cols(fa, fb_stop)?), Some(graph.concat_cols(fa_stop, fb)?))
            }
            Wiring::Entangled => {
                let (fa, fb) = (f_a.expect("encoder_a"), f_b.expect("encoder_b"));
                (Some(graph.concat_cols(fa, fb)?), Some(graph.concat_cols(fa, fb)?))
            }
            Wiring::Shared => (f_a, f_a),
            Wiring::SingleTaskA => (f_a, None),
            Wiring::SingleTaskB => (None, f_b),
        };

        let mut head = |input: Option<Var>, present: bool, graph: &mut Graph| -> Result<Option<Var>> {
            if !present {
                return Ok(None);
            }
            let (w, b) = next_linear(&mut cursor);
            let z = graph.matmul(input.expect("classifier input"), w)?;
            Ok(Some(graph.add_bias(z, b)?))
        };
        let a = head(in_a, self.classifier_a.is_some(), graph)?;
        let b = head(in_b, self.classifier_b.is_some(), graph)?;
        Ok(Logits { a, b })
    }

    /// Forward pass on a plain feature matrix with frozen parameters.
    /// Returns softmax probabilities per task.
    pub fn predict_proba(&self, x: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let mut g = Graph::new();
        let params = self.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let logits = self.forward(&mut g, &params, xv)?;
        let mut probs = |v: Option<Var>| -> Result<Option<Tensor>> {
            v.map(|v| g.softmax_rows(v).map(|p| g.value(p).clone())).transpose()
        };
        let pa = probs(logits.a)?;
        let pb = probs(logits.b)?;
        Ok((pa, pb))
    }
}
