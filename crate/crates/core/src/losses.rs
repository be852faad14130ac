//! Classification losses over logits: cross-entropy, focal, generalized
//! cross-entropy and the difficulty-aware weighted loss (DAW) with its
//! linear curriculum schedule.
//!
//! DAW scales each sample's cross-entropy by `p_t^gamma`, where `p_t` is the
//! softmax probability of the true class. The weight is a per-sample constant
//! by default, so the logit gradient of a sample is exactly `p_t^gamma` times
//! its cross-entropy gradient. Large `gamma` suppresses hard (low `p_t`)
//! samples; decaying `gamma` over training moves from easy to hard samples.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{LabError, Result};

/// Lower clamp applied to `p_t` before `log` and `powf`.
pub const PT_EPSILON: f64 = 1e-12;

/// Linearly decaying difficulty-aware exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSchedule {
    pub gamma_start: f64,
    pub gamma_end: f64,
    pub decay_epochs: usize,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self { gamma_start: 1.0, gamma_end: 0.15, decay_epochs: 96 }
    }
}

impl CurriculumSchedule {
    pub fn new(gamma_start: f64, gamma_end: f64, decay_epochs: usize) -> Result<Self> {
        let s = Self { gamma_start, gamma_end, decay_epochs };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |g: f64| (0.0..=1.0).contains(&g);
        if !in_unit(self.gamma_start) || !in_unit(self.gamma_end) {
            return Err(LabError::Config(format!(
                "gamma range [{}, {}] must lie in [0, 1]",
                self.gamma_end, self.gamma_start
            )));
        }
        if self.gamma_end > self.gamma_start {
            return Err(LabError::Config("gamma_end must not exceed gamma_start".into()));
        }
        if self.decay_epochs == 0 {
            return Err(LabError::Config("decay_epochs must be positive".into()));
        }
        Ok(())
    }

    /// `gamma` in effect during `epoch` (updated at epoch start).
    pub fn gamma_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epochs {
            return self.gamma_end;
        }
        let frac = epoch as f64 / self.decay_epochs as f64;
        self.gamma_start - (self.gamma_start - self.gamma_end) * frac
    }
}

/// Which loss to apply to a task head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Focal {
        focus: f64,
    },
    Gce {
        q: f64,
    },
    Daw {
        /// Task-specific schedule; `None` uses the run's shared schedule.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        schedule: Option<CurriculumSchedule>,
        /// Differentiate through `p_t^gamma` instead of treating it as a constant.
        #[serde(default)]
        alpha_grad: bool,
    },
}

impl Default for LossKind {
    fn default() -> Self {
        Self::daw()
    }
}

impl LossKind {
    pub const fn daw() -> Self {
        Self::Daw { schedule: None, alpha_grad: false }
    }

    pub const fn focal_default() -> Self {
        Self::Focal { focus: 2.0 }
    }

    pub const fn gce_default() -> Self {
        Self::Gce { q: 0.7 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Ce => Ok(()),
            Self::Focal { focus } if focus >= 0.0 && focus.is_finite() => Ok(()),
            Self::Focal { focus } => Err(LabError::Config(format!("focal focus {focus} must be >= 0"))),
            Self::Gce { q } if q > 0.0 && q <= 1.0 => Ok(()),
            Self::Gce { q } => Err(LabError::Config(format!("GCE q {q} must be in (0, 1]"))),
            Self::Daw { schedule, .. } => schedule.map_or(Ok(()), |s| s.validate()),
        }
    }

    /// Effective schedule for this loss given the run's shared schedule.
    pub fn schedule_or(&self, shared: CurriculumSchedule) -> CurriculumSchedule {
        match *self {
            Self::Daw { schedule: Some(s), .. } => s,
            _ => shared,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ce => "CE",
            Self::Focal { .. } => "FL",
            Self::Gce { .. } => "GCE",
            Self::Daw { .. } => "DAW",
        }
    }
}

/// DAW sample weight `p_t^gamma`, with `p_t` clamped to `[PT_EPSILON, 1]`.
pub fn daw_weight(p_t: f64, gamma: f64) -> f64 {
    p_t.clamp(PT_EPSILON, 1.0).powf(gamma)
}

/// Per-sample losses as a length-`m` vector node.
pub fn per_sample_loss(
    graph: &mut Graph,
    kind: LossKind,
    logits: Var,
    labels: &[usize],
    gamma: f64,
) -> Result<Var> {
    let p = graph.softmax_rows(logits)?;
    let pt_raw = graph.gather_true(p, labels)?;
    let pt = graph.clamp(pt_raw, PT_EPSILON, 1.0);
    let loss = match kind {
        LossKind::Ce => {
            let lp = graph.log(pt);
            graph.scale(lp, -1.0)
        }
        LossKind::Focal { focus } => {
            let lp = graph.log(pt);
            let one_minus = graph.affine(pt, -1.0, 1.0);
            let w = graph.powf(one_minus, focus);
            let wl = graph.mul(w, lp)?;
            graph.scale(wl, -1.0)
        }
        LossKind::Gce { q } => {
            let pq = graph.powf(pt, q);
            graph.affine(pq, -1.0 / q, 1.0 / q)
        }
        LossKind::Daw { alpha_grad, .. } => {
            let lp = graph.log(pt);
            let w = if alpha_grad {
                graph.powf(pt, gamma)
            } else {
                let alpha = graph.value(pt).data().iter().map(|&a| a.powf(gamma)).collect();
                graph.constant(Tensor::vector(alpha)?)
            };
            let wl = graph.mul(w, lp)?;
            graph.scale(wl, -1.0)
        }
    };
    Ok(loss)
}

/// Mean-reduced loss over the batch, as a scalar node.
pub fn loss_value(
    graph: &mut Graph,
    kind: LossKind,
    logits: Var,
    labels: &[usize],
    gamma: f64,
) -> Result<Var> {
    if labels.is_empty() {
        return Err(LabError::Contract("loss over an empty batch".into()));
    }
    let per = per_sample_loss(graph, kind, logits, labels, gamma)?;
    Ok(graph.mean(per))
}
