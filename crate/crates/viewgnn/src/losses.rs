//! Training objectives: confidence-masked supervised cross-entropy,
//! temperature sharpening, multi-view consistency, and the distillation
//! form used to check that self-distillation at temperature 1 collapses to
//! the consistency loss.
//!
//! All functions are pure in their inputs and record onto the caller's
//! tape, so independent evaluations can run on independent tapes.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{GradTensor, Tape};

/// Floor applied inside every logarithm so that 0 · ln 0 evaluates to 0 and
/// near-zero probabilities cannot produce -inf. Pinned as part of the
/// reproducibility contract: runs are bit-identical across machines.
pub const LOG_FLOOR: f64 = 1e-12;

/// Weight and shape of the multi-view consistency term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    /// Weight of the consistency term in the combined loss.
    pub alpha: f64,
    /// Sharpening temperature for the mean prediction, in (0, 1].
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Number of neighborhood expansions per unlabeled batch.
    #[serde(default = "default_num_views")]
    pub num_views: usize,
    /// Treat the sharpened mean as a constant target (stop-gradient).
    #[serde(default = "default_true")]
    pub detach_teacher: bool,
    /// Compute KL(teacher, view) instead of the written KL(view, teacher).
    /// Off by default; exposed because the two directions have different
    /// low-temperature limits (see the sharpening-limit tests).
    #[serde(default)]
    pub swap_kl_direction: bool,
}

fn default_temperature() -> f64 {
    0.4
}

fn default_num_views() -> usize {
    2
}

fn default_true() -> bool {
    true
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 || self.temperature > 1.0 {
            return Err(Error::Config(format!(
                "consistency temperature must be in (0, 1], got {}",
                self.temperature
            )));
        }
        if self.num_views < 2 {
            return Err(Error::Config(format!("num_views must be >= 2, got {}", self.num_views)));
        }
        Ok(())
    }
}

/// Linear confidence-threshold schedule for masking easy labeled examples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsaSchedule {
    pub num_classes: usize,
    pub total_steps: usize,
}

impl TsaSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.total_steps < 1 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Confidence threshold at `step`: 1/c at step 0, rising linearly to 1
    /// at `total_steps`.
    pub fn eta(&self, step: usize) -> f64 {
        let inv_c = 1.0 / self.num_classes as f64;
        inv_c + (1.0 - inv_c) * step as f64 / self.total_steps as f64
    }
}

/// A `[batch x classes]` tensor whose rows live on the probability simplex.
#[derive(Clone, Debug)]
pub struct ProbabilityMatrix(GradTensor);

impl ProbabilityMatrix {
    /// Validates the simplex invariant: entries >= 0, rows sum to 1 ± 1e-9.
    pub fn new(t: GradTensor) -> Result<Self> {
        for (i, row) in t.values().rows().into_iter().enumerate() {
            let mut sum = 0.0;
            for &p in row.iter() {
                if p < 0.0 {
                    return Err(Error::Config(format!("row {i} has negative probability {p}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("row {i} sums to {sum}, not 1")));
            }
        }
        Ok(Self(t))
    }

    /// Skips validation for rows that are simplex by construction.
    pub(crate) fn new_unchecked(t: GradTensor) -> Self {
        Self(t)
    }

    /// Row-softmax of `logits`, keeping any tape attachment.
    pub fn from_logits(tape: &Tape, logits: &GradTensor) -> Result<Self> {
        Ok(Self(tape.softmax_rows(logits)?))
    }

    pub fn tensor(&self) -> &GradTensor {
        &self.0
    }

    pub fn values(&self) -> &Array2<f64> {
        self.0.values()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    /// Constant copy sharing the same buffer.
    pub fn detach(&self) -> Self {
        Self(self.0.detach())
    }

    /// Index of each row's first maximum.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.values()
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                let mut best_val = f64::NEG_INFINITY;
                for (k, &p) in row.iter().enumerate() {
                    if p > best_val {
                        best = k;
                        best_val = p;
                    }
                }
                best
            })
            .collect()
    }
}

/// Row-wise mean of equally shaped probability matrices.
pub fn mean_probabilities(tape: &Tape, views: &[ProbabilityMatrix]) -> Result<ProbabilityMatrix> {
    if views.is_empty() {
        return Err(Error::Config("mean_probabilities needs at least one view".into()));
    }
    let dim = views[0].dim();
    for v in views.iter() {
        if v.dim() != dim {
            return Err(Error::Shape(format!("view shapes differ: {:?} vs {:?}", dim, v.dim())));
        }
    }
    let mut acc = views[0].tensor().clone();
    for v in &views[1..] {
        acc = tape.add(&acc, v.tensor())?;
    }
    let mean = tape.scale(&acc, 1.0 / views.len() as f64)?;
    // A convex combination of simplex rows stays on the simplex.
    Ok(ProbabilityMatrix::new_unchecked(mean))
}

/// Row-wise `z^(1/T)` renormalized to the simplex. `temperature == 1` is an
/// exact identity (same buffer); lower temperatures concentrate mass on the
/// argmax without ever changing it.
pub fn sharpen(tape: &Tape, z: &ProbabilityMatrix, temperature: f64) -> Result<ProbabilityMatrix> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(Error::Config(format!(
            "sharpening temperature must be > 0, got {temperature}"
        )));
    }
    if temperature == 1.0 {
        return Ok(z.clone());
    }
    let powered = tape.pow(z.tensor(), 1.0 / temperature)?;
    let sums = tape.sum_rows(&powered)?;
    // Rows sum to 1 with entries >= 0, so some entry is >= 1/c and every
    // row's powered sum is strictly positive.
    let inv = tape.pow(&sums, -1.0)?;
    let out = tape.mul_col(&powered, &inv)?;
    Ok(ProbabilityMatrix::new_unchecked(out))
}

/// Per-row `KL(p, q) = sum_k p_k (ln p_k - ln q_k)` in nats, as a
/// `[batch x 1]` tensor. Both arguments are floored at [`LOG_FLOOR`] inside
/// the log, which realizes 0 · ln 0 = 0 exactly.
pub fn kl_rows(tape: &Tape, p: &ProbabilityMatrix, q: &ProbabilityMatrix) -> Result<GradTensor> {
    if p.dim() != q.dim() {
        return Err(Error::Shape(format!("KL shapes differ: {:?} vs {:?}", p.dim(), q.dim())));
    }
    let log_p = tape.log(&tape.clamp_min(p.tensor(), LOG_FLOOR)?)?;
    let log_q = tape.log(&tape.clamp_min(q.tensor(), LOG_FLOOR)?)?;
    let diff = tape.sub(&log_p, &log_q)?;
    let terms = tape.multiply(p.tensor(), &diff)?;
    tape.sum_rows(&terms)
}

fn mean_over_rows(tape: &Tape, col: &GradTensor) -> Result<GradTensor> {
    let rows = col.dim().0;
    tape.scale(&tape.sum_all(col)?, 1.0 / rows as f64)
}

/// Multi-view consistency loss: sharpen the mean prediction into a teacher,
/// then average `KL(view, teacher)` over views and batch rows. With
/// `detach_teacher` the teacher is a constant target; gradients reach the
/// views only through the KL's first argument.
pub fn consistency_loss(
    tape: &Tape,
    views: &[ProbabilityMatrix],
    cfg: &ConsistencyConfig,
) -> Result<GradTensor> {
    cfg.validate()?;
    if views.len() != cfg.num_views {
        return Err(Error::Config(format!(
            "expected {} views, got {}",
            cfg.num_views,
            views.len()
        )));
    }
    let mut mean = mean_probabilities(tape, views)?;
    if cfg.detach_teacher {
        mean = mean.detach();
    }
    let teacher = sharpen(tape, &mean, cfg.temperature)?;
    let mut total: Option<GradTensor> = None;
    for view in views {
        let kl = if cfg.swap_kl_direction {
            kl_rows(tape, &teacher, view)?
        } else {
            kl_rows(tape, view, &teacher)?
        };
        let term = mean_over_rows(tape, &kl)?;
        total = Some(match total {
            Some(acc) => tape.add(&acc, &term)?,
            None => term,
        });
    }
    tape.scale(&total.expect("num_views >= 2"), 1.0 / views.len() as f64)
}

/// Supervised softmax cross-entropy over the labeled batch, skipping rows
/// where the model's probability on the true class already exceeds the
/// schedule's threshold. The mask is computed outside the gradient; the
/// average runs over unmasked rows only, and a fully masked batch yields a
/// constant zero.
pub fn tsa_masked_cross_entropy(
    tape: &Tape,
    logits: &GradTensor,
    labels: &[usize],
    schedule: &TsaSchedule,
    step: usize,
) -> Result<GradTensor> {
    schedule.validate()?;
    if step > schedule.total_steps {
        return Err(Error::Config(format!(
            "step {step} exceeds total_steps {}",
            schedule.total_steps
        )));
    }
    let (rows, cols) = logits.dim();
    if cols != schedule.num_classes {
        return Err(Error::Shape(format!(
            "logits have {cols} columns but the schedule expects {} classes",
            schedule.num_classes
        )));
    }
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for {rows} logit rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
        return Err(Error::Index(format!("label {bad} out of range for {cols} classes")));
    }

    let mut onehot = Array2::<f64>::zeros((rows, cols));
    for (i, &l) in labels.iter().enumerate() {
        onehot[[i, l]] = 1.0;
    }

    // Confidence test on a detached copy so masking never routes gradient.
    let eta = schedule.eta(step);
    let detached_probs = tape.softmax_rows(&logits.detach())?;
    let mut mask = Array2::<f64>::zeros((rows, 1));
    let mut kept = 0usize;
    for (i, &l) in labels.iter().enumerate() {
        if detached_probs.values()[[i, l]] <= eta {
            mask[[i, 0]] = 1.0;
            kept += 1;
        }
    }
    if kept == 0 {
        return Ok(GradTensor::constant(Array2::zeros((1, 1))));
    }

    let probs = tape.softmax_rows(logits)?;
    let p_true = tape.sum_rows(&tape.multiply(&probs, &GradTensor::constant(onehot))?)?;
    let log_p = tape.log(&tape.clamp_min(&p_true, LOG_FLOOR)?)?;
    let masked = tape.mul_col(&log_p, &GradTensor::constant(mask))?;
    tape.scale(&tape.sum_all(&masked)?, -1.0 / kept as f64)
}

/// Full batch objective: masked supervised loss plus `alpha` times the
/// consistency loss. `alpha == 0` returns the supervised loss unchanged and
/// accepts an empty view list.
#[allow(clippy::too_many_arguments)]
pub fn combined_batch_loss(
    tape: &Tape,
    sup_logits: &GradTensor,
    sup_labels: &[usize],
    view_probs: &[ProbabilityMatrix],
    cfg: &ConsistencyConfig,
    schedule: &TsaSchedule,
    step: usize,
) -> Result<GradTensor> {
    let sup = tsa_masked_cross_entropy(tape, sup_logits, sup_labels, schedule, step)?;
    if cfg.alpha == 0.0 {
        cfg.validate()?;
        return Ok(sup);
    }
    let con = consistency_loss(tape, view_probs, cfg)?;
    tape.add(&sup, &tape.scale(&con, cfg.alpha)?)
}

/// Distillation objective: temper both sides to `t_dis` (renormalizing),
/// then average `KL(student, teacher)` over rows. At `t_dis == 1` and a
/// sharpened-mean teacher this is exactly the per-view consistency term;
/// averaging it over views reproduces [`consistency_loss`].
pub fn distillation_loss(
    tape: &Tape,
    student: &ProbabilityMatrix,
    teacher: &ProbabilityMatrix,
    t_dis: f64,
) -> Result<GradTensor> {
    if !t_dis.is_finite() || t_dis <= 0.0 {
        return Err(Error::Config(format!("distillation temperature must be > 0, got {t_dis}")));
    }
    let tempered_student = temper(tape, student, t_dis)?;
    let tempered_teacher = temper(tape, teacher, t_dis)?;
    let kl = kl_rows(tape, &tempered_student, &tempered_teacher)?;
    mean_over_rows(tape, &kl)
}

/// `sharpen` without the (0, 1] cap: distillation may flatten (T > 1).
fn temper(tape: &Tape, p: &ProbabilityMatrix, t: f64) -> Result<ProbabilityMatrix> {
    if t == 1.0 {
        return Ok(p.clone());
    }
    let powered = tape.pow(p.tensor(), 1.0 / t)?;
    let sums = tape.sum_rows(&powered)?;
    let inv = tape.pow(&sums, -1.0)?;
    Ok(ProbabilityMatrix::new_unchecked(tape.mul_col(&powered, &inv)?))
}
