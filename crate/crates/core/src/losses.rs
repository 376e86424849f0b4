//! Supervised and unsupervised loss terms, each with its exact gradient.
//!
//! Every loss is written as a function of class probabilities. Gradients are
//! first taken with respect to the probabilities and then pulled back through
//! the softmax Jacobian by [`probs_grad_to_logits`], so a new term only needs
//! its value and `dL/dp`. All logarithms use [`PROB_FLOOR`]; the gradient of
//! a floored log is zero below the floor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{softmax_rows, Matrix, PROB_FLOOR};

#[inline]
fn ln_floor(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// `d/dp ln(max(p, floor))`
#[inline]
fn d_ln_floor(p: f64) -> f64 {
    if p > PROB_FLOOR {
        1.0 / p
    } else {
        0.0
    }
}

/// Weights of the loss terms and the consistency ramp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub consistency_max: f64,
    pub entropy_min_w: f64,
    pub entropy_balance_w: f64,
    pub push_away_c: f64,
    pub ramp_epochs: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            consistency_max: 10.0,
            entropy_min_w: 1.0,
            entropy_balance_w: 1.0,
            push_away_c: 1.0,
            ramp_epochs: 5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("consistency-max", self.consistency_max),
            ("entropy-min-w", self.entropy_min_w),
            ("entropy-balance-w", self.entropy_balance_w),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::key(key, "weight must be finite and non-negative"));
            }
        }
        if !(self.push_away_c > 0.0 && self.push_away_c.is_finite()) {
            return Err(Error::key("push-away-c", "coefficient must be positive"));
        }
        Ok(())
    }
}

/// Which consistency measure links student and teacher outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyKind {
    Mse,
    Kl,
}

/// Unsupervised term added on top of the supervised NLL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnsupervisedTerm {
    None,
    MeanTeacher(ConsistencyKind),
    /// Per-sample entropy minimization plus batch mean-entropy balancing.
    Entropy,
    /// Push-away from the original label of samples whose label was masked.
    PushAway,
}

impl UnsupervisedTerm {
    pub fn needs_teacher(self) -> bool {
        matches!(self, UnsupervisedTerm::MeanTeacher(_))
    }
}

fn check_label(probs: &[f64], label: usize) -> Result<()> {
    if label >= probs.len() {
        return Err(Error::Input(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(())
}

fn check_widths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "probability widths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `-ln p[label]`.
pub fn nll_loss(probs: &[f64], label: usize) -> Result<f64> {
    check_label(probs, label)?;
    Ok(-ln_floor(probs[label]))
}

pub fn nll_grad(probs: &[f64], label: usize) -> Result<Vec<f64>> {
    check_label(probs, label)?;
    let mut g = vec![0.0; probs.len()];
    g[label] = -d_ln_floor(probs[label]);
    Ok(g)
}

/// Negative sample weight applied to NLL: `-c * NLL`. Its logit gradient
/// vanishes as the prediction approaches the label it is meant to push away from.
pub fn negated_nll_loss(probs: &[f64], label: usize, c: f64) -> Result<f64> {
    Ok(-c * nll_loss(probs, label)?)
}

pub fn negated_nll_grad(probs: &[f64], label: usize, c: f64) -> Result<Vec<f64>> {
    let mut g = nll_grad(probs, label)?;
    g.iter_mut().for_each(|v| *v *= -c);
    Ok(g)
}

/// `c / (m - 1) * sum_{y != label} -ln p[y]`.
pub fn push_away_loss(probs: &[f64], label: usize, c: f64) -> Result<f64> {
    let m = probs.len();
    if m < 2 {
        return Err(Error::Config("push-away loss needs at least two classes".into()));
    }
    check_label(probs, label)?;
    let sum: f64 = (0..m).filter(|&y| y != label).map(|y| -ln_floor(probs[y])).sum();
    Ok(c * sum / (m - 1) as f64)
}

pub fn push_away_grad(probs: &[f64], label: usize, c: f64) -> Result<Vec<f64>> {
    let m = probs.len();
    if m < 2 {
        return Err(Error::Config("push-away loss needs at least two classes".into()));
    }
    check_label(probs, label)?;
    let scale = c / (m - 1) as f64;
    Ok((0..m)
        .map(|y| {
            if y == label {
                0.0
            } else {
                -scale * d_ln_floor(probs[y])
            }
        })
        .collect())
}

/// Shannon entropy `-sum p ln p`.
pub fn entropy_min_loss(probs: &[f64]) -> f64 {
    -probs.iter().map(|&p| p * ln_floor(p)).sum::<f64>()
}

pub fn entropy_min_grad(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .map(|&p| -(ln_floor(p) + p * d_ln_floor(p)))
        .collect()
}

fn mean_prediction<R: AsRef<[f64]>>(batch: &[R]) -> Result<Vec<f64>> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Input("entropy balance needs a non-empty batch".into()))?;
    let m = first.as_ref().len();
    let mut mean = vec![0.0; m];
    for p in batch {
        let p = p.as_ref();
        check_widths(&mean, p)?;
        for (acc, v) in mean.iter_mut().zip(p) {
            *acc += v;
        }
    }
    let n = batch.len() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    Ok(mean)
}

/// `ln m - H(mean prediction)`. Zero when the batch's average prediction is uniform.
pub fn entropy_balance_loss<R: AsRef<[f64]>>(batch: &[R]) -> Result<f64> {
    let mean = mean_prediction(batch)?;
    Ok((mean.len() as f64).ln() - entropy_min_loss(&mean))
}

/// Gradient of [`entropy_balance_loss`] with respect to each sample's probabilities.
pub fn entropy_balance_grad<R: AsRef<[f64]>>(batch: &[R]) -> Result<Vec<Vec<f64>>> {
    let mean = mean_prediction(batch)?;
    let n = batch.len() as f64;
    // d/dmean of  sum mean ln mean ; every sample receives 1/n of it
    let g: Vec<f64> = mean
        .iter()
        .map(|&q| (ln_floor(q) + q * d_ln_floor(q)) / n)
        .collect();
    Ok(vec![g; batch.len()])
}

/// `(1/m) * sum (s - t)^2`.
pub fn consistency_mse(student: &[f64], teacher: &[f64]) -> Result<f64> {
    check_widths(student, teacher)?;
    let m = student.len() as f64;
    Ok(student
        .iter()
        .zip(teacher)
        .map(|(s, t)| (s - t) * (s - t))
        .sum::<f64>()
        / m)
}

/// Gradient with respect to the student argument only.
pub fn consistency_mse_grad(student: &[f64], teacher: &[f64]) -> Result<Vec<f64>> {
    check_widths(student, teacher)?;
    let m = student.len() as f64;
    Ok(student
        .iter()
        .zip(teacher)
        .map(|(s, t)| 2.0 * (s - t) / m)
        .collect())
}

/// `KL(teacher || student)`; the teacher is a constant target.
pub fn consistency_kl(teacher: &[f64], student: &[f64]) -> Result<f64> {
    check_widths(teacher, student)?;
    Ok(teacher
        .iter()
        .zip(student)
        .map(|(&t, &s)| t * (ln_floor(t) - ln_floor(s)))
        .sum())
}

pub fn consistency_kl_grad(teacher: &[f64], student: &[f64]) -> Result<Vec<f64>> {
    check_widths(teacher, student)?;
    Ok(teacher
        .iter()
        .zip(student)
        .map(|(&t, &s)| -t * d_ln_floor(s))
        .collect())
}

/// Ramp shape in `[0, 1]`: `exp(-5 (1 - min(e / ramp, 1))^2)`, constant 1 without a ramp.
pub fn ramp_factor(epoch: usize, ramp_epochs: usize) -> f64 {
    if ramp_epochs == 0 {
        return 1.0;
    }
    let t = (epoch as f64 / ramp_epochs as f64).min(1.0);
    (-5.0 * (1.0 - t) * (1.0 - t)).exp()
}

/// Consistency weight at `epoch`.
pub fn ramp_weight(epoch: usize, weights: &LossWeights) -> f64 {
    weights.consistency_max * ramp_factor(epoch, weights.ramp_epochs)
}

/// Pulls `dL/dp` back to `dL/dz` through `p = softmax(z)`:
/// `dL/dz_k = p_k (g_k - <g, p>)`.
pub fn probs_grad_to_logits(probs: &[f64], grad: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(grad).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad)
        .map(|(p, g)| p * (g - inner))
        .collect()
}

/// Per-row targets for one training batch.
///
/// Rows with `supervised[r] = Some(label)` form the labeled part; every row
/// belongs to the unsupervised part.
#[derive(Debug, Clone, Copy)]
pub struct BatchTargets<'a> {
    pub supervised: &'a [Option<usize>],
    /// Original label of rows whose label is masked; consumed by push-away only.
    pub push_away: &'a [Option<usize>],
    /// Teacher probabilities on the clean inputs; required by mean-teacher terms.
    pub teacher_probs: Option<&'a Matrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub supervised: f64,
    pub unsupervised: f64,
    /// Multiplier applied to `unsupervised` in `total`.
    pub unsupervised_weight: f64,
}

/// Batch objective `mean NLL(labeled rows) + w(epoch) * mean unsupervised(all rows)`
/// together with its gradient with respect to the student logits.
pub fn total_batch_loss(
    student_logits: &Matrix,
    targets: BatchTargets<'_>,
    weights: &LossWeights,
    epoch: usize,
    term: UnsupervisedTerm,
) -> Result<(LossBreakdown, Matrix)> {
    let rows = student_logits.rows();
    let m = student_logits.cols();
    if targets.supervised.len() != rows || targets.push_away.len() != rows {
        return Err(Error::Input("batch targets do not match batch rows".into()));
    }
    let probs = softmax_rows(student_logits);
    let mut grad_p = Matrix::zeros(rows, m);

    let labeled: Vec<(usize, usize)> = targets
        .supervised
        .iter()
        .enumerate()
        .filter_map(|(r, l)| l.map(|l| (r, l)))
        .collect();
    let mut supervised = 0.0;
    if !labeled.is_empty() {
        let inv = 1.0 / labeled.len() as f64;
        for &(r, label) in &labeled {
            supervised += nll_loss(probs.row(r), label)? * inv;
            let g = nll_grad(probs.row(r), label)?;
            add_scaled(grad_p.row_mut(r), &g, inv);
        }
    }

    let (weight, unsupervised) = match term {
        UnsupervisedTerm::None => (0.0, 0.0),
        UnsupervisedTerm::MeanTeacher(kind) => {
            let teacher = targets.teacher_probs.ok_or_else(|| {
                Error::Internal("mean-teacher loss requested without teacher outputs".into())
            })?;
            if !teacher.same_shape(&probs) {
                return Err(Error::Input("teacher and student outputs differ in shape".into()));
            }
            let w = ramp_weight(epoch, weights);
            let inv = 1.0 / rows as f64;
            let mut value = 0.0;
            for r in 0..rows {
                let (s, t) = (probs.row(r), teacher.row(r));
                let (v, g) = match kind {
                    ConsistencyKind::Mse => (consistency_mse(s, t)?, consistency_mse_grad(s, t)?),
                    ConsistencyKind::Kl => (consistency_kl(t, s)?, consistency_kl_grad(t, s)?),
                };
                value += v * inv;
                add_scaled(grad_p.row_mut(r), &g, w * inv);
            }
            (w, value)
        }
        UnsupervisedTerm::Entropy => {
            let w = ramp_factor(epoch, weights.ramp_epochs);
            let inv = 1.0 / rows as f64;
            let mut value = 0.0;
            for r in 0..rows {
                let p = probs.row(r);
                value += weights.entropy_min_w * entropy_min_loss(p) * inv;
                let g = entropy_min_grad(p);
                add_scaled(grad_p.row_mut(r), &g, w * weights.entropy_min_w * inv);
            }
            let batch: Vec<&[f64]> = probs.iter_rows().collect();
            value += weights.entropy_balance_w * entropy_balance_loss(&batch)?;
            for (r, g) in entropy_balance_grad(&batch)?.iter().enumerate() {
                add_scaled(grad_p.row_mut(r), g, w * weights.entropy_balance_w);
            }
            (w, value)
        }
        UnsupervisedTerm::PushAway => {
            let w = ramp_factor(epoch, weights.ramp_epochs);
            let inv = 1.0 / rows as f64;
            let c = weights.push_away_c;
            let mut value = 0.0;
            for (r, target) in targets.push_away.iter().enumerate() {
                if let Some(label) = *target {
                    let p = probs.row(r);
                    value += push_away_loss(p, label, c)? * inv;
                    add_scaled(grad_p.row_mut(r), &push_away_grad(p, label, c)?, w * inv);
                }
            }
            (w, value)
        }
    };

    let mut grad_z = Matrix::zeros(rows, m);
    for r in 0..rows {
        let gz = probs_grad_to_logits(probs.row(r), grad_p.row(r));
        grad_z.row_mut(r).copy_from_slice(&gz);
    }
    Ok((
        LossBreakdown {
            total: supervised + weight * unsupervised,
            supervised,
            unsupervised,
            unsupervised_weight: weight,
        },
        grad_z,
    ))
}

fn add_scaled(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}
