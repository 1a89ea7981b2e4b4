// Copyright 2026 The ODKD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Heatmap losses. Every function returns the scalar value together with
//! its gradient with respect to the trainee-side input (the first argument);
//! teacher and ground-truth arguments are constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{binarize, BinaryHeatmapSet, HeatmapKind, HeatmapSet};
use crate::tensor::Tensor;

/// Balance factors, temperature and binarization thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// ST -> PT distillation weight.
    pub alpha0: f64,
    /// ST -> S distillation weight.
    pub alpha1: f64,
    /// PT -> S distillation weight.
    pub alpha2: f64,
    pub temperature: f64,
    /// Threshold applied to ground-truth Gaussians.
    pub beta_gt: f64,
    /// Threshold applied to teacher probability maps.
    pub beta_teacher: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha0: 0.5,
            alpha1: 0.5,
            alpha2: 0.5,
            temperature: 1.0,
            beta_gt: 0.6,
            beta_teacher: 0.3,
        }
    }
}

impl LossWeights {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, a) in [
            ("alpha0", self.alpha0),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
        ] {
            if !(0.0..=1.0).contains(&a) {
                v.push(format!("{name} = {a} is outside [0, 1]"));
            }
        }
        for (name, b) in [
            ("beta_gt", self.beta_gt),
            ("beta_teacher", self.beta_teacher),
        ] {
            if !(0.0..1.0).contains(&b) {
                v.push(format!("{name} = {b} is outside [0, 1)"));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            v.push(format!(
                "temperature = {} must be positive",
                self.temperature
            ));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Tensor,
}

impl LossOutput {
    /// `wa * a + wb * b`, for value and gradient alike.
    pub fn blend(a: LossOutput, wa: f64, b: LossOutput, wb: f64) -> Result<LossOutput> {
        let grad = a.grad.zip_map(&b.grad, |x, y| wa * x + wb * y)?;
        Ok(LossOutput {
            value: wa * a.value + wb * b.value,
            grad,
        })
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    b.expect_shape(a.shape(), op)
}

/// Squared error averaged over pixels, then over joints.
pub fn mse_loss(pred: &HeatmapSet, target: &HeatmapSet) -> Result<LossOutput> {
    same_shape(pred.values(), target.values(), "mse_loss")?;
    let n = pred.values().len() as f64;
    let diff = pred.values().zip_map(target.values(), |a, b| a - b)?;
    let value = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    Ok(LossOutput {
        value,
        grad: diff.map(|d| 2.0 * d / n),
    })
}

/// Pixelwise binary cross-entropy of `sigmoid(logits)` against a binary
/// target, averaged over every pixel of every joint.
pub fn bce_loss(logits: &HeatmapSet, target: &BinaryHeatmapSet) -> Result<LossOutput> {
    if logits.kind() != HeatmapKind::Logits {
        return Err(Error::InvalidArgument(format!(
            "bce_loss needs logits, got {:?}",
            logits.kind()
        )));
    }
    same_shape(logits.values(), target.values(), "bce_loss")?;
    let n = logits.values().len() as f64;
    let mut value = 0.0;
    let mut grad = Tensor::zeros(logits.shape());
    for ((g, &x), &p) in grad
        .data_mut()
        .iter_mut()
        .zip(logits.values().data())
        .zip(target.values().data())
    {
        // -(p log q + (1 - p) log(1 - q)) with q = sigmoid(x)
        value += x.max(0.0) - x * p + (-x.abs()).exp().ln_1p();
        *g = (crate::nn::sigmoid(x) - p) / n;
    }
    Ok(LossOutput {
        value: value / n,
        grad,
    })
}

fn log_softmax(xs: &[f64], scale: f64) -> Vec<f64> {
    let m = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b * scale));
    let lse = m + xs.iter().map(|&x| (x * scale - m).exp()).sum::<f64>().ln();
    xs.iter().map(|&x| x * scale - lse).collect()
}

/// Generic response distillation over a spatial softmax per joint:
/// `(1 - alpha) * CE(softmax(s), hard) + alpha * T^2 * KL(softmax(s/T) || softmax(t/T))`,
/// averaged over joints. `hard_target` holds a per-joint target
/// distribution over pixels.
pub fn kd_generic(
    student_logits: &HeatmapSet,
    teacher_logits: &HeatmapSet,
    temperature: f64,
    alpha: f64,
    hard_target: &HeatmapSet,
) -> Result<LossOutput> {
    same_shape(
        student_logits.values(),
        teacher_logits.values(),
        "kd_generic",
    )?;
    same_shape(student_logits.values(), hard_target.values(), "kd_generic")?;
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let k = student_logits.joints();
    let inv_t = 1.0 / temperature;
    let t2 = temperature * temperature;
    let mut ce = LossOutput {
        value: 0.0,
        grad: Tensor::zeros(student_logits.shape()),
    };
    let mut kd = ce.clone();
    for j in 0..k {
        let s = student_logits.values().channel(j);
        let t = teacher_logits.values().channel(j);
        let target = hard_target.values().channel(j);
        let log_q = log_softmax(s, 1.0);
        let log_ys = log_softmax(s, inv_t);
        let log_yt = log_softmax(t, inv_t);
        let target_mass: f64 = target.iter().sum();
        ce.value -= target.iter().zip(&log_q).map(|(p, lq)| p * lq).sum::<f64>();
        let ratio: Vec<f64> = log_ys.iter().zip(&log_yt).map(|(a, b)| a - b).collect();
        let kl: f64 = log_ys.iter().zip(&ratio).map(|(ly, r)| ly.exp() * r).sum();
        kd.value += t2 * kl;
        let (gc, gk) = (ce.grad.channel_mut(j), kd.grad.channel_mut(j));
        for i in 0..s.len() {
            gc[i] = log_q[i].exp() * target_mass - target[i];
            // d/ds_i of KL(softmax(s/T) || y_t) = ys_i (r_i - KL) / T
            gk[i] = t2 * log_ys[i].exp() * (ratio[i] - kl) * inv_t;
        }
    }
    let kf = k as f64;
    for part in [&mut ce, &mut kd] {
        part.value /= kf;
        part.grad.scale(1.0 / kf);
    }
    LossOutput::blend(ce, 1.0 - alpha, kd, alpha)
}

/// Senior-teacher loss: plain MSE against ground truth.
pub fn loss_st(pred: &HeatmapSet, gt: &HeatmapSet) -> Result<LossOutput> {
    mse_loss(pred, gt)
}

/// Primary-teacher loss: MSE to ground truth blended with MSE to the
/// senior teacher's prediction.
pub fn loss_pt(
    pt_pred: &HeatmapSet,
    gt: &HeatmapSet,
    st_pred: &HeatmapSet,
    alpha0: f64,
) -> Result<LossOutput> {
    let sup = mse_loss(pt_pred, gt)?;
    let kd = mse_loss(pt_pred, st_pred)?;
    LossOutput::blend(sup, 1.0 - alpha0, kd, alpha0)
}

fn binarized_student_loss(
    s_logits: &HeatmapSet,
    gt_binary: &BinaryHeatmapSet,
    teacher_prob: &HeatmapSet,
    beta_teacher: f64,
    alpha: f64,
) -> Result<LossOutput> {
    let sup = bce_loss(s_logits, gt_binary)?;
    let kd = bce_loss(s_logits, &binarize(teacher_prob, beta_teacher)?)?;
    LossOutput::blend(sup, 1.0 - alpha, kd, alpha)
}

/// Student loss against the senior teacher's binarized map.
pub fn loss_s1(
    s_logits: &HeatmapSet,
    gt_binary: &BinaryHeatmapSet,
    st_prob: &HeatmapSet,
    beta_teacher: f64,
    alpha1: f64,
) -> Result<LossOutput> {
    binarized_student_loss(s_logits, gt_binary, st_prob, beta_teacher, alpha1)
}

/// Student loss against the primary teacher's binarized map.
pub fn loss_s2(
    s_logits: &HeatmapSet,
    gt_binary: &BinaryHeatmapSet,
    pt_prob: &HeatmapSet,
    beta_teacher: f64,
    alpha2: f64,
) -> Result<LossOutput> {
    binarized_student_loss(s_logits, gt_binary, pt_prob, beta_teacher, alpha2)
}

/// Both teachers at once: the distillation slot is split evenly between them,
/// `(1 - alpha) * bce(gt) + alpha/2 * bce(st) + alpha/2 * bce(pt)`.
pub fn loss_dual(
    s_logits: &HeatmapSet,
    gt_binary: &BinaryHeatmapSet,
    st_prob: &HeatmapSet,
    pt_prob: &HeatmapSet,
    beta_teacher: f64,
    alpha: f64,
) -> Result<LossOutput> {
    let sup = bce_loss(s_logits, gt_binary)?;
    let st = bce_loss(s_logits, &binarize(st_prob, beta_teacher)?)?;
    let pt = bce_loss(s_logits, &binarize(pt_prob, beta_teacher)?)?;
    let kd = LossOutput::blend(st, 0.5, pt, 0.5)?;
    LossOutput::blend(sup, 1.0 - alpha, kd, alpha)
}
