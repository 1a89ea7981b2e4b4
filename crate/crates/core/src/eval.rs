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

//! Object keypoint similarity and the AP/AR summary over an OKS ladder.
//!
//! Predictions are associated one-to-one with ground-truth instances (one
//! crop, one prediction), so at every threshold precision and recall are
//! both the fraction of instances whose OKS clears it. This is not the
//! score-ranked greedy matcher of the COCO toolkit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::heatmap::{decode, flip_merge, mirror_swap, FlipPairs, HeatmapSet};
use crate::nn::{ModelSpec, ParamStore};
use crate::pose::PoseInstance;
use crate::synth::{model_input, InputKind, SyntheticSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OksParams {
    /// Per-joint falloff constants.
    pub k: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Instances with `scale^2` below this area count as medium, the rest as large.
    pub medium_large_area: f64,
}

impl OksParams {
    pub fn uniform(joints: usize, k: f64) -> Self {
        Self {
            k: vec![k; joints],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.is_empty() || self.k.iter().any(|&k| !(k > 0.0)) {
            return Err(Error::InvalidArgument(
                "OKS falloff constants must be positive".into(),
            ));
        }
        if self.thresholds.is_empty()
            || self.thresholds.windows(2).any(|w| w[0] >= w[1])
            || self.thresholds.iter().any(|t| !(0.0..=1.0).contains(t))
        {
            return Err(Error::InvalidArgument(
                "OKS thresholds must be strictly increasing within [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// The 0.50, 0.55, ..., 0.95 ladder.
pub fn standard_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

impl Default for OksParams {
    fn default() -> Self {
        Self {
            k: vec![0.1; crate::synth::JOINTS],
            thresholds: standard_thresholds(),
            medium_large_area: 32.0 * 32.0,
        }
    }
}

pub fn oks(pred: &PoseInstance, gt: &PoseInstance, params: &OksParams) -> Result<f64> {
    if pred.joints() != gt.joints() || params.k.len() != gt.joints() {
        return Err(Error::InvalidArgument(format!(
            "OKS over {} predicted / {} ground-truth joints with {} constants",
            pred.joints(),
            gt.joints(),
            params.k.len()
        )));
    }
    let s2 = gt.scale * gt.scale;
    let mut sum = 0.0;
    let mut labeled = 0usize;
    for ((p, g), &k) in pred.keypoints.iter().zip(&gt.keypoints).zip(&params.k) {
        if !g.is_labeled() {
            continue;
        }
        let d2 = (p.x - g.x).powi(2) + (p.y - g.y).powi(2);
        sum += (-d2 / (2.0 * s2 * k * k)).exp();
        labeled += 1;
    }
    if labeled == 0 || s2 == 0.0 {
        return Err(Error::UndefinedOks);
    }
    Ok(sum / labeled as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// `None` when the bucket is empty.
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub ar: f64,
    pub per_threshold: Vec<ThresholdRow>,
    pub instances: usize,
    pub mean_oks: f64,
}

fn pass_rate(scores: &[f64], t: f64) -> f64 {
    scores.iter().filter(|&&s| s >= t).count() as f64 / scores.len() as f64
}

fn ladder_mean(scores: &[f64], thresholds: &[f64]) -> f64 {
    thresholds
        .iter()
        .map(|&t| pass_rate(scores, t))
        .sum::<f64>()
        / thresholds.len() as f64
}

/// Aggregates already-computed OKS scores together with each ground-truth area.
pub fn summarize(scores: &[(f64, f64)], params: &OksParams) -> Result<EvalResult> {
    if scores.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    params.validate()?;
    let all: Vec<f64> = scores.iter().map(|s| s.0).collect();
    let bucket = |medium: bool| -> Option<f64> {
        let s: Vec<f64> = scores
            .iter()
            .filter(|(_, area)| (*area < params.medium_large_area) == medium)
            .map(|s| s.0)
            .collect();
        (!s.is_empty()).then(|| ladder_mean(&s, &params.thresholds))
    };
    let per_threshold: Vec<ThresholdRow> = params
        .thresholds
        .iter()
        .map(|&t| {
            let r = pass_rate(&all, t);
            ThresholdRow {
                threshold: t,
                precision: r,
                recall: r,
            }
        })
        .collect();
    let ap = per_threshold.iter().map(|r| r.precision).sum::<f64>() / per_threshold.len() as f64;
    Ok(EvalResult {
        ap,
        ap50: pass_rate(&all, 0.5),
        ap75: pass_rate(&all, 0.75),
        ap_medium: bucket(true),
        ap_large: bucket(false),
        ar: ap,
        per_threshold,
        instances: all.len(),
        mean_oks: all.iter().sum::<f64>() / all.len() as f64,
    })
}

/// AP/AR over one-to-one `(prediction, ground truth)` pairs.
pub fn ap_ar(pairs: &[(PoseInstance, PoseInstance)], params: &OksParams) -> Result<EvalResult> {
    let scores = pairs
        .iter()
        .map(|(p, g)| Ok((oks(p, g, params)?, g.area())))
        .collect::<Result<Vec<_>>>()?;
    summarize(&scores, params)
}

/// Produces probability heatmaps for a sample, or for its mirror image.
pub trait HeatmapPredictor: Sync {
    fn predict(&self, sample: &SyntheticSample, flipped: bool) -> Result<HeatmapSet>;
}

pub struct NetworkPredictor<'a> {
    pub model: &'a ModelSpec,
    pub params: &'a ParamStore,
    pub input: InputKind,
}

impl HeatmapPredictor for NetworkPredictor<'_> {
    fn predict(&self, sample: &SyntheticSample, flipped: bool) -> Result<HeatmapSet> {
        let x = model_input(sample, self.input, flipped)?;
        self.model.predict(self.params, &x)
    }
}

/// Emits the rendered target heatmaps; on mirrored input, their mirror image.
pub struct GroundTruthPredictor {
    pub pairs: FlipPairs,
}

impl HeatmapPredictor for GroundTruthPredictor {
    fn predict(&self, sample: &SyntheticSample, flipped: bool) -> Result<HeatmapSet> {
        let h = sample.target_heatmaps().clone();
        if flipped {
            mirror_swap(&h, &self.pairs)
        } else {
            Ok(h)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub stride: usize,
    pub flip: bool,
    pub quarter_offset: bool,
    pub oks: OksParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            stride: 2,
            flip: true,
            quarter_offset: true,
            oks: OksParams::default(),
        }
    }
}

/// Predicted pose for the target of one sample.
pub fn predict_pose(
    predictor: &dyn HeatmapPredictor,
    sample: &SyntheticSample,
    cfg: &EvalConfig,
    pairs: &FlipPairs,
) -> Result<PoseInstance> {
    let mut h = predictor.predict(sample, false)?;
    if cfg.flip {
        h = flip_merge(&h, &predictor.predict(sample, true)?, pairs)?;
    }
    let mut pose = decode(&h, cfg.stride as f64, cfg.quarter_offset)?;
    pose.id = sample.target().id;
    Ok(pose)
}

/// Scores every sample's target instance; results are reduced in sample order.
pub fn evaluate_model(
    predictor: &dyn HeatmapPredictor,
    samples: &[SyntheticSample],
    cfg: &EvalConfig,
    pairs: &FlipPairs,
    exec: Execution,
) -> Result<EvalResult> {
    let scores = exec
        .map(samples, |s| {
            let pred = predict_pose(predictor, s, cfg, pairs)?;
            Ok((oks(&pred, s.target(), &cfg.oks)?, s.target().area()))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    summarize(&scores, &cfg.oks)
}
