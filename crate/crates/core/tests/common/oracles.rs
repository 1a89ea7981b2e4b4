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

//! Reference implementations written directly from the formulas, kept
//! independent of the library code they check.

use odkd::pose::{Keypoint, PoseInstance, ABSENT, OCCLUDED, VISIBLE};
use rand::Rng;

pub fn mse(p: &[f64], t: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += (p[i] - t[i]) * (p[i] - t[i]);
    }
    s / p.len() as f64
}

pub fn bce(z: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..z.len() {
        let q = 1.0 / (1.0 + (-z[i]).exp());
        s -= y[i] * q.ln() + (1.0 - y[i]) * (1.0 - q).ln();
    }
    s / z.len() as f64
}

pub fn threshold(p: &[f64], beta: f64) -> Vec<f64> {
    p.iter()
        .map(|&v| if v > beta { 1.0 } else { 0.0 })
        .collect()
}

pub fn softmax(x: &[f64], t: f64) -> Vec<f64> {
    let e: Vec<f64> = x.iter().map(|v| (v / t).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Per-channel cross-entropy against `hard` plus temperature-scaled KL,
/// averaged over channels. Arguments are `[k][pixels]`.
pub fn kd(s: &[&[f64]], t: &[&[f64]], temp: f64, alpha: f64, hard: &[&[f64]]) -> f64 {
    let k = s.len();
    let mut total = 0.0;
    for j in 0..k {
        let q = softmax(s[j], 1.0);
        let ys = softmax(s[j], temp);
        let yt = softmax(t[j], temp);
        let mut ce = 0.0;
        let mut kl = 0.0;
        for i in 0..q.len() {
            ce -= hard[j][i] * q[i].ln();
            kl += ys[i] * (ys[i] / yt[i]).ln();
        }
        total += (1.0 - alpha) * ce + alpha * temp * temp * kl;
    }
    total / k as f64
}

pub fn oks(pred: &PoseInstance, gt: &PoseInstance, k: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..gt.keypoints.len() {
        let g = gt.keypoints[j];
        if g.v == ABSENT {
            continue;
        }
        let p = pred.keypoints[j];
        let d2 = (p.x - g.x) * (p.x - g.x) + (p.y - g.y) * (p.y - g.y);
        num += (-d2 / (2.0 * (gt.scale * gt.scale) * k[j] * k[j])).exp();
        den += 1.0;
    }
    num / den
}

/// Enumerates every (instance, threshold) cell; each prediction is matched
/// to its own ground truth, so precision and recall coincide.
pub fn ap(scores: &[f64], thresholds: &[f64]) -> f64 {
    let mut hits = vec![0usize; thresholds.len()];
    for &s in scores {
        for (t, &thr) in thresholds.iter().enumerate() {
            if s >= thr {
                hits[t] += 1;
            }
        }
    }
    let n = scores.len() as f64;
    hits.iter().map(|&h| h as f64 / n).sum::<f64>() / thresholds.len() as f64
}

pub fn random_pose(rng: &mut impl Rng, joints: usize) -> PoseInstance {
    let mut kps: Vec<Keypoint> = (0..joints)
        .map(|_| {
            let v = [ABSENT, OCCLUDED, VISIBLE, VISIBLE][rng.gen_range(0..4)];
            Keypoint::new(rng.gen_range(0.0..48.0), rng.gen_range(0.0..64.0), v)
        })
        .collect();
    kps[0].v = VISIBLE;
    PoseInstance::new(0, kps)
}

pub fn jitter(rng: &mut impl Rng, gt: &PoseInstance, spread: f64) -> PoseInstance {
    let kps = gt
        .keypoints
        .iter()
        .map(|k| {
            Keypoint::new(
                k.x + rng.gen_range(-spread..=spread),
                k.y + rng.gen_range(-spread..=spread),
                VISIBLE,
            )
        })
        .collect();
    PoseInstance::new(0, kps)
}

/// Raises `ch` to a Gaussian bump of height `amp` at a continuous grid
/// position (pointwise max with what is already there).
pub fn gaussian(ch: &mut [f64], w: usize, center: (f64, f64), sigma: f64, amp: f64) {
    for (i, v) in ch.iter_mut().enumerate() {
        let (r, c) = ((i / w) as f64, (i % w) as f64);
        let d2 = (r - center.0).powi(2) + (c - center.1).powi(2);
        *v = v.max(amp * (-d2 / (2.0 * sigma * sigma)).exp());
    }
}
