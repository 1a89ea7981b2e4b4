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

use serde::{Deserialize, Serialize};

/// Keypoint label state as in COCO annotations.
pub const ABSENT: u8 = 0;
pub const OCCLUDED: u8 = 1;
pub const VISIBLE: u8 = 2;

/// A keypoint in continuous image coordinates, where pixel `(i, j)` sits at
/// `x = i, y = j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// 0 = absent, 1 = labeled but occluded, 2 = labeled and visible.
    pub v: u8,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, v: u8) -> Self {
        Self { x, y, v }
    }

    pub fn is_labeled(&self) -> bool {
        self.v > ABSENT
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseInstance {
    pub id: u32,
    pub keypoints: Vec<Keypoint>,
    /// Object scale: square root of the labeled-keypoint bounding-box area.
    pub scale: f64,
}

impl PoseInstance {
    /// Builds an instance whose scale is derived from its labeled keypoints.
    pub fn new(id: u32, keypoints: Vec<Keypoint>) -> Self {
        let scale = keypoint_scale(&keypoints);
        Self {
            id,
            keypoints,
            scale,
        }
    }

    pub fn joints(&self) -> usize {
        self.keypoints.len()
    }

    pub fn labeled_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.is_labeled()).count()
    }

    /// Squared scale, i.e. the bounding-box area used for size buckets.
    pub fn area(&self) -> f64 {
        self.scale * self.scale
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            id: self.id,
            keypoints: self
                .keypoints
                .iter()
                .map(|k| Keypoint::new(k.x * factor, k.y * factor, k.v))
                .collect(),
            scale: self.scale * factor,
        }
    }
}

/// `sqrt(w * h)` of the labeled keypoints' tight box, each side floored at
/// one pixel; zero when nothing is labeled.
pub fn keypoint_scale(keypoints: &[Keypoint]) -> f64 {
    let labeled: Vec<_> = keypoints.iter().filter(|k| k.is_labeled()).collect();
    if labeled.is_empty() {
        return 0.0;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for k in labeled {
        x0 = x0.min(k.x);
        x1 = x1.max(k.x);
        y0 = y0.min(k.y);
        y1 = y1.max(k.y);
    }
    ((x1 - x0).max(1.0) * (y1 - y0).max(1.0)).sqrt()
}
