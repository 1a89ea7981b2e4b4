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

//! Synthetic keypoint scenes.
//!
//! Each sample is a top-down crop: instance 0 is the target person placed
//! near the centre, further instances are distractors that may overlap and
//! occlude it. Figures are five-joint stick people (head, hands, feet)
//! drawn as capsules over a noisy background with limb-like clutter. The
//! segmentation mask is the union of the figure silhouettes, so clutter is
//! only separable from people with the mask channel.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::heatmap::{from_nested, to_nested, FlipPairs, HeatmapSet};
use crate::pose::{Keypoint, PoseInstance, ABSENT, OCCLUDED, VISIBLE};
use crate::seeds;
use crate::tensor::Tensor;

pub const HEAD: usize = 0;
pub const LEFT_HAND: usize = 1;
pub const RIGHT_HAND: usize = 2;
pub const LEFT_FOOT: usize = 3;
pub const RIGHT_FOOT: usize = 4;
pub const JOINTS: usize = 5;
pub const JOINT_NAMES: [&str; JOINTS] =
    ["head", "left_hand", "right_hand", "left_foot", "right_foot"];

/// Left/right partners under a horizontal flip.
pub fn flip_pairs() -> FlipPairs {
    FlipPairs::from_pairs(JOINTS, &[(LEFT_HAND, RIGHT_HAND), (LEFT_FOOT, RIGHT_FOOT)])
        .expect("static pairing is valid")
}

pub fn default_skeleton() -> Vec<(usize, usize)> {
    vec![
        (HEAD, LEFT_HAND),
        (HEAD, RIGHT_HAND),
        (HEAD, LEFT_FOOT),
        (HEAD, RIGHT_FOOT),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Image pixels per heatmap cell.
    pub stride: usize,
    pub joints: usize,
    pub skeleton: Vec<(usize, usize)>,
    pub min_instances: usize,
    pub max_instances: usize,
    pub overlap_prob: f64,
    /// Target Gaussian standard deviation, in heatmap cells.
    pub sigma: f64,
    /// Limb-like distractor strokes in the background.
    pub clutter: usize,
    pub noise: f64,
    /// Snap keypoints onto heatmap grid points.
    pub snap_to_grid: bool,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 48,
            stride: 2,
            joints: JOINTS,
            skeleton: default_skeleton(),
            min_instances: 1,
            max_instances: 2,
            overlap_prob: 0.3,
            sigma: 1.5,
            clutter: 4,
            noise: 0.03,
            snap_to_grid: false,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn heatmap_size(&self) -> (usize, usize) {
        (self.height / self.stride, self.width / self.stride)
    }

    pub fn validate(&self) -> Result<()> {
        let fail =
            |field: &str, why: String| Err(Error::InvalidArgument(format!("scene.{field}: {why}")));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return fail("sigma", format!("must be positive, got {}", self.sigma));
        }
        if self.stride == 0 {
            return fail("stride", "must be at least 1".into());
        }
        if self.height < 24 || self.width < 24 {
            return fail(
                "height",
                format!("{}x{} is too small for a figure", self.height, self.width),
            );
        }
        if !self.height.is_multiple_of(self.stride) || !self.width.is_multiple_of(self.stride) {
            return fail(
                "stride",
                format!(
                    "image {}x{} is not a multiple of {}",
                    self.height, self.width, self.stride
                ),
            );
        }
        if self.joints != JOINTS {
            return fail(
                "joints",
                format!(
                    "the stick-figure model has {JOINTS} joints, got {}",
                    self.joints
                ),
            );
        }
        if self.skeleton.len() != JOINTS - 1
            || self
                .skeleton
                .iter()
                .any(|&(a, b)| a >= JOINTS || b >= JOINTS || a == b)
            || !spans_all_joints(&self.skeleton)
        {
            return fail(
                "skeleton",
                format!("{:?} is not a tree over {JOINTS} joints", self.skeleton),
            );
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return fail(
                "min_instances",
                format!(
                    "range {}..={} is invalid",
                    self.min_instances, self.max_instances
                ),
            );
        }
        if !(0.0..=1.0).contains(&self.overlap_prob) {
            return fail(
                "overlap_prob",
                format!("must lie in [0, 1], got {}", self.overlap_prob),
            );
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return fail("noise", format!("must lie in [0, 0.5], got {}", self.noise));
        }
        Ok(())
    }
}

fn spans_all_joints(edges: &[(usize, usize)]) -> bool {
    let mut reached = [false; JOINTS];
    reached[edges.first().map_or(0, |e| e.0)] = true;
    for _ in 0..JOINTS {
        for &(a, b) in edges {
            if reached[a] || reached[b] {
                reached[a] = true;
                reached[b] = true;
            }
        }
    }
    reached.iter().all(|&r| r)
}

/// Binary `(H, W)` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width || data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument(
                "mask must hold height*width values in {0, 1}".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.width) {
            row.reverse();
        }
        Self { data, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub index: u64,
    /// `(3, H, W)` in `[0, 1]`.
    pub image: Tensor,
    pub mask: Mask,
    /// Instance 0 is the target of the crop.
    pub instances: Vec<PoseInstance>,
    /// One probability heatmap set per instance.
    pub gt_heatmaps: Vec<HeatmapSet>,
}

impl SyntheticSample {
    pub fn target(&self) -> &PoseInstance {
        &self.instances[0]
    }

    pub fn target_heatmaps(&self) -> &HeatmapSet {
        &self.gt_heatmaps[0]
    }

    pub fn joints(&self) -> usize {
        self.instances[0].joints()
    }
}

/// Rendering geometry of one figure, derived from its keypoints alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureGeometry {
    pub keypoints: [(f64, f64); JOINTS],
    pub neck: (f64, f64),
    pub hip: (f64, f64),
    pub limb_radius: f64,
    pub head_radius: f64,
}

impl FigureGeometry {
    pub fn from_keypoints(kps: &[Keypoint]) -> Self {
        let p: [(f64, f64); JOINTS] = std::array::from_fn(|j| (kps[j].x, kps[j].y));
        let feet = (
            0.5 * (p[LEFT_FOOT].0 + p[RIGHT_FOOT].0),
            0.5 * (p[LEFT_FOOT].1 + p[RIGHT_FOOT].1),
        );
        let axis = (feet.0 - p[HEAD].0, feet.1 - p[HEAD].1);
        let length = axis.0.hypot(axis.1);
        let along = |t: f64| (p[HEAD].0 + t * axis.0, p[HEAD].1 + t * axis.1);
        Self {
            keypoints: p,
            neck: along(0.2),
            hip: along(0.6),
            limb_radius: (0.045 * length).max(1.0),
            head_radius: (0.09 * length).max(1.5),
        }
    }

    /// Torso point a joint's limb hangs from.
    fn anchor(&self, joint: usize) -> (f64, f64) {
        match joint {
            LEFT_FOOT | RIGHT_FOOT => self.hip,
            _ => self.neck,
        }
    }

    /// Capsules `(a, b, radius)` covering the figure. A skeleton edge
    /// `(i, j)` is drawn as the body path `i -> anchor(i) -> anchor(j) -> j`.
    pub fn capsules(&self, skeleton: &[(usize, usize)]) -> Vec<((f64, f64), (f64, f64), f64)> {
        let r = self.limb_radius;
        let mut out = vec![(self.keypoints[HEAD], self.keypoints[HEAD], self.head_radius)];
        for &(i, j) in skeleton {
            let path = [
                self.keypoints[i],
                self.anchor(i),
                self.anchor(j),
                self.keypoints[j],
            ];
            for w in path.windows(2) {
                if w[0] != w[1] {
                    out.push((w[0], w[1], r));
                }
            }
        }
        out
    }
}

pub fn segment_distance_sq(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len_sq).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    (p.0 - cx).powi(2) + (p.1 - cy).powi(2)
}

/// Calls `paint(y, x)` for every pixel within `radius` of segment `a`-`b`.
fn raster_capsule(
    a: (f64, f64),
    b: (f64, f64),
    radius: f64,
    height: usize,
    width: usize,
    mut paint: impl FnMut(usize, usize),
) {
    let x0 = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
    let y0 = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
    let x1 = (a.0.max(b.0) + radius).ceil().min(width as f64 - 1.0);
    let y1 = (a.1.max(b.1) + radius).ceil().min(height as f64 - 1.0);
    if x1 < 0.0 || y1 < 0.0 {
        return;
    }
    let r2 = radius * radius;
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            if segment_distance_sq((x as f64, y as f64), a, b) <= r2 {
                paint(y, x);
            }
        }
    }
}

/// Heatmap grid point nearest to an image-space keypoint, clamped to the grid.
pub fn grid_cell(kp: &Keypoint, stride: usize, size: (usize, usize)) -> (usize, usize) {
    let s = stride as f64;
    let r = (kp.y / s).round().clamp(0.0, (size.0 - 1) as f64) as usize;
    let c = (kp.x / s).round().clamp(0.0, (size.1 - 1) as f64) as usize;
    (r, c)
}

/// Gaussian targets centred on the grid point nearest each labeled keypoint;
/// absent joints get an all-zero channel.
pub fn render_gt_heatmaps(
    instance: &PoseInstance,
    size: (usize, usize),
    stride: usize,
    sigma: f64,
) -> Result<HeatmapSet> {
    if !(sigma > 0.0) || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "render needs sigma > 0 and stride >= 1, got {sigma}, {stride}"
        )));
    }
    let (h, w) = size;
    let k = instance.joints();
    let mut t = Tensor::zeros(&[k, h, w]);
    let denom = 2.0 * sigma * sigma;
    for (j, kp) in instance.keypoints.iter().enumerate() {
        if !kp.is_labeled() {
            continue;
        }
        let (cr, cc) = grid_cell(kp, stride, size);
        let ch = t.channel_mut(j);
        for r in 0..h {
            for c in 0..w {
                let d2 = (r as f64 - cr as f64).powi(2) + (c as f64 - cc as f64).powi(2);
                ch[r * w + c] = (-d2 / denom).exp();
            }
        }
    }
    HeatmapSet::prob(t)
}

/// Four-channel senior-teacher input: RGB followed by the mask.
pub fn make_st_input(image: &Tensor, mask: &Mask) -> Result<Tensor> {
    let (c, h, w) = image.dims3()?;
    if c != 3 || h != mask.height || w != mask.width {
        return Err(Error::shape(
            "st input",
            &[3, mask.height, mask.width],
            image.shape(),
        ));
    }
    let mut data = Vec::with_capacity(4 * h * w);
    data.extend_from_slice(image.data());
    data.extend(mask.data().iter().map(|&m| m as f64));
    Tensor::new(vec![4, h, w], data)
}

/// Which image planes a network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// RGB only.
    Image,
    /// RGB plus the segmentation mask.
    ImageAndMask,
}

impl InputKind {
    pub fn channels(self) -> usize {
        match self {
            InputKind::Image => 3,
            InputKind::ImageAndMask => 4,
        }
    }
}

/// Network input for a sample, optionally mirrored horizontally.
pub fn model_input(sample: &SyntheticSample, kind: InputKind, flipped: bool) -> Result<Tensor> {
    let input = match kind {
        InputKind::Image => sample.image.clone(),
        InputKind::ImageAndMask => make_st_input(&sample.image, &sample.mask)?,
    };
    Ok(if flipped {
        input.flip_horizontal()
    } else {
        input
    })
}

struct Palette {
    arms: [f64; 3],
    legs: [f64; 3],
    body: [f64; 3],
}

const BASE_COLOURS: [[f64; 3]; 3] = [[0.95, 0.35, 0.2], [0.25, 0.45, 0.95], [0.95, 0.85, 0.3]];

fn jitter(rng: &mut ChaCha8Rng, c: [f64; 3], gain: f64) -> [f64; 3] {
    c.map(|v| ((v + rng.gen_range(-0.08..0.08)) * gain).clamp(0.0, 1.0))
}

fn sample_pose(rng: &mut ChaCha8Rng, centre: (f64, f64), body: f64) -> Vec<Keypoint> {
    let head = (centre.0 + rng.gen_range(-2.0..2.0), centre.1 - 0.5 * body);
    let feet_y = centre.1 + 0.5 * body;
    let stance = rng.gen_range(0.12..0.32) * body;
    let lf = (centre.0 - stance, feet_y + rng.gen_range(-1.5..1.5));
    let rf = (
        centre.0 + stance * rng.gen_range(0.7..1.3),
        feet_y + rng.gen_range(-1.5..1.5),
    );
    let mut kps = vec![Keypoint::new(head.0, head.1, VISIBLE); JOINTS];
    kps[LEFT_FOOT] = Keypoint::new(lf.0, lf.1, VISIBLE);
    kps[RIGHT_FOOT] = Keypoint::new(rf.0, rf.1, VISIBLE);
    let neck = FigureGeometry::from_keypoints(&kps).neck;
    for (joint, side) in [(LEFT_HAND, -1.0), (RIGHT_HAND, 1.0)] {
        let reach = rng.gen_range(0.28..0.45) * body;
        let angle = rng.gen_range(-70f64..65.0).to_radians();
        kps[joint] = Keypoint::new(
            neck.0 + side * reach * angle.cos().max(0.3),
            neck.1 + reach * angle.sin(),
            VISIBLE,
        );
    }
    kps
}

fn bbox(kps: &[Keypoint], margin: f64) -> (f64, f64, f64, f64) {
    let xs = kps.iter().map(|k| k.x);
    let ys = kps.iter().map(|k| k.y);
    (
        xs.clone().fold(f64::MAX, f64::min) - margin,
        ys.clone().fold(f64::MAX, f64::min) - margin,
        xs.fold(f64::MIN, f64::max) + margin,
        ys.fold(f64::MIN, f64::max) + margin,
    )
}

fn boxes_intersect(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> bool {
    a.0 < b.2 && b.0 < a.2 && a.1 < b.3 && b.1 < a.3
}

fn inside(kp: &Keypoint, cfg: &SceneConfig) -> bool {
    kp.x >= 0.0 && kp.y >= 0.0 && kp.x <= (cfg.width - 1) as f64 && kp.y <= (cfg.height - 1) as f64
}

fn snap(kps: &mut [Keypoint], stride: usize) {
    let s = stride as f64;
    for k in kps {
        k.x = (k.x / s).round() * s;
        k.y = (k.y / s).round() * s;
    }
}

const MAX_PLACEMENT_ATTEMPTS: usize = 64;

/// Deterministic in `(cfg, index)`.
pub fn generate_scene(cfg: &SceneConfig, index: u64) -> Result<SyntheticSample> {
    cfg.validate()?;
    let mut rng =
        ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[seeds::label("scene"), index]));
    let (h, w) = (cfg.height, cfg.width);
    let (hf, wf) = (h as f64, w as f64);
    let gen_err = |reason: &str| Error::Generation {
        index,
        reason: reason.to_string(),
    };

    // Target: centred, fully inside the frame.
    let mut poses: Vec<Vec<Keypoint>> = Vec::new();
    let mut placed = false;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let body = rng.gen_range(0.42..0.62) * hf;
        let centre = (
            0.5 * wf + rng.gen_range(-3.0..3.0),
            0.5 * hf + rng.gen_range(-3.0..3.0),
        );
        let mut kps = sample_pose(&mut rng, centre, body);
        if cfg.snap_to_grid {
            snap(&mut kps, cfg.stride);
        }
        let geo = FigureGeometry::from_keypoints(&kps);
        let m = geo.head_radius.max(geo.limb_radius);
        let (x0, y0, x1, y1) = bbox(&kps, m);
        if x0 >= 0.0 && y0 >= 0.0 && x1 <= wf - 1.0 && y1 <= hf - 1.0 {
            poses.push(kps);
            placed = true;
            break;
        }
    }
    if !placed {
        return Err(gen_err("could not fit the target figure inside the frame"));
    }

    let count = rng.gen_range(cfg.min_instances..=cfg.max_instances);
    let force_overlap = count > 1 && rng.gen_bool(cfg.overlap_prob);
    for extra in 1..count {
        let overlap = force_overlap && extra == 1;
        let target_box = bbox(&poses[0], 0.0);
        let mut done = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let body = rng.gen_range(0.35..0.55) * hf;
            let side = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            let dx = if overlap {
                rng.gen_range(0.15..0.4) * wf
            } else {
                rng.gen_range(0.75..1.1) * wf
            };
            let centre = (
                0.5 * wf + side * dx,
                0.5 * hf + rng.gen_range(-0.15..0.15) * hf,
            );
            let mut kps = sample_pose(&mut rng, centre, body);
            if cfg.snap_to_grid {
                snap(&mut kps, cfg.stride);
            }
            let geo = FigureGeometry::from_keypoints(&kps);
            let other = bbox(&kps, geo.limb_radius);
            let hits = poses.iter().any(|p| boxes_intersect(bbox(p, 0.0), other));
            let ok = if overlap {
                boxes_intersect(target_box, other)
            } else {
                !hits
            };
            if ok {
                poses.push(kps);
                done = true;
                break;
            }
        }
        if !done {
            return Err(gen_err("could not place a distractor instance"));
        }
    }

    // Background: per-channel base level, a linear ramp and pixel noise.
    let mut image = Tensor::zeros(&[3, h, w]);
    for c in 0..3 {
        let base = rng.gen_range(0.05..0.35);
        let (gx, gy) = (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
        let ch = image.channel_mut(c);
        for y in 0..h {
            for x in 0..w {
                ch[y * w + x] = base + gx * (x as f64 / wf - 0.5) + gy * (y as f64 / hf - 0.5);
            }
        }
    }
    for _ in 0..cfg.clutter {
        let a = (rng.gen_range(0.0..wf), rng.gen_range(0.0..hf));
        let len = rng.gen_range(0.12..0.3) * hf;
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let b = (a.0 + len * theta.cos(), a.1 + len * theta.sin());
        let base = BASE_COLOURS[rng.gen_range(0..3)];
        let colour = jitter(&mut rng, base, 1.0);
        let radius = rng.gen_range(1.0..1.6);
        raster_capsule(a, b, radius, h, w, |y, x| {
            for (c, v) in colour.iter().enumerate() {
                image.set3(c, y, x, *v);
            }
        });
    }

    // Figures, painted in a random order; later figures occlude earlier ones.
    let mut order: Vec<usize> = (0..poses.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut owner: Vec<i32> = vec![-1; h * w];
    for &inst in &order {
        let gain = if inst == 0 {
            1.0
        } else {
            rng.gen_range(0.45..0.7)
        };
        let palette = Palette {
            arms: jitter(&mut rng, BASE_COLOURS[0], gain),
            legs: jitter(&mut rng, BASE_COLOURS[1], gain),
            body: jitter(&mut rng, BASE_COLOURS[2], gain),
        };
        let geo = FigureGeometry::from_keypoints(&poses[inst]);
        for (a, b, r) in geo.capsules(&cfg.skeleton) {
            let colour = if a == geo.keypoints[LEFT_FOOT]
                || a == geo.keypoints[RIGHT_FOOT]
                || b == geo.keypoints[LEFT_FOOT]
                || b == geo.keypoints[RIGHT_FOOT]
            {
                palette.legs
            } else if a == geo.keypoints[LEFT_HAND]
                || a == geo.keypoints[RIGHT_HAND]
                || b == geo.keypoints[LEFT_HAND]
                || b == geo.keypoints[RIGHT_HAND]
            {
                palette.arms
            } else {
                palette.body
            };
            raster_capsule(a, b, r, h, w, |y, x| {
                owner[y * w + x] = inst as i32;
                for (c, v) in colour.iter().enumerate() {
                    image.set3(c, y, x, *v);
                }
            });
        }
    }
    let amp = cfg.noise;
    for v in image.data_mut() {
        *v = (*v + rng.gen_range(-amp..=amp)).clamp(0.0, 1.0);
    }
    let mask = Mask::new(h, w, owner.iter().map(|&o| (o >= 0) as u8).collect())?;

    let mut instances = Vec::with_capacity(poses.len());
    for (inst, mut kps) in poses.into_iter().enumerate() {
        for kp in kps.iter_mut() {
            kp.v = if !inside(kp, cfg) {
                ABSENT
            } else {
                let (px, py) = (kp.x.round() as usize, kp.y.round() as usize);
                if owner[py * w + px] == inst as i32 {
                    VISIBLE
                } else {
                    OCCLUDED
                }
            };
        }
        instances.push(PoseInstance::new(inst as u32, kps));
    }
    let gt_heatmaps = instances
        .iter()
        .map(|i| render_gt_heatmaps(i, cfg.heatmap_size(), cfg.stride, cfg.sigma))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticSample {
        index,
        image,
        mask,
        instances,
        gt_heatmaps,
    })
}

/// Samples `0..count`, generated independently by index.
pub fn generate_dataset(
    cfg: &SceneConfig,
    count: usize,
    exec: Execution,
) -> Result<Vec<SyntheticSample>> {
    cfg.validate()?;
    exec.map_range(count, |i| generate_scene(cfg, i as u64))
        .into_iter()
        .collect()
}

/// Same scene family, disjoint indices: the validation split starts at an
/// offset far beyond any training index.
pub const VALIDATION_OFFSET: u64 = 1 << 32;

pub fn generate_split(
    cfg: &SceneConfig,
    count: usize,
    offset: u64,
    exec: Execution,
) -> Result<Vec<SyntheticSample>> {
    cfg.validate()?;
    exec.map_range(count, |i| generate_scene(cfg, offset + i as u64))
        .into_iter()
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    index: u64,
    image: Vec<Vec<Vec<f64>>>,
    mask: Vec<Vec<u8>>,
    instances: Vec<PoseInstance>,
    heatmaps: Vec<Vec<Vec<Vec<f64>>>>,
}

fn to_record(s: &SyntheticSample) -> SampleRecord {
    SampleRecord {
        index: s.index,
        image: to_nested(&s.image),
        mask: s
            .mask
            .data()
            .chunks(s.mask.width)
            .map(<[u8]>::to_vec)
            .collect(),
        instances: s.instances.clone(),
        heatmaps: s
            .gt_heatmaps
            .iter()
            .map(|h| to_nested(h.values()))
            .collect(),
    }
}

fn from_record(
    r: SampleRecord,
    joints: &mut Option<usize>,
) -> std::result::Result<SyntheticSample, String> {
    let image = from_nested(&r.image).map_err(|e| format!("image: {e}"))?;
    let (c, h, w) = image.dims3().map_err(|e| e.to_string())?;
    if c != 3 {
        return Err(format!("image has {c} channels, expected 3"));
    }
    if r.mask.len() != h || r.mask.iter().any(|row| row.len() != w) {
        return Err(format!("mask is not {h}x{w}"));
    }
    let mask = Mask::new(h, w, r.mask.concat()).map_err(|e| format!("mask: {e}"))?;
    if r.instances.is_empty() {
        return Err("record has no instances".into());
    }
    if r.heatmaps.len() != r.instances.len() {
        return Err(format!(
            "{} heatmap sets for {} instances",
            r.heatmaps.len(),
            r.instances.len()
        ));
    }
    let k = *joints.get_or_insert(r.instances[0].joints());
    for inst in &r.instances {
        if inst.joints() != k {
            return Err(format!(
                "instance {} has {} keypoints, expected {k}",
                inst.id,
                inst.joints()
            ));
        }
    }
    let gt_heatmaps = r
        .heatmaps
        .iter()
        .map(|n| {
            let t = from_nested(n).map_err(|e| format!("heatmaps: {e}"))?;
            if t.shape()[0] != k {
                return Err(format!(
                    "heatmap set has {} channels, expected {k}",
                    t.shape()[0]
                ));
            }
            HeatmapSet::prob(t).map_err(|e| format!("heatmaps: {e}"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(SyntheticSample {
        index: r.index,
        image,
        mask,
        instances: r.instances,
        gt_heatmaps,
    })
}

/// One JSON record per line.
pub fn write_dataset(path: &Path, samples: &[SyntheticSample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for s in samples {
        serde_json::to_writer(&mut f, &to_record(s)).expect("record serializes");
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dataset written by [`write_dataset`]. When `joints` is given,
/// every record must carry that many keypoints per instance; otherwise the
/// first record fixes it.
pub fn read_dataset(path: &Path, joints: Option<usize>) -> Result<Vec<SyntheticSample>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut k = joints;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        out.push(from_record(record, &mut k).map_err(bad)?);
    }
    Ok(out)
}

/// Writes the image (channel mean) and mask side by side as a binary PGM.
pub fn export_pgm(sample: &SyntheticSample, path: &Path) -> Result<()> {
    let (_, h, w) = sample.image.dims3()?;
    let mut bytes = format!("P5\n{} {}\n255\n", 2 * w, h).into_bytes();
    for y in 0..h {
        for x in 0..w {
            let mean = (0..3).map(|c| sample.image.get3(c, y, x)).sum::<f64>() / 3.0;
            bytes.push((mean * 255.0).round() as u8);
        }
        for x in 0..w {
            bytes.push(if sample.mask.get(y, x) { 255 } else { 0 });
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
