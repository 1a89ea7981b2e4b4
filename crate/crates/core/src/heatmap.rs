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

//! Heatmap containers and transforms: thresholding, peak decoding,
//! flip merging and connected-peak counting.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::pose::{Keypoint, PoseInstance, ABSENT, VISIBLE};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapKind {
    Logits,
    Prob,
    Binary,
}

/// Per-joint activation grids of shape `(K, h, w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HeatmapRecord", into = "HeatmapRecord")]
pub struct HeatmapSet {
    values: Tensor,
    kind: HeatmapKind,
}

impl HeatmapSet {
    pub fn new(values: Tensor, kind: HeatmapKind) -> Result<Self> {
        values.dims3()?;
        values.ensure_finite("heatmap")?;
        let ok = match kind {
            HeatmapKind::Logits => true,
            HeatmapKind::Prob => values.data().iter().all(|v| (0.0..=1.0).contains(v)),
            HeatmapKind::Binary => values.data().iter().all(|&v| v == 0.0 || v == 1.0),
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "heatmap values out of range for kind {kind:?}"
            )));
        }
        Ok(Self { values, kind })
    }

    pub fn logits(values: Tensor) -> Result<Self> {
        Self::new(values, HeatmapKind::Logits)
    }

    pub fn prob(values: Tensor) -> Result<Self> {
        Self::new(values, HeatmapKind::Prob)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    pub fn kind(&self) -> HeatmapKind {
        self.kind
    }

    pub fn joints(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }

    /// Logistic transform of a logit map; probability maps pass through.
    pub fn to_prob(&self) -> Result<Self> {
        match self.kind {
            HeatmapKind::Logits => Ok(Self {
                values: self.values.map(sigmoid),
                kind: HeatmapKind::Prob,
            }),
            HeatmapKind::Prob => Ok(self.clone()),
            HeatmapKind::Binary => Ok(Self {
                values: self.values.clone(),
                kind: HeatmapKind::Prob,
            }),
        }
    }

    fn require(&self, kind: HeatmapKind, op: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{op} needs a {kind:?} heatmap, got {:?}",
                self.kind
            )))
        }
    }
}

/// How a network's raw output becomes a probability map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// Raw outputs are logits.
    Logistic,
    /// Raw outputs regress the target map directly; clamped to `[0, 1]`.
    Linear,
}

impl OutputHead {
    pub fn to_prob(self, raw: Tensor) -> Result<HeatmapSet> {
        match self {
            OutputHead::Logistic => HeatmapSet::logits(raw)?.to_prob(),
            OutputHead::Linear => HeatmapSet::prob(raw.map(|v| v.clamp(0.0, 1.0))),
        }
    }
}

/// A `(K, h, w)` grid whose values are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryHeatmapSet(HeatmapSet);

impl BinaryHeatmapSet {
    pub fn new(values: Tensor) -> Result<Self> {
        HeatmapSet::new(values, HeatmapKind::Binary).map(Self)
    }

    pub fn values(&self) -> &Tensor {
        &self.0.values
    }

    pub fn as_heatmap(&self) -> &HeatmapSet {
        &self.0
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }

    pub fn positive_count(&self) -> usize {
        self.0.values.data().iter().filter(|&&v| v == 1.0).count()
    }
}

impl TryFrom<HeatmapSet> for BinaryHeatmapSet {
    type Error = Error;

    fn try_from(h: HeatmapSet) -> Result<Self> {
        h.require(HeatmapKind::Binary, "binary heatmap")?;
        Ok(Self(h))
    }
}

/// `1` where `h > beta` (strictly), `0` where `h <= beta`.
pub fn binarize(h: &HeatmapSet, beta: f64) -> Result<BinaryHeatmapSet> {
    h.require(HeatmapKind::Prob, "binarize")?;
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!(
            "binarization threshold must lie in [0, 1), got {beta}"
        )));
    }
    Ok(BinaryHeatmapSet(HeatmapSet {
        values: h.values.map(|v| if v > beta { 1.0 } else { 0.0 }),
        kind: HeatmapKind::Binary,
    }))
}

/// Left/right joint pairing as an involution over joint indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipPairs(Vec<usize>);

impl FlipPairs {
    pub fn new(permutation: Vec<usize>) -> Result<Self> {
        let n = permutation.len();
        for (i, &j) in permutation.iter().enumerate() {
            if j >= n || permutation[j] != i {
                return Err(Error::InvalidArgument(format!(
                    "flip pairing {permutation:?} is not an involution"
                )));
            }
        }
        Ok(Self(permutation))
    }

    /// Joints not named in `pairs` map to themselves.
    pub fn from_pairs(joints: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut perm: Vec<usize> = (0..joints).collect();
        for &(a, b) in pairs {
            if a >= joints || b >= joints || perm[a] != a || perm[b] != b {
                return Err(Error::InvalidArgument(format!(
                    "invalid flip pair ({a}, {b}) for {joints} joints"
                )));
            }
            perm[a] = b;
            perm[b] = a;
        }
        Self::new(perm)
    }

    pub fn identity(joints: usize) -> Self {
        Self((0..joints).collect())
    }

    pub fn partner(&self, joint: usize) -> usize {
        self.0[joint]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Mirrors every channel horizontally and swaps paired channels.
pub fn mirror_swap(h: &HeatmapSet, pairs: &FlipPairs) -> Result<HeatmapSet> {
    if pairs.len() != h.joints() {
        return Err(Error::InvalidArgument(format!(
            "flip pairing covers {} joints, heatmap has {}",
            pairs.len(),
            h.joints()
        )));
    }
    let mirrored = h.values.flip_horizontal();
    let mut out = mirrored.clone();
    for j in 0..h.joints() {
        out.channel_mut(j)
            .copy_from_slice(mirrored.channel(pairs.partner(j)));
    }
    Ok(HeatmapSet {
        values: out,
        kind: h.kind,
    })
}

/// Averages `orig` with the un-flipped version of `flipped`, the prediction
/// made on the horizontally mirrored input.
pub fn flip_merge(
    orig: &HeatmapSet,
    flipped: &HeatmapSet,
    pairs: &FlipPairs,
) -> Result<HeatmapSet> {
    orig.require(HeatmapKind::Prob, "flip_merge")?;
    flipped.require(HeatmapKind::Prob, "flip_merge")?;
    flipped.values.expect_shape(orig.shape(), "flip_merge")?;
    let restored = mirror_swap(flipped, pairs)?;
    let values = orig
        .values
        .zip_map(&restored.values, |a, b| 0.5 * (a + b))?;
    Ok(HeatmapSet {
        values,
        kind: HeatmapKind::Prob,
    })
}

/// The 4-neighbourhood as `(dy, dx)`.
const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Shift applied toward the strongest 4-neighbour, in grid cells.
pub const QUARTER_OFFSET: f64 = 0.25;

/// Per-joint argmax location and the sub-cell shift chosen for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakLocation {
    pub row: usize,
    pub col: usize,
    pub shift: (f64, f64),
    pub value: f64,
}

/// Argmax (first in row-major order) plus the quarter-cell shift toward the
/// highest in-bounds 4-neighbour. Without a unique highest neighbour there
/// is no shift.
pub fn locate_peak(channel: &[f64], height: usize, width: usize) -> PeakLocation {
    let mut best = 0;
    for (i, &v) in channel.iter().enumerate() {
        if v > channel[best] {
            best = i;
        }
    }
    let (row, col) = (best / width, best % width);
    let mut toward: Option<((isize, isize), f64)> = None;
    let mut tied = false;
    for &(dy, dx) in &NEIGHBOURS {
        let (r, c) = (row as isize + dy, col as isize + dx);
        if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
            continue;
        }
        let v = channel[r as usize * width + c as usize];
        match toward {
            Some((_, bv)) if v == bv => tied = true,
            Some((_, bv)) if v < bv => {}
            _ => {
                toward = Some(((dy, dx), v));
                tied = false;
            }
        }
    }
    let shift = match toward {
        Some(((dy, dx), _)) if !tied => (QUARTER_OFFSET * dy as f64, QUARTER_OFFSET * dx as f64),
        _ => (0.0, 0.0),
    };
    PeakLocation {
        row,
        col,
        shift,
        value: channel[best],
    }
}

/// Decodes a probability map into image-space keypoints. Grid cell `(r, c)`
/// maps to image point `(c * stride, r * stride)`; all-zero channels decode
/// as absent joints.
pub fn decode(h: &HeatmapSet, stride: f64, quarter_offset: bool) -> Result<PoseInstance> {
    h.require(HeatmapKind::Prob, "decode")?;
    let (height, width) = (h.height(), h.width());
    let keypoints = (0..h.joints())
        .map(|j| {
            let ch = h.values.channel(j);
            if ch.iter().all(|&v| v == 0.0) {
                return Keypoint::new(0.0, 0.0, ABSENT);
            }
            let peak = locate_peak(ch, height, width);
            let (dy, dx) = if quarter_offset {
                peak.shift
            } else {
                (0.0, 0.0)
            };
            Keypoint::new(
                (peak.col as f64 + dx) * stride,
                (peak.row as f64 + dy) * stride,
                VISIBLE,
            )
        })
        .collect();
    Ok(PoseInstance::new(0, keypoints))
}

/// Number of 4-connected components of ones in each channel.
pub fn count_peaks(b: &BinaryHeatmapSet) -> Vec<usize> {
    let t = b.values();
    let (k, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    (0..k)
        .map(|j| {
            let ch = t.channel(j);
            let mut seen = vec![false; h * w];
            let mut stack = Vec::new();
            let mut count = 0;
            for start in 0..h * w {
                if ch[start] != 1.0 || seen[start] {
                    continue;
                }
                count += 1;
                seen[start] = true;
                stack.push(start);
                while let Some(i) = stack.pop() {
                    let (r, c) = (i / w, i % w);
                    let mut visit = |n: usize| {
                        if ch[n] == 1.0 && !seen[n] {
                            seen[n] = true;
                            stack.push(n);
                        }
                    };
                    if r > 0 {
                        visit(i - w);
                    }
                    if r + 1 < h {
                        visit(i + w);
                    }
                    if c > 0 {
                        visit(i - 1);
                    }
                    if c + 1 < w {
                        visit(i + 1);
                    }
                }
            }
            count
        })
        .collect()
}

/// Nested `[c][y][x]` view of a rank-3 tensor, the on-disk array layout.
pub fn to_nested(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let (c, h, w) = t.dims3().expect("rank-3 tensor");
    (0..c)
        .map(|ch| t.channel(ch).chunks(w).map(<[f64]>::to_vec).collect())
        .inspect(|rows: &Vec<Vec<f64>>| debug_assert_eq!(rows.len(), h))
        .collect()
}

pub fn from_nested(nested: &[Vec<Vec<f64>>]) -> Result<Tensor> {
    let c = nested.len();
    let h = nested.first().map_or(0, Vec::len);
    let w = nested.first().and_then(|p| p.first()).map_or(0, Vec::len);
    let mut data = Vec::with_capacity(c * h * w);
    for plane in nested {
        if plane.len() != h {
            return Err(Error::InvalidArgument("ragged nested array".into()));
        }
        for row in plane {
            if row.len() != w {
                return Err(Error::InvalidArgument("ragged nested array".into()));
            }
            data.extend_from_slice(row);
        }
    }
    Tensor::new(vec![c, h, w], data)
}

#[derive(Serialize, Deserialize)]
struct HeatmapRecord {
    kind: HeatmapKind,
    values: Vec<Vec<Vec<f64>>>,
}

impl From<HeatmapSet> for HeatmapRecord {
    fn from(h: HeatmapSet) -> Self {
        Self {
            kind: h.kind,
            values: to_nested(&h.values),
        }
    }
}

impl TryFrom<HeatmapRecord> for HeatmapSet {
    type Error = Error;

    fn try_from(r: HeatmapRecord) -> Result<Self> {
        HeatmapSet::new(from_nested(&r.values)?, r.kind)
    }
}

/// Writes one JSON heatmap record per line.
pub fn write_heatmaps(path: &Path, sets: &[HeatmapSet]) -> Result<()> {
    let mut out = Vec::new();
    for h in sets {
        serde_json::to_writer(&mut out, h).expect("heatmap serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_heatmaps(path: &Path) -> Result<Vec<HeatmapSet>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sets = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let h = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        sets.push(h);
    }
    Ok(sets)
}
