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

//! The toy teacher and student networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::OutputHead;
use crate::nn::{LayerSpec, ModelSpec};

use super::plan::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub teacher_width: usize,
    /// Conv layers in the teacher backbone, head included.
    pub teacher_depth: usize,
    pub student_width: usize,
    pub student_depth: usize,
    pub kernel: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            teacher_width: 32,
            teacher_depth: 5,
            student_width: 8,
            student_depth: 3,
            kernel: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub st: ModelSpec,
    pub pt: ModelSpec,
    pub s: ModelSpec,
}

impl ModelSet {
    pub fn get(&self, role: Role) -> &ModelSpec {
        match role {
            Role::St => &self.st,
            Role::Pt => &self.pt,
            Role::S => &self.s,
        }
    }
}

/// A stride-2 stem, same-resolution convs, then a conv head with one channel
/// per joint.
fn backbone(
    in_channels: usize,
    width: usize,
    depth: usize,
    kernel: usize,
    joints: usize,
) -> Vec<LayerSpec> {
    let mut layers = vec![
        LayerSpec::conv(in_channels, width, kernel, 2),
        LayerSpec::Relu,
    ];
    for _ in 0..depth.saturating_sub(2) {
        layers.push(LayerSpec::conv(width, width, kernel, 1));
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::conv(width, joints, kernel, 1));
    layers
}

/// Builds ST, PT and S for `joints` heatmaps over `(height, width)` images.
///
/// ST is PT's backbone behind a 1x1 conv that maps image plus mask (4
/// channels) to 3 channels. Teachers regress heatmaps with a linear head;
/// the student gets a logistic head.
pub fn build_models(joints: usize, image: (usize, usize), arch: &Architecture) -> Result<ModelSet> {
    if arch.teacher_depth < 2 || arch.student_depth < 2 {
        return Err(Error::InvalidModel(
            "networks need at least a stem and a head".into(),
        ));
    }
    if arch.kernel.is_multiple_of(2) {
        return Err(Error::InvalidModel(format!(
            "kernel size {} must be odd",
            arch.kernel
        )));
    }
    let (h, w) = image;
    let pt_layers = backbone(
        3,
        arch.teacher_width,
        arch.teacher_depth,
        arch.kernel,
        joints,
    );
    let mut st_layers = vec![LayerSpec::Conv1x1 {
        in_channels: 4,
        out_channels: 3,
    }];
    st_layers.extend(pt_layers.iter().cloned());
    let s_layers = backbone(
        3,
        arch.student_width,
        arch.student_depth,
        arch.kernel,
        joints,
    );
    Ok(ModelSet {
        st: ModelSpec::new([4, h, w], joints, st_layers)?.with_head(OutputHead::Linear),
        pt: ModelSpec::new([3, h, w], joints, pt_layers)?.with_head(OutputHead::Linear),
        s: ModelSpec::new([3, h, w], joints, s_layers)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_ordering() {
        let m = build_models(5, (48, 64), &Architecture::default()).unwrap();
        assert_eq!(m.s.output_shape().unwrap(), [5, 24, 32]);
        assert_eq!(m.pt.output_shape().unwrap(), [5, 24, 32]);
        assert_eq!(m.st.param_count(), m.pt.param_count() + 4 * 3 + 3);
        assert!(m.s.param_count() * 10 < m.pt.param_count());
    }

    #[test]
    fn rejects_even_kernel() {
        let arch = Architecture {
            kernel: 4,
            ..Architecture::default()
        };
        assert!(build_models(5, (48, 64), &arch).is_err());
    }
}
