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

//! Shared fixtures for the integration tests.

#![allow(dead_code)]

pub mod fd;
pub mod oracles;

use odkd::heatmap::{BinaryHeatmapSet, HeatmapSet};
use odkd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero so ReLU kinks stay outside the FD stencil.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub fn logits(rng: &mut ChaCha8Rng, shape: &[usize]) -> HeatmapSet {
    HeatmapSet::logits(uniform(rng, shape, -3.0, 3.0)).unwrap()
}

pub fn prob(rng: &mut ChaCha8Rng, shape: &[usize]) -> HeatmapSet {
    HeatmapSet::prob(uniform(rng, shape, 0.0, 1.0)).unwrap()
}

pub fn binary(rng: &mut ChaCha8Rng, shape: &[usize]) -> BinaryHeatmapSet {
    BinaryHeatmapSet::new(Tensor::from_fn(shape, |_| {
        if rng.gen_bool(0.3) {
            1.0
        } else {
            0.0
        }
    }))
    .unwrap()
}

/// Per-joint distributions over pixels.
pub fn distribution(rng: &mut ChaCha8Rng, shape: &[usize]) -> HeatmapSet {
    let mut t = uniform(rng, shape, 0.01, 1.0);
    for j in 0..shape[0] {
        let c = t.channel_mut(j);
        let s: f64 = c.iter().sum();
        c.iter_mut().for_each(|v| *v /= s);
    }
    HeatmapSet::prob(t).unwrap()
}
