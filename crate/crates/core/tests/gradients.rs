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

//! Backprop against central differences for every layer kind and loss.

mod common;

use common::fd::{check_all_losses, check_layer, check_networks, layer_cases};

const SEEDS: u64 = 20;

#[test]
fn every_layer_kind_matches_finite_differences() {
    for seed in 0..SEEDS {
        for (layer, shape) in layer_cases() {
            check_layer(layer, shape, seed);
        }
    }
}

#[test]
fn every_loss_matches_finite_differences() {
    for seed in 0..SEEDS {
        check_all_losses(seed, SEEDS);
    }
}

#[test]
fn end_to_end_network_gradients() {
    for seed in 0..SEEDS {
        check_networks(seed);
    }
}
