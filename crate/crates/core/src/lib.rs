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

//! Orderly dual-teacher knowledge distillation for heatmap keypoint
//! estimation, at desk scale.
//!
//! The crate bundles a small tensor/network toolkit ([`nn`]), a synthetic
//! pose generator ([`synth`]), heatmap transforms ([`heatmap`]), the loss
//! compositions ([`losses`]), OKS evaluation ([`eval`]) and the training
//! orchestrator ([`distill`]).

pub mod distill;
pub mod error;
pub mod eval;
pub mod exec;
pub mod heatmap;
pub mod losses;
pub mod nn;
pub mod pose;
pub mod seeds;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Execution;
pub use tensor::Tensor;
