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

//! A small deterministic network engine: layers, backprop, optimizers,
//! checkpoints and gradient checking.

pub mod checkpoint;
pub mod gradcheck;
pub mod layer;
pub mod model;
pub mod optim;

pub use checkpoint::{load_checkpoint, load_params, save_oracle, save_params, Checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layer::{sigmoid, LayerSpec};
pub use model::{ModelSpec, ParamStore};
pub use optim::{adam_step, sgd_step, Optimizer, OptimizerConfig, OptimizerState};
