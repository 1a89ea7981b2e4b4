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

//! Library side of the `odkd` command-line tool: experiment configs, the
//! subcommands, and the CSV tables they write.

pub mod commands;
pub mod config;
pub mod records;
pub mod report;

pub use commands::{
    cmd_ablate_paths, cmd_eval, cmd_gen_data, cmd_sweep_beta, cmd_train, AblationTable, EvalFlags,
    GenSummary, RunFailures, Split, SweepTable, TrainSummary,
};
pub use config::ExperimentConfig;
pub use report::cmd_report;
