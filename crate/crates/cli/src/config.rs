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

//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use odkd::distill::{
    DistillationPlan, EpochBudget, LossBinding, PathId, Phase, Role, ScheduleMode, TrainConfig,
};
use odkd::losses::LossWeights;
use odkd::synth::{
    generate_dataset, generate_split, read_dataset, SceneConfig, SyntheticSample, VALIDATION_OFFSET,
};
use odkd::Execution;
use serde::{Deserialize, Serialize};

/// Where the training and validation samples come from. A path is read
/// from disk; otherwise `*_count` samples are generated from the scene
/// config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub train_count: usize,
    pub val_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            val: None,
            train_count: 256,
            val_count: 64,
        }
    }
}

/// A canonical path or an explicit phase list, plus the knobs shared by
/// both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub path: Option<PathId>,
    /// Explicit phases; takes precedence over `path`.
    pub phases: Vec<Phase>,
    /// Epochs for each teacher phase of a canonical path.
    pub teacher_epochs: usize,
    /// Epochs for each student step of a canonical path.
    pub student_epochs: usize,
    pub student_loss: LossBinding,
    pub mode: ScheduleMode,
    pub weights: LossWeights,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            path: Some(PathId::J),
            phases: Vec::new(),
            teacher_epochs: 10,
            student_epochs: 30,
            student_loss: LossBinding::BinarizedBce,
            mode: ScheduleMode::Phased,
            weights: LossWeights::default(),
        }
    }
}

impl PlanConfig {
    pub fn budget(&self) -> EpochBudget {
        EpochBudget {
            teacher: self.teacher_epochs,
            student: self.student_epochs,
        }
    }

    /// The configured plan.
    pub fn plan(&self) -> Result<DistillationPlan> {
        let plan = if self.phases.is_empty() {
            let Some(path) = self.path else {
                bail!("plan: set either `path` or `phases`");
            };
            self.canonical(path)
        } else {
            DistillationPlan {
                path: None,
                phases: self.phases.clone(),
                mode: self.mode,
                weights: self.weights,
                pretrained: Vec::<Role>::new(),
            }
        };
        if let Err(problems) = plan.validate() {
            bail!("plan: {}", problems.join("; "));
        }
        Ok(plan)
    }

    /// `path` expanded with this config's budget, loss, mode and weights.
    pub fn canonical(&self, path: PathId) -> DistillationPlan {
        self.canonical_with(path, self.weights, self.student_loss)
    }

    pub fn canonical_with(
        &self,
        path: PathId,
        weights: LossWeights,
        student_loss: LossBinding,
    ) -> DistillationPlan {
        let mut plan = DistillationPlan::canonical(path, self.budget(), weights, student_loss);
        plan.mode = self.mode;
        plan
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Training seeds; every run is repeated once per seed.
    pub seeds: Vec<u64>,
    /// Output root. `--out` and `ODKD_OUT` take precedence.
    pub out: Option<PathBuf>,
    pub scene: SceneConfig,
    pub data: DataConfig,
    pub plan: PlanConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            out: None,
            scene: SceneConfig::default(),
            data: DataConfig::default(),
            plan: PlanConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML config. Relative data paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.train, &mut cfg.data.val, &mut cfg.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds: at least one seed is required");
        }
        self.scene.validate().context("scene")?;
        self.train.validate().context("train")?;
        let problems = self.plan.weights.violations();
        if !problems.is_empty() {
            bail!("plan.weights: {}", problems.join("; "));
        }
        Ok(())
    }

    /// Training and validation samples.
    pub fn datasets(
        &self,
        exec: Execution,
    ) -> Result<(Vec<SyntheticSample>, Vec<SyntheticSample>)> {
        let k = Some(self.scene.joints);
        let train = match &self.data.train {
            Some(p) => {
                read_dataset(p, k).with_context(|| format!("training set {}", p.display()))?
            }
            None => generate_dataset(&self.scene, self.data.train_count, exec)?,
        };
        let val = match &self.data.val {
            Some(p) => {
                read_dataset(p, k).with_context(|| format!("validation set {}", p.display()))?
            }
            None => generate_split(&self.scene, self.data.val_count, VALIDATION_OFFSET, exec)?,
        };
        if train.is_empty() {
            bail!("the training set is empty");
        }
        if val.is_empty() {
            bail!("the validation set is empty");
        }
        Ok((train, val))
    }
}
