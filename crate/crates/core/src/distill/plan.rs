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

//! Distillation plans: who is trained, in what order, from which teachers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// A trainable network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Senior teacher: RGB plus segmentation mask.
    St,
    /// Primary teacher: RGB only.
    Pt,
    /// Student.
    S,
}

/// Where a training signal comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Gt,
    St,
    Pt,
}

impl Source {
    pub fn role(self) -> Option<Role> {
        match self {
            Source::Gt => None,
            Source::St => Some(Role::St),
            Source::Pt => Some(Role::Pt),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::St => "ST",
            Role::Pt => "PT",
            Role::S => "S",
        })
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Gt => "GT",
            Source::St => "ST",
            Source::Pt => "PT",
        })
    }
}

/// Loss family for a phase. Teachers are always trained with MSE; students
/// use either thresholded targets with cross-entropy, or MSE on raw maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossBinding {
    Mse,
    BinarizedBce,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub trainee: Role,
    /// Sorted, deduplicated signal sources.
    pub teachers: Vec<Source>,
    pub loss: LossBinding,
    pub epochs: usize,
}

impl Phase {
    pub fn new(trainee: Role, teachers: &[Source], loss: LossBinding, epochs: usize) -> Self {
        let mut teachers = teachers.to_vec();
        teachers.sort();
        teachers.dedup();
        Self {
            trainee,
            teachers,
            loss,
            epochs,
        }
    }

    pub fn uses(&self, source: Source) -> bool {
        self.teachers.contains(&source)
    }

    /// Identity of the phase independent of its position in a plan.
    pub fn key(&self) -> String {
        let t: Vec<String> = self.teachers.iter().map(|s| s.to_string()).collect();
        format!(
            "{}<-{}:{:?}:{}",
            self.trainee,
            t.join("+"),
            self.loss,
            self.epochs
        )
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t: Vec<String> = self
            .teachers
            .iter()
            .filter(|s| **s != Source::Gt)
            .map(|s| s.to_string())
            .collect();
        if t.is_empty() {
            write!(f, "{}", self.trainee)
        } else {
            write!(f, "{}->{}", t.join(","), self.trainee)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Each phase runs all its epochs before the next starts.
    #[default]
    Phased,
    /// After the senior teacher, the remaining phases take one step each
    /// per mini-batch, in plan order.
    Interleaved,
}

/// The ten distillation paths of the architecture ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PathId {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
    #[serde(rename = "c")]
    C,
    #[serde(rename = "d")]
    D,
    #[serde(rename = "e")]
    E,
    #[serde(rename = "f")]
    F,
    #[serde(rename = "g")]
    G,
    #[serde(rename = "h")]
    H,
    #[serde(rename = "i")]
    I,
    #[serde(rename = "j")]
    J,
}

impl PathId {
    pub const ALL: [PathId; 10] = [
        PathId::A,
        PathId::B,
        PathId::C,
        PathId::D,
        PathId::E,
        PathId::F,
        PathId::G,
        PathId::H,
        PathId::I,
        PathId::J,
    ];

    pub fn letter(self) -> char {
        (b'a' + self as u8) as char
    }

    pub fn description(self) -> &'static str {
        match self {
            PathId::A => "S (baseline)",
            PathId::B => "ST->S",
            PathId::C => "PT->S",
            PathId::D => "ST, PT->S",
            PathId::E => "PT->S, ST->S",
            PathId::F => "ST->S, PT->S",
            PathId::G => "ST->PT->S",
            PathId::H => "ST->PT; ST, PT->S",
            PathId::I => "ST->PT; PT->S, ST->S",
            PathId::J => "ST->PT; ST->S, PT->S (ODKD)",
        }
    }

    /// Ablation group: baseline, single teacher, dual teacher without and
    /// with the ST->PT path.
    pub fn group(self) -> u8 {
        match self {
            PathId::A => 1,
            PathId::B | PathId::C => 2,
            PathId::D | PathId::E | PathId::F => 3,
            _ => 4,
        }
    }

    /// Phase skeleton as `(trainee, teachers)`; student steps listed in order.
    fn skeleton(self) -> Vec<(Role, Vec<Source>)> {
        use Source::*;
        let st = (Role::St, vec![Gt]);
        let pt_gt = (Role::Pt, vec![Gt]);
        let pt_st = (Role::Pt, vec![Gt, St]);
        let s = |t: &[Source]| (Role::S, t.to_vec());
        match self {
            PathId::A => vec![s(&[Gt])],
            PathId::B => vec![st, s(&[Gt, St])],
            PathId::C => vec![pt_gt, s(&[Gt, Pt])],
            PathId::D => vec![st, pt_gt, s(&[Gt, St, Pt])],
            PathId::E => vec![st, pt_gt, s(&[Gt, Pt]), s(&[Gt, St])],
            PathId::F => vec![st, pt_gt, s(&[Gt, St]), s(&[Gt, Pt])],
            PathId::G => vec![st, pt_st, s(&[Gt, Pt])],
            PathId::H => vec![st, pt_st, s(&[Gt, St, Pt])],
            PathId::I => vec![st, pt_st, s(&[Gt, Pt]), s(&[Gt, St])],
            PathId::J => vec![st, pt_st, s(&[Gt, St]), s(&[Gt, Pt])],
        }
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for PathId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c @ 'a'..='j'), None) => Ok(PathId::ALL[(c as u8 - b'a') as usize]),
            _ => Err(Error::InvalidArgument(format!(
                "unknown distillation path {s:?} (expected a..j)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillationPlan {
    pub path: Option<PathId>,
    pub phases: Vec<Phase>,
    #[serde(default)]
    pub mode: ScheduleMode,
    #[serde(default)]
    pub weights: LossWeights,
    /// Teachers supplied from checkpoints rather than trained by this plan.
    #[serde(default)]
    pub pretrained: Vec<Role>,
}

/// Epoch budgets used to expand a path id into phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochBudget {
    pub teacher: usize,
    /// Epochs per student step. Two-step schedules run it twice, one full
    /// pass per teacher, so the student sees one update per teacher per batch.
    pub student: usize,
}

impl DistillationPlan {
    pub fn canonical(
        path: PathId,
        budget: EpochBudget,
        weights: LossWeights,
        student_loss: LossBinding,
    ) -> Self {
        let phases = path
            .skeleton()
            .into_iter()
            .map(|(trainee, teachers)| {
                if trainee == Role::S {
                    Phase::new(trainee, &teachers, student_loss, budget.student)
                } else {
                    Phase::new(trainee, &teachers, LossBinding::Mse, budget.teacher)
                }
            })
            .collect();
        Self {
            path: Some(path),
            phases,
            mode: ScheduleMode::Phased,
            weights,
            pretrained: Vec::new(),
        }
    }

    /// The plan with every phase that trains or consults `role` removed.
    pub fn without(&self, role: Role) -> Self {
        let source = match role {
            Role::St => Source::St,
            Role::Pt => Source::Pt,
            Role::S => Source::Gt,
        };
        Self {
            path: None,
            phases: self
                .phases
                .iter()
                .filter(|p| p.trainee != role && (role == Role::S || !p.uses(source)))
                .cloned()
                .collect(),
            pretrained: self
                .pretrained
                .iter()
                .copied()
                .filter(|r| *r != role)
                .collect(),
            ..self.clone()
        }
    }

    pub fn student_phases(&self) -> impl Iterator<Item = (usize, &Phase)> {
        self.phases
            .iter()
            .enumerate()
            .filter(|(_, p)| p.trainee == Role::S)
    }

    pub fn trains(&self, role: Role) -> bool {
        self.phases.iter().any(|p| p.trainee == role)
    }

    /// Every rule violation, or `Ok` when the plan is runnable.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut v = self.weights.violations();
        if self.phases.is_empty() {
            v.push("plan has no phases".into());
        }
        if !self.trains(Role::S) {
            v.push("plan never trains the student".into());
        }
        let mut student_losses: Vec<LossBinding> =
            self.student_phases().map(|(_, p)| p.loss).collect();
        student_losses.dedup();
        if student_losses.len() > 1 {
            v.push("student phases must share one loss binding".into());
        }
        if self.pretrained.contains(&Role::S) {
            v.push("the student cannot be pretrained".into());
        }
        if let Some(first_st) = self.phases.iter().position(|p| p.trainee == Role::St) {
            if first_st != 0 {
                v.push(format!(
                    "ST must be trained first, but phase 0 trains {}",
                    self.phases[0].trainee
                ));
            }
        }
        let mut ready: Vec<Role> = self.pretrained.clone();
        for (i, p) in self.phases.iter().enumerate() {
            if !p.uses(Source::Gt) {
                v.push(format!("phase {i} ({p}) has no ground-truth term"));
            }
            if p.teachers.windows(2).any(|w| w[0] >= w[1]) {
                v.push(format!("phase {i} teacher list must be sorted and unique"));
            }
            for t in p.teachers.iter().filter_map(|s| s.role()) {
                if t == p.trainee {
                    v.push(format!("phase {i} ({p}) uses its own trainee as a teacher"));
                } else if !ready.contains(&t) && self.mode == ScheduleMode::Phased {
                    v.push(format!(
                        "phase {i} ({p}) uses {t} before it is trained or loaded"
                    ));
                } else if !ready.contains(&t) && !self.trains(t) {
                    v.push(format!(
                        "phase {i} ({p}) uses {t}, which is never trained or loaded"
                    ));
                }
            }
            match p.trainee {
                Role::St => {
                    if p.teachers != [Source::Gt] {
                        v.push(format!("phase {i}: ST learns from ground truth only"));
                    }
                }
                Role::Pt => {
                    if p.uses(Source::Pt) || p.uses(Source::St) && p.teachers.len() != 2 {
                        v.push(format!("phase {i}: PT learns from GT and optionally ST"));
                    }
                }
                Role::S => {}
            }
            if p.trainee != Role::S && p.loss != LossBinding::Mse {
                v.push(format!(
                    "phase {i}: teachers are trained with MSE, not {:?}",
                    p.loss
                ));
            }
            if p.trainee != Role::S && self.pretrained.contains(&p.trainee) {
                v.push(format!(
                    "phase {i}: {} is both pretrained and trained",
                    p.trainee
                ));
            }
            if !ready.contains(&p.trainee) {
                ready.push(p.trainee);
            }
        }
        if self.mode == ScheduleMode::Interleaved {
            if let Some(st_teacher) = self.phases.iter().position(|p| p.uses(Source::St)) {
                if !self.pretrained.contains(&Role::St)
                    && !self.phases[..st_teacher]
                        .iter()
                        .any(|p| p.trainee == Role::St)
                {
                    v.push("interleaved schedules need ST trained before the joint loop".into());
                }
            }
        }
        if let Some(path) = self.path {
            let expected = path.skeleton();
            let actual: Vec<(Role, Vec<Source>)> = self
                .phases
                .iter()
                .filter(|p| !self.pretrained.contains(&p.trainee))
                .map(|p| (p.trainee, p.teachers.clone()))
                .collect();
            let expected: Vec<(Role, Vec<Source>)> = expected
                .into_iter()
                .filter(|(r, _)| !self.pretrained.contains(r))
                .map(|(r, mut t)| {
                    t.sort();
                    (r, t)
                })
                .collect();
            if actual != expected {
                v.push(format!("phase list does not match path ({path})"));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    pub fn ensure_valid(&self) -> Result<()> {
        self.validate().map_err(Error::Plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget() -> EpochBudget {
        EpochBudget {
            teacher: 4,
            student: 5,
        }
    }

    fn plan(path: PathId) -> DistillationPlan {
        DistillationPlan::canonical(
            path,
            budget(),
            LossWeights::default(),
            LossBinding::BinarizedBce,
        )
    }

    #[test]
    fn every_canonical_path_is_valid() {
        for p in PathId::ALL {
            assert_eq!(plan(p).validate(), Ok(()), "path {p}");
        }
    }

    #[test]
    fn path_j_phase_order() {
        let j = plan(PathId::J);
        let labels: Vec<String> = j.phases.iter().map(|p| p.to_string()).collect();
        assert_eq!(labels, ["ST", "ST->PT", "ST->S", "PT->S"]);
        assert_eq!((j.phases[2].epochs, j.phases[3].epochs), (5, 5));
        assert_eq!(plan(PathId::A).phases.len(), 1);
        assert_eq!(
            plan(PathId::D).phases[2].teachers,
            vec![Source::Gt, Source::St, Source::Pt]
        );
    }

    #[test]
    fn untrained_teacher_is_rejected() {
        let mut p = plan(PathId::C);
        p.path = None;
        p.phases.remove(0);
        let errs = p.validate().unwrap_err();
        assert!(
            errs.iter().any(|e| e.contains("before it is trained")),
            "{errs:?}"
        );
        p.pretrained.push(Role::Pt);
        assert_eq!(p.validate(), Ok(()));
    }

    #[test]
    fn out_of_range_alpha() {
        let mut p = plan(PathId::J);
        p.weights.alpha1 = 1.3;
        let errs = p.validate().unwrap_err();
        assert!(errs.iter().any(|e| e.contains("alpha1")));
    }

    #[test]
    fn path_mismatch_is_reported() {
        let mut p = plan(PathId::J);
        p.phases.swap(2, 3);
        assert!(p.validate().is_err());
        p.path = None;
        assert_eq!(p.validate(), Ok(()));
    }

    #[test]
    fn st_must_come_first() {
        let mut p = plan(PathId::D);
        p.path = None;
        p.phases.swap(0, 1);
        assert!(p.validate().is_err());
    }

    #[test]
    fn removing_pt_from_j_gives_b_structure() {
        let j = plan(PathId::J).without(Role::Pt);
        let b = plan(PathId::B);
        let shape = |p: &DistillationPlan| -> Vec<(Role, Vec<Source>)> {
            p.phases
                .iter()
                .map(|ph| (ph.trainee, ph.teachers.clone()))
                .collect()
        };
        assert_eq!(shape(&j), shape(&b));
    }

    #[test]
    fn path_ids_parse() {
        assert_eq!("j".parse::<PathId>().unwrap(), PathId::J);
        assert!("k".parse::<PathId>().is_err());
        assert_eq!(
            PathId::ALL.map(|p| p.letter()).iter().collect::<String>(),
            "abcdefghij"
        );
    }
}
