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

//! Mini-batch training of plan phases, with resumable state.
//!
//! Every random stream (initialization, shuffling) is derived from the run
//! seed and a stable label, never from a shared generator, so a phase
//! trains identically wherever it appears in a plan. That is what lets a
//! [`TeacherBank`] hand the same trained teacher to several plans.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{evaluate_model, EvalConfig, EvalResult, NetworkPredictor};
use crate::exec::Execution;
use crate::heatmap::{binarize, BinaryHeatmapSet, HeatmapSet, OutputHead};
use crate::losses::{
    bce_loss, loss_dual, loss_pt, loss_s1, loss_s2, loss_st, mse_loss, LossOutput, LossWeights,
};
use crate::nn::{ModelSpec, Optimizer, OptimizerConfig, ParamStore};
use crate::seeds;
use crate::synth::{flip_pairs, model_input, InputKind, SyntheticSample};
use crate::tensor::Tensor;

use super::models::{build_models, Architecture, ModelSet};
use super::plan::{DistillationPlan, LossBinding, PathId, Phase, Role, ScheduleMode, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Used for ST and PT.
    pub teacher_optimizer: OptimizerConfig,
    pub student_optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub seed: u64,
    /// Validate every `val_every` epochs; the last epoch of a phase is always
    /// validated, and 0 means only then.
    pub val_every: usize,
    pub architecture: Architecture,
    pub eval: EvalConfig,
    /// Parallelism inside a batch. Results do not depend on it.
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            teacher_optimizer: OptimizerConfig::adam(2e-3),
            student_optimizer: OptimizerConfig::adam(5e-3),
            batch_size: 8,
            seed: 0,
            val_every: 1,
            architecture: Architecture::default(),
            eval: EvalConfig::default(),
            exec: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        self.teacher_optimizer.validate()?;
        self.student_optimizer.validate()?;
        self.eval.oks.validate()
    }

    pub fn optimizer_for(&self, role: Role) -> OptimizerConfig {
        match role {
            Role::St | Role::Pt => self.teacher_optimizer,
            Role::S => self.student_optimizer,
        }
    }

    /// Everything except the seed and execution mode, hashed.
    fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&(
            &self.teacher_optimizer,
            &self.student_optimizer,
            self.batch_size,
            self.val_every,
            &self.architecture,
            &self.eval,
        ))
        .expect("config serializes");
        hex(&Sha256::digest(json.as_bytes())[..12])
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub params: ParamStore,
    pub optimizer: Optimizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub ar: f64,
}

impl From<&EvalResult> for ValMetrics {
    fn from(r: &EvalResult) -> Self {
        Self {
            ap: r.ap,
            ap50: r.ap50,
            ap75: r.ap75,
            ap_medium: r.ap_medium,
            ap_large: r.ap_large,
            ar: r.ar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub phase: usize,
    pub label: String,
    pub trainee: Role,
    /// 1-based within the phase.
    pub epoch: usize,
    /// Mean of the mini-batch losses.
    pub train_loss: f64,
    pub val: Option<ValMetrics>,
}

/// One optimizer update.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateEvent {
    pub phase: usize,
    pub trainee: Role,
    pub teachers: Vec<Source>,
    pub epoch: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherChecksum {
    pub phase: usize,
    pub role: Role,
    pub before: String,
    pub after: Option<String>,
}

/// Whether every student update that consults PT comes after the last one
/// that consults ST.
pub fn is_orderly(trace: &[UpdateEvent]) -> bool {
    let student: Vec<&UpdateEvent> = trace.iter().filter(|e| e.trainee == Role::S).collect();
    let last_st = student
        .iter()
        .rposition(|e| e.teachers.contains(&Source::St));
    let first_pt = student
        .iter()
        .position(|e| e.teachers.contains(&Source::Pt));
    match (last_st, first_pt) {
        (Some(st), Some(pt)) => pt > st,
        _ => true,
    }
}

/// Everything needed to continue a run: parameters, optimizer moments,
/// the phase/epoch cursor and the logs so far.
///
/// Random streams are derived from `seed` and the cursor, so no generator
/// state needs to be stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub seed: u64,
    pub models: BTreeMap<Role, ModelState>,
    pub phase: usize,
    /// Epochs completed in the current phase (or interleaved group).
    pub epoch: usize,
    pub history: Vec<MetricRow>,
    pub trace: Vec<UpdateEvent>,
    pub checksums: Vec<TeacherChecksum>,
}

impl TrainState {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("train state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("unreadable train state: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Per-sample training signals.
pub struct Targets<'a> {
    pub gt: &'a HeatmapSet,
    pub gt_binary: &'a BinaryHeatmapSet,
    pub st: Option<&'a HeatmapSet>,
    pub pt: Option<&'a HeatmapSet>,
}

fn teacher(t: Option<&HeatmapSet>, source: Source) -> Result<&HeatmapSet> {
    t.ok_or_else(|| Error::InvalidArgument(format!("missing {source} target")))
}

/// The phase's loss on the trainee's raw output, with the gradient w.r.t.
/// that output. Cross-entropy treats it as logits, MSE as the heatmap itself.
pub fn phase_loss(
    phase: &Phase,
    weights: &LossWeights,
    logits: &HeatmapSet,
    t: &Targets<'_>,
) -> Result<LossOutput> {
    let (st, pt) = (phase.uses(Source::St), phase.uses(Source::Pt));
    match phase.loss {
        LossBinding::BinarizedBce => {
            let b = weights.beta_teacher;
            match (st, pt) {
                (false, false) => bce_loss(logits, t.gt_binary),
                (true, false) => loss_s1(
                    logits,
                    t.gt_binary,
                    teacher(t.st, Source::St)?,
                    b,
                    weights.alpha1,
                ),
                (false, true) => loss_s2(
                    logits,
                    t.gt_binary,
                    teacher(t.pt, Source::Pt)?,
                    b,
                    weights.alpha2,
                ),
                (true, true) => loss_dual(
                    logits,
                    t.gt_binary,
                    teacher(t.st, Source::St)?,
                    teacher(t.pt, Source::Pt)?,
                    b,
                    weights.alpha1,
                ),
            }
        }
        LossBinding::Mse => {
            // regression on the raw map
            let q = logits;
            match (phase.trainee, st, pt) {
                (_, false, false) => loss_st(q, t.gt),
                (Role::Pt, true, false) => {
                    loss_pt(q, t.gt, teacher(t.st, Source::St)?, weights.alpha0)
                }
                (_, true, false) => {
                    blend_mse(q, t.gt, &[teacher(t.st, Source::St)?], weights.alpha1)
                }
                (_, false, true) => {
                    blend_mse(q, t.gt, &[teacher(t.pt, Source::Pt)?], weights.alpha2)
                }
                (_, true, true) => blend_mse(
                    q,
                    t.gt,
                    &[teacher(t.st, Source::St)?, teacher(t.pt, Source::Pt)?],
                    weights.alpha1,
                ),
            }
        }
    }
}

/// `(1 - alpha) * mse(q, gt)` plus `alpha` split evenly over the teachers.
fn blend_mse(
    q: &HeatmapSet,
    gt: &HeatmapSet,
    teachers: &[&HeatmapSet],
    alpha: f64,
) -> Result<LossOutput> {
    let mut out = mse_loss(q, gt)?;
    let share = alpha / teachers.len() as f64;
    out.value *= 1.0 - alpha;
    out.grad.scale(1.0 - alpha);
    for t in teachers {
        let kd = mse_loss(q, t)?;
        out.value += share * kd.value;
        out.grad.add_scaled(&kd.grad, share)?;
    }
    Ok(out)
}

/// Mean loss and mean parameter gradient over `batch`. Per-sample work may
/// run in parallel; gradients are summed in batch order, so the result does
/// not depend on `exec`.
///
/// Also returns the raw outputs per sample.
pub fn batch_gradient<F>(
    spec: &ModelSpec,
    params: &ParamStore,
    batch: &[usize],
    inputs: &[Tensor],
    loss: F,
    exec: Execution,
) -> Result<(f64, ParamStore, Vec<HeatmapSet>)>
where
    F: Fn(usize, &HeatmapSet) -> Result<LossOutput> + Sync + Send,
{
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty mini-batch".into()));
    }
    let results = exec.map(batch, |&i| -> Result<(f64, ParamStore, HeatmapSet)> {
        let acts = spec.forward_trace(params, &inputs[i])?;
        let raw = HeatmapSet::logits(acts.last().expect("non-empty trace").clone())?;
        let out = loss(i, &raw)?;
        let grads = spec.backward_from_trace(params, &acts, &out.grad)?;
        Ok((out.value, grads, raw))
    });
    let mut total = params.zeros_like();
    let mut value = 0.0;
    let mut outputs = Vec::with_capacity(batch.len());
    for r in results {
        let (v, g, o) = r?;
        value += v;
        total.add_scaled(&g, 1.0)?;
        outputs.push(o);
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    Ok((value / n, total, outputs))
}

/// One optimizer update on the mean loss of `batch`.
fn train_batch<F>(
    model: &mut ModelState,
    batch: &[usize],
    inputs: &[Tensor],
    loss: F,
    exec: Execution,
) -> Result<(f64, Vec<HeatmapSet>)>
where
    F: Fn(usize, &HeatmapSet) -> Result<LossOutput> + Sync + Send,
{
    let (value, grads, outputs) =
        batch_gradient(&model.spec, &model.params, batch, inputs, loss, exec)?;
    // phase, epoch and step are filled in by the caller
    let diverged = Error::Diverged {
        phase: 0,
        epoch: 0,
        step: 0,
        loss: value,
    };
    if !value.is_finite() {
        return Err(diverged);
    }
    model.optimizer.step(&mut model.params, &grads)?;
    if model.params.iter().any(|(_, t)| !t.is_finite()) {
        return Err(diverged);
    }
    Ok((value, outputs))
}

fn epoch_order(seed: u64, stream: &str, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(
        seed,
        &[seeds::label("shuffle"), seeds::label(stream), epoch as u64],
    ));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn init_seed(seed: u64, role: Role) -> u64 {
    seeds::derive(
        seed,
        &[seeds::label("init"), seeds::label(&role.to_string())],
    )
}

fn input_kind(role: Role) -> InputKind {
    match role {
        Role::St => InputKind::ImageAndMask,
        Role::Pt | Role::S => InputKind::Image,
    }
}

/// Training inputs and targets, computed once per session.
struct Prepared {
    rgb: Vec<Tensor>,
    st: Vec<Tensor>,
    gt: Vec<HeatmapSet>,
    gt_binary: Vec<BinaryHeatmapSet>,
    fingerprint: OnceLock<String>,
}

impl Prepared {
    fn new(samples: &[SyntheticSample], beta_gt: f64, exec: Execution) -> Result<Self> {
        let rows = exec
            .map(samples, |s| -> Result<_> {
                let gt = s.target_heatmaps().clone();
                let gt_binary = binarize(&gt, beta_gt)?;
                Ok((
                    model_input(s, InputKind::Image, false)?,
                    model_input(s, InputKind::ImageAndMask, false)?,
                    gt,
                    gt_binary,
                ))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let mut p = Prepared {
            rgb: Vec::with_capacity(rows.len()),
            st: Vec::with_capacity(rows.len()),
            gt: Vec::with_capacity(rows.len()),
            gt_binary: Vec::with_capacity(rows.len()),
            fingerprint: OnceLock::new(),
        };
        for (rgb, st, gt, gb) in rows {
            p.rgb.push(rgb);
            p.st.push(st);
            p.gt.push(gt);
            p.gt_binary.push(gb);
        }
        Ok(p)
    }

    fn len(&self) -> usize {
        self.rgb.len()
    }

    fn inputs(&self, role: Role) -> &[Tensor] {
        match input_kind(role) {
            InputKind::ImageAndMask => &self.st,
            InputKind::Image => &self.rgb,
        }
    }

    fn fingerprint(&self) -> &str {
        self.fingerprint.get_or_init(|| {
            let mut h = Sha256::new();
            for (x, g) in self.st.iter().zip(&self.gt) {
                for v in x.data().iter().chain(g.values().data()) {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
            hex(&h.finalize()[..12])
        })
    }
}

/// A trained teacher phase, with the logs it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub model: ModelState,
    pub history: Vec<MetricRow>,
    pub trace: Vec<UpdateEvent>,
    pub checksums: Vec<TeacherChecksum>,
    /// The teacher's maps over the training set it was trained on.
    #[serde(skip)]
    pub outputs: Option<Arc<Vec<HeatmapSet>>>,
}

/// Trained teachers keyed by everything that determines them: seed,
/// training config, dataset contents and the chain of phases that produced
/// them. A session that finds its teacher phase here adopts the stored
/// result instead of retraining; outputs are identical either way.
#[derive(Debug, Clone, Default)]
pub struct TeacherBank {
    entries: BTreeMap<String, BankEntry>,
}

impl TeacherBank {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &BankEntry)> {
        self.entries.iter()
    }

    pub fn extend(&mut self, entries: Vec<(String, BankEntry)>) {
        self.entries.extend(entries);
    }

    /// Trains every teacher phase of `plans`, each distinct teacher once.
    pub fn prepare(
        plans: &[DistillationPlan],
        train: &[SyntheticSample],
        val: &[SyntheticSample],
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let mut bank = TeacherBank::default();
        for plan in plans {
            let entries = {
                let mut s = Session::new(plan.clone(), train, val, cfg.clone())?.with_bank(&bank);
                s.record = true;
                s.run_teachers()?;
                s.recorded
            };
            bank.extend(entries);
        }
        Ok(bank)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: usize,
    pub label: String,
    pub seconds: f64,
    /// Adopted from a [`TeacherBank`] rather than trained.
    pub cached: bool,
}

/// Outcome of a completed plan. Only the student is carried forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub path: Option<PathId>,
    pub seed: u64,
    pub student: ModelState,
    pub final_eval: EvalResult,
    pub history: Vec<MetricRow>,
    pub trace: Vec<UpdateEvent>,
    pub checksums: Vec<TeacherChecksum>,
    /// Wall-clock; excluded from anything that must be reproducible.
    #[serde(skip)]
    pub timings: Vec<PhaseTiming>,
}

/// Executes a [`DistillationPlan`] epoch by epoch.
pub struct Session<'a> {
    plan: DistillationPlan,
    cfg: TrainConfig,
    models: ModelSet,
    train: Prepared,
    val: &'a [SyntheticSample],
    state: TrainState,
    bank: Option<&'a TeacherBank>,
    record: bool,
    recorded: Vec<(String, BankEntry)>,
    /// Frozen teachers' probability maps over the training set.
    cache: BTreeMap<Role, Arc<Vec<HeatmapSet>>>,
    timings: Vec<PhaseTiming>,
    started: Option<Instant>,
}

impl<'a> Session<'a> {
    pub fn new(
        plan: DistillationPlan,
        train: &[SyntheticSample],
        val: &'a [SyntheticSample],
        cfg: TrainConfig,
    ) -> Result<Self> {
        let mut models = BTreeMap::new();
        let mut s = Self::assemble(plan, train, val, cfg, None)?;
        for role in [Role::St, Role::Pt, Role::S] {
            let used = s.plan.trains(role)
                || s.plan
                    .phases
                    .iter()
                    .any(|p| p.teachers.iter().any(|t| t.role() == Some(role)));
            if used && !s.plan.pretrained.contains(&role) {
                let spec = s.models.get(role).clone();
                let params = ParamStore::init(&spec, init_seed(s.cfg.seed, role));
                models.insert(
                    role,
                    ModelState {
                        spec,
                        params,
                        optimizer: Optimizer::new(s.cfg.optimizer_for(role)),
                    },
                );
            }
        }
        s.state.models = models;
        Ok(s)
    }

    /// Continues from a saved state.
    pub fn resume(
        plan: DistillationPlan,
        state: TrainState,
        train: &[SyntheticSample],
        val: &'a [SyntheticSample],
        cfg: TrainConfig,
    ) -> Result<Self> {
        if state.seed != cfg.seed {
            return Err(Error::InvalidArgument(format!(
                "state was trained with seed {}, config says {}",
                state.seed, cfg.seed
            )));
        }
        if state.phase > plan.phases.len() {
            return Err(Error::InvalidArgument(
                "state cursor lies beyond the plan".into(),
            ));
        }
        let s = Self::assemble(plan, train, val, cfg, Some(state))?;
        for (role, m) in &s.state.models {
            if &m.spec != s.models.get(*role) {
                return Err(Error::InvalidModel(format!(
                    "saved {role} does not match the architecture"
                )));
            }
            m.params.check_against(&m.spec)?;
        }
        Ok(s)
    }

    fn assemble(
        plan: DistillationPlan,
        train: &[SyntheticSample],
        val: &'a [SyntheticSample],
        cfg: TrainConfig,
        state: Option<TrainState>,
    ) -> Result<Self> {
        plan.ensure_valid()?;
        cfg.validate()?;
        let first = train
            .first()
            .ok_or_else(|| Error::InvalidArgument("training set is empty".into()))?;
        if val.is_empty() {
            return Err(Error::InvalidArgument("validation set is empty".into()));
        }
        let (_, h, w) = first.image.dims3()?;
        let mut models = build_models(first.joints(), (h, w), &cfg.architecture)?;
        if plan
            .student_phases()
            .any(|(_, p)| p.loss == LossBinding::Mse)
        {
            models.s = models.s.with_head(OutputHead::Linear);
        }
        let train = Prepared::new(train, plan.weights.beta_gt, cfg.exec)?;
        let state = state.unwrap_or_else(|| TrainState {
            seed: cfg.seed,
            models: BTreeMap::new(),
            phase: 0,
            epoch: 0,
            history: Vec::new(),
            trace: Vec::new(),
            checksums: Vec::new(),
        });
        Ok(Self {
            plan,
            cfg,
            models,
            train,
            val,
            state,
            bank: None,
            record: false,
            recorded: Vec::new(),
            cache: BTreeMap::new(),
            timings: Vec::new(),
            started: None,
        })
    }

    pub fn with_bank(mut self, bank: &'a TeacherBank) -> Self {
        self.bank = Some(bank);
        self
    }

    /// Supplies a teacher listed as pretrained in the plan.
    pub fn load_teacher(&mut self, role: Role, params: ParamStore) -> Result<()> {
        if !self.plan.pretrained.contains(&role) {
            return Err(Error::InvalidArgument(format!(
                "{role} is not a pretrained teacher in this plan"
            )));
        }
        let spec = self.models.get(role).clone();
        params.check_against(&spec)?;
        self.state.models.insert(
            role,
            ModelState {
                spec,
                params,
                optimizer: Optimizer::new(self.cfg.optimizer_for(role)),
            },
        );
        Ok(())
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn plan(&self) -> &DistillationPlan {
        &self.plan
    }

    pub fn models(&self) -> &ModelSet {
        &self.models
    }

    pub fn is_done(&self) -> bool {
        self.state.phase >= self.plan.phases.len()
    }

    /// First phase of the lockstep group in interleaved mode.
    fn group_start(&self) -> Option<usize> {
        (self.plan.mode == ScheduleMode::Interleaved).then(|| {
            self.plan
                .phases
                .iter()
                .position(|p| p.trainee != Role::St)
                .unwrap_or(self.plan.phases.len())
        })
    }

    fn check_loaded(&self) -> Result<()> {
        let missing: Vec<String> = self
            .plan
            .pretrained
            .iter()
            .filter(|r| !self.state.models.contains_key(r))
            .map(|r| format!("{r} is pretrained but no parameters were loaded"))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Plan(missing))
        }
    }

    /// Runs one epoch of the current phase (or interleaved group). Returns
    /// `false` once the plan is complete.
    pub fn run_epoch(&mut self) -> Result<bool> {
        if self.is_done() {
            return Ok(false);
        }
        self.check_loaded()?;
        match self.group_start() {
            Some(g) if self.state.phase >= g => self.group_epoch(g)?,
            _ => self.phase_epoch()?,
        }
        Ok(!self.is_done())
    }

    /// Runs the current phase (or interleaved group) to completion.
    pub fn train_phase(&mut self) -> Result<()> {
        let phase = self.state.phase;
        while !self.is_done() && self.state.phase == phase {
            self.run_epoch()?;
        }
        Ok(())
    }

    /// Runs every phase before the first student update.
    pub fn run_teachers(&mut self) -> Result<()> {
        let g = self.group_start().unwrap_or(usize::MAX);
        while !self.is_done()
            && self.state.phase < g
            && self.plan.phases[self.state.phase].trainee != Role::S
        {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<RunReport> {
        while self.run_epoch()? {}
        self.finish()
    }

    /// Final student evaluation; requires a completed plan.
    pub fn finish(self) -> Result<RunReport> {
        if !self.is_done() {
            return Err(Error::InvalidArgument(format!(
                "plan stopped at phase {} of {}",
                self.state.phase,
                self.plan.phases.len()
            )));
        }
        let final_eval = self.evaluate(Role::S)?;
        let mut state = self.state;
        let student = state.models.remove(&Role::S).expect("student model exists");
        Ok(RunReport {
            path: self.plan.path,
            seed: state.seed,
            student,
            final_eval,
            history: state.history,
            trace: state.trace,
            checksums: state.checksums,
            timings: self.timings,
        })
    }

    pub fn evaluate(&self, role: Role) -> Result<EvalResult> {
        let m =
            self.state.models.get(&role).ok_or_else(|| {
                Error::InvalidArgument(format!("{role} is not part of this plan"))
            })?;
        let predictor = NetworkPredictor {
            model: &m.spec,
            params: &m.params,
            input: input_kind(role),
        };
        evaluate_model(
            &predictor,
            self.val,
            &self.cfg.eval,
            &flip_pairs(),
            self.cfg.exec,
        )
    }

    /// How the model trained by phase `idx` came to be.
    fn lineage(&self, idx: usize) -> String {
        let p = &self.plan.phases[idx];
        let teachers: Vec<String> = p
            .teachers
            .iter()
            .map(|t| match t.role() {
                None => "GT".to_string(),
                Some(role) => self.provenance(role, idx),
            })
            .collect();
        let alpha0 = if p.trainee == Role::Pt && p.uses(Source::St) {
            format!(":a0={}", self.plan.weights.alpha0)
        } else {
            String::new()
        };
        format!(
            "{}<-[{}]:{:?}:e{}{alpha0}",
            p.trainee,
            teachers.join(","),
            p.loss,
            p.epochs
        )
    }

    fn provenance(&self, role: Role, before: usize) -> String {
        match self.plan.phases[..before]
            .iter()
            .rposition(|p| p.trainee == role)
        {
            Some(j) => self.lineage(j),
            None => match self.state.models.get(&role) {
                Some(m) => format!("loaded:{}", m.params.checksum()),
                None => "missing".into(),
            },
        }
    }

    fn bank_key(&self, idx: usize) -> String {
        format!(
            "{}|{}|{}|{}",
            self.cfg.seed,
            self.cfg.fingerprint(),
            self.train.fingerprint(),
            self.lineage(idx)
        )
    }

    fn bankable(&self, idx: usize) -> bool {
        self.plan.phases[idx].trainee != Role::S && self.group_start().is_none_or(|g| idx < g)
    }

    /// Adopts a stored teacher for phase `idx` if one exists.
    fn try_bank(&mut self, idx: usize) -> Result<bool> {
        let Some(bank) = self.bank else {
            return Ok(false);
        };
        if !self.bankable(idx) {
            return Ok(false);
        }
        let Some(entry) = bank.entries.get(&self.bank_key(idx)) else {
            return Ok(false);
        };
        let t0 = Instant::now();
        let role = self.plan.phases[idx].trainee;
        self.state.models.insert(role, entry.model.clone());
        self.state
            .history
            .extend(entry.history.iter().cloned().map(|mut r| {
                r.phase = idx;
                r
            }));
        self.state
            .trace
            .extend(entry.trace.iter().cloned().map(|mut e| {
                e.phase = idx;
                e
            }));
        self.state
            .checksums
            .extend(entry.checksums.iter().cloned().map(|mut c| {
                c.phase = idx;
                c
            }));
        match &entry.outputs {
            Some(maps) => self.cache.insert(role, Arc::clone(maps)),
            None => self.cache.remove(&role),
        };
        self.timings.push(PhaseTiming {
            phase: idx,
            label: self.plan.phases[idx].to_string(),
            seconds: t0.elapsed().as_secs_f64(),
            cached: true,
        });
        self.state.phase += 1;
        self.state.epoch = 0;
        Ok(true)
    }

    fn begin_phase(&mut self, idx: usize, frozen: &[Role]) {
        self.started = Some(Instant::now());
        for &role in frozen {
            if let Some(m) = self.state.models.get(&role) {
                self.state.checksums.push(TeacherChecksum {
                    phase: idx,
                    role,
                    before: m.params.checksum(),
                    after: None,
                });
            }
        }
    }

    fn finish_phase(&mut self, idx: usize) -> Result<()> {
        for c in self.state.checksums.iter_mut().filter(|c| c.phase == idx) {
            c.after = self.state.models.get(&c.role).map(|m| m.params.checksum());
        }
        let trainee = self.plan.phases[idx].trainee;
        self.cache.remove(&trainee);
        self.timings.push(PhaseTiming {
            phase: idx,
            label: self.plan.phases[idx].to_string(),
            seconds: self.started.map_or(0.0, |t| t.elapsed().as_secs_f64()),
            cached: false,
        });
        if self.record && self.bankable(idx) {
            self.ensure_cache(&[trainee])?;
            let phase = &self.plan.phases[idx];
            let entry = BankEntry {
                outputs: self.cache.get(&phase.trainee).cloned(),
                model: self.state.models[&phase.trainee].clone(),
                history: self
                    .state
                    .history
                    .iter()
                    .filter(|r| r.phase == idx)
                    .cloned()
                    .collect(),
                trace: self
                    .state
                    .trace
                    .iter()
                    .filter(|e| e.phase == idx)
                    .cloned()
                    .collect(),
                checksums: self
                    .state
                    .checksums
                    .iter()
                    .filter(|c| c.phase == idx)
                    .cloned()
                    .collect(),
            };
            self.recorded.push((self.bank_key(idx), entry));
        }
        Ok(())
    }

    /// Fills the probability-map cache for frozen teachers.
    fn ensure_cache(&mut self, roles: &[Role]) -> Result<()> {
        for &role in roles {
            if self.cache.contains_key(&role) {
                continue;
            }
            let m = &self.state.models[&role];
            let inputs = self.train.inputs(role);
            let maps = self
                .cfg
                .exec
                .map_range(inputs.len(), |i| m.spec.predict(&m.params, &inputs[i]))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            self.cache.insert(role, Arc::new(maps));
        }
        Ok(())
    }

    /// One update of phase `idx` on `batch`. `pt_live` overrides the cached
    /// PT maps with per-sample snapshots.
    fn step(
        &mut self,
        idx: usize,
        batch: &[usize],
        pt_live: Option<&BTreeMap<usize, HeatmapSet>>,
        epoch: usize,
        step: usize,
    ) -> Result<(f64, Vec<HeatmapSet>)> {
        let phase = &self.plan.phases[idx];
        let weights = &self.plan.weights;
        let train = &self.train;
        let st_cache = self.cache.get(&Role::St);
        let pt_cache = self.cache.get(&Role::Pt);
        let model = self
            .state
            .models
            .get_mut(&phase.trainee)
            .expect("trainee initialized");
        let loss = |i: usize, logits: &HeatmapSet| {
            let pt = match pt_live {
                Some(live) => live.get(&i),
                None => pt_cache.map(|c| &c[i]),
            };
            let targets = Targets {
                gt: &train.gt[i],
                gt_binary: &train.gt_binary[i],
                st: st_cache.map(|c| &c[i]),
                pt,
            };
            phase_loss(phase, weights, logits, &targets)
        };
        let out = train_batch(
            model,
            batch,
            train.inputs(phase.trainee),
            loss,
            self.cfg.exec,
        )
        .map_err(|e| match e {
            Error::Diverged { loss, .. } => Error::Diverged {
                phase: idx,
                epoch,
                step,
                loss,
            },
            Error::NonFinite(_) => Error::Diverged {
                phase: idx,
                epoch,
                step,
                loss: f64::NAN,
            },
            other => other,
        })?;
        self.state.trace.push(UpdateEvent {
            phase: idx,
            trainee: phase.trainee,
            teachers: phase.teachers.clone(),
            epoch,
            step,
        });
        Ok(out)
    }

    fn record_epoch(&mut self, idx: usize, epoch: usize, loss: f64) -> Result<()> {
        let phase = &self.plan.phases[idx];
        let done = epoch + 1;
        let due = done == phase.epochs
            || (self.cfg.val_every > 0 && done.is_multiple_of(self.cfg.val_every));
        let val = if due {
            Some(ValMetrics::from(&self.evaluate(phase.trainee)?))
        } else {
            None
        };
        self.state.history.push(MetricRow {
            phase: idx,
            label: phase.to_string(),
            trainee: phase.trainee,
            epoch: done,
            train_loss: loss,
            val,
        });
        Ok(())
    }

    fn frozen_teachers(phase: &Phase) -> Vec<Role> {
        phase.teachers.iter().filter_map(|t| t.role()).collect()
    }

    fn phase_epoch(&mut self) -> Result<()> {
        let idx = self.state.phase;
        let phase = self.plan.phases[idx].clone();
        if self.state.epoch == 0 {
            if self.try_bank(idx)? {
                return Ok(());
            }
            self.begin_phase(idx, &Self::frozen_teachers(&phase));
        }
        if phase.epochs > 0 {
            self.ensure_cache(&Self::frozen_teachers(&phase))?;
            let epoch = self.state.epoch;
            let order = epoch_order(self.cfg.seed, &phase.key(), epoch, self.train.len());
            let mut total = 0.0;
            let batches: Vec<&[usize]> = order.chunks(self.cfg.batch_size).collect();
            for (step, batch) in batches.iter().enumerate() {
                total += self.step(idx, batch, None, epoch, step)?.0;
            }
            self.record_epoch(idx, epoch, total / batches.len() as f64)?;
            self.state.epoch += 1;
        }
        if self.state.epoch >= phase.epochs {
            self.finish_phase(idx)?;
            self.state.phase += 1;
            self.state.epoch = 0;
        }
        Ok(())
    }

    /// One epoch of the lockstep group: per mini-batch, PT takes its step
    /// first and the student steps that follow see PT's pre-update maps.
    fn group_epoch(&mut self, start: usize) -> Result<()> {
        let members: Vec<usize> = (start..self.plan.phases.len()).collect();
        let epochs = members
            .iter()
            .map(|&i| self.plan.phases[i].epochs)
            .max()
            .unwrap_or(0);
        let pt_trained = members
            .iter()
            .any(|&i| self.plan.phases[i].trainee == Role::Pt);
        let uses = |s: Source| members.iter().any(|&i| self.plan.phases[i].uses(s));
        let (uses_st, uses_pt) = (uses(Source::St), uses(Source::Pt));
        let epoch = self.state.epoch;
        if epoch == 0 {
            let frozen: Vec<Role> = [(uses_st, Role::St), (uses_pt && !pt_trained, Role::Pt)]
                .iter()
                .filter(|(u, _)| *u)
                .map(|&(_, r)| r)
                .collect();
            for &i in &members {
                let phase = self.plan.phases[i].clone();
                let f: Vec<Role> = frozen
                    .iter()
                    .copied()
                    .filter(|r| phase.uses(source_of(*r)))
                    .collect();
                self.begin_phase(i, &f);
            }
        }
        if epoch < epochs {
            if uses_st {
                self.ensure_cache(&[Role::St])?;
            }
            if uses_pt && !pt_trained {
                self.ensure_cache(&[Role::Pt])?;
            }
            let stream: Vec<String> = members.iter().map(|&i| self.plan.phases[i].key()).collect();
            let order = epoch_order(self.cfg.seed, &stream.join("|"), epoch, self.train.len());
            let batches: Vec<&[usize]> = order.chunks(self.cfg.batch_size).collect();
            let mut totals = vec![0.0; members.len()];
            for (step, batch) in batches.iter().enumerate() {
                let mut live: Option<BTreeMap<usize, HeatmapSet>> = None;
                for (slot, &i) in members.iter().enumerate() {
                    let phase = &self.plan.phases[i];
                    let needs_pt = phase.uses(Source::Pt) && pt_trained;
                    if needs_pt && live.is_none() {
                        live = Some(self.pt_snapshot(batch)?);
                    }
                    if epoch >= phase.epochs {
                        continue;
                    }
                    let is_pt = phase.trainee == Role::Pt;
                    let head = self.models.pt.head;
                    let (loss, logits) = self.step(i, batch, live.as_ref(), epoch, step)?;
                    totals[slot] += loss;
                    if is_pt {
                        live = Some(
                            batch
                                .iter()
                                .copied()
                                .zip(logits)
                                .map(|(k, l)| Ok((k, head.to_prob(l.into_values())?)))
                                .collect::<Result<_>>()?,
                        );
                    }
                }
            }
            for (slot, &i) in members.iter().enumerate() {
                if epoch < self.plan.phases[i].epochs {
                    self.record_epoch(i, epoch, totals[slot] / batches.len() as f64)?;
                }
            }
            self.state.epoch += 1;
        }
        if self.state.epoch >= epochs {
            for &i in &members {
                self.finish_phase(i)?;
            }
            self.state.phase = self.plan.phases.len();
            self.state.epoch = 0;
        }
        Ok(())
    }

    /// PT's current maps for `batch`, without updating it.
    fn pt_snapshot(&self, batch: &[usize]) -> Result<BTreeMap<usize, HeatmapSet>> {
        let m = &self.state.models[&Role::Pt];
        let maps = self
            .cfg
            .exec
            .map(batch, |&i| m.spec.predict(&m.params, &self.train.rgb[i]));
        batch
            .iter()
            .copied()
            .zip(maps)
            .map(|(i, r)| Ok((i, r?)))
            .collect()
    }
}

fn source_of(role: Role) -> Source {
    match role {
        Role::St => Source::St,
        Role::Pt => Source::Pt,
        Role::S => Source::Gt,
    }
}

/// Builds and runs a plan from scratch.
pub fn run_plan(
    plan: &DistillationPlan,
    train: &[SyntheticSample],
    val: &[SyntheticSample],
    cfg: &TrainConfig,
) -> Result<RunReport> {
    Session::new(plan.clone(), train, val, cfg.clone())?.run()
}
