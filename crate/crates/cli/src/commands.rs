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

//! The subcommands, as plain functions over a loaded config.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use odkd::distill::{
    DistillationPlan, LossBinding, PathId, RunReport, Session, TeacherBank, TrainConfig,
};
use odkd::eval::{evaluate_model, EvalConfig, EvalResult, GroundTruthPredictor, NetworkPredictor};
use odkd::heatmap::{binarize, count_peaks};
use odkd::nn::{load_checkpoint, save_params, Checkpoint};
use odkd::pose::PoseInstance;
use odkd::synth::{
    export_pgm, flip_pairs, generate_dataset, generate_split, write_dataset, InputKind,
    SyntheticSample, VALIDATION_OFFSET,
};
use odkd::Execution;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::records::{
    mean_std, seed_aps, write_csv, AblationRow, MetricsRecord, SummaryRecord, SweepRow,
    TimingRecord,
};

/// Runs that did not complete, by run id. Whatever did complete has
/// already been written.
#[derive(Debug)]
pub struct RunFailures {
    pub failed: Vec<(String, String)>,
    pub total: usize,
}

impl fmt::Display for RunFailures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} of {} runs failed:", self.failed.len(), self.total)?;
        for (id, reason) in &self.failed {
            write!(f, "\n  {id}: {reason}")?;
        }
        Ok(())
    }
}

impl std::error::Error for RunFailures {}

/// Which index range a generated dataset covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub file: PathBuf,
    pub samples: usize,
    pub instances: usize,
    /// Fraction of samples in which another figure's box meets the target's.
    pub overlap_rate: f64,
}

impl fmt::Display for GenSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "wrote {} samples ({} instances, overlap rate {:.3}) to {}",
            self.samples,
            self.instances,
            self.overlap_rate,
            self.file.display()
        )
    }
}

fn keypoint_box(p: &PoseInstance) -> (f64, f64, f64, f64) {
    p.keypoints.iter().fold(
        (f64::MAX, f64::MAX, f64::MIN, f64::MIN),
        |(x0, y0, x1, y1), k| (x0.min(k.x), y0.min(k.y), x1.max(k.x), y1.max(k.y)),
    )
}

fn overlaps(s: &SyntheticSample) -> bool {
    let t = keypoint_box(s.target());
    s.instances[1..].iter().any(|other| {
        let o = keypoint_box(other);
        t.0 <= o.2 && o.0 <= t.2 && t.1 <= o.3 && o.1 <= t.3
    })
}

pub fn cmd_gen_data(
    cfg: &ExperimentConfig,
    count: usize,
    split: Split,
    file: &Path,
    pgm: usize,
    exec: Execution,
) -> Result<GenSummary> {
    cfg.scene.validate().context("scene")?;
    let samples = match split {
        Split::Train => generate_dataset(&cfg.scene, count, exec)?,
        Split::Val => generate_split(&cfg.scene, count, VALIDATION_OFFSET, exec)?,
    };
    if let Some(dir) = file.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_dataset(file, &samples)?;
    for s in samples.iter().take(pgm) {
        let name = format!(
            "{}-{:06}.pgm",
            file.file_stem().unwrap_or_default().to_string_lossy(),
            s.index
        );
        export_pgm(s, &file.with_file_name(name))?;
    }
    let overlapping = samples.iter().filter(|s| overlaps(s)).count();
    Ok(GenSummary {
        file: file.to_path_buf(),
        samples: samples.len(),
        instances: samples.iter().map(|s| s.instances.len()).sum(),
        overlap_rate: if samples.is_empty() {
            0.0
        } else {
            overlapping as f64 / samples.len() as f64
        },
    })
}

fn run_id(plan: &DistillationPlan, seed: u64) -> String {
    let label = plan.path.map_or("custom".to_string(), |p| p.to_string());
    format!("{label}-s{seed}")
}

fn seeded(cfg: &TrainConfig, seed: u64, exec: Execution) -> TrainConfig {
    TrainConfig {
        seed,
        exec,
        ..cfg.clone()
    }
}

/// Run id, seed and outcome of one training run.
type CellResult = (String, u64, Result<RunReport>);

/// A finished run and where its files went.
struct Cell {
    id: String,
    seed: u64,
    report: RunReport,
}

fn metrics_rows(cell: &Cell) -> Vec<MetricsRecord> {
    let path = cell
        .report
        .path
        .map_or("custom".to_string(), |p| p.to_string());
    cell.report
        .history
        .iter()
        .map(|r| MetricsRecord::from_row(&cell.id, &path, cell.seed, r))
        .collect()
}

fn timing_rows(cells: &[Cell]) -> Vec<TimingRecord> {
    cells
        .iter()
        .flat_map(|c| {
            c.report
                .timings
                .iter()
                .map(|t| TimingRecord::from_timing(&c.id, t))
        })
        .collect()
}

fn summary_row(cell: &Cell) -> SummaryRecord {
    let e = &cell.report.final_eval;
    SummaryRecord {
        run_id: cell.id.clone(),
        seed: cell.seed,
        ap: e.ap,
        ap50: e.ap50,
        ap75: e.ap75,
        ar: e.ar,
    }
}

/// Splits cell results into successes (sorted by id) and failures.
fn partition(results: Vec<CellResult>) -> (Vec<Cell>, Vec<(String, String)>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (id, seed, r) in results {
        match r {
            Ok(report) => ok.push(Cell { id, seed, report }),
            Err(e) => failed.push((id, format!("{e:#}"))),
        }
    }
    ok.sort_by(|a, b| a.id.cmp(&b.id));
    failed.sort();
    (ok, failed)
}

fn check_failures(failed: Vec<(String, String)>, total: usize) -> Result<()> {
    if failed.is_empty() {
        Ok(())
    } else {
        Err(RunFailures { failed, total }.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub path: Option<PathId>,
    pub runs: Vec<SummaryRecord>,
    pub mean_ap: f64,
    pub std_ap: f64,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.runs {
            writeln!(
                f,
                "{:<12} AP {:.4}  AP50 {:.4}  AP75 {:.4}",
                r.run_id, r.ap, r.ap50, r.ap75
            )?;
        }
        write!(
            f,
            "mean AP {:.4} +/- {:.4} over {} seeds",
            self.mean_ap,
            self.std_ap,
            self.runs.len()
        )
    }
}

/// Trains the configured plan once per seed. Writes, under `out/train`:
/// `<run>/metrics.csv`, `<run>/student.ckpt` (+ `.blob`), `<run>/eval.json`,
/// `summary.csv`, `summary.json` and `timings.csv`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, exec: Execution) -> Result<TrainSummary> {
    cfg.validate()?;
    let plan = cfg.plan.plan()?;
    let (train, val) = cfg.datasets(exec)?;
    let dir = out.join("train");
    let results = exec.map(&cfg.seeds, |&seed| {
        let id = run_id(&plan, seed);
        let r = Session::new(plan.clone(), &train, &val, seeded(&cfg.train, seed, exec))
            .and_then(|s| s.run())
            .map_err(anyhow::Error::from);
        (id, seed, r)
    });
    let total = results.len();
    let (cells, failed) = partition(results);
    for c in &cells {
        let run_dir = dir.join(&c.id);
        write_csv(&run_dir.join("metrics.csv"), &metrics_rows(c))?;
        save_params(
            &run_dir.join("student.ckpt"),
            &c.report.student.spec,
            &c.report.student.params,
        )?;
        write_json(&run_dir.join("eval.json"), &c.report.final_eval)?;
    }
    let runs: Vec<SummaryRecord> = cells.iter().map(summary_row).collect();
    write_csv(&dir.join("summary.csv"), &runs)?;
    write_csv(&dir.join("timings.csv"), &timing_rows(&cells))?;
    let (mean_ap, std_ap) = if runs.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        mean_std(&runs.iter().map(|r| r.ap).collect::<Vec<_>>())
    };
    let summary = TrainSummary {
        path: plan.path,
        runs,
        mean_ap,
        std_ap,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    check_failures(failed, total)?;
    Ok(summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Trains every plan for every seed; teachers are trained once per seed and
/// shared by all plans that use them.
fn run_grid(
    plans: &[(String, DistillationPlan)],
    cfg: &ExperimentConfig,
    train: &[SyntheticSample],
    val: &[SyntheticSample],
    exec: Execution,
) -> (Vec<CellResult>, Vec<(u64, TeacherBank)>) {
    let per_seed = exec.map(&cfg.seeds, |&seed| {
        let tc = seeded(&cfg.train, seed, exec);
        let just_plans: Vec<DistillationPlan> = plans.iter().map(|(_, p)| p.clone()).collect();
        match TeacherBank::prepare(&just_plans, train, val, &tc) {
            Ok(bank) => {
                let cells = exec.map(plans, |(label, plan)| {
                    let r = Session::new(plan.clone(), train, val, tc.clone())
                        .map(|s| s.with_bank(&bank))
                        .and_then(|s| s.run())
                        .map_err(anyhow::Error::from);
                    (format!("{label}-s{seed}"), seed, r)
                });
                (cells, Some((seed, bank)))
            }
            Err(e) => {
                let msg = format!("teacher training failed: {e}");
                let cells = plans
                    .iter()
                    .map(|(label, _)| (format!("{label}-s{seed}"), seed, Err(anyhow!(msg.clone()))))
                    .collect();
                (cells, None)
            }
        }
    });
    let mut cells = Vec::new();
    let mut banks = Vec::new();
    for (c, b) in per_seed {
        cells.extend(c);
        banks.extend(b);
    }
    (cells, banks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, path: PathId) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.path == path.to_string())
    }

    /// Path letters from best to worst mean AP.
    pub fn ranking(&self) -> Vec<String> {
        let mut rows: Vec<&AblationRow> = self.rows.iter().collect();
        rows.sort_by_key(|r| r.rank);
        rows.iter().map(|r| r.path.clone()).collect()
    }
}

/// 1-based ranks by descending mean; ties keep input order and NaN (no
/// finished seeds) ranks last.
fn rank(means: &[f64]) -> Vec<usize> {
    let key = |i: usize| if means[i].is_nan() { f64::NEG_INFINITY } else { means[i] };
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    let mut ranks = vec![0; means.len()];
    for (r, i) in order.into_iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

/// Runs the listed canonical paths over every seed. Writes, under
/// `out/ablation`: `runs/<path>-s<seed>.csv`, `ablation.csv` and
/// `timings.csv`.
pub fn cmd_ablate_paths(
    cfg: &ExperimentConfig,
    paths: &[PathId],
    out: &Path,
    exec: Execution,
) -> Result<AblationTable> {
    cfg.validate()?;
    if paths.is_empty() {
        bail!("no paths to ablate");
    }
    let mut paths = paths.to_vec();
    paths.sort();
    paths.dedup();
    let plans: Vec<(String, DistillationPlan)> = paths
        .iter()
        .map(|&p| (p.to_string(), cfg.plan.canonical(p)))
        .collect();
    let (train, val) = cfg.datasets(exec)?;
    let (results, _) = run_grid(&plans, cfg, &train, &val, exec);
    let total = results.len();
    let (cells, failed) = partition(results);
    let dir = out.join("ablation");
    for c in &cells {
        write_csv(
            &dir.join("runs").join(format!("{}.csv", c.id)),
            &metrics_rows(c),
        )?;
    }
    write_csv(&dir.join("timings.csv"), &timing_rows(&cells))?;

    let per_path: Vec<Vec<(u64, f64)>> = paths
        .iter()
        .map(|p| {
            let mut aps: Vec<(u64, f64)> = cells
                .iter()
                .filter(|c| c.report.path == Some(*p))
                .map(|c| (c.seed, c.report.final_eval.ap))
                .collect();
            aps.sort_by_key(|a| a.0);
            aps
        })
        .collect();
    let stats: Vec<(f64, f64)> = per_path
        .iter()
        .map(|aps| {
            if aps.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                mean_std(&aps.iter().map(|a| a.1).collect::<Vec<_>>())
            }
        })
        .collect();
    let ranks = rank(&stats.iter().map(|s| s.0).collect::<Vec<_>>());
    let rows = paths
        .iter()
        .enumerate()
        .map(|(i, p)| AblationRow {
            path: p.to_string(),
            group: p.group(),
            schedule: p.description().to_string(),
            mean_ap: stats[i].0,
            std_ap: stats[i].1,
            rank: ranks[i],
            seed_aps: seed_aps(&per_path[i]),
        })
        .collect::<Vec<_>>();
    write_csv(&dir.join("ablation.csv"), &rows)?;
    check_failures(failed, total)?;
    Ok(AblationTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

pub const CONTROL_ARM: &str = "control";

fn beta_arm(beta: f64) -> String {
    format!("beta={beta}")
}

/// Mean component count per teacher-target channel at `beta`, over every
/// teacher map in `banks`.
fn mean_peaks(banks: &[(u64, TeacherBank)], beta: f64) -> Result<f64> {
    let mut total = 0usize;
    let mut channels = 0usize;
    for (_, bank) in banks {
        for (_, entry) in bank.entries() {
            for map in entry.outputs.iter().flat_map(|o| o.iter()) {
                let counts = count_peaks(&binarize(map, beta)?);
                channels += counts.len();
                total += counts.iter().sum::<usize>();
            }
        }
    }
    Ok(total as f64 / channels.max(1) as f64)
}

/// Trains path (j) at each teacher threshold in `betas` and once as a
/// control without binarization (MSE distillation on the raw maps). Writes,
/// under `out/sweep`: `runs/<arm>-s<seed>.csv`, `sweep.csv` and
/// `timings.csv`.
pub fn cmd_sweep_beta(
    cfg: &ExperimentConfig,
    betas: &[f64],
    out: &Path,
    exec: Execution,
) -> Result<SweepTable> {
    cfg.validate()?;
    let mut betas = betas.to_vec();
    if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
        bail!("beta {b} is outside [0, 1)");
    }
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    let mut plans: Vec<(String, DistillationPlan)> = betas
        .iter()
        .map(|&b| {
            let mut w = cfg.plan.weights;
            w.beta_teacher = b;
            (
                beta_arm(b),
                cfg.plan
                    .canonical_with(PathId::J, w, LossBinding::BinarizedBce),
            )
        })
        .collect();
    plans.push((
        CONTROL_ARM.to_string(),
        cfg.plan
            .canonical_with(PathId::J, cfg.plan.weights, LossBinding::Mse),
    ));
    let (train, val) = cfg.datasets(exec)?;
    let (results, banks) = run_grid(&plans, cfg, &train, &val, exec);
    let total = results.len();
    let (cells, failed) = partition(results);
    let dir = out.join("sweep");
    for c in &cells {
        write_csv(
            &dir.join("runs").join(format!("{}.csv", c.id)),
            &metrics_rows(c),
        )?;
    }
    write_csv(&dir.join("timings.csv"), &timing_rows(&cells))?;

    let mut rows = Vec::new();
    for (label, _) in &plans {
        let prefix = format!("{label}-s");
        let mut aps: Vec<(u64, f64)> = cells
            .iter()
            .filter(|c| c.id.starts_with(&prefix))
            .map(|c| (c.seed, c.report.final_eval.ap))
            .collect();
        aps.sort_by_key(|a| a.0);
        let (mean_ap, std_ap) = if aps.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            mean_std(&aps.iter().map(|a| a.1).collect::<Vec<_>>())
        };
        let beta = label
            .strip_prefix("beta=")
            .map(|b| b.parse::<f64>().expect("arm label"));
        rows.push(SweepRow {
            arm: label.clone(),
            beta,
            mean_ap,
            std_ap,
            mean_peaks: beta.map(|b| mean_peaks(&banks, b)).transpose()?,
            seed_aps: seed_aps(&aps),
        });
    }
    write_csv(&dir.join("sweep.csv"), &rows)?;
    check_failures(failed, total)?;
    Ok(SweepTable { rows })
}

/// Decoding switches for `eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalFlags {
    pub flip: bool,
    pub quarter_offset: bool,
}

/// Scores a checkpoint (or the ground-truth oracle manifest) on `samples`
/// and writes the result as JSON to `out_file`.
pub fn cmd_eval(
    checkpoint: &Path,
    samples: &[SyntheticSample],
    base: &EvalConfig,
    flags: EvalFlags,
    out_file: &Path,
    exec: Execution,
) -> Result<EvalResult> {
    if samples.is_empty() {
        bail!("nothing to evaluate: the dataset is empty");
    }
    let eval = EvalConfig {
        flip: flags.flip,
        quarter_offset: flags.quarter_offset,
        ..base.clone()
    };
    let pairs = flip_pairs();
    let result = match load_checkpoint(checkpoint)? {
        Checkpoint::Network { model, params } => {
            let input = match model.input[0] {
                3 => InputKind::Image,
                4 => InputKind::ImageAndMask,
                c => bail!("{}: model takes {c} input channels", checkpoint.display()),
            };
            let predictor = NetworkPredictor {
                model: &model,
                params: &params,
                input,
            };
            evaluate_model(&predictor, samples, &eval, &pairs, exec)?
        }
        Checkpoint::GroundTruthOracle => {
            let predictor = GroundTruthPredictor {
                pairs: pairs.clone(),
            };
            evaluate_model(&predictor, samples, &eval, &pairs, exec)?
        }
    };
    write_json(out_file, &result)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_descend_with_stable_ties_and_nan_last() {
        assert_eq!(rank(&[0.2, 0.5, f64::NAN, 0.5, 0.1]), [3, 1, 5, 2, 4]);
        assert_eq!(rank(&[]), Vec::<usize>::new());
    }

    #[test]
    fn failures_list_every_run() {
        let e = RunFailures {
            failed: vec![("a-s0".into(), "diverged".into()), ("j-s2".into(), "io".into())],
            total: 10,
        };
        assert_eq!(e.to_string(), "2 of 10 runs failed:\n  a-s0: diverged\n  j-s2: io");
    }
}
