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

//! CSV tables. Every file starts with a `# schema = <name>/<version>` line
//! followed by a header row.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use odkd::distill::{MetricRow, PhaseTiming};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// A CSV table with a versioned schema and a fixed column order.
pub trait Table: Serialize + DeserializeOwned {
    const SCHEMA: &'static str;
    const COLUMNS: &'static [&'static str];
}

macro_rules! table {
    ($ty:ty, $schema:literal, [$($col:literal),* $(,)?]) => {
        impl Table for $ty {
            const SCHEMA: &'static str = $schema;
            const COLUMNS: &'static [&'static str] = &[$($col),*];
        }
    };
}

/// One logged epoch of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub path: String,
    pub seed: u64,
    pub phase: usize,
    pub phase_label: String,
    pub trainee: String,
    pub epoch: usize,
    pub loss: f64,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub ar: Option<f64>,
}

impl MetricsRecord {
    pub fn from_row(run_id: &str, path: &str, seed: u64, row: &MetricRow) -> Self {
        let v = row.val.as_ref();
        Self {
            run_id: run_id.to_string(),
            path: path.to_string(),
            seed,
            phase: row.phase,
            phase_label: row.label.clone(),
            trainee: row.trainee.to_string(),
            epoch: row.epoch,
            loss: row.train_loss,
            ap: v.map(|v| v.ap),
            ap50: v.map(|v| v.ap50),
            ap75: v.map(|v| v.ap75),
            ap_medium: v.and_then(|v| v.ap_medium),
            ap_large: v.and_then(|v| v.ap_large),
            ar: v.map(|v| v.ar),
        }
    }
}

/// Wall-clock time of one phase. Kept apart from the metrics so those stay
/// byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub run_id: String,
    pub phase: usize,
    pub phase_label: String,
    pub seconds: f64,
    /// Adopted from an already trained teacher.
    pub cached: bool,
}

impl TimingRecord {
    pub fn from_timing(run_id: &str, t: &PhaseTiming) -> Self {
        Self {
            run_id: run_id.to_string(),
            phase: t.phase,
            phase_label: t.label.clone(),
            seconds: t.seconds,
            cached: t.cached,
        }
    }
}

/// Final student accuracy of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub run_id: String,
    pub seed: u64,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar: f64,
}

/// One ablation path aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub path: String,
    pub group: u8,
    pub schedule: String,
    pub mean_ap: f64,
    pub std_ap: f64,
    pub rank: usize,
    /// Per-seed APs as `seed:ap` pairs joined by `;`.
    pub seed_aps: String,
}

/// One β arm aggregated over seeds; the control arm has no β and no peak
/// count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub arm: String,
    pub beta: Option<f64>,
    pub mean_ap: f64,
    pub std_ap: f64,
    /// Mean connected components per teacher target channel.
    pub mean_peaks: Option<f64>,
    pub seed_aps: String,
}

pub fn seed_aps(aps: &[(u64, f64)]) -> String {
    aps.iter()
        .map(|(s, ap)| format!("{s}:{ap}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

table!(
    MetricsRecord,
    "odkd.metrics/1",
    [
        "run_id",
        "path",
        "seed",
        "phase",
        "phase_label",
        "trainee",
        "epoch",
        "loss",
        "ap",
        "ap50",
        "ap75",
        "ap_medium",
        "ap_large",
        "ar",
    ]
);
table!(
    TimingRecord,
    "odkd.timings/1",
    ["run_id", "phase", "phase_label", "seconds", "cached"]
);
table!(
    SummaryRecord,
    "odkd.summary/1",
    ["run_id", "seed", "ap", "ap50", "ap75", "ar"]
);
table!(
    AblationRow,
    "odkd.ablation/1",
    ["path", "group", "schedule", "mean_ap", "std_ap", "rank", "seed_aps",]
);
table!(
    SweepRow,
    "odkd.sweep/1",
    ["arm", "beta", "mean_ap", "std_ap", "mean_peaks", "seed_aps"]
);

pub fn write_csv<T: Table>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut buf = format!("# schema = {}\n", T::SCHEMA).into_bytes();
    {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(&mut buf);
        w.write_record(T::COLUMNS)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

/// Reads a table written by [`write_csv`], checking its schema line.
pub fn read_csv<T: Table>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().next().unwrap_or_default();
    let expected = format!("# schema = {}", T::SCHEMA);
    if first != expected {
        bail!(
            "{}: expected `{expected}` on the first line, found `{first}`",
            path.display()
        );
    }
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{}: data row {}", path.display(), i + 1)))
        .collect()
}
