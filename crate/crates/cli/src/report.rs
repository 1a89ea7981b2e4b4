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

//! Plain-text rendering of the aggregate tables in an output directory.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Result};

use crate::records::{read_csv, AblationRow, SummaryRecord, SweepRow};

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.digits$}"))
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut rows: Vec<&AblationRow> = rows.iter().collect();
    rows.sort_by(|a, b| a.group.cmp(&b.group).then(a.path.cmp(&b.path)));
    let mut s = String::new();
    writeln!(
        s,
        "{:<5} {:<5} {:<40} {:>8} {:>8} {:>4}",
        "path", "group", "schedule", "AP", "std", "rank"
    )
    .unwrap();
    for r in rows {
        writeln!(
            s,
            "{:<5} {:<5} {:<40} {:>8.4} {:>8.4} {:>4}",
            r.path, r.group, r.schedule, r.mean_ap, r.std_ap, r.rank
        )
        .unwrap();
    }
    s
}

pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:<10} {:>8} {:>8} {:>10}",
        "arm", "AP", "std", "peaks/map"
    )
    .unwrap();
    for r in rows {
        writeln!(
            s,
            "{:<10} {:>8.4} {:>8.4} {:>10}",
            r.arm,
            r.mean_ap,
            r.std_ap,
            fmt_opt(r.mean_peaks, 3)
        )
        .unwrap();
    }
    s
}

pub fn render_summary(rows: &[SummaryRecord]) -> String {
    let mut s = String::new();
    writeln!(s, "{:<14} {:>8} {:>8} {:>8}", "run", "AP", "AP50", "AP75").unwrap();
    for r in rows {
        writeln!(
            s,
            "{:<14} {:>8.4} {:>8.4} {:>8.4}",
            r.run_id, r.ap, r.ap50, r.ap75
        )
        .unwrap();
    }
    s
}

/// Renders whichever of `train/summary.csv`, `ablation/ablation.csv` and
/// `sweep/sweep.csv` exist under `dir`.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let mut out = String::new();
    let train = dir.join("train").join("summary.csv");
    if train.exists() {
        write!(
            out,
            "== train ==\n{}\n",
            render_summary(&read_csv::<SummaryRecord>(&train)?)
        )?;
    }
    let ablation = dir.join("ablation").join("ablation.csv");
    if ablation.exists() {
        write!(
            out,
            "== path ablation ==\n{}\n",
            render_ablation(&read_csv::<AblationRow>(&ablation)?)
        )?;
    }
    let sweep = dir.join("sweep").join("sweep.csv");
    if sweep.exists() {
        write!(
            out,
            "== beta sweep ==\n{}\n",
            render_sweep(&read_csv::<SweepRow>(&sweep)?)
        )?;
    }
    if out.is_empty() {
        bail!("{}: no result tables found", dir.display());
    }
    Ok(out)
}
