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

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use odkd::distill::PathId;
use odkd::synth::{generate_split, read_dataset, VALIDATION_OFFSET};
use odkd::Execution;
use odkd_cli::commands::{self, EvalFlags, Split};
use odkd_cli::report::{render_ablation, render_sweep};
use odkd_cli::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "odkd",
    version,
    about = "Orderly dual-teacher distillation for heatmap keypoints"
)]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root. Falls back to the config's `out`, then $ODKD_OUT, then `runs`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as JSON lines.
    GenData {
        #[arg(long, default_value_t = 256)]
        count: usize,
        #[arg(long, value_enum, default_value_t = Split::Train)]
        split: Split,
        /// Defaults to `<out>/data/<split>.jsonl`.
        #[arg(long)]
        file: Option<PathBuf>,
        /// Also write the first N images as PGM next to the dataset.
        #[arg(long, default_value_t = 0)]
        pgm: usize,
    },
    /// Train the configured plan once per seed.
    Train {
        /// Use this canonical path instead of the configured plan.
        #[arg(long)]
        path: Option<PathId>,
    },
    /// Compare canonical distillation paths.
    AblatePaths {
        /// Comma-separated path letters; all ten by default.
        #[arg(long, value_delimiter = ',')]
        paths: Vec<PathId>,
    },
    /// Sweep the teacher binarization threshold on path (j).
    SweepBeta {
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
        betas: Vec<f64>,
    },
    /// Score a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON-lines dataset; the configured validation split by default.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Average with the prediction on the mirrored input.
        #[arg(long)]
        flip: bool,
        /// Decode at the argmax cell without the quarter-pixel shift.
        #[arg(long)]
        no_offset: bool,
        /// Defaults to `<out>/eval/<checkpoint stem>.json`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the result tables found under the output root.
    Report { dir: Option<PathBuf> },
    /// Print the effective config as TOML.
    ShowConfig,
}

fn execution(jobs: Option<usize>) -> Result<Execution> {
    match jobs {
        Some(1) => Ok(Execution::Sequential),
        Some(n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("starting the thread pool")?;
            let _ = n;
            Ok(Execution::Parallel)
        }
        None => Ok(Execution::Parallel),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    let exec = execution(cli.jobs)?;
    cfg.train.exec = exec;
    let out = cli
        .out
        .or_else(|| cfg.out.clone())
        .or_else(|| std::env::var_os("ODKD_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));

    match cli.command {
        Command::GenData {
            count,
            split,
            file,
            pgm,
        } => {
            let name = match split {
                Split::Train => "train.jsonl",
                Split::Val => "val.jsonl",
            };
            let file = file.unwrap_or_else(|| out.join("data").join(name));
            println!(
                "{}",
                commands::cmd_gen_data(&cfg, count, split, &file, pgm, exec)?
            );
        }
        Command::Train { path } => {
            if let Some(p) = path {
                cfg.plan.path = Some(p);
                cfg.plan.phases.clear();
            }
            println!("{}", commands::cmd_train(&cfg, &out, exec)?);
        }
        Command::AblatePaths { paths } => {
            let paths = if paths.is_empty() {
                PathId::ALL.to_vec()
            } else {
                paths
            };
            let table = commands::cmd_ablate_paths(&cfg, &paths, &out, exec)?;
            print!("{}", render_ablation(&table.rows));
        }
        Command::SweepBeta { betas } => {
            let table = commands::cmd_sweep_beta(&cfg, &betas, &out, exec)?;
            print!("{}", render_sweep(&table.rows));
        }
        Command::Eval {
            checkpoint,
            data,
            flip,
            no_offset,
            output,
        } => {
            let samples = match &data {
                Some(p) => read_dataset(p, Some(cfg.scene.joints))
                    .with_context(|| format!("dataset {}", p.display()))?,
                None => generate_split(&cfg.scene, cfg.data.val_count, VALIDATION_OFFSET, exec)?,
            };
            let output = output.unwrap_or_else(|| {
                let stem = checkpoint
                    .file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned();
                out.join("eval").join(format!("{stem}.json"))
            });
            let flags = EvalFlags {
                flip,
                quarter_offset: !no_offset,
            };
            let r =
                commands::cmd_eval(&checkpoint, &samples, &cfg.train.eval, flags, &output, exec)?;
            println!(
                "AP {:.4}  AP50 {:.4}  AP75 {:.4}  mean OKS {:.4}  -> {}",
                r.ap,
                r.ap50,
                r.ap75,
                r.mean_oks,
                output.display()
            );
        }
        Command::Report { dir } => {
            print!("{}", odkd_cli::cmd_report(dir.as_deref().unwrap_or(&out))?)
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
