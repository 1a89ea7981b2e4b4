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

//! Checkpoint files: a text manifest plus a raw little-endian `f64` blob.
//!
//! The manifest is line oriented:
//!
//! ```text
//! odkd-checkpoint
//! format_version = 1
//! predictor = network
//! model_hash = <24 hex chars>
//! model = <model spec as one-line JSON>
//! seed = <u64>
//! blob = <file name, relative to the manifest>
//! blob_bytes = <total blob length>
//! param_count = <number of param lines>
//! param <name> shape=<d0>x<d1>... offset=<byte offset> count=<scalars>
//! ...
//! end
//! ```
//!
//! Parameters are written in lexicographic name order, each as `count`
//! consecutive little-endian IEEE-754 binary64 values starting at `offset`.
//! A `gt-oracle` manifest carries no model and no blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::model::{ModelSpec, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "odkd-checkpoint";

/// What a checkpoint manifest describes.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Network {
        model: ModelSpec,
        params: ParamStore,
    },
    /// Emits rendered ground-truth heatmaps; used to validate the evaluation path.
    GroundTruthOracle,
}

pub fn blob_path(manifest: &Path) -> PathBuf {
    let mut name = manifest
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".blob");
    manifest.with_file_name(name)
}

pub fn save_params(path: &Path, model: &ModelSpec, params: &ParamStore) -> Result<()> {
    params.check_against(model)?;
    let blob_file = blob_path(path);
    let mut manifest = String::new();
    let mut blob = Vec::with_capacity(params.scalar_count() * 8);
    let mut lines = Vec::new();
    for (name, t) in params.iter() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        lines.push(format!(
            "param {name} shape={} offset={} count={}",
            shape.join("x"),
            blob.len(),
            t.len()
        ));
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    manifest.push_str(MAGIC);
    manifest.push('\n');
    manifest.push_str(&format!("format_version = {FORMAT_VERSION}\n"));
    manifest.push_str("predictor = network\n");
    manifest.push_str(&format!("model_hash = {}\n", model.hash()));
    manifest.push_str(&format!(
        "model = {}\n",
        serde_json::to_string(model).expect("model spec serializes")
    ));
    manifest.push_str(&format!("seed = {}\n", params.seed()));
    manifest.push_str(&format!(
        "blob = {}\n",
        blob_file.file_name().unwrap().to_string_lossy()
    ));
    manifest.push_str(&format!("blob_bytes = {}\n", blob.len()));
    manifest.push_str(&format!("param_count = {}\n", lines.len()));
    for l in lines {
        manifest.push_str(&l);
        manifest.push('\n');
    }
    manifest.push_str("end\n");
    fs::write(&blob_file, &blob).map_err(|e| Error::io(&blob_file, e))?;
    fs::write(path, manifest).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn save_oracle(path: &Path) -> Result<()> {
    let text = format!("{MAGIC}\nformat_version = {FORMAT_VERSION}\npredictor = gt-oracle\nend\n");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a network checkpoint, verifying it against `expected` when given.
pub fn load_params(path: &Path, expected: Option<&ModelSpec>) -> Result<(ModelSpec, ParamStore)> {
    match load_checkpoint(path)? {
        Checkpoint::Network { model, params } => {
            if let Some(exp) = expected {
                if exp.hash() != model.hash() {
                    return Err(Error::ParamMismatch(format!(
                        "checkpoint {} holds model {} but {} was expected",
                        path.display(),
                        model.hash(),
                        exp.hash()
                    )));
                }
            }
            Ok((model, params))
        }
        Checkpoint::GroundTruthOracle => Err(Error::ParamMismatch(format!(
            "{} is an oracle manifest, not a network checkpoint",
            path.display()
        ))),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(corrupt("missing checkpoint header".into()));
    }
    let mut keys = BTreeMap::new();
    let mut params_meta = Vec::new();
    let mut ended = false;
    for line in lines {
        if line == "end" {
            ended = true;
            break;
        }
        if let Some(rest) = line.strip_prefix("param ") {
            params_meta.push(
                parse_param_line(rest)
                    .ok_or_else(|| corrupt(format!("malformed param line: {line}")))?,
            );
        } else if let Some((k, v)) = line.split_once(" = ") {
            keys.insert(k.to_string(), v.to_string());
        } else {
            return Err(corrupt(format!("unrecognized manifest line: {line}")));
        }
    }
    let version = keys
        .get("format_version")
        .ok_or_else(|| corrupt("missing format_version".into()))?;
    if version.parse::<u32>().ok() != Some(FORMAT_VERSION) {
        return Err(Error::Version {
            found: version.clone(),
            expected: FORMAT_VERSION,
        });
    }
    if !ended {
        return Err(corrupt("manifest is truncated (no end marker)".into()));
    }
    let get = |k: &str| {
        keys.get(k)
            .ok_or_else(|| corrupt(format!("missing manifest key {k}")))
    };
    match get("predictor")?.as_str() {
        "gt-oracle" => return Ok(Checkpoint::GroundTruthOracle),
        "network" => {}
        other => return Err(corrupt(format!("unknown predictor kind {other}"))),
    }
    let model: ModelSpec = serde_json::from_str(get("model")?)
        .map_err(|e| corrupt(format!("bad model descriptor: {e}")))?;
    model.output_shape()?;
    if &model.hash() != get("model_hash")? {
        return Err(corrupt("model hash does not match model descriptor".into()));
    }
    let seed: u64 = get("seed")?
        .parse()
        .map_err(|_| corrupt("bad seed".into()))?;
    let declared: usize = get("param_count")?
        .parse()
        .map_err(|_| corrupt("bad param_count".into()))?;
    if declared != params_meta.len() {
        return Err(corrupt(format!(
            "manifest declares {declared} parameters but lists {}",
            params_meta.len()
        )));
    }
    let blob_bytes: usize = get("blob_bytes")?
        .parse()
        .map_err(|_| corrupt("bad blob_bytes".into()))?;
    let blob_file = path.with_file_name(get("blob")?);
    let blob = fs::read(&blob_file).map_err(|e| Error::io(&blob_file, e))?;
    if blob.len() != blob_bytes {
        return Err(corrupt(format!(
            "blob holds {} bytes, manifest declares {blob_bytes}",
            blob.len()
        )));
    }
    let mut map = BTreeMap::new();
    for (name, shape, offset, count) in params_meta {
        if shape.iter().product::<usize>() != count || offset + count * 8 > blob.len() {
            return Err(corrupt(format!("parameter {name} exceeds blob bounds")));
        }
        let data = blob[offset..offset + count * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))?;
        map.insert(name, t);
    }
    let params = ParamStore::from_map(map, seed);
    params.check_against(&model)?;
    Ok(Checkpoint::Network { model, params })
}

fn parse_param_line(rest: &str) -> Option<(String, Vec<usize>, usize, usize)> {
    let mut parts = rest.split_whitespace();
    let name = parts.next()?.to_string();
    let shape = parts
        .next()?
        .strip_prefix("shape=")?
        .split('x')
        .map(|d| d.parse().ok())
        .collect::<Option<Vec<usize>>>()?;
    let offset = parts.next()?.strip_prefix("offset=")?.parse().ok()?;
    let count = parts.next()?.strip_prefix("count=")?.parse().ok()?;
    Some((name, shape, offset, count))
}
