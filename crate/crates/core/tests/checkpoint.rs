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

//! Checkpoint files read back byte by byte.

use odkd::distill::{build_models, Architecture};
use odkd::nn::checkpoint::blob_path;
use odkd::nn::{load_checkpoint, load_params, save_oracle, save_params, Checkpoint, ParamStore};

#[test]
fn blob_holds_little_endian_params_in_name_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    let models = build_models(5, (64, 48), &Architecture::default()).unwrap();
    let params = ParamStore::init(&models.s, 99);
    save_params(&path, &models.s, &params).unwrap();

    let blob = std::fs::read(blob_path(&path)).unwrap();
    assert_eq!(blob.len(), params.scalar_count() * 8);
    let manifest = std::fs::read_to_string(&path).unwrap();
    let mut names: Vec<&String> = params.names().collect();
    names.sort();
    let mut offset = 0;
    for name in names {
        let t = params.get(name).unwrap();
        let line = manifest
            .lines()
            .find(|l| l.starts_with(&format!("param {name} ")))
            .unwrap();
        assert!(
            line.ends_with(&format!("offset={offset} count={}", t.len())),
            "{line}"
        );
        for (i, v) in t.data().iter().enumerate() {
            let at = offset + 8 * i;
            let bytes: [u8; 8] = blob[at..at + 8].try_into().unwrap();
            assert_eq!(f64::from_le_bytes(bytes).to_bits(), v.to_bits());
        }
        offset += 8 * t.len();
    }
    assert!(manifest.starts_with("odkd-checkpoint\nformat_version = 1\npredictor = network\n"));
    assert!(manifest.contains(&format!("model_hash = {}\n", models.s.hash())));
    assert!(manifest.ends_with("end\n"));

    let (model, loaded) = load_params(&path, Some(&models.s)).unwrap();
    assert_eq!(model, models.s);
    assert_eq!(loaded, params);
    assert!(load_params(&path, Some(&models.pt)).is_err());
}

#[test]
fn saving_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let models = build_models(5, (64, 48), &Architecture::default()).unwrap();
    let params = ParamStore::init(&models.st, 4);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    save_params(&a, &models.st, &params).unwrap();
    save_params(&b, &models.st, &params).unwrap();
    assert_eq!(
        std::fs::read(blob_path(&a)).unwrap(),
        std::fs::read(blob_path(&b)).unwrap()
    );
    let strip = |p: &std::path::Path| {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("blob = "))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn oracle_manifest_is_recognised() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gt.ckpt");
    save_oracle(&path).unwrap();
    assert_eq!(
        load_checkpoint(&path).unwrap(),
        Checkpoint::GroundTruthOracle
    );
    assert!(load_params(&path, None).is_err());
}
