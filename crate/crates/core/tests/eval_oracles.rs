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

//! OKS and AP/AR against enumeration oracles and analytic spot values.

mod common;

use common::oracles::{ap as ap_oracle, jitter, oks as oks_oracle, random_pose};
use common::rng;
use odkd::eval::{ap_ar, oks, summarize, OksParams};
use odkd::pose::{Keypoint, PoseInstance, ABSENT, OCCLUDED, VISIBLE};
use rand::Rng;

#[test]
fn oks_and_ap_match_enumeration_on_every_dataset_size() {
    let params = OksParams::default();
    let mut rng = rng(42);
    for n in 1..=100 {
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            let gt = random_pose(&mut rng, 5);
            let spread = rng.gen_range(0.0..8.0);
            pairs.push((jitter(&mut rng, &gt, spread), gt));
        }
        let mut scores = Vec::new();
        let (mut medium, mut large) = (Vec::new(), Vec::new());
        for (p, g) in &pairs {
            let got = oks(p, g, &params).unwrap();
            let want = oks_oracle(p, g, &params.k);
            assert!((got - want).abs() <= 1e-15, "oks {got} vs {want}");
            scores.push(want);
            if g.scale * g.scale < 1024.0 {
                medium.push(want);
            } else {
                large.push(want);
            }
        }
        let r = ap_ar(&pairs, &params).unwrap();
        let ap = ap_oracle(&scores, &params.thresholds);
        assert!((r.ap - ap).abs() <= 1e-12, "n = {n}: {} vs {ap}", r.ap);
        assert!((r.ar - ap).abs() <= 1e-12);
        assert!((r.ap50 - ap_oracle(&scores, &[0.5])).abs() <= 1e-12);
        assert!((r.ap75 - ap_oracle(&scores, &[0.75])).abs() <= 1e-12);
        let bucket = |s: &[f64]| (!s.is_empty()).then(|| ap_oracle(s, &params.thresholds));
        for (got, want) in [(r.ap_medium, bucket(&medium)), (r.ap_large, bucket(&large))] {
            match (got, want) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12),
                (None, None) => {}
                other => panic!("bucket mismatch {other:?}"),
            }
        }
        assert_eq!(r.instances, n);
    }
}

#[test]
fn oks_is_inverse_e_at_the_characteristic_distance() {
    let params = OksParams::uniform(1, 0.1);
    let gt = PoseInstance {
        id: 0,
        keypoints: vec![Keypoint::new(10.0, 10.0, VISIBLE)],
        scale: 20.0,
    };
    // d^2 = 2 s^2 k^2 = 8
    let pred = PoseInstance::new(0, vec![Keypoint::new(12.0, 12.0, VISIBLE)]);
    let v = oks(&pred, &gt, &params).unwrap();
    assert!((v - (-1.0f64).exp()).abs() <= 1e-12, "{v}");
}

#[test]
fn single_instance_at_0_62_scores_ap_0_3() {
    let params = OksParams::default();
    let r = summarize(&[(0.62, 500.0)], &params).unwrap();
    assert!((r.ap - 0.3).abs() <= 1e-12, "{}", r.ap);
    assert_eq!(r.ap50, 1.0);
    assert_eq!(r.ap75, 0.0);
    assert_eq!(r.ap_large, None);
}

#[test]
fn absent_joints_do_not_count() {
    let params = OksParams::uniform(2, 0.1);
    let gt = PoseInstance::new(
        0,
        vec![
            Keypoint::new(5.0, 5.0, VISIBLE),
            Keypoint::new(0.0, 0.0, ABSENT),
        ],
    );
    let pred = PoseInstance::new(
        0,
        vec![
            Keypoint::new(5.0, 5.0, VISIBLE),
            Keypoint::new(40.0, 40.0, VISIBLE),
        ],
    );
    assert_eq!(oks(&pred, &gt, &params).unwrap(), 1.0);
}

#[test]
fn occluded_joints_still_count() {
    let params = OksParams::uniform(2, 0.1);
    let gt = PoseInstance::new(
        0,
        vec![
            Keypoint::new(5.0, 5.0, VISIBLE),
            Keypoint::new(25.0, 25.0, OCCLUDED),
        ],
    );
    let pred = PoseInstance::new(
        0,
        vec![
            Keypoint::new(5.0, 5.0, VISIBLE),
            Keypoint::new(60.0, 60.0, VISIBLE),
        ],
    );
    let v = oks(&pred, &gt, &params).unwrap();
    assert!((0.5..0.51).contains(&v), "{v}");
}

#[test]
fn ground_truth_predictor_is_perfect_on_grid_centred_scenes() {
    use odkd::eval::{evaluate_model, EvalConfig, GroundTruthPredictor};
    use odkd::synth::{flip_pairs, generate_dataset, SceneConfig};
    use odkd::Execution;

    let cfg = SceneConfig {
        snap_to_grid: true,
        ..SceneConfig::default()
    };
    let samples = generate_dataset(&cfg, 64, Execution::Parallel).unwrap();
    let oracle = GroundTruthPredictor {
        pairs: flip_pairs(),
    };
    for flip in [false, true] {
        let eval = EvalConfig {
            flip,
            ..EvalConfig::default()
        };
        let r =
            evaluate_model(&oracle, &samples, &eval, &flip_pairs(), Execution::Parallel).unwrap();
        assert_eq!((r.ap, r.mean_oks), (1.0, 1.0), "flip {flip}");
    }
}
