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

//! Losses against direct-summation oracles written from the formulas.

mod common;

use common::oracles::{self, bce as bce_oracle, mse as mse_oracle, threshold};
use common::*;
use odkd::heatmap::{binarize, BinaryHeatmapSet, HeatmapSet};
use odkd::losses::{bce_loss, kd_generic, loss_pt, loss_s1, loss_s2, mse_loss};

const CASES: u64 = 50;
const TOL: f64 = 1e-10;

fn shape_for(seed: u64) -> [usize; 3] {
    [
        1 + (seed % 3) as usize,
        2 + (seed % 4) as usize,
        3 + (seed % 5) as usize,
    ]
}

fn vals(h: &HeatmapSet) -> &[f64] {
    h.values().data()
}

fn channels(h: &HeatmapSet) -> Vec<&[f64]> {
    (0..h.joints()).map(|j| h.values().channel(j)).collect()
}

fn kd_oracle(s: &HeatmapSet, t: &HeatmapSet, temp: f64, alpha: f64, hard: &HeatmapSet) -> f64 {
    oracles::kd(&channels(s), &channels(t), temp, alpha, &channels(hard))
}

fn close(name: &str, seed: u64, got: f64, want: f64) {
    assert!(
        (got - want).abs() <= TOL,
        "{name}, case {seed}: {got} vs oracle {want}"
    );
}

#[test]
fn mse_and_bce_match_oracles() {
    for seed in 0..CASES {
        let mut rng = rng(seed);
        let shape = shape_for(seed);
        let p = prob(&mut rng, &shape);
        let t = prob(&mut rng, &shape);
        close(
            "mse",
            seed,
            mse_loss(&p, &t).unwrap().value,
            mse_oracle(vals(&p), vals(&t)),
        );
        let z = logits(&mut rng, &shape);
        let y = binary(&mut rng, &shape);
        close(
            "bce",
            seed,
            bce_loss(&z, &y).unwrap().value,
            bce_oracle(vals(&z), y.values().data()),
        );
    }
}

#[test]
fn kd_generic_matches_oracle() {
    for seed in 0..CASES {
        let mut rng = rng(100 + seed);
        let shape = shape_for(seed);
        let s = logits(&mut rng, &shape);
        let t = logits(&mut rng, &shape);
        let hard = distribution(&mut rng, &shape);
        let temp = [0.5, 1.0, 2.0, 4.0][seed as usize % 4];
        let alpha = (seed % 5) as f64 / 4.0;
        close(
            "kd_generic",
            seed,
            kd_generic(&s, &t, temp, alpha, &hard).unwrap().value,
            kd_oracle(&s, &t, temp, alpha, &hard),
        );
    }
}

#[test]
fn composite_losses_match_oracles() {
    for seed in 0..CASES {
        let mut rng = rng(200 + seed);
        let shape = shape_for(seed);
        let alpha = (seed % 5) as f64 / 4.0;
        let beta = 0.3;

        let pt = prob(&mut rng, &shape);
        let gt = prob(&mut rng, &shape);
        let st = prob(&mut rng, &shape);
        let want = (1.0 - alpha) * mse_oracle(vals(&pt), vals(&gt))
            + alpha * mse_oracle(vals(&pt), vals(&st));
        close(
            "loss_pt",
            seed,
            loss_pt(&pt, &gt, &st, alpha).unwrap().value,
            want,
        );

        let s = logits(&mut rng, &shape);
        let gt_bin = binarize(&gt, 0.6).unwrap();
        let gt_bin_oracle = threshold(vals(&gt), 0.6);
        for (name, teacher) in [("loss_s1", &st), ("loss_s2", &pt)] {
            let want = (1.0 - alpha) * bce_oracle(vals(&s), &gt_bin_oracle)
                + alpha * bce_oracle(vals(&s), &threshold(vals(teacher), beta));
            let got = if name == "loss_s1" {
                loss_s1(&s, &gt_bin, teacher, beta, alpha)
            } else {
                loss_s2(&s, &gt_bin, teacher, beta, alpha)
            };
            close(name, seed, got.unwrap().value, want);
        }
    }
}

/// Every composite is affine in its balance factor, bit for bit, at the
/// dyadic points.
#[test]
fn composites_are_affine_in_alpha() {
    for seed in 0..CASES {
        let mut rng = rng(300 + seed);
        let shape = shape_for(seed);
        let pt = prob(&mut rng, &shape);
        let gt = prob(&mut rng, &shape);
        let st = prob(&mut rng, &shape);
        let s = logits(&mut rng, &shape);
        let gt_bin: BinaryHeatmapSet = binarize(&gt, 0.6).unwrap();
        let t = logits(&mut rng, &shape);
        let hard = distribution(&mut rng, &shape);

        type Loss<'a> = Box<dyn Fn(f64) -> odkd::losses::LossOutput + 'a>;
        let losses: Vec<(&str, Loss)> = vec![
            ("loss_pt", Box::new(|a| loss_pt(&pt, &gt, &st, a).unwrap())),
            (
                "loss_s1",
                Box::new(|a| loss_s1(&s, &gt_bin, &st, 0.3, a).unwrap()),
            ),
            (
                "loss_s2",
                Box::new(|a| loss_s2(&s, &gt_bin, &pt, 0.3, a).unwrap()),
            ),
            (
                "kd_generic",
                Box::new(|a| kd_generic(&s, &t, 2.0, a, &hard).unwrap()),
            ),
        ];
        for (name, f) in &losses {
            let (l0, l1) = (f(0.0), f(1.0));
            for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let l = f(alpha);
                assert_eq!(
                    l.value,
                    (1.0 - alpha) * l0.value + alpha * l1.value,
                    "{name} value at alpha {alpha}, case {seed}"
                );
                let g = l0
                    .grad
                    .zip_map(&l1.grad, |x, y| (1.0 - alpha) * x + alpha * y)
                    .unwrap();
                assert_eq!(l.grad, g, "{name} grad at alpha {alpha}, case {seed}");
            }
        }
    }
}
