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

//! Central-difference gradient checks for layers, losses and networks.

use odkd::heatmap::{HeatmapSet, OutputHead};
use odkd::losses::{
    bce_loss, kd_generic, loss_dual, loss_pt, loss_s1, loss_s2, loss_st, mse_loss, LossOutput,
};
use odkd::nn::gradcheck::{max_relative_error, numeric_gradient, FD_STEP};
use odkd::nn::{grad_check, LayerSpec, ModelSpec, ParamStore};
use odkd::Tensor;
use rand_chacha::ChaCha8Rng;

use super::*;

pub const TOL: f64 = 1e-4;

fn with_data(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// One instance of every layer kind, with an input shape it accepts.
pub fn layer_cases() -> Vec<(LayerSpec, [usize; 3])> {
    vec![
        (LayerSpec::conv(2, 3, 3, 1), [2, 5, 4]),
        (LayerSpec::conv(2, 3, 3, 2), [2, 6, 5]),
        (LayerSpec::conv(1, 2, 5, 2), [1, 7, 6]),
        (
            LayerSpec::Conv1x1 {
                in_channels: 4,
                out_channels: 3,
            },
            [4, 3, 3],
        ),
        (
            LayerSpec::Dense {
                in_features: 12,
                out_features: 5,
            },
            [3, 2, 2],
        ),
        (LayerSpec::Relu, [2, 3, 3]),
        (LayerSpec::Sigmoid, [2, 3, 3]),
        (LayerSpec::Upsample2x, [2, 3, 2]),
    ]
}

/// Checks input and parameter gradients of `sum(r * layer(x))`; returns the
/// worst relative error.
pub fn check_layer(layer: LayerSpec, input_shape: [usize; 3], seed: u64) -> f64 {
    let mut rng = rng(seed);
    let x = away_from_zero(&mut rng, &input_shape);
    let params = layer.param_shapes().map(|(ws, bs)| {
        (
            uniform(&mut rng, &ws, -0.5, 0.5),
            uniform(&mut rng, &bs, -0.5, 0.5),
        )
    });
    let p = params.as_ref().map(|(w, b)| (w, b));
    let out = layer.forward(&x, p).unwrap();
    let r = uniform(&mut rng, out.shape(), -1.0, 1.0);
    let (gx, gp) = layer.backward(&x, &out, p, &r).unwrap();

    let dot = |t: &Tensor| {
        t.data()
            .iter()
            .zip(r.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let num_x = numeric_gradient(
        |v| dot(&layer.forward(&with_data(x.shape(), v), p).unwrap()),
        x.data(),
        FD_STEP,
    );
    let err = max_relative_error(gx.data(), &num_x);
    assert!(
        err <= TOL,
        "{} input grad, seed {seed}: {err:e}",
        layer.name()
    );
    let mut worst = err;

    if let (Some((w, b)), Some((gw, gb))) = (&params, gp) {
        let num_w = numeric_gradient(
            |v| {
                dot(&layer
                    .forward(&x, Some((&with_data(w.shape(), v), b)))
                    .unwrap())
            },
            w.data(),
            FD_STEP,
        );
        let num_b = numeric_gradient(
            |v| {
                dot(&layer
                    .forward(&x, Some((w, &with_data(b.shape(), v))))
                    .unwrap())
            },
            b.data(),
            FD_STEP,
        );
        let ew = max_relative_error(gw.data(), &num_w);
        let eb = max_relative_error(gb.data(), &num_b);
        assert!(
            ew <= TOL,
            "{} weight grad, seed {seed}: {ew:e}",
            layer.name()
        );
        assert!(eb <= TOL, "{} bias grad, seed {seed}: {eb:e}", layer.name());
        worst = worst.max(ew).max(eb);
    }
    worst
}

/// Gradient of a heatmap loss with respect to its first argument.
fn check_loss(name: &str, seed: u64, x: &HeatmapSet, f: impl Fn(&HeatmapSet) -> LossOutput) -> f64 {
    let analytic = f(x).grad;
    let kind = x.kind();
    let numeric = numeric_gradient(
        |v| f(&HeatmapSet::new(with_data(x.shape(), v), kind).unwrap()).value,
        x.values().data(),
        FD_STEP,
    );
    let err = max_relative_error(analytic.data(), &numeric);
    assert!(err <= TOL, "{name}, seed {seed}: {err:e}");
    err
}

/// Every loss on one random instance; returns the worst relative error.
pub fn check_all_losses(seed: u64, count: u64) -> f64 {
    let shape = [3, 4, 5];
    let mut rng = rng(1000 + seed);
    let s = logits(&mut rng, &shape);
    // keep raw predictions inside (0, 1) so they stay valid probability maps
    let pred = HeatmapSet::prob(uniform(&mut rng, &shape, 0.05, 0.95)).unwrap();
    let gt = prob(&mut rng, &shape);
    let st = prob(&mut rng, &shape);
    let pt = prob(&mut rng, &shape);
    let gt_bin = binary(&mut rng, &shape);
    let teacher = logits(&mut rng, &shape);
    let hard = distribution(&mut rng, &shape);
    let alpha = 0.1 + 0.8 * (seed as f64 / count as f64);
    let temperature = 0.5 + seed as f64 * 0.25;

    [
        check_loss("mse", seed, &pred, |p| mse_loss(p, &gt).unwrap()),
        check_loss("loss_st", seed, &pred, |p| loss_st(p, &gt).unwrap()),
        check_loss("loss_pt", seed, &pred, |p| {
            loss_pt(p, &gt, &st, alpha).unwrap()
        }),
        check_loss("bce", seed, &s, |z| bce_loss(z, &gt_bin).unwrap()),
        check_loss("loss_s1", seed, &s, |z| {
            loss_s1(z, &gt_bin, &st, 0.3, alpha).unwrap()
        }),
        check_loss("loss_s2", seed, &s, |z| {
            loss_s2(z, &gt_bin, &pt, 0.3, alpha).unwrap()
        }),
        check_loss("loss_dual", seed, &s, |z| {
            loss_dual(z, &gt_bin, &st, &pt, 0.3, alpha).unwrap()
        }),
        check_loss("kd_generic", seed, &s, |z| {
            kd_generic(z, &teacher, temperature, alpha, &hard).unwrap()
        }),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn tiny_net(head: OutputHead) -> ModelSpec {
    ModelSpec::new(
        [3, 8, 6],
        2,
        vec![
            LayerSpec::conv(3, 4, 3, 2),
            LayerSpec::Relu,
            LayerSpec::Conv1x1 {
                in_channels: 4,
                out_channels: 4,
            },
            LayerSpec::Relu,
            LayerSpec::conv(4, 2, 3, 1),
        ],
    )
    .unwrap()
    .with_head(head)
}

/// Random parameters (biases included) with every ReLU input at least
/// 1e-3 away from its kink, redrawn until that holds.
fn kink_free_params(model: &ModelSpec, x: &Tensor, rng: &mut ChaCha8Rng) -> ParamStore {
    loop {
        let mut params = ParamStore::init(model, 0);
        for (_, t) in params.iter_mut() {
            *t = uniform(rng, t.shape(), -0.6, 0.6);
        }
        let trace = model.forward_trace(&params, x).unwrap();
        let clear =
            model.layers.iter().enumerate().all(|(i, l)| {
                *l != LayerSpec::Relu || trace[i].data().iter().all(|v| v.abs() > 1e-3)
            });
        if clear {
            return params;
        }
    }
}

/// A linear-head teacher under MSE and a logistic-head student under the
/// binarized loss, checked through every parameter.
pub fn check_networks(seed: u64) -> f64 {
    let mut rng = rng(5000 + seed);
    let x = uniform(&mut rng, &[3, 8, 6], -1.0, 1.0);

    let teacher = tiny_net(OutputHead::Linear);
    let params = kink_free_params(&teacher, &x, &mut rng);
    let shape = teacher.output_shape().unwrap();
    let gt = prob(&mut rng, &shape);
    let t = grad_check(&teacher, &params, &x, |out| {
        let l = mse_loss(&HeatmapSet::logits(out.clone())?, &gt)?;
        Ok((l.value, l.grad))
    })
    .unwrap();
    assert!(
        t.max_relative_error <= TOL,
        "teacher mse, seed {seed}: {t:?}"
    );

    let student = tiny_net(OutputHead::Logistic);
    let params = kink_free_params(&student, &x, &mut rng);
    let gt_bin = binary(&mut rng, &shape);
    let st = prob(&mut rng, &shape);
    let s = grad_check(&student, &params, &x, |out| {
        let l = loss_s1(&HeatmapSet::logits(out.clone())?, &gt_bin, &st, 0.3, 0.5)?;
        Ok((l.value, l.grad))
    })
    .unwrap();
    assert!(
        s.max_relative_error <= TOL,
        "student bce, seed {seed}: {s:?}"
    );
    t.max_relative_error.max(s.max_relative_error)
}
