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

//! Central finite-difference gradient checking.

use super::model::{ModelSpec, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Above this many scalars, finite differences are too slow to be useful.
pub const MAX_CHECKED_PARAMS: usize = 10_000;

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Central-difference gradient of a scalar function of a flat vector.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, point: &[f64], step: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let plus = f(&x);
            x[i] = orig - step;
            let minus = f(&x);
            x[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Worst parameter-wise disagreement between backprop and finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares backprop gradients of `loss(forward(input))` against central
/// differences for every parameter scalar. `loss` returns the value and
/// its gradient with respect to the network output.
pub fn grad_check<L>(
    model: &ModelSpec,
    params: &ParamStore,
    input: &Tensor,
    loss: L,
) -> Result<GradCheckReport>
where
    L: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    if params.scalar_count() > MAX_CHECKED_PARAMS {
        return Err(Error::InvalidArgument(format!(
            "{} parameters is too many for finite differences",
            params.scalar_count()
        )));
    }
    let out = model.forward(params, input)?;
    let (_, upstream) = loss(&out)?;
    let analytic = model.backward(params, input, &upstream)?;

    let eval = |p: &ParamStore| -> Result<f64> { Ok(loss(&model.forward(p, input)?)?.0) };
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name)?.len();
        for i in 0..n {
            let orig = params.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = orig + FD_STEP;
            let plus = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig - FD_STEP;
            let minus = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(analytic.get(&name)?.data()[i], numeric);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_square_at_three() {
        let g = numeric_gradient(|w| 0.5 * w[0] * w[0], &[3.0], FD_STEP);
        assert!((g[0] - 3.0).abs() < 1e-6);
        assert!(relative_error(3.0, g[0]) < 1e-9);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-10, 0.0) - 1e-2).abs() < 1e-12);
    }
}
