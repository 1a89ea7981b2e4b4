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

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layer::LayerSpec;
use crate::error::{Error, Result};
use crate::heatmap::{HeatmapSet, OutputHead};
use crate::tensor::Tensor;

/// Architecture descriptor: an ordered layer list over a `(C, H, W)` input
/// that must end in a `K`-channel heatmap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: [usize; 3],
    pub joints: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default = "default_head")]
    pub head: OutputHead,
}

fn default_head() -> OutputHead {
    OutputHead::Logistic
}

impl ModelSpec {
    /// A network with a logistic head.
    pub fn new(input: [usize; 3], joints: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self {
            input,
            joints,
            layers,
            head: OutputHead::Logistic,
        };
        spec.output_shape()?;
        Ok(spec)
    }

    pub fn with_head(mut self, head: OutputHead) -> Self {
        self.head = head;
        self
    }

    /// Chains layer shapes and checks the final channel count against `joints`.
    pub fn output_shape(&self) -> Result<[usize; 3]> {
        if self.input.contains(&0) || self.joints == 0 {
            return Err(Error::InvalidModel(
                "input dimensions and joint count must be positive".into(),
            ));
        }
        let mut shape = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            shape = layer
                .output_shape(shape)
                .map_err(|e| Error::InvalidModel(format!("layer {i}: {e}")))?;
        }
        if shape[0] != self.joints {
            return Err(Error::InvalidModel(format!(
                "model emits {} channels but declares {} joints",
                shape[0], self.joints
            )));
        }
        Ok(shape)
    }

    /// Spatial size `(h, w)` of the output heatmaps.
    pub fn output_size(&self) -> (usize, usize) {
        let [_, h, w] = self.output_shape().expect("validated model");
        (h, w)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(LayerSpec::param_shapes)
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum()
    }

    /// Stable hex digest of the architecture.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("model spec serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
    }

    pub(crate) fn weight_name(index: usize) -> String {
        format!("layer{index:02}.weight")
    }

    pub(crate) fn bias_name(index: usize) -> String {
        format!("layer{index:02}.bias")
    }

    /// Runs the network and maps its output through the head.
    pub fn predict(&self, params: &ParamStore, input: &Tensor) -> Result<HeatmapSet> {
        self.head.to_prob(self.forward(params, input)?)
    }

    /// Runs the network and returns its raw output.
    pub fn forward(&self, params: &ParamStore, input: &Tensor) -> Result<Tensor> {
        let mut acts = self.forward_trace(params, input)?;
        Ok(acts.pop().expect("trace contains the input"))
    }

    /// Activations at every layer boundary, input first and output last.
    pub fn forward_trace(&self, params: &ParamStore, input: &Tensor) -> Result<Vec<Tensor>> {
        input.expect_shape(&self.input, "model input")?;
        input.ensure_finite("model input")?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let p = self.layer_params(params, i)?;
            let out = layer.forward(acts.last().expect("non-empty"), p)?;
            out.ensure_finite(&format!("layer {i} ({})", layer.name()))?;
            acts.push(out);
        }
        Ok(acts)
    }

    /// Gradients of `<output, upstream>` with respect to every parameter.
    /// `params` is not modified.
    pub fn backward(
        &self,
        params: &ParamStore,
        input: &Tensor,
        upstream: &Tensor,
    ) -> Result<ParamStore> {
        let acts = self.forward_trace(params, input)?;
        self.backward_from_trace(params, &acts, upstream)
    }

    pub fn backward_from_trace(
        &self,
        params: &ParamStore,
        acts: &[Tensor],
        upstream: &Tensor,
    ) -> Result<ParamStore> {
        let out = acts.last().expect("trace contains the output");
        upstream.expect_shape(out.shape(), "upstream gradient")?;
        let mut grads = BTreeMap::new();
        let mut g = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let p = self.layer_params(params, i)?;
            let (gi, pg) = layer.backward(&acts[i], &acts[i + 1], p, &g)?;
            if let Some((gw, gb)) = pg {
                grads.insert(Self::weight_name(i), gw);
                grads.insert(Self::bias_name(i), gb);
            }
            g = gi;
        }
        Ok(ParamStore {
            params: grads,
            seed: params.seed,
        })
    }

    fn layer_params<'a>(
        &self,
        params: &'a ParamStore,
        index: usize,
    ) -> Result<Option<(&'a Tensor, &'a Tensor)>> {
        if self.layers[index].param_shapes().is_none() {
            return Ok(None);
        }
        let w = params.get(&Self::weight_name(index))?;
        let b = params.get(&Self::bias_name(index))?;
        Ok(Some((w, b)))
    }
}

/// Named parameter tensors plus the seed they were initialized from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    seed: u64,
}

impl ParamStore {
    /// He-uniform weights, zero biases.
    pub fn init(model: &ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for (i, layer) in model.layers.iter().enumerate() {
            let Some((ws, bs)) = layer.param_shapes() else {
                continue;
            };
            let fan_in: usize = ws[1..].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt();
            let w = Tensor::from_fn(&ws, |_| rng.gen_range(-limit..limit));
            params.insert(ModelSpec::weight_name(i), w);
            params.insert(ModelSpec::bias_name(i), Tensor::zeros(&bs));
        }
        Self { params, seed }
    }

    pub fn from_map(params: BTreeMap<String, Tensor>, seed: u64) -> Self {
        Self { params, seed }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
            seed: self.seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::ParamMismatch(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::ParamMismatch(format!("missing parameter {name}")))
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Checks that this store holds exactly the parameters `model` needs.
    pub fn check_against(&self, model: &ModelSpec) -> Result<()> {
        let mut expected = BTreeMap::new();
        for (i, layer) in model.layers.iter().enumerate() {
            if let Some((ws, bs)) = layer.param_shapes() {
                expected.insert(ModelSpec::weight_name(i), ws);
                expected.insert(ModelSpec::bias_name(i), bs);
            }
        }
        if expected.len() != self.params.len() {
            return Err(Error::ParamMismatch(format!(
                "model has {} parameter tensors, store has {}",
                expected.len(),
                self.params.len()
            )));
        }
        for (name, shape) in expected {
            self.get(&name)?.expect_shape(&shape, &name)?;
        }
        Ok(())
    }

    /// `self += scale * other`, name by name.
    pub fn add_scaled(&mut self, other: &ParamStore, scale: f64) -> Result<()> {
        self.check_aligned(other)?;
        for (name, t) in self.params.iter_mut() {
            t.add_scaled(&other.params[name], scale)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.params.values_mut().for_each(|t| t.scale(factor));
    }

    pub fn check_aligned(&self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len()
            || self
                .params
                .keys()
                .zip(other.params.keys())
                .any(|(a, b)| a != b)
        {
            return Err(Error::ParamMismatch(
                "parameter and gradient names are not aligned".into(),
            ));
        }
        Ok(())
    }

    /// Digest over names and raw bit patterns; equal iff stores are bit-identical.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in &self.params {
            hasher.update(name.as_bytes());
            for d in t.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
