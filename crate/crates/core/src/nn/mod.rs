//! Shared-extractor localizer: convolutional branches for the fingerprint
//! images, feature concatenation, and one linear regression head per
//! region. Gradients are written out by hand; there is no autodiff.

mod io;
pub mod layers;
pub mod model;
mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::io::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use self::model::{Architecture, BranchSpec, ExtractorConfig, Network, Pooling, SectionInfo};
pub use self::train::{stratified_split, train, Split, TrainReport};
use crate::error::{Error, Result};
use crate::fusion::RegionLabel;

/// One training or inference sample: one input slice per branch, the true
/// position in meters, and the head it belongs to.
#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub target: [f64; 2],
    pub head: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 16,
            learning_rate: 0.003,
            seed: 0,
            split: [0.7, 0.15, 0.15],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.batch_size == 0 {
            v.push("batch size must be at least 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            v.push(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            v.push(format!("split fractions {:?} must lie in [0, 1] and sum to 1", self.split));
        }
        if self.split[0] <= 0.0 {
            v.push("training fraction must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            v.push("Adam betas must lie in [0, 1)".to_string());
        }
        if !(self.epsilon > 0.0) {
            v.push("Adam epsilon must be positive".to_string());
        }
        v
    }
}

/// Adam moments per weight and a step counter per section, so a head that
/// sits out a batch keeps both its weights and its bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: Vec<u64>,
}

impl AdamState {
    fn new(num_params: usize, num_sections: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            steps: vec![0; num_sections],
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalizerModel {
    network: Network,
    params: Vec<f64>,
    optimizer: AdamState,
    /// Outputs are `mean + scale * raw`; one scale for both axes.
    pub target_mean: [f64; 2],
    pub target_scale: f64,
    pub seed: u64,
    pub train_config: TrainConfig,
    /// Free-form provenance carried in the model manifest.
    pub metadata: serde_json::Value,
}

pub fn mse_loss(predictions: &[[f64; 2]], targets: &[[f64; 2]]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let sum: f64 = predictions.iter().zip(targets).map(|(p, t)| sq_err(*p, *t)).sum();
    Ok(sum / predictions.len() as f64)
}

fn sq_err(p: [f64; 2], t: [f64; 2]) -> f64 {
    (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)
}

impl LocalizerModel {
    /// Xavier-initialized model with identity output scaling.
    pub fn new(arch: &Architecture, seed: u64, train_config: TrainConfig) -> Result<Self> {
        let network = Network::new(arch)?;
        let params = network.init_params(seed);
        let optimizer = AdamState::new(network.num_params(), network.sections().len());
        Ok(LocalizerModel {
            network,
            params,
            optimizer,
            target_mean: [0.0, 0.0],
            target_scale: 1.0,
            seed,
            train_config,
            metadata: serde_json::Value::Null,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        self.network.architecture()
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn num_heads(&self) -> usize {
        self.network.num_heads()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.optimizer
    }

    pub(crate) fn set_optimizer(&mut self, state: AdamState) {
        self.optimizer = state;
    }

    pub fn section(&self, name: &str) -> Option<&[f64]> {
        let id = self.network.sections().iter().position(|s| s.name == name)?;
        Some(&self.params[self.network.section_range(id)])
    }

    pub fn head_params(&self, head: usize) -> Vec<f64> {
        self.network
            .head_sections(head)
            .iter()
            .flat_map(|&id| self.params[self.network.section_range(id)].to_vec())
            .collect()
    }

    /// Everything except the heads.
    pub fn extractor_params(&self) -> Vec<f64> {
        (0..self.network.sections().len())
            .filter(|&id| !self.network.is_head_section(id))
            .flat_map(|id| self.params[self.network.section_range(id)].to_vec())
            .collect()
    }

    fn standardize(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.target_mean[0]) / self.target_scale,
            (p[1] - self.target_mean[1]) / self.target_scale,
        ]
    }

    fn destandardize(&self, y: [f64; 2]) -> [f64; 2] {
        [
            self.target_mean[0] + self.target_scale * y[0],
            self.target_mean[1] + self.target_scale * y[1],
        ]
    }

    /// Predicted position in meters using head `head`.
    pub fn forward(&self, inputs: &[&[f64]], head: usize) -> Result<[f64; 2]> {
        let (y, _) = self.network.forward_trace(&self.params, inputs, head)?;
        Ok(self.destandardize(y))
    }

    pub fn forward_region(&self, inputs: &[&[f64]], region: &RegionLabel) -> Result<[f64; 2]> {
        match region.kept_region() {
            Some(r) => self.forward(inputs, r),
            None => Err(Error::domain("sample belongs to a dropped region")),
        }
    }

    pub fn predict_batch(&self, examples: &[Example<'_>]) -> Result<Vec<[f64; 2]>> {
        examples.par_iter().map(|e| self.forward(&e.inputs, e.head)).collect()
    }

    /// Standardized-space loss and its gradient, reduced in batch order.
    pub fn loss_and_gradient(&self, batch: &[Example<'_>]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        let n = batch.len() as f64;
        let per_sample: Vec<(f64, Vec<f64>)> = batch
            .par_iter()
            .map(|ex| {
                let (y, trace) = self.network.forward_trace(&self.params, &ex.inputs, ex.head)?;
                let t = self.standardize(ex.target);
                let e = [y[0] - t[0], y[1] - t[1]];
                let mut g = vec![0.0; self.params.len()];
                self.network
                    .backward(&self.params, &trace, ex.head, [2.0 * e[0] / n, 2.0 * e[1] / n], &mut g);
                Ok((e[0] * e[0] + e[1] * e[1], g))
            })
            .collect::<Result<_>>()?;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (l, g) in &per_sample {
            loss += l;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok((loss / n, grad))
    }

    /// One Adam step on `batch`. Returns the pre-step batch MSE in m².
    /// Heads with no sample in the batch are left untouched.
    pub fn backward_and_step(&mut self, batch: &[Example<'_>]) -> Result<f64> {
        let (loss, grad) = self.loss_and_gradient(batch)?;
        let loss_m2 = loss * self.target_scale * self.target_scale;
        if !loss_m2.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: 0,
                step: self.optimizer.steps.iter().copied().max().unwrap_or(0) as usize,
                loss: loss_m2,
            });
        }
        let mut active = vec![false; self.num_heads()];
        for ex in batch {
            active[ex.head] = true;
        }
        let cfg = &self.train_config;
        for id in 0..self.network.sections().len() {
            let head_of = (0..self.num_heads()).find(|&h| self.network.head_sections(h).contains(&id));
            if head_of.is_some_and(|h| !active[h]) {
                continue;
            }
            self.optimizer.steps[id] += 1;
            let t = self.optimizer.steps[id] as i32;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            for i in self.network.section_range(id) {
                let g = grad[i];
                let m = &mut self.optimizer.m[i];
                let v = &mut self.optimizer.v[i];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                self.params[i] -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
            }
        }
        Ok(loss_m2)
    }

    /// Rounds weights and optimizer moments to `f32`, the precision of the
    /// model file, so a model in memory equals its reloaded copy.
    pub fn round_to_f32(&mut self) {
        for v in self
            .params
            .iter_mut()
            .chain(self.optimizer.m.iter_mut())
            .chain(self.optimizer.v.iter_mut())
        {
            *v = *v as f32 as f64;
        }
        self.target_mean = self.target_mean.map(|x| x as f32 as f64);
        self.target_scale = self.target_scale as f32 as f64;
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}
