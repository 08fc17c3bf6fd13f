use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mse_loss, Architecture, Example, LocalizerModel, TrainConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded per-stratum shuffle. Every non-empty stratum keeps at least one
/// training sample.
pub fn stratified_split(strata: &[usize], fractions: [f64; 3], seed: u64) -> Split {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for mut members in groups.into_values() {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((fractions[0] * n as f64).round() as usize).clamp(1, n);
        let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    split
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean of the pre-step batch losses, m².
    pub train_mse: Vec<f64>,
    /// `None` when the validation split is empty.
    pub val_mse: Vec<Option<f64>>,
    /// Wall clock; excluded from every written artifact.
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub test_mse: Option<f64>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mse\n");
        for (e, (t, v)) in self.train_mse.iter().zip(&self.val_mse).enumerate() {
            let v = v.map_or_else(String::new, |v| v.to_string());
            writeln!(out, "{},{},{}", e + 1, t, v).expect("writing to a String");
        }
        out
    }
}

fn subset<'a>(examples: &[Example<'a>], idx: &[usize]) -> Vec<Example<'a>> {
    idx.iter().map(|&i| examples[i].clone()).collect()
}

fn evaluate(model: &LocalizerModel, set: &[Example<'_>]) -> Result<Option<f64>> {
    if set.is_empty() {
        return Ok(None);
    }
    let preds = model.predict_batch(set)?;
    let targets: Vec<[f64; 2]> = set.iter().map(|e| e.target).collect();
    mse_loss(&preds, &targets).map(Some)
}

/// Fits a fresh model and returns the checkpoint with the lowest
/// validation MSE (training MSE when there is no validation split).
/// `strata` drives the split; every head used by any example must appear
/// in the training part.
pub fn train(
    examples: &[Example<'_>],
    strata: &[usize],
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(LocalizerModel, TrainReport, Split)> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(Error::InvalidConfig(violations));
    }
    if examples.is_empty() {
        return Err(Error::domain("no training examples"));
    }
    if strata.len() != examples.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} strata for {} examples",
            strata.len(),
            examples.len()
        )));
    }
    let split = stratified_split(strata, cfg.split, cfg.seed);
    let train_heads: BTreeSet<usize> = split.train.iter().map(|&i| examples[i].head).collect();
    if let Some(missing) = examples.iter().map(|e| e.head).find(|h| !train_heads.contains(h)) {
        return Err(Error::RegionMissingFromTrain { region: missing });
    }
    let train_set = subset(examples, &split.train);
    let val_set = subset(examples, &split.val);
    let test_set = subset(examples, &split.test);

    let mut model = LocalizerModel::new(arch, cfg.seed, cfg.clone())?;
    let n = train_set.len() as f64;
    let mean = [0, 1].map(|k| train_set.iter().map(|e| e.target[k]).sum::<f64>() / n);
    let var: f64 = train_set
        .iter()
        .map(|e| (e.target[0] - mean[0]).powi(2) + (e.target[1] - mean[1]).powi(2))
        .sum::<f64>()
        / (2.0 * n);
    model.target_mean = mean;
    model.target_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    model.round_to_f32();

    let mut report = TrainReport {
        train_mse: Vec::new(),
        val_mse: Vec::new(),
        epoch_seconds: Vec::new(),
        best_epoch: None,
        test_mse: None,
    };
    let mut best: Option<(f64, LocalizerModel)> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Example<'_>> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let loss = model.backward_and_step(&batch).map_err(|e| match e {
                Error::NonFiniteLoss { loss, .. } => Error::NonFiniteLoss { epoch, step, loss },
                other => other,
            })?;
            total += loss * batch.len() as f64;
        }
        let train_mse = total / n;
        let val_mse = evaluate(&model, &val_set)?;
        let score = val_mse.unwrap_or(train_mse);
        log::debug!("epoch {} train {train_mse:.4} val {val_mse:?}", epoch + 1);
        report.train_mse.push(train_mse);
        report.val_mse.push(val_mse);
        report.epoch_seconds.push(start.elapsed().as_secs_f64());
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, model.clone()));
            report.best_epoch = Some(epoch + 1);
        }
    }
    if let Some((_, snapshot)) = best {
        model = snapshot;
    }
    model.round_to_f32();
    report.test_mse = evaluate(&model, &test_set)?;
    Ok((model, report, split))
}
