use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean over the batch of `−log softmax(logits)[label]`, as one fused op.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let &[b, c] = logits.shape() else {
        return Err(ModelError::Grid(format!("logits must be [B, C], got {:?}", logits.shape())));
    };
    if labels.len() != b {
        return Err(ModelError::Config(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(ModelError::LabelOutOfRange { label, classes: c });
    }
    let x = logits.to_vec();
    let mut probs = vec![T::zero(); b * c];
    let mut total = 0.0f64;
    for (i, row) in x.chunks(c).enumerate() {
        let m = row.iter().copied().fold(row[0], T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let z = exps.iter().copied().fold(T::zero(), |a, e| a + e);
        for (j, e) in exps.iter().enumerate() {
            probs[i * c + j] = *e / z;
        }
        total += (m + z.ln() - row[labels[i]]).to_f64();
    }
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        "cross_entropy",
        vec![],
        vec![T::from_f64(total / b as f64)],
        vec![logits.clone()],
        Box::new(move |g| {
            let scale = g[0] / T::from_f64(b as f64);
            let mut grad = probs.clone();
            for (i, &l) in labels.iter().enumerate() {
                grad[i * c + l] = grad[i * c + l] - T::one();
            }
            grad.iter_mut().for_each(|v| *v = *v * scale);
            vec![Some(grad)]
        }),
    ))
}

/// Position of `label` when classes are ordered by descending logit, equal
/// logits ordered by class index.
pub fn rank_of(row: &[f64], label: usize) -> usize {
    let y = row[label];
    row.iter()
        .enumerate()
        .filter(|&(j, &v)| v > y || (v == y && j < label))
        .count()
}

/// Fraction of samples whose label is among the `k` highest logits, for
/// every `k` in `ks`. `logits` is row-major `[labels.len(), classes]`.
pub fn topk_accuracy(logits: &[f64], classes: usize, labels: &[usize], ks: &[usize]) -> Result<Vec<f64>> {
    if classes == 0 || logits.len() != labels.len() * classes {
        return Err(ModelError::Grid(format!(
            "{} logits for {} samples of {classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > classes) {
        return Err(ModelError::Config(format!("top-{k} undefined for {classes} classes")));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(ModelError::LabelOutOfRange { label, classes });
    }
    if labels.is_empty() {
        return Err(ModelError::Config("no samples to score".into()));
    }
    let ranks: Vec<usize> = logits.chunks(classes).zip(labels).map(|(r, &l)| rank_of(r, l)).collect();
    Ok(ks
        .iter()
        .map(|&k| ranks.iter().filter(|&&r| r < k).count() as f64 / labels.len() as f64)
        .collect())
}

/// Metrics of one evaluation pass. `top5`/`top10` are absent when the
/// model has fewer classes than K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub top1: f64,
    pub top5: Option<f64>,
    pub top10: Option<f64>,
    pub mean_loss: f64,
    /// `None` for classes without samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub epoch: Option<usize>,
    pub seed: u64,
    pub build: String,
    pub config: BTreeMap<String, String>,
    pub wall_ms: u64,
}

impl EvalReport {
    /// Scores `[N, C]` logits against labels.
    pub fn from_logits(logits: &[f64], classes: usize, labels: &[usize], mean_loss: f64) -> Result<Self> {
        let ks: Vec<usize> = [1, 5, 10].into_iter().filter(|&k| k <= classes).collect();
        let acc = topk_accuracy(logits, classes, labels, &ks)?;
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (row, &l) in logits.chunks(classes).zip(labels) {
            let pred = (0..classes).find(|&j| rank_of(row, j) == 0).unwrap_or(0);
            confusion[l][pred] += 1;
        }
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Ok(Self {
            samples: labels.len(),
            top1: acc[0],
            top5: acc.get(1).copied(),
            top10: acc.get(2).copied(),
            mean_loss,
            per_class_accuracy,
            confusion,
            epoch: None,
            seed: 0,
            build: build_id(),
            config: BTreeMap::new(),
            wall_ms: 0,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Same report with run-dependent timing removed.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_ms: 0,
            ..self.clone()
        }
    }
}

pub fn build_id() -> String {
    format!("vslr-{}", env!("CARGO_PKG_VERSION"))
}
