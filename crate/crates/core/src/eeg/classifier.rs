//! Multinomial logistic-regression emotion classifier.
//!
//! Deterministic full-batch gradient descent from zero initialization, with
//! internal per-dimension standardization. The classifier sits behind plain
//! functions so a heavier model can replace it without touching callers.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::features::{band_features, FeatureVector};
use super::{EegError, EegWindow, EmotionClass, EmotionSample};

const CLASSES: usize = 3;

/// Trained linear model with its standardization stats and feature layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// classes x features.
    pub weights: Array2<f64>,
    pub biases: [f64; 3],
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub feature_layout: String,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub l2: f64,
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop when the gradient infinity norm drops below this.
    pub gradient_tolerance: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            l2: 0.05,
            learning_rate: 0.1,
            max_iterations: 5000,
            gradient_tolerance: 1e-6,
        }
    }
}

/// Training diagnostics. `losses[i]` is the objective after accepting step i.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub iterations: usize,
    pub final_loss: f64,
    pub losses: Vec<f64>,
}

/// Accuracy plus a 3x3 confusion matrix (rows = true, columns = predicted).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: [[usize; 3]; 3],
}

fn softmax(logits: &[f64; 3]) -> [f64; 3] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = [
        (logits[0] - max).exp(),
        (logits[1] - max).exp(),
        (logits[2] - max).exp(),
    ];
    let sum = exps[0] + exps[1] + exps[2];
    [exps[0] / sum, exps[1] / sum, exps[2] / sum]
}

fn logits(weights: &Array2<f64>, biases: &[f64; 3], x: &[f64]) -> [f64; 3] {
    let mut out = [0.0f64; 3];
    for (c, out_c) in out.iter_mut().enumerate() {
        let row = weights.row(c);
        *out_c = biases[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
    out
}

/// Cross-entropy objective and its analytic gradient at (weights, biases)
/// over standardized features:
/// `mean(-log p_label) + l2/2 * |W|^2` (biases unregularized).
pub fn loss_and_gradient(
    features: &Array2<f64>,
    labels: &[usize],
    weights: &Array2<f64>,
    biases: &[f64; 3],
    l2: f64,
) -> (f64, Array2<f64>, [f64; 3]) {
    let n = features.nrows();
    let d = features.ncols();
    let mut loss = 0.0;
    let mut grad_w = Array2::zeros((CLASSES, d));
    let mut grad_b = [0.0f64; 3];
    for (row, &label) in features.rows().into_iter().zip(labels) {
        let x = row.as_slice().expect("contiguous row");
        let p = softmax(&logits(weights, biases, x));
        loss += -(p[label].max(1e-300)).ln();
        for c in 0..CLASSES {
            let err = p[c] - if c == label { 1.0 } else { 0.0 };
            grad_b[c] += err;
            for j in 0..d {
                grad_w[(c, j)] += err * x[j];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    loss *= inv_n;
    grad_w *= inv_n;
    for b in grad_b.iter_mut() {
        *b *= inv_n;
    }
    loss += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    grad_w = grad_w + weights * l2;
    (loss, grad_w, grad_b)
}

fn standardize_stats(features: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = features.nrows() as f64;
    let d = features.ncols();
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for j in 0..d {
        let col = features.column(j);
        mean[j] = col.sum() / n;
        let var = col.iter().map(|x| (x - mean[j]) * (x - mean[j])).sum::<f64>() / n;
        std[j] = var.sqrt().max(1e-12);
    }
    (mean, std)
}

fn apply_standardize(x: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(mean.iter().zip(std))
        .map(|(v, (m, s))| (v - m) / s)
        .collect()
}

/// Fit the multinomial model by full-batch gradient descent (base step 0.1,
/// zero init). A step that would increase the objective is halved until it
/// does not, so the recorded loss sequence is non-increasing.
pub fn train_classifier(
    features: &[FeatureVector],
    labels: &[EmotionClass],
    opts: &TrainOptions,
) -> Result<(LinearModel, TrainReport), EegError> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(EegError::InvalidTrainingSet(format!(
            "{} feature vectors vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    let d = features[0].values.len();
    let layout = features[0].layout.clone();
    for f in features {
        if f.values.len() != d || f.layout != layout {
            return Err(EegError::InvalidTrainingSet(
                "inconsistent feature length or layout".into(),
            ));
        }
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(EegError::InvalidTrainingSet("NaN feature value".into()));
        }
    }
    for class in EmotionClass::ALL {
        if !labels.contains(&class) {
            return Err(EegError::InvalidTrainingSet(format!(
                "class {class} missing from training set"
            )));
        }
    }

    let n = features.len();
    let mut raw = Array2::zeros((n, d));
    for (i, f) in features.iter().enumerate() {
        for (j, &v) in f.values.iter().enumerate() {
            raw[(i, j)] = v;
        }
    }
    let (mean, std) = standardize_stats(&raw);
    let mut x = raw;
    for i in 0..n {
        for j in 0..d {
            x[(i, j)] = (x[(i, j)] - mean[j]) / std[j];
        }
    }
    let y: Vec<usize> = labels.iter().map(|l| l.index()).collect();

    let mut weights: Array2<f64> = Array2::zeros((CLASSES, d));
    let mut biases = [0.0f64; 3];
    let (mut loss, mut grad_w, mut grad_b) = loss_and_gradient(&x, &y, &weights, &biases, opts.l2);
    let mut losses = vec![loss];
    let mut iterations = 0usize;

    for _ in 0..opts.max_iterations {
        let grad_inf = grad_w
            .iter()
            .chain(grad_b.iter())
            .fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_inf < opts.gradient_tolerance {
            break;
        }
        let mut step = opts.learning_rate;
        let mut accepted = None;
        for _ in 0..30 {
            let cand_w = &weights - &(&grad_w * step);
            let mut cand_b = biases;
            for (b, g) in cand_b.iter_mut().zip(&grad_b) {
                *b -= step * g;
            }
            let (cand_loss, cand_gw, cand_gb) =
                loss_and_gradient(&x, &y, &cand_w, &cand_b, opts.l2);
            if cand_loss <= loss {
                accepted = Some((cand_w, cand_b, cand_loss, cand_gw, cand_gb));
                break;
            }
            step *= 0.5;
        }
        let Some((w, b, l, gw, gb)) = accepted else {
            break; // no descent at working precision
        };
        weights = w;
        biases = b;
        loss = l;
        grad_w = gw;
        grad_b = gb;
        losses.push(loss);
        iterations += 1;
    }

    Ok((
        LinearModel {
            weights,
            biases,
            feature_mean: mean,
            feature_std: std,
            feature_layout: layout,
        },
        TrainReport {
            iterations,
            final_loss: loss,
            losses,
        },
    ))
}

/// Class probabilities for one raw (unstandardized) feature vector.
pub fn predict_probs(model: &LinearModel, features: &FeatureVector) -> Result<[f64; 3], EegError> {
    if features.layout != model.feature_layout
        || features.values.len() != model.weights.ncols()
    {
        return Err(EegError::LayoutMismatch {
            model: model.feature_layout.clone(),
            input: features.layout.clone(),
        });
    }
    let x = apply_standardize(&features.values, &model.feature_mean, &model.feature_std);
    Ok(softmax(&logits(&model.weights, &model.biases, &x)))
}

/// Accuracy and confusion matrix over a labeled feature set.
pub fn evaluate_classifier(
    model: &LinearModel,
    features: &[FeatureVector],
    labels: &[EmotionClass],
) -> Result<Evaluation, EegError> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(EegError::InvalidTrainingSet(format!(
            "{} feature vectors vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    let mut confusion = [[0usize; 3]; 3];
    for (f, &label) in features.iter().zip(labels) {
        let p = predict_probs(model, f)?;
        let predicted = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        confusion[label.index()][predicted] += 1;
    }
    let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / features.len() as f64,
        confusion,
    })
}

/// Classify a raw window. The sample timestamp is the window center.
pub fn classify_window(model: &LinearModel, window: &EegWindow) -> Result<EmotionSample, EegError> {
    let features = band_features(window)?;
    let probs = predict_probs(model, &features)?;
    EmotionSample::from_probs(window.start_time + 0.5 * window.duration(), probs)
}

// ---------------------------------------------------------------------------
// Model file (JSON)
// ---------------------------------------------------------------------------

const MODEL_FORMAT: &str = "affectmap-model-v1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    feature_layout: String,
    classes: Vec<String>,
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
}

impl LinearModel {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<(), EegError> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            feature_layout: self.feature_layout.clone(),
            classes: EmotionClass::ALL.iter().map(|c| c.name().into()).collect(),
            weights: self
                .weights
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            biases: self.biases.to_vec(),
            feature_mean: self.feature_mean.clone(),
            feature_std: self.feature_std.clone(),
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| EegError::ModelFile(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| EegError::ModelFile(e.to_string()))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, EegError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| EegError::ModelFile(e.to_string()))?;
        let file: ModelFile =
            serde_json::from_str(&text).map_err(|e| EegError::ModelFile(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(EegError::ModelFile(format!(
                "unsupported model format {:?}",
                file.format
            )));
        }
        if file.weights.len() != CLASSES || file.biases.len() != CLASSES {
            return Err(EegError::ModelFile("expected 3 classes".into()));
        }
        let d = file.weights[0].len();
        if file.weights.iter().any(|r| r.len() != d)
            || file.feature_mean.len() != d
            || file.feature_std.len() != d
        {
            return Err(EegError::ModelFile("ragged weight matrix".into()));
        }
        let mut weights = Array2::zeros((CLASSES, d));
        for (c, row) in file.weights.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                weights[(c, j)] = v;
            }
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(EegError::ModelFile("non-finite weights".into()));
        }
        Ok(Self {
            weights,
            biases: [file.biases[0], file.biases[1], file.biases[2]],
            feature_mean: file.feature_mean,
            feature_std: file.feature_std,
            feature_layout: file.feature_layout,
        })
    }
}
