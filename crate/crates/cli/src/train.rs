//! Training-data CSV handling and synthetic training-set generation.
//!
//! CSV schema: header row `label,<feature columns>` where `label` is the
//! signed class value (-1, 0, 1) and the feature columns follow the band
//! layout: per channel, per band (delta, theta, alpha, beta, gamma), a
//! `_pow` column then a `_de` column.

use std::path::Path;

use affectmap_core::eeg::{feature_layout, EmotionClass, FeatureVector, BANDS};

use crate::config::CliError;

/// Column names for a channel count, without the leading `label`.
pub fn feature_columns(channels: usize) -> Vec<String> {
    let mut cols = Vec::with_capacity(channels * BANDS.len() * 2);
    for c in 0..channels {
        for (band, _, _) in BANDS {
            cols.push(format!("c{c}_{band}_pow"));
            cols.push(format!("c{c}_{band}_de"));
        }
    }
    cols
}

/// Write a labeled feature set as CSV.
pub fn write_feature_csv(
    path: impl AsRef<Path>,
    features: &[FeatureVector],
    labels: &[EmotionClass],
) -> Result<(), CliError> {
    let path = path.as_ref();
    if features.is_empty() || features.len() != labels.len() {
        return Err(CliError::Pipeline(format!(
            "cannot write CSV: {} features vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    let per_channel = BANDS.len() * 2;
    let channels = features[0].values.len() / per_channel;
    let mut out = String::from("label,");
    out.push_str(&feature_columns(channels).join(","));
    out.push('\n');
    for (fv, label) in features.iter().zip(labels) {
        out.push_str(&label.value().to_string());
        for v in &fv.values {
            // enough digits for exact f64 round-trip
            out.push_str(&format!(",{v:.17e}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Read a labeled feature CSV back into feature vectors.
pub fn read_feature_csv(
    path: impl AsRef<Path>,
) -> Result<(Vec<FeatureVector>, Vec<EmotionClass>), CliError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::Config(format!("{}: empty CSV", path.display())))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.first() != Some(&"label") {
        return Err(CliError::Config(format!(
            "{}: first column must be `label`, got {:?}",
            path.display(),
            columns.first()
        )));
    }
    let per_channel = BANDS.len() * 2;
    let feature_count = columns.len() - 1;
    if feature_count == 0 || feature_count % per_channel != 0 {
        return Err(CliError::Config(format!(
            "{}: {feature_count} feature columns is not a whole number of channels ({per_channel} per channel)",
            path.display()
        )));
    }
    let channels = feature_count / per_channel;
    let expected = feature_columns(channels);
    for (got, want) in columns[1..].iter().zip(&expected) {
        if got != want {
            return Err(CliError::Config(format!(
                "{}: unexpected column {got:?}, want {want:?}",
                path.display()
            )));
        }
    }

    let layout = feature_layout(channels);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap_or_default();
        let label_value: i8 = label_field.parse().map_err(|_| {
            CliError::Config(format!(
                "{} line {}: bad label {label_field:?}",
                path.display(),
                line_no + 1
            ))
        })?;
        let label = EmotionClass::from_value(label_value).ok_or_else(|| {
            CliError::Config(format!(
                "{} line {}: label must be -1, 0, or 1",
                path.display(),
                line_no + 1
            ))
        })?;
        let values: Result<Vec<f64>, _> = fields.map(|f| f.parse::<f64>()).collect();
        let values = values.map_err(|e| {
            CliError::Config(format!("{} line {}: {e}", path.display(), line_no + 1))
        })?;
        if values.len() != feature_count {
            return Err(CliError::Config(format!(
                "{} line {}: expected {feature_count} values, got {}",
                path.display(),
                line_no + 1,
                values.len()
            )));
        }
        features.push(FeatureVector {
            values,
            layout: layout.clone(),
            clamped_bands: 0,
        });
        labels.push(label);
    }
    if features.is_empty() {
        return Err(CliError::Config(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok((features, labels))
}
