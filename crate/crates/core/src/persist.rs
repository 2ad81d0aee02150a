//! Model files: pretty-printed JSON with every real written to 17
//! significant digits, so save → load → save is byte-identical and a loaded
//! model predicts bit-for-bit like the original.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::elm::{Activation, ElmModel, Standardizer};
use crate::error::{Error, Result};
use crate::features::subset_for_digest;
use crate::linalg::Matrix;

pub const FORMAT_VERSION: u64 = 1;

fn number(v: f64) -> Result<Box<RawValue>> {
    if !v.is_finite() {
        return Err(Error::invalid(
            "cannot serialize a non-finite model parameter",
        ));
    }
    RawValue::from_string(format!("{v:.16e}")).map_err(|e| Error::invalid(e.to_string()))
}

fn numbers(values: &[f64]) -> Result<Vec<Box<RawValue>>> {
    values.iter().map(|&v| number(v)).collect()
}

fn matrix_rows(m: &Matrix) -> Result<Vec<Vec<Box<RawValue>>>> {
    m.row_iter()
        .map(|row| row.iter().map(|&v| number(v)).collect())
        .collect()
}

#[derive(Serialize)]
struct ModelFileOut<'a> {
    format_version: u64,
    activation: Activation,
    n_features: usize,
    n_hidden: usize,
    n_classes: usize,
    class_order: &'a [String],
    seed: u64,
    layout_digest: Option<&'a str>,
    standardizer_mean: Vec<Box<RawValue>>,
    standardizer_scale: Vec<Box<RawValue>>,
    /// `n_hidden` rows of `n_features`.
    hidden_weights: Vec<Vec<Box<RawValue>>>,
    hidden_biases: Vec<Box<RawValue>>,
    /// `n_hidden` rows of `n_classes`.
    output_weights: Vec<Vec<Box<RawValue>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFileIn {
    #[serde(rename = "format_version")]
    _format_version: u64,
    activation: Activation,
    n_features: usize,
    n_hidden: usize,
    n_classes: usize,
    class_order: Vec<String>,
    seed: u64,
    layout_digest: Option<String>,
    standardizer_mean: Vec<f64>,
    standardizer_scale: Vec<f64>,
    hidden_weights: Vec<Vec<f64>>,
    hidden_biases: Vec<f64>,
    output_weights: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u64,
}

pub fn model_to_string(model: &ElmModel) -> Result<String> {
    model.validate()?;
    let doc = ModelFileOut {
        format_version: FORMAT_VERSION,
        activation: model.activation,
        n_features: model.n_features(),
        n_hidden: model.n_hidden(),
        n_classes: model.n_classes(),
        class_order: &model.class_order,
        seed: model.seed,
        layout_digest: model.layout_digest.as_deref(),
        standardizer_mean: numbers(&model.standardizer.mean)?,
        standardizer_scale: numbers(&model.standardizer.scale)?,
        hidden_weights: matrix_rows(&model.weights)?,
        hidden_biases: numbers(&model.biases)?,
        output_weights: matrix_rows(&model.beta)?,
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn save_model(model: &ElmModel, path: &Path) -> Result<()> {
    let text = model_to_string(model)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        message: e.to_string(),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<Matrix> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse {
            line: 0,
            message: format!("{what} must be {nrows} rows of {ncols} values"),
        });
    }
    Ok(Matrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

pub fn model_from_str(text: &str) -> Result<ElmModel> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(parse_error)?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: probe.format_version,
            supported: FORMAT_VERSION,
        });
    }
    let doc: ModelFileIn = serde_json::from_str(text).map_err(parse_error)?;
    let weights = rows_to_matrix(
        &doc.hidden_weights,
        doc.n_hidden,
        doc.n_features,
        "hidden_weights",
    )?;
    let beta = rows_to_matrix(
        &doc.output_weights,
        doc.n_hidden,
        doc.n_classes,
        "output_weights",
    )?;

    if let Some(digest) = &doc.layout_digest {
        match subset_for_digest(digest) {
            Some(subset) if subset.len() == doc.n_features => {}
            _ => {
                return Err(Error::LayoutMismatch {
                    expected: format!("a known layout with {} features", doc.n_features),
                    found: digest.clone(),
                })
            }
        }
    }

    let model = ElmModel {
        weights,
        biases: doc.hidden_biases,
        beta,
        activation: doc.activation,
        class_order: doc.class_order,
        standardizer: Standardizer {
            mean: doc.standardizer_mean,
            scale: doc.standardizer_scale,
        },
        seed: doc.seed,
        layout_digest: doc.layout_digest,
    };
    model.validate().map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<ElmModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elm::{train, TrainConfig};
    use crate::features::{layout_digest, FeatureSubset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_model(features: usize) -> ElmModel {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::from_fn(30, features, |_, _| rng.gen_range(-3.0..3.0));
        let y: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let names: Vec<String> = crate::CLASS_ORDER.iter().map(|s| s.to_string()).collect();
        let cfg = TrainConfig {
            hidden: 12,
            activation: Activation::RbfL2,
            seed: 5,
        };
        train(&x, &y, &names, &cfg).unwrap()
    }

    #[test]
    fn text_round_trip_is_stable() {
        let model = small_model(4);
        let text = model_to_string(&model).unwrap();
        let back = model_from_str(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(model_to_string(&back).unwrap(), text);
    }

    #[test]
    fn future_version_is_rejected() {
        let text = model_to_string(&small_model(4)).unwrap();
        let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 999", 1);
        assert!(matches!(
            model_from_str(&bumped),
            Err(Error::Version { found: 999, .. })
        ));
    }

    #[test]
    fn schema_violations_are_parse_errors() {
        assert!(matches!(model_from_str("{}"), Err(Error::Parse { .. })));
        let text = model_to_string(&small_model(4)).unwrap();
        let broken = text.replacen("\"n_hidden\": 12", "\"n_hidden\": 13", 1);
        assert!(matches!(model_from_str(&broken), Err(Error::Parse { .. })));
    }

    #[test]
    fn layout_digest_is_checked() {
        let mut model = small_model(28);
        model.layout_digest = Some(layout_digest(FeatureSubset::Frequency));
        let text = model_to_string(&model).unwrap();
        assert!(model_from_str(&text).is_ok());

        model.layout_digest = Some(layout_digest(FeatureSubset::Texture));
        let text = model_to_string(&model).unwrap();
        assert!(matches!(
            model_from_str(&text),
            Err(Error::LayoutMismatch { .. })
        ));

        model.layout_digest = Some("0000000000000000".into());
        let text = model_to_string(&model).unwrap();
        assert!(matches!(
            model_from_str(&text),
            Err(Error::LayoutMismatch { .. })
        ));
    }

    #[test]
    fn unwritable_path() {
        let err =
            save_model(&small_model(3), Path::new("/nonexistent/dir/model.json")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
