//! Extreme Learning Machine: random hidden layer, closed-form output weights.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{least_squares_solve, Matrix};

/// Hidden-node type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Gaussian RBF on the squared L2 distance averaged over features:
    /// `exp(-b ‖x - a‖² / n)`. Averaging keeps activations away from
    /// underflow when `n` is large.
    RbfL2,
    /// Additive node `1 / (1 + exp(-(a·x + b)))`.
    Sigmoid,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::RbfL2 => "rbf_l2",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "rbf_l2" => Ok(Activation::RbfL2),
            "sigmoid" => Ok(Activation::Sigmoid),
            _ => Err(Error::invalid(format!("unknown activation {s:?}"))),
        }
    }
}

/// Per-feature z-score parameters fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, or 1 for constant columns.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::invalid("cannot fit a standardizer on zero rows"));
        }
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mu = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            mean.push(mu);
            scale.push(if sd > 0.0 && sd.is_finite() { sd } else { 1.0 });
        }
        Ok(Standardizer { mean, scale })
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.mean.len() {
            return Err(Error::invalid(format!(
                "expected {} features, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        Ok(Matrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            (x[(r, c)] - self.mean[c]) / self.scale[c]
        }))
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 350,
            activation: Activation::RbfL2,
            seed: 0,
        }
    }
}

/// A trained ELM. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ElmModel {
    /// `L × n` hidden-node parameters (RBF centres or additive weights).
    pub weights: Matrix,
    /// `L` RBF widths or additive biases.
    pub biases: Vec<f64>,
    /// `L × m` output weights.
    pub beta: Matrix,
    pub activation: Activation,
    pub class_order: Vec<String>,
    pub standardizer: Standardizer,
    pub seed: u64,
    /// Digest of the feature ordering the model was trained on, when known.
    pub layout_digest: Option<String>,
}

impl ElmModel {
    pub fn n_features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.beta.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.n_hidden();
        if l == 0 || self.n_features() == 0 {
            return Err(Error::invalid("model has an empty hidden layer"));
        }
        if self.biases.len() != l || self.beta.nrows() != l {
            return Err(Error::invalid("hidden-layer shapes are inconsistent"));
        }
        if self.class_order.len() != self.n_classes() {
            return Err(Error::invalid("class order does not match output width"));
        }
        if self.standardizer.mean.len() != self.n_features()
            || self.standardizer.scale.len() != self.n_features()
        {
            return Err(Error::invalid("standardizer width does not match features"));
        }
        if self.standardizer.scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("standardizer scales must be positive"));
        }
        if self.activation == Activation::RbfL2 && self.biases.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::invalid("RBF widths must be positive"));
        }
        Ok(())
    }

    /// Output-layer scores (`N × m`) and arg-max class indices. Ties go to
    /// the lowest class index.
    pub fn predict(&self, x: &Matrix) -> Result<(Matrix, Vec<usize>)> {
        let z = self.standardizer.transform(x)?;
        let g = hidden_output(&z, &self.weights, &self.biases, self.activation)?;
        let scores = g * &self.beta;
        let labels = scores
            .row_iter()
            .map(|row| argmax(row.iter().copied()))
            .collect();
        Ok((scores, labels))
    }
}

/// Index of the largest value; the first one wins on ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Draws hidden-node parameters. RBF centres are uniform on `[-1, 1]ⁿ` with
/// widths uniform on `(0, 1]`; sigmoid weights and biases are uniform on
/// `[-1, 1]`.
pub fn init_hidden(
    n_features: usize,
    n_hidden: usize,
    activation: Activation,
    seed: u64,
) -> Result<(Matrix, Vec<f64>)> {
    if n_features == 0 || n_hidden == 0 {
        return Err(Error::invalid("feature and hidden counts must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Row-major draw order so the stream maps to (node, feature) stably.
    let mut weights = Matrix::zeros(n_hidden, n_features);
    for i in 0..n_hidden {
        for j in 0..n_features {
            weights[(i, j)] = rng.gen_range(-1.0..=1.0);
        }
    }
    let biases = (0..n_hidden)
        .map(|_| match activation {
            Activation::RbfL2 => 1.0 - rng.gen::<f64>(),
            Activation::Sigmoid => rng.gen_range(-1.0..=1.0),
        })
        .collect();
    Ok((weights, biases))
}

/// Hidden-layer output matrix `G` (`N × L`).
pub fn hidden_output(
    x: &Matrix,
    weights: &Matrix,
    biases: &[f64],
    activation: Activation,
) -> Result<Matrix> {
    if x.ncols() != weights.ncols() {
        return Err(Error::invalid(format!(
            "inputs have {} features, hidden layer expects {}",
            x.ncols(),
            weights.ncols()
        )));
    }
    if biases.len() != weights.nrows() {
        return Err(Error::invalid("bias count does not match hidden nodes"));
    }
    let (n, l, d) = (x.nrows(), weights.nrows(), x.ncols());
    let inv_d = 1.0 / d as f64;
    // Row-major copies keep the inner loops contiguous.
    let xs: Vec<f64> = x.transpose().as_slice().to_vec();
    let ws: Vec<f64> = weights.transpose().as_slice().to_vec();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let xj = &xs[j * d..(j + 1) * d];
            (0..l)
                .map(|i| {
                    let ai = &ws[i * d..(i + 1) * d];
                    match activation {
                        Activation::RbfL2 => {
                            let dist2: f64 =
                                xj.iter().zip(ai).map(|(a, b)| (a - b) * (a - b)).sum();
                            (-biases[i] * dist2 * inv_d).exp()
                        }
                        Activation::Sigmoid => {
                            let z: f64 =
                                xj.iter().zip(ai).map(|(a, b)| a * b).sum::<f64>() + biases[i];
                            1.0 / (1.0 + (-z).exp())
                        }
                    }
                })
                .collect()
        })
        .collect();
    Ok(Matrix::from_fn(n, l, |r, c| rows[r][c]))
}

/// One-hot target matrix `T` (`N × m`).
pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Matrix> {
    let mut t = Matrix::zeros(labels.len(), n_classes);
    for (row, &label) in labels.iter().enumerate() {
        if label >= n_classes {
            return Err(Error::invalid(format!(
                "label index {label} outside {n_classes} classes"
            )));
        }
        t[(row, label)] = 1.0;
    }
    Ok(t)
}

/// Fits the standardizer, draws the hidden layer and solves `β = G† T`.
pub fn train(
    x: &Matrix,
    labels: &[usize],
    class_order: &[String],
    config: &TrainConfig,
) -> Result<ElmModel> {
    let m = class_order.len();
    if m == 0 {
        return Err(Error::invalid("class order is empty"));
    }
    if x.nrows() != labels.len() {
        return Err(Error::invalid(format!(
            "{} feature rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    let t = one_hot(labels, m)?;
    let mut present = vec![false; m];
    labels.iter().for_each(|&l| present[l] = true);
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(Error::invalid(format!(
            "class {:?} has no training samples",
            class_order[missing]
        )));
    }

    let standardizer = Standardizer::fit(x)?;
    let z = standardizer.transform(x)?;
    let (weights, biases) = init_hidden(x.ncols(), config.hidden, config.activation, config.seed)?;
    let g = hidden_output(&z, &weights, &biases, config.activation)?;
    let beta = least_squares_solve(&g, &t)?;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite output weights".into()));
    }
    Ok(ElmModel {
        weights,
        biases,
        beta,
        activation: config.activation,
        class_order: class_order.to_vec(),
        standardizer,
        seed: config.seed,
        layout_digest: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use rand_distr::{Distribution, Normal};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn blobs(seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut rows = vec![];
        let mut labels = vec![];
        for k in 0..100 {
            let label = k % 2;
            let cx = if label == 0 { 0.0 } else { 5.0 };
            rows.push(cx + noise.sample(&mut rng));
            rows.push(noise.sample(&mut rng));
            labels.push(label);
        }
        (Matrix::from_row_slice(100, 2, &rows), labels)
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let (a1, b1) = init_hidden(168, 350, Activation::RbfL2, 9).unwrap();
        let (a2, b2) = init_hidden(168, 350, Activation::RbfL2, 9).unwrap();
        assert_eq!((a1.nrows(), a1.ncols(), b1.len()), (350, 168, 350));
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert!(b1.iter().all(|&b| b > 0.0 && b <= 1.0));
        let (a3, _) = init_hidden(168, 350, Activation::RbfL2, 10).unwrap();
        assert!(a1.iter().zip(a3.iter()).any(|(x, y)| x != y));
        assert!(init_hidden(0, 3, Activation::Sigmoid, 0).is_err());
        assert!(init_hidden(3, 0, Activation::Sigmoid, 0).is_err());
    }

    #[test]
    fn rbf_at_centre_is_one() {
        let w = Matrix::from_row_slice(2, 3, &[0.1, -0.2, 0.3, 0.5, 0.5, 0.5]);
        let x = Matrix::from_row_slice(1, 3, &[0.1, -0.2, 0.3]);
        let g = hidden_output(&x, &w, &[0.7, 0.2], Activation::RbfL2).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        assert!(g[(0, 1)] > 0.0 && g[(0, 1)] < 1.0);
    }

    #[test]
    fn hidden_output_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_fn(7, 4, |_, _| rng.gen_range(-2.0..2.0));
        for act in [Activation::RbfL2, Activation::Sigmoid] {
            let (w, b) = init_hidden(4, 5, act, 11).unwrap();
            let g = hidden_output(&x, &w, &b, act).unwrap();
            for j in 0..7 {
                for i in 0..5 {
                    let mut acc = 0.0;
                    for k in 0..4 {
                        acc += match act {
                            Activation::RbfL2 => (x[(j, k)] - w[(i, k)]).powi(2),
                            Activation::Sigmoid => x[(j, k)] * w[(i, k)],
                        };
                    }
                    let expected = match act {
                        Activation::RbfL2 => (-b[i] * acc / x.ncols() as f64).exp(),
                        Activation::Sigmoid => 1.0 / (1.0 + (-(acc + b[i])).exp()),
                    };
                    assert!((g[(j, i)] - expected).abs() <= 1e-12);
                    if act == Activation::RbfL2 {
                        assert!(g[(j, i)] > 0.0 && g[(j, i)] <= 1.0);
                    }
                }
            }
        }
        let (w, b) = init_hidden(3, 5, Activation::RbfL2, 0).unwrap();
        assert!(hidden_output(&x, &w, &b, Activation::RbfL2).is_err());
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(1);
        let cfg = TrainConfig {
            hidden: 20,
            activation: Activation::RbfL2,
            seed: 4,
        };
        let model = train(&x, &y, &names(2), &cfg).unwrap();
        let (_, pred) = model.predict(&x).unwrap();
        assert_eq!(pred, y);
        let again = train(&x, &y, &names(2), &cfg).unwrap();
        assert!(model
            .beta
            .iter()
            .zip(again.beta.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn xor_is_learned_with_rbf_nodes() {
        let x = Matrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let y = vec![0, 1, 1, 0];
        let cfg = TrainConfig {
            hidden: 10,
            activation: Activation::RbfL2,
            seed: 0,
        };
        let model = train(&x, &y, &["A".to_string(), "B".to_string()], &cfg).unwrap();
        assert_eq!(model.predict(&x).unwrap().1, y);
    }

    #[test]
    fn argmax_and_ties() {
        assert_eq!(argmax([0.2, 0.9, 0.1]), 1);
        assert_eq!(argmax([0.5, 0.5, 0.0]), 0);
    }

    #[test]
    fn missing_class_is_rejected() {
        let (x, _) = blobs(2);
        let y = vec![0; 100];
        let err = train(&x, &y, &names(2), &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn predict_rejects_wrong_width() {
        let (x, y) = blobs(3);
        let model = train(
            &x,
            &y,
            &names(2),
            &TrainConfig {
                hidden: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(model.predict(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x = Matrix::from_fn(50, 4, |_, c| rng.gen_range(0.0..10.0) * (c + 1) as f64);
        x.column_mut(2).fill(3.0);
        let s = Standardizer::fit(&x).unwrap();
        assert_eq!(s.scale[2], 1.0);
        let z = s.transform(&x).unwrap();
        for (c, col) in z.column_iter().enumerate() {
            let mean = col.iter().sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-9);
            if c != 2 {
                let var = col.iter().map(|v| v * v).sum::<f64>() / 50.0;
                assert!((var - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn training_solution_is_stationary() {
        let (x, y) = blobs(5);
        let cfg = TrainConfig {
            hidden: 30,
            activation: Activation::RbfL2,
            seed: 2,
        };
        let model = train(&x, &y, &names(2), &cfg).unwrap();
        let z = model.standardizer.transform(&x).unwrap();
        let g = hidden_output(&z, &model.weights, &model.biases, model.activation).unwrap();
        let t = one_hot(&y, 2).unwrap();
        assert!(max_abs(&(g.transpose() * (&g * &model.beta - t))) <= 1e-6);
    }

    #[test]
    fn row_permutation_leaves_beta_unchanged() {
        let (x, y) = blobs(6);
        let cfg = TrainConfig {
            hidden: 15,
            activation: Activation::Sigmoid,
            seed: 3,
        };
        let a = train(&x, &y, &names(2), &cfg).unwrap();
        let perm: Vec<usize> = (0..100).rev().collect();
        let xp = x.select_rows(perm.iter());
        let yp: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
        let b = train(&xp, &yp, &names(2), &cfg).unwrap();
        assert!(max_abs(&(a.beta - b.beta)) <= 1e-9);
    }
}
