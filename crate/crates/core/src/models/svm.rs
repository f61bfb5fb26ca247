//! Soft-margin RBF support vector machine trained by sequential minimal
//! optimization with second-order working-set selection.
//!
//! Solves `min ½ αᵀQα − eᵀα` subject to `0 ≤ α ≤ C`, `yᵀα = 0`, where
//! `Q_ij = y_i y_j K(x_i, x_j)`. The pair update and clipping follow the
//! LIBSVM solver (Fan, Chen and Lin, 2005).

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::{rbf, sigmoid, Prediction};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

/// Full kernel matrices are cached up to this many training rows.
const FULL_KERNEL_LIMIT: usize = 6000;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// `None` means `1/d`.
    pub gamma: Option<f64>,
    pub tolerance: f64,
    /// Cap on pair updates; `None` means `10·N`.
    pub max_passes: Option<usize>,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 10.0,
            gamma: None,
            tolerance: 1e-3,
            max_passes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub c: f64,
    pub gamma: f64,
    pub n_features: usize,
    /// Row index of every support vector in the training matrix.
    pub support_indices: Vec<usize>,
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    /// Training labels of the support vectors in {−1, +1}.
    pub support_labels: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SvmModel {
    /// `f(x) = Σ α_i y_i K(x_i, x) + b`.
    pub fn decision_function(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(self
            .support_vectors
            .iter()
            .zip(self.alphas.iter().zip(&self.support_labels))
            .map(|(sv, (a, y))| a * y * rbf(sv, x, self.gamma))
            .sum::<f64>()
            + self.bias)
    }

    /// Hard class from the sign of the decision value (zero goes to class 0);
    /// the probability is the logistic squashing of the decision value.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let f = self.decision_function(x)?;
        Ok(Prediction {
            class: u8::from(f > 0.0),
            probability: sigmoid(f),
        })
    }

    /// Dual variable of training row `i` (zero for non-support rows).
    pub fn alpha_of(&self, i: usize) -> f64 {
        self.support_indices
            .iter()
            .position(|&s| s == i)
            .map_or(0.0, |p| self.alphas[p])
    }
}

enum Kernel<'a> {
    Full { n: usize, values: Vec<f64> },
    OnDemand { data: &'a FeatureMatrix, gamma: f64 },
}

impl<'a> Kernel<'a> {
    fn new(data: &'a FeatureMatrix, gamma: f64) -> Self {
        let n = data.n_rows();
        if n > FULL_KERNEL_LIMIT {
            return Kernel::OnDemand { data, gamma };
        }
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
            for j in 0..i {
                let k = rbf(data.row(i), data.row(j), gamma);
                values[i * n + j] = k;
                values[j * n + i] = k;
            }
        }
        Kernel::Full { n, values }
    }

    fn row(&self, i: usize) -> Cow<'_, [f64]> {
        match self {
            Kernel::Full { n, values } => Cow::Borrowed(&values[i * n..(i + 1) * n]),
            Kernel::OnDemand { data, gamma } => {
                let xi = data.row(i);
                Cow::Owned(data.rows().map(|xj| rbf(xi, xj, *gamma)).collect())
            }
        }
    }
}

pub fn train_svm(train: &FeatureMatrix, params: &SvmParams) -> Result<SvmModel> {
    let n = train.n_rows();
    let d = train.n_cols();
    let counts = train.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::SingleClass("SVM training needs both classes".into()));
    }
    if !(params.c > 0.0) {
        return Err(Error::Parameter(format!("C must be positive, got {}", params.c)));
    }
    let gamma = params.gamma.unwrap_or(1.0 / d as f64);
    if !(gamma > 0.0) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    let max_iter = params.max_passes.unwrap_or(10 * n);
    let c = params.c;
    let eps = params.tolerance;

    let y: Vec<f64> = train.labels().iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let kernel = Kernel::new(train, gamma);
    let mut alpha = vec![0.0; n];
    // Gradient of the dual objective; α = 0 gives −e.
    let mut grad = vec![-1.0; n];

    let is_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let is_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    loop {
        // i: maximal violator from the "up" set.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if is_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = None;
        let mut best_obj = f64::INFINITY;
        if let Some(i) = i_sel {
            let ki = kernel.row(i);
            for t in 0..n {
                if !is_low(alpha[t], y[t]) {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                let b = gmax - v;
                if b > 0.0 {
                    let a = (2.0 - 2.0 * ki[t]).max(TAU);
                    let obj = -(b * b) / a;
                    if obj < best_obj {
                        best_obj = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        if gmax - gmin < eps {
            converged = true;
            break;
        }
        let (Some(i), Some(j)) = (i_sel, j_sel) else {
            converged = true;
            break;
        };
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let ki = kernel.row(i);
        let kj = kernel.row(j);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let kij = ki[j];
        if y[i] != y[j] {
            // Q_ij = -K_ij here, so quad = K_ii + K_jj - 2 K_ij.
            let quad = (2.0 - 2.0 * kij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (2.0 - 2.0 * kij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let dai = alpha[i] - old_ai;
        let daj = alpha[j] - old_aj;
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * dai + y[j] * kj[t] * daj);
        }
    }

    if !converged {
        log::warn!("SMO stopped after {iterations} pair updates without meeting tolerance {eps}");
    }

    // Bias: mean over free support vectors, else the midpoint of the feasible interval.
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    for t in 0..n {
        let v = -y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += v;
            free_count += 1;
        } else {
            if is_up(alpha[t], y[t]) {
                lower = lower.max(v);
            }
            if is_low(alpha[t], y[t]) {
                upper = upper.min(v);
            }
        }
    }
    let bias = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        (upper + lower) / 2.0
    };

    let support_indices: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    Ok(SvmModel {
        c,
        gamma,
        n_features: d,
        support_vectors: support_indices.iter().map(|&t| train.row(t).to_vec()).collect(),
        alphas: support_indices.iter().map(|&t| alpha[t]).collect(),
        support_labels: support_indices.iter().map(|&t| y[t]).collect(),
        support_indices,
        bias,
        iterations,
        converged,
    })
}

/// Largest violation of the α-stratified KKT conditions over the training
/// rows: `α=0 ⇒ y·f ≥ 1`, `0<α<C ⇒ y·f = 1`, `α=C ⇒ y·f ≤ 1`.
pub fn max_kkt_violation(model: &SvmModel, train: &FeatureMatrix) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, row) in train.rows().enumerate() {
        let y = if train.label(i) == 1 { 1.0 } else { -1.0 };
        let margin = y * model.decision_function(row)?;
        let a = model.alpha_of(i);
        let violation = if a <= 0.0 {
            (1.0 - margin).max(0.0)
        } else if a >= model.c {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        worst = worst.max(violation);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_points_split_at_midpoint() {
        let m = FeatureMatrix::from_rows(&["x"], &[vec![0.0], vec![1.0]], vec![0, 1]).unwrap();
        let model = train_svm(&m, &SvmParams { c: 1e6, gamma: Some(1.0), ..Default::default() }).unwrap();
        assert_eq!(model.support_indices, vec![0, 1]);
        let eps = 1e-6;
        assert!(model.decision_function(&[0.5 - eps]).unwrap() < 0.0);
        assert!(model.decision_function(&[0.5 + eps]).unwrap() > 0.0);
    }

    #[test]
    fn xor_is_separated() {
        let rows = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let m = FeatureMatrix::from_rows(&["a", "b"], &rows, vec![0, 0, 1, 1]).unwrap();
        let model = train_svm(&m, &SvmParams { c: 10.0, gamma: Some(1.0), ..Default::default() }).unwrap();
        for (i, row) in m.rows().enumerate() {
            assert_eq!(model.predict(row).unwrap().class, m.label(i));
        }
        assert!(max_kkt_violation(&model, &m).unwrap() <= 1e-3);
    }

    #[test]
    fn random_instances_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let n = rng.random_range(10..60);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
            let mut labels: Vec<u8> = rows.iter().map(|r| u8::from(r[0] + 0.3 * r[1] > 0.6)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let m = FeatureMatrix::from_rows(&["a", "b"], &rows, labels).unwrap();
            let model = train_svm(&m, &SvmParams::default()).unwrap();
            assert!(model.converged);
            assert!(model.alphas.iter().all(|&a| a > 0.0 && a <= model.c));
            assert!(max_kkt_violation(&model, &m).unwrap() <= 1e-3);
        }
    }

    #[test]
    fn single_class_rejected() {
        let m = FeatureMatrix::from_rows(&["x"], &[vec![0.0], vec![1.0]], vec![1, 1]).unwrap();
        assert!(matches!(train_svm(&m, &SvmParams::default()), Err(Error::SingleClass(_))));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
        let labels = (0..40).map(|i| (i % 2) as u8).collect();
        let m = FeatureMatrix::from_rows(&["x"], &rows, labels).unwrap();
        let model = train_svm(&m, &SvmParams { max_passes: Some(1), ..Default::default() }).unwrap();
        assert!(!model.converged);
        assert_eq!(model.iterations, 1);
    }
}
