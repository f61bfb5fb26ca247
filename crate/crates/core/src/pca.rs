//! Standardization followed by principal component analysis.
//!
//! The covariance of the z-scored data (population normalization) is
//! diagonalized with cyclic Jacobi rotations. Components are returned in
//! descending eigenvalue order with the largest-magnitude loading of every
//! component made non-negative.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a real symmetric matrix stored row-major.
///
/// Returns `(eigenvalues, eigenvectors)` where eigenvector `i` is column `i`
/// of the row-major `n×n` output. Order is whatever the rotations produce.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if matrix.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            got: matrix.len(),
        });
    }
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += a[p * n + q] * a[p * n + q];
                }
            }
        }
        s.sqrt()
    };

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&a) < JACOBI_TOLERANCE {
            return Ok(((0..n).map(|i| a[i * n + i]).collect(), v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Rotation angle that zeroes a[p][q]; the smaller root keeps it stable.
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;

                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if off_norm(&a) < JACOBI_TOLERANCE {
        return Ok(((0..n).map(|i| a[i * n + i]).collect(), v));
    }
    Err(Error::Numeric(format!(
        "Jacobi rotations did not converge in {JACOBI_MAX_SWEEPS} sweeps"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    /// Population standard deviation; 1.0 for constant columns.
    pub std: Vec<f64>,
    /// `k` rows of length `d`, orthonormal.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalue of each retained component.
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cumulative_variance(&self) -> Vec<f64> {
        self.explained_variance_ratio
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }

    pub fn component_names(&self) -> Vec<String> {
        (1..=self.k()).map(|i| format!("PC{i}")).collect()
    }

    /// Project one raw row onto the retained components.
    pub fn project_row(&self, row: &[f64], out: &mut Vec<f64>) {
        let z: Vec<f64> = row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect();
        for comp in &self.components {
            out.push(comp.iter().zip(&z).map(|(c, v)| c * v).sum());
        }
    }

    pub fn transform(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        matrix.check_columns(&self.feature_names)?;
        let mut values = Vec::with_capacity(matrix.n_rows() * self.k());
        for row in matrix.rows() {
            self.project_row(row, &mut values);
        }
        matrix.with_features(self.component_names(), values)
    }

    /// Keep the shortest prefix of components whose cumulative explained
    /// variance reaches `threshold`.
    pub fn select_components(&self, threshold: f64) -> Result<PcaModel> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::Parameter(format!(
                "variance threshold must lie in (0,1], got {threshold}"
            )));
        }
        let k = if threshold >= 1.0 {
            self.k()
        } else {
            self.cumulative_variance()
                .iter()
                .position(|&c| c >= threshold - 1e-12)
                .map_or(self.k(), |i| i + 1)
        };
        Ok(PcaModel {
            components: self.components[..k].to_vec(),
            explained_variance: self.explained_variance[..k].to_vec(),
            explained_variance_ratio: self.explained_variance_ratio[..k].to_vec(),
            ..self.clone()
        })
    }

    pub fn loading_report(&self) -> Vec<Loading> {
        self.components
            .iter()
            .enumerate()
            .map(|(i, comp)| {
                let j = argmax_abs(comp);
                Loading {
                    component: i + 1,
                    feature: self.feature_names[j].clone(),
                    loading: comp[j],
                }
            })
            .collect()
    }

    /// `component,explained_variance_ratio,cumulative` rows.
    pub fn write_variance_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["component", "explained_variance_ratio", "cumulative"])?;
        for (i, (r, c)) in self
            .explained_variance_ratio
            .iter()
            .zip(self.cumulative_variance())
            .enumerate()
        {
            w.write_record([format!("PC{}", i + 1), r.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The dominant feature of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Loading {
    /// 1-based component index.
    pub component: usize,
    pub feature: String,
    pub loading: f64,
}

pub fn write_loading_csv<W: Write>(report: &[Loading], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["component", "feature", "loading"])?;
    for l in report {
        w.write_record([format!("PC{}", l.component), l.feature.clone(), l.loading.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// First index of the largest absolute value.
fn argmax_abs(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in values.iter().enumerate() {
        if v.abs() > values[best].abs() {
            best = j;
        }
    }
    best
}

/// Fit standardization and all `d` principal components.
pub fn fit_pca(matrix: &FeatureMatrix) -> Result<PcaModel> {
    let n = matrix.n_rows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("PCA needs at least 2 rows, got {n}")));
    }
    let d = matrix.n_cols();
    let nf = n as f64;

    let mut mean = vec![0.0; d];
    for row in matrix.rows() {
        for j in 0..d {
            mean[j] += row[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);

    let mut std = vec![0.0; d];
    for row in matrix.rows() {
        for j in 0..d {
            std[j] += (row[j] - mean[j]).powi(2);
        }
    }
    for s in std.iter_mut() {
        *s = (*s / nf).sqrt();
        if *s <= f64::EPSILON {
            *s = 1.0;
        }
    }

    let mut cov = vec![0.0; d * d];
    let mut z = vec![0.0; d];
    for row in matrix.rows() {
        for j in 0..d {
            z[j] = (row[j] - mean[j]) / std[j];
        }
        for p in 0..d {
            for q in p..d {
                cov[p * d + q] += z[p] * z[q];
            }
        }
    }
    for p in 0..d {
        for q in p..d {
            cov[p * d + q] /= nf;
            cov[q * d + p] = cov[p * d + q];
        }
    }

    let (eigenvalues, vectors) = jacobi_eigen(&cov, d)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(d);
    let mut explained_variance = Vec::with_capacity(d);
    for &i in &order {
        let mut comp: Vec<f64> = (0..d).map(|r| vectors[r * d + i]).collect();
        if comp[argmax_abs(&comp)] < 0.0 {
            comp.iter_mut().for_each(|c| *c = -*c);
        }
        components.push(comp);
        explained_variance.push(eigenvalues[i].max(0.0));
    }
    let total: f64 = explained_variance.iter().sum();
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|&v| if total > 0.0 { v / total } else { 0.0 })
        .collect();

    Ok(PcaModel {
        feature_names: matrix.feature_names().to_vec(),
        mean,
        std,
        components,
        explained_variance,
        explained_variance_ratio,
    })
}

pub fn select_components(model: &PcaModel, threshold: f64) -> Result<PcaModel> {
    model.select_components(threshold)
}

pub fn transform(model: &PcaModel, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    model.transform(matrix)
}

pub fn loading_report(model: &PcaModel) -> Vec<Loading> {
    model.loading_report()
}
