//! Dataset preparation: cleanup, random oversampling and min-max scaling.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, TrackRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanupSummary {
    pub input: usize,
    pub kept: usize,
    pub duplicate: usize,
    pub missing_feature: usize,
    pub no_key: usize,
}

impl CleanupSummary {
    pub fn dropped(&self) -> usize {
        self.duplicate + self.missing_feature + self.no_key
    }
}

/// Remove duplicate ids (first occurrence wins), records missing any model
/// feature, and records with no detected key.
pub fn cleanup(tracks: &[TrackRecord]) -> (Vec<TrackRecord>, CleanupSummary) {
    let mut seen = HashSet::new();
    let mut summary = CleanupSummary {
        input: tracks.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(tracks.len());
    for t in tracks {
        if !seen.insert(t.id.as_str()) {
            summary.duplicate += 1;
        } else if let Some(feature) = t.first_missing_feature() {
            log::debug!("dropping {}: missing feature {feature}", t.id);
            summary.missing_feature += 1;
        } else if t.key == Some(-1) {
            log::debug!("dropping {}: no key detected", t.id);
            summary.no_key += 1;
        } else {
            kept.push(t.clone());
        }
    }
    summary.kept = kept.len();
    (kept, summary)
}

/// Duplicate uniformly chosen minority rows (with replacement) until both
/// classes have the same count. Original rows keep their positions; the
/// synthetic copies are appended.
pub fn oversample(matrix: &FeatureMatrix, rng: &mut ChaCha8Rng) -> Result<FeatureMatrix> {
    let counts = matrix.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::SingleClass(
            "cannot balance a dataset with only one class".into(),
        ));
    }
    let minority = if counts[1] < counts[0] { 1u8 } else { 0u8 };
    let deficit = counts[0].abs_diff(counts[1]);
    let pool: Vec<usize> = (0..matrix.n_rows())
        .filter(|&i| matrix.label(i) == minority)
        .collect();
    let mut indices: Vec<usize> = (0..matrix.n_rows()).collect();
    indices.extend((0..deficit).map(|_| pool[rng.random_range(0..pool.len())]));
    Ok(matrix.select_rows(&indices))
}

/// Per-column minimum and maximum of the fitting rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerModel {
    pub feature_names: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalerModel {
    pub fn fit(matrix: &FeatureMatrix) -> Result<ScalerModel> {
        if matrix.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d = matrix.n_cols();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for row in matrix.rows() {
            for j in 0..d {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
        }
        Ok(ScalerModel {
            feature_names: matrix.feature_names().to_vec(),
            min,
            max,
        })
    }

    /// Map one row into [0,1]^d: constant columns go to 0, unseen values are clipped.
    pub fn scale_row(&self, row: &[f64], out: &mut Vec<f64>) {
        for (j, &x) in row.iter().enumerate() {
            let span = self.max[j] - self.min[j];
            let v = if span > 0.0 {
                ((x - self.min[j]) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
            out.push(v);
        }
    }

    pub fn apply(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        matrix.check_columns(&self.feature_names)?;
        let mut values = Vec::with_capacity(matrix.values().len());
        for row in matrix.rows() {
            self.scale_row(row, &mut values);
        }
        matrix.with_features(self.feature_names.clone(), values)
    }
}

pub fn fit_scaler(matrix: &FeatureMatrix) -> Result<ScalerModel> {
    ScalerModel::fit(matrix)
}

pub fn apply_scaler(model: &ScalerModel, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    model.apply(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_track, Label};
    use crate::rng;
    use proptest::prelude::*;

    fn column(values: &[f64]) -> FeatureMatrix {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        FeatureMatrix::from_rows(&["x"], &rows, vec![0; values.len()]).unwrap()
    }

    #[test]
    fn cleanup_dedups_by_first_occurrence() {
        let a = sample_track("A", Label::Hit);
        let b = sample_track("B", Label::NonHit);
        let a2 = TrackRecord {
            popularity: 3,
            ..sample_track("A", Label::NonHit)
        };
        let (kept, summary) = cleanup(&[a.clone(), b.clone(), a2]);
        assert_eq!(kept, vec![a, b]);
        assert_eq!(summary.duplicate, 1);
    }

    #[test]
    fn cleanup_drops_missing_and_no_key() {
        let missing = TrackRecord {
            tempo: None,
            ..sample_track("m", Label::Hit)
        };
        let no_key = TrackRecord {
            key: Some(-1),
            ..sample_track("k", Label::Hit)
        };
        let (kept, summary) = cleanup(&[missing, no_key, sample_track("ok", Label::Hit)]);
        assert_eq!(kept.len(), 1);
        assert_eq!((summary.missing_feature, summary.no_key, summary.dropped()), (1, 1, 2));
    }

    #[test]
    fn cleanup_clean_list_unchanged() {
        let tracks = vec![sample_track("a", Label::Hit), sample_track("b", Label::NonHit)];
        let (kept, summary) = cleanup(&tracks);
        assert_eq!(kept, tracks);
        assert_eq!(summary.dropped(), 0);
    }

    fn imbalanced(hits: usize, non_hits: usize) -> FeatureMatrix {
        let n = hits + non_hits;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, (i * 7 % 11) as f64]).collect();
        let labels = (0..n).map(|i| u8::from(i < hits)).collect();
        FeatureMatrix::from_rows(&["a", "b"], &rows, labels).unwrap()
    }

    #[test]
    fn oversample_ten_to_hundred() {
        let m = imbalanced(10, 100);
        let out = oversample(&m, &mut rng::substream(1, rng::OVERSAMPLE)).unwrap();
        assert_eq!(out.class_counts(), [100, 100]);
        let originals: Vec<&[f64]> = (0..10).map(|i| m.row(i)).collect();
        for i in 0..out.n_rows() {
            if out.label(i) == 1 {
                assert!(originals.contains(&out.row(i)));
            }
        }
        assert_eq!(&out.values()[..m.values().len()], m.values());
    }

    #[test]
    fn oversample_balanced_is_identity() {
        let m = imbalanced(50, 50);
        let out = oversample(&m, &mut rng::substream(1, rng::OVERSAMPLE)).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn oversample_full_scale_counts() {
        let m = imbalanced(861, 17139);
        let out = oversample(&m, &mut rng::substream(1, rng::OVERSAMPLE)).unwrap();
        assert_eq!(out.class_counts(), [17139, 17139]);
        assert_eq!(out.n_rows(), 34278);
    }

    #[test]
    fn oversample_single_class_errors() {
        let m = imbalanced(0, 5);
        assert!(matches!(
            oversample(&m, &mut rng::substream(1, rng::OVERSAMPLE)),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn scaler_fit_and_apply() {
        let m = column(&[2.0, 4.0, 6.0]);
        let s = fit_scaler(&m).unwrap();
        assert_eq!((s.min[0], s.max[0]), (2.0, 6.0));
        assert_eq!(apply_scaler(&s, &m).unwrap().values(), &[0.0, 0.5, 1.0]);
        assert_eq!(apply_scaler(&s, &column(&[8.0, -1.0])).unwrap().values(), &[1.0, 0.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let m = column(&[5.0, 5.0]);
        let s = fit_scaler(&m).unwrap();
        assert_eq!((s.min[0], s.max[0]), (5.0, 5.0));
        assert_eq!(apply_scaler(&s, &m).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn column_mismatch_is_schema_error() {
        let s = fit_scaler(&column(&[1.0, 2.0])).unwrap();
        let other = FeatureMatrix::from_rows(&["y"], &[vec![1.0]], vec![0]).unwrap();
        assert!(matches!(apply_scaler(&s, &other), Err(Error::Schema(_))));
    }

    proptest! {
        #[test]
        fn scaled_fit_data_spans_unit_interval(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..40)) {
            let m = FeatureMatrix::from_rows(&["a", "b", "c"], &rows, vec![0; rows.len()]).unwrap();
            let s = fit_scaler(&m).unwrap();
            let out = apply_scaler(&s, &m).unwrap();
            prop_assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
            for j in 0..3 {
                if s.max[j] > s.min[j] {
                    let col: Vec<f64> = out.rows().map(|r| r[j]).collect();
                    prop_assert!(col.contains(&0.0) && col.contains(&1.0));
                }
            }
        }

        #[test]
        fn oversample_balances_without_inventing_rows(hits in 1usize..20, non_hits in 1usize..60, seed in any::<u64>()) {
            let m = imbalanced(hits, non_hits);
            let out = oversample(&m, &mut rng::substream(seed, rng::OVERSAMPLE)).unwrap();
            let c = out.class_counts();
            prop_assert_eq!(c[0], c[1]);
            let originals: HashSet<Vec<u64>> = m.rows().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
            let produced: HashSet<Vec<u64>> = out.rows().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
            prop_assert_eq!(originals, produced);
        }

        #[test]
        fn cleanup_is_idempotent(ids in prop::collection::vec(0u8..8, 0..30), holes in prop::collection::vec(any::<bool>(), 30)) {
            let tracks: Vec<TrackRecord> = ids.iter().zip(&holes).map(|(id, &hole)| TrackRecord {
                tempo: if hole { None } else { Some(100.0) },
                ..sample_track(&format!("t{id}"), Label::NonHit)
            }).collect();
            let (once, _) = cleanup(&tracks);
            let (twice, summary) = cleanup(&once);
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(summary.dropped(), 0);
        }
    }
}
