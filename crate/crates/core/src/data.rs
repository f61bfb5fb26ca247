//! Track records, feature matrices, dataset splits and the tracks CSV schema.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact header of the tracks CSV, in order.
pub const CSV_COLUMNS: [&str; 19] = [
    "id",
    "artist",
    "popularity",
    "explicit",
    "album_type",
    "danceability",
    "energy",
    "key",
    "loudness",
    "mode",
    "speechiness",
    "acousticness",
    "instrumentalness",
    "liveness",
    "valence",
    "tempo",
    "duration_ms",
    "time_signature",
    "hit",
];

/// The 15 model input features, in canonical column order.
pub const FEATURE_NAMES: [&str; 15] = [
    "explicit",
    "mode",
    "key",
    "acousticness",
    "valence",
    "danceability",
    "popularity",
    "tempo",
    "instrumentalness",
    "liveness",
    "duration_ms",
    "energy",
    "loudness",
    "speechiness",
    "time_signature",
];

pub const NUM_FEATURES: usize = FEATURE_NAMES.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlbumType {
    Album,
    Single,
    Compilation,
}

impl AlbumType {
    pub fn as_str(self) -> &'static str {
        match self {
            AlbumType::Album => "album",
            AlbumType::Single => "single",
            AlbumType::Compilation => "compilation",
        }
    }
}

impl FromStr for AlbumType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "album" => Ok(AlbumType::Album),
            "single" => Ok(AlbumType::Single),
            "compilation" => Ok(AlbumType::Compilation),
            other => Err(Error::validation("album_type", other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Hit,
    NonHit,
}

impl Label {
    /// Numeric encoding used by every model: 1 = hit.
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Hit => 1,
            Label::NonHit => 0,
        }
    }
}

/// One Spotify track with its audio features and hit label.
///
/// Audio-feature fields are optional: they arrive from a separate endpoint
/// and may be absent, in which case cleanup discards the record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub id: String,
    pub artist: String,
    pub popularity: u8,
    pub explicit: bool,
    pub album_type: AlbumType,
    pub danceability: Option<f64>,
    pub energy: Option<f64>,
    /// Pitch class 0–11, or −1 when no key was detected.
    pub key: Option<i8>,
    /// Decibels.
    pub loudness: Option<f64>,
    pub mode: Option<u8>,
    pub speechiness: Option<f64>,
    pub acousticness: Option<f64>,
    pub instrumentalness: Option<f64>,
    pub liveness: Option<f64>,
    pub valence: Option<f64>,
    /// Beats per minute.
    pub tempo: Option<f64>,
    pub duration_ms: Option<u64>,
    pub time_signature: Option<u8>,
    pub label: Label,
}

impl TrackRecord {
    /// A record carrying only search-result metadata, before audio enrichment.
    pub fn bare(id: &str, artist: &str, popularity: u8, explicit: bool, album_type: AlbumType, label: Label) -> Self {
        TrackRecord {
            id: id.to_string(),
            artist: artist.to_string(),
            popularity,
            explicit,
            album_type,
            danceability: None,
            energy: None,
            key: None,
            loudness: None,
            mode: None,
            speechiness: None,
            acousticness: None,
            instrumentalness: None,
            liveness: None,
            valence: None,
            tempo: None,
            duration_ms: None,
            time_signature: None,
            label,
        }
    }

    pub fn is_hit(&self) -> bool {
        self.label == Label::Hit
    }

    /// Check every documented range; missing optional fields are not errors here.
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::validation("id", "\"\""));
        }
        if self.popularity > 100 {
            return Err(Error::validation("popularity", self.popularity));
        }
        let unit = [
            ("danceability", self.danceability),
            ("energy", self.energy),
            ("speechiness", self.speechiness),
            ("acousticness", self.acousticness),
            ("instrumentalness", self.instrumentalness),
            ("liveness", self.liveness),
            ("valence", self.valence),
        ];
        for (name, value) in unit {
            if let Some(v) = value {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::validation(name, v));
                }
            }
        }
        if let Some(k) = self.key {
            if !(-1..=11).contains(&k) {
                return Err(Error::validation("key", k));
            }
        }
        if let Some(l) = self.loudness {
            if !l.is_finite() {
                return Err(Error::validation("loudness", l));
            }
        }
        if let Some(m) = self.mode {
            if m > 1 {
                return Err(Error::validation("mode", m));
            }
        }
        if let Some(t) = self.tempo {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::validation("tempo", t));
            }
        }
        if self.duration_ms == Some(0) {
            return Err(Error::validation("duration_ms", 0));
        }
        if let Some(ts) = self.time_signature {
            if !(1..=7).contains(&ts) {
                return Err(Error::validation("time_signature", ts));
            }
        }
        Ok(())
    }

    /// Name of the first model feature that is absent, if any.
    pub fn first_missing_feature(&self) -> Option<&'static str> {
        FEATURE_NAMES
            .iter()
            .copied()
            .find(|name| self.feature_value(name).is_none())
    }

    /// Numeric value of a model feature, with `explicit` encoded as 0/1.
    pub fn feature_value(&self, name: &str) -> Option<f64> {
        match name {
            "explicit" => Some(if self.explicit { 1.0 } else { 0.0 }),
            "popularity" => Some(self.popularity as f64),
            "mode" => self.mode.map(f64::from),
            "key" => self.key.map(f64::from),
            "acousticness" => self.acousticness,
            "valence" => self.valence,
            "danceability" => self.danceability,
            "tempo" => self.tempo,
            "instrumentalness" => self.instrumentalness,
            "liveness" => self.liveness,
            "duration_ms" => self.duration_ms.map(|d| d as f64),
            "energy" => self.energy,
            "loudness" => self.loudness,
            "speechiness" => self.speechiness,
            "time_signature" => self.time_signature.map(f64::from),
            _ => None,
        }
    }
}

/// Dense row-major matrix of features with aligned labels and track ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    feature_names: Vec<String>,
    values: Vec<f64>,
    labels: Vec<u8>,
    track_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(feature_names: Vec<String>, values: Vec<f64>, labels: Vec<u8>, track_ids: Vec<String>) -> Result<Self> {
        let d = feature_names.len();
        if d == 0 {
            return Err(Error::Schema("feature matrix needs at least one column".into()));
        }
        let n = labels.len();
        if values.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: values.len(),
            });
        }
        if track_ids.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: track_ids.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::validation("hit", l));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation {
                field: feature_names[pos % d].clone(),
                value: values[pos].to_string(),
                row: Some(pos / d),
            });
        }
        Ok(FeatureMatrix {
            feature_names,
            values,
            labels,
            track_ids,
        })
    }

    /// Matrix with generated ids `row0..` and the given column names.
    pub fn from_rows(feature_names: &[&str], rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        let values = rows.iter().flatten().copied().collect();
        let ids = (0..labels.len()).map(|i| format!("row{i}")).collect();
        Self::new(feature_names.iter().map(|s| s.to_string()).collect(), values, labels, ids)
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn track_ids(&self) -> &[String] {
        &self.track_ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_cols())
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.n_rows() - ones, ones]
    }

    /// New matrix holding the given rows, in the given order (repeats allowed).
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let d = self.n_cols();
        let mut values = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            feature_names: self.feature_names.clone(),
            values,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            track_ids: indices.iter().map(|&i| self.track_ids[i].clone()).collect(),
        }
    }

    /// Same rows, labels and ids with replaced feature columns.
    pub fn with_features(&self, feature_names: Vec<String>, values: Vec<f64>) -> Result<FeatureMatrix> {
        Self::new(feature_names, values, self.labels.clone(), self.track_ids.clone())
    }

    /// Error unless the column names equal `expected` exactly.
    pub fn check_columns(&self, expected: &[String]) -> Result<()> {
        if self.feature_names != expected {
            return Err(Error::Schema(format!(
                "column mismatch: expected [{}], got [{}]",
                expected.join(","),
                self.feature_names.join(",")
            )));
        }
        Ok(())
    }

    /// Write `id,<features...>,hit` with a header row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.push("hit".into());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![self.track_ids[i].clone()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            rec.push(self.labels[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref()).map_err(|e| Error::path(path.as_ref(), e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Read a matrix written by [`FeatureMatrix::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<FeatureMatrix> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 3 || header[0] != "id" || header[header.len() - 1] != "hit" {
            return Err(Error::Schema("matrix CSV must be `id,<features...>,hit`".into()));
        }
        let names = header[1..header.len() - 1].to_vec();
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            ids.push(rec[0].to_string());
            for (j, cell) in rec.iter().enumerate().take(header.len() - 1).skip(1) {
                values.push(parse_cell::<f64>(cell, &header[j], row)?);
            }
            labels.push(parse_bool(&rec[header.len() - 1], "hit", row)? as u8);
        }
        FeatureMatrix::new(names, values, labels, ids)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::path(path.as_ref(), e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Ids and feature rows pulled by name from an arbitrary CSV, for prediction.
#[derive(Debug, Clone)]
pub struct FeatureRows {
    pub ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub values: Vec<f64>,
}

impl FeatureRows {
    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.feature_names.len();
        &self.values[i * d..(i + 1) * d]
    }

    /// Read the named columns (any superset/order in the file is fine).
    /// Boolean cells are accepted for every column. Ids come from an `id`
    /// column when present, otherwise the zero-based row index.
    pub fn read_csv<R: Read>(reader: R, feature_names: &[String]) -> Result<FeatureRows> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let missing: Vec<&str> = feature_names
            .iter()
            .filter(|f| !header.contains(f))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Schema(format!("missing columns: {}", missing.join(","))));
        }
        let positions: Vec<usize> = feature_names
            .iter()
            .map(|f| header.iter().position(|h| h == f).expect("checked"))
            .collect();
        let id_pos = header.iter().position(|h| h == "id");
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            ids.push(id_pos.map(|p| rec[p].to_string()).unwrap_or_else(|| row.to_string()));
            for (&p, name) in positions.iter().zip(feature_names) {
                let cell = &rec[p];
                let v = match cell {
                    "true" => 1.0,
                    "false" => 0.0,
                    _ => parse_cell::<f64>(cell, name, row)?,
                };
                if !v.is_finite() {
                    return Err(Error::Validation {
                        field: name.clone(),
                        value: cell.to_string(),
                        row: Some(row),
                    });
                }
                values.push(v);
            }
        }
        Ok(FeatureRows {
            ids,
            feature_names: feature_names.to_vec(),
            values,
        })
    }
}

fn parse_cell<T: FromStr>(cell: &str, column: &str, row: usize) -> Result<T> {
    cell.trim().parse::<T>().map_err(|_| Error::Row {
        row,
        message: format!("cannot parse `{cell}` in column `{column}`"),
    })
}

fn parse_opt<T: FromStr>(cell: &str, column: &str, row: usize) -> Result<Option<T>> {
    if cell.trim().is_empty() {
        Ok(None)
    } else {
        parse_cell(cell, column, row).map(Some)
    }
}

fn parse_bool(cell: &str, column: &str, row: usize) -> Result<bool> {
    match cell.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(Error::Row {
            row,
            message: format!("cannot parse `{other}` in column `{column}` as boolean"),
        }),
    }
}

fn check_header(header: &csv::StringRecord) -> Result<()> {
    let got: Vec<&str> = header.iter().collect();
    if let Some(missing) = CSV_COLUMNS.iter().find(|c| !got.contains(c)) {
        return Err(Error::Schema(format!("missing column `{missing}`")));
    }
    if let Some(extra) = got.iter().find(|c| !CSV_COLUMNS.contains(c)) {
        return Err(Error::Schema(format!("unexpected column `{extra}`")));
    }
    if got != CSV_COLUMNS {
        return Err(Error::Schema(format!(
            "columns out of order, expected `{}`",
            CSV_COLUMNS.join(",")
        )));
    }
    Ok(())
}

/// Parse a tracks CSV. Row indices in errors are zero-based data rows.
pub fn read_tracks_csv<R: Read>(reader: R) -> Result<Vec<TrackRecord>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(r.headers()?)?;
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        let c = |i: usize| &rec[i];
        let track = TrackRecord {
            id: c(0).to_string(),
            artist: c(1).to_string(),
            popularity: parse_cell::<u32>(c(2), "popularity", row)?
                .try_into()
                .map_err(|_| Error::Validation {
                    field: "popularity".into(),
                    value: c(2).into(),
                    row: Some(row),
                })?,
            explicit: parse_bool(c(3), "explicit", row)?,
            album_type: c(4).parse().map_err(|_| Error::Validation {
                field: "album_type".into(),
                value: c(4).into(),
                row: Some(row),
            })?,
            danceability: parse_opt(c(5), "danceability", row)?,
            energy: parse_opt(c(6), "energy", row)?,
            key: parse_opt(c(7), "key", row)?,
            loudness: parse_opt(c(8), "loudness", row)?,
            mode: parse_opt(c(9), "mode", row)?,
            speechiness: parse_opt(c(10), "speechiness", row)?,
            acousticness: parse_opt(c(11), "acousticness", row)?,
            instrumentalness: parse_opt(c(12), "instrumentalness", row)?,
            liveness: parse_opt(c(13), "liveness", row)?,
            valence: parse_opt(c(14), "valence", row)?,
            tempo: parse_opt(c(15), "tempo", row)?,
            duration_ms: parse_opt(c(16), "duration_ms", row)?,
            time_signature: parse_opt(c(17), "time_signature", row)?,
            label: if parse_bool(c(18), "hit", row)? {
                Label::Hit
            } else {
                Label::NonHit
            },
        };
        track.validate().map_err(|e| match e {
            Error::Validation { field, value, .. } => Error::Validation {
                field,
                value,
                row: Some(row),
            },
            other => other,
        })?;
        out.push(track);
    }
    Ok(out)
}

pub fn load_tracks_csv(path: impl AsRef<Path>) -> Result<Vec<TrackRecord>> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::path(path.as_ref(), e))?;
    read_tracks_csv(std::io::BufReader::new(file))
}

fn fmt_opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_tracks_csv<W: Write>(tracks: &[TrackRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_COLUMNS)?;
    for t in tracks {
        w.write_record([
            t.id.clone(),
            t.artist.clone(),
            t.popularity.to_string(),
            t.explicit.to_string(),
            t.album_type.as_str().to_string(),
            fmt_opt(&t.danceability),
            fmt_opt(&t.energy),
            fmt_opt(&t.key),
            fmt_opt(&t.loudness),
            fmt_opt(&t.mode),
            fmt_opt(&t.speechiness),
            fmt_opt(&t.acousticness),
            fmt_opt(&t.instrumentalness),
            fmt_opt(&t.liveness),
            fmt_opt(&t.valence),
            fmt_opt(&t.tempo),
            fmt_opt(&t.duration_ms),
            fmt_opt(&t.time_signature),
            t.label.as_u8().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_tracks_csv(tracks: &[TrackRecord], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref()).map_err(|e| Error::path(path.as_ref(), e))?;
    write_tracks_csv(tracks, std::io::BufWriter::new(file))
}

/// Encode tracks as the canonical 15-column model matrix, preserving row order.
pub fn to_feature_matrix(tracks: &[TrackRecord]) -> Result<FeatureMatrix> {
    if tracks.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut values = Vec::with_capacity(tracks.len() * NUM_FEATURES);
    for t in tracks {
        for name in FEATURE_NAMES {
            let v = t.feature_value(name).ok_or_else(|| Error::MissingFeature {
                id: t.id.clone(),
                feature: name.to_string(),
            })?;
            values.push(v);
        }
    }
    FeatureMatrix::new(
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        values,
        tracks.iter().map(|t| t.label.as_u8()).collect(),
        tracks.iter().map(|t| t.id.clone()).collect(),
    )
}

/// Order of class balancing relative to the train/validation split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceMode {
    /// Oversample the whole dataset, then split.
    #[default]
    Pooled,
    /// Split first, then oversample only the training part.
    Strict,
}

impl FromStr for BalanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(BalanceMode::Pooled),
            "strict" => Ok(BalanceMode::Strict),
            other => Err(Error::Config(format!("unknown balance mode `{other}`"))),
        }
    }
}

impl fmt::Display for BalanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BalanceMode::Pooled => "pooled",
            BalanceMode::Strict => "strict",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub mode: BalanceMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.7,
            seed: 0,
            mode: BalanceMode::Pooled,
        }
    }
}

/// Per-class train counts: floor of each class's share, then the leftover
/// rows needed to reach `round(fraction * n)` go to the classes with the
/// largest fractional remainders (lower class first on ties).
fn stratified_train_counts(class_sizes: [usize; 2], fraction: f64) -> [usize; 2] {
    let n: usize = class_sizes.iter().sum();
    let target = (fraction * n as f64).round() as usize;
    let exact = class_sizes.map(|c| fraction * c as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = target.saturating_sub(counts.iter().sum());
    while remaining > 0 {
        let mut progressed = false;
        for &c in &order {
            if remaining > 0 && counts[c] < class_sizes[c] {
                counts[c] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    counts
}

/// Stratified, seed-deterministic train/validation partition.
/// Both outputs keep the input's relative row order.
pub fn split(matrix: &FeatureMatrix, spec: &SplitSpec) -> Result<(FeatureMatrix, FeatureMatrix)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "train_fraction must lie in (0,1), got {}",
            spec.train_fraction
        )));
    }
    let n = matrix.n_rows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("cannot split {n} row(s)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let counts = stratified_train_counts(matrix.class_counts(), spec.train_fraction);
    let mut in_train = vec![false; n];
    for (class, &take) in counts.iter().enumerate() {
        let mut members: Vec<usize> = (0..n).filter(|&i| matrix.label(i) as usize == class).collect();
        members.shuffle(&mut rng);
        for &i in &members[..take] {
            in_train[i] = true;
        }
    }
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| in_train[i]);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::InsufficientData(format!(
            "fraction {} of {n} rows leaves an empty side",
            spec.train_fraction
        )));
    }
    Ok((matrix.select_rows(&train_idx), matrix.select_rows(&val_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_track(id: &str, label: Label) -> TrackRecord {
        TrackRecord {
            danceability: Some(0.73),
            energy: Some(0.5),
            key: Some(5),
            loudness: Some(-6.2),
            mode: Some(1),
            speechiness: Some(0.04),
            acousticness: Some(0.1),
            instrumentalness: Some(0.0),
            liveness: Some(0.12),
            valence: Some(0.6),
            tempo: Some(120.5),
            duration_ms: Some(210_000),
            time_signature: Some(4),
            ..TrackRecord::bare(id, "Some Artist", 64, true, AlbumType::Single, label)
        }
    }

    fn csv_of(tracks: &[TrackRecord]) -> String {
        let mut buf = Vec::new();
        write_tracks_csv(tracks, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn three_row_round_trip() {
        let tracks = vec![
            sample_track("a", Label::Hit),
            sample_track("b", Label::NonHit),
            TrackRecord {
                tempo: None,
                ..sample_track("c", Label::NonHit)
            },
        ];
        let text = csv_of(&tracks);
        let back = read_tracks_csv(text.as_bytes()).unwrap();
        assert_eq!(back, tracks);
        assert_eq!(csv_of(&back), text);
    }

    #[test]
    fn header_without_tempo_is_schema_error() {
        let text = csv_of(&[sample_track("a", Label::Hit)]).replace(",tempo,", ",",);
        let err = read_tracks_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("tempo")), "{err}");
    }

    #[test]
    fn extra_column_is_schema_error() {
        let text = csv_of(&[]).replace("hit\n", "hit,genre\n");
        let err = read_tracks_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("genre")), "{err}");
    }

    #[test]
    fn popularity_out_of_range() {
        let text = csv_of(&[sample_track("a", Label::Hit)]).replace(",64,", ",150,");
        let err = read_tracks_csv(text.as_bytes()).unwrap_err();
        assert!(
            matches!(&err, Error::Validation { field, value, row: Some(0) } if field == "popularity" && value == "150"),
            "{err}"
        );
    }

    #[test]
    fn unparseable_cell_reports_row() {
        let tracks = vec![sample_track("a", Label::Hit), sample_track("b", Label::Hit)];
        let text = csv_of(&tracks).replacen("120.5", "fast", 2).replacen("fast", "120.5", 1);
        let err = read_tracks_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Row { row: 1, .. }), "{err}");
    }

    #[test]
    fn booleans_accept_words_and_digits() {
        let text = csv_of(&[sample_track("a", Label::Hit)]).replace(",true,", ",1,");
        let back = read_tracks_csv(text.as_bytes()).unwrap();
        assert!(back[0].explicit);
    }

    #[test]
    fn feature_matrix_encoding() {
        let m = to_feature_matrix(&[sample_track("a", Label::Hit), sample_track("b", Label::NonHit)]).unwrap();
        assert_eq!(m.n_cols(), 15);
        assert_eq!(m.labels(), &[1, 0]);
        assert_eq!(m.row(0)[0], 1.0, "explicit column");
        assert_eq!(m.track_ids(), &["a".to_string(), "b".to_string()]);
        assert!(matches!(to_feature_matrix(&[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn missing_feature_is_reported() {
        let t = TrackRecord {
            tempo: None,
            ..sample_track("a", Label::Hit)
        };
        assert!(matches!(to_feature_matrix(&[t]), Err(Error::MissingFeature { feature, .. }) if feature == "tempo"));
    }

    fn labelled(n0: usize, n1: usize) -> FeatureMatrix {
        let rows: Vec<Vec<f64>> = (0..n0 + n1).map(|i| vec![i as f64]).collect();
        let labels = (0..n0 + n1).map(|i| u8::from(i >= n0)).collect();
        FeatureMatrix::from_rows(&["x"], &rows, labels).unwrap()
    }

    #[test]
    fn split_seven_three() {
        let m = labelled(5, 5);
        let (train, val) = split(&m, &SplitSpec { seed: 3, ..Default::default() }).unwrap();
        assert_eq!((train.n_rows(), val.n_rows()), (7, 3));
    }

    #[test]
    fn split_is_stratified() {
        let m = labelled(500, 500);
        let (train, _) = split(&m, &SplitSpec::default()).unwrap();
        assert_eq!(train.class_counts(), [350, 350]);
    }

    #[test]
    fn split_deterministic_and_partitioning() {
        let m = labelled(13, 29);
        let spec = SplitSpec { seed: 99, ..Default::default() };
        let (a, b) = split(&m, &spec).unwrap();
        let (a2, b2) = split(&m, &spec).unwrap();
        assert_eq!((a.clone(), b.clone()), (a2, b2));
        let mut all: Vec<String> = a.track_ids().iter().chain(b.track_ids()).cloned().collect();
        all.sort();
        let mut expected = m.track_ids().to_vec();
        expected.sort();
        assert_eq!(all, expected);
        assert_eq!(a.n_rows(), (0.7f64 * 42.0).round() as usize);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split(&labelled(1, 0), &SplitSpec::default()), Err(Error::InsufficientData(_))));
        let bad = SplitSpec { train_fraction: 1.0, ..Default::default() };
        assert!(matches!(split(&labelled(3, 3), &bad), Err(Error::Parameter(_))));
    }

    #[test]
    fn stratified_counts_match_rounding() {
        for n0 in 0..30 {
            for n1 in 0..30 {
                if n0 + n1 == 0 {
                    continue;
                }
                for f in [0.1, 0.3, 0.5, 0.7, 0.9] {
                    let c = stratified_train_counts([n0, n1], f);
                    assert_eq!(c[0] + c[1], (f * (n0 + n1) as f64).round() as usize);
                    assert!(c[0] <= n0 && c[1] <= n1);
                    for (k, size) in [n0, n1].into_iter().enumerate() {
                        assert!((c[k] as f64 - f * size as f64).abs() < 1.0 + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn feature_rows_picks_named_columns() {
        let text = "x,id,explicit,y\n1.5,t1,true,9\n2.5,t2,false,8\n";
        let names = vec!["y".to_string(), "explicit".to_string()];
        let rows = FeatureRows::read_csv(text.as_bytes(), &names).unwrap();
        assert_eq!(rows.ids, vec!["t1", "t2"]);
        assert_eq!(rows.row(0), &[9.0, 1.0]);
        let err = FeatureRows::read_csv(text.as_bytes(), &["tempo".to_string()]).unwrap_err();
        assert!(err.to_string().contains("tempo"));
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = to_feature_matrix(&[sample_track("a", Label::Hit), sample_track("b", Label::NonHit)]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(FeatureMatrix::read_csv(buf.as_slice()).unwrap(), m);
    }
}

#[cfg(test)]
pub(crate) use tests::sample_track;
