//! Synthetic chart and track catalog served through the transport interface.
//!
//! Answers the same three endpoints as the real services, deterministically
//! from `(seed, request)`. Chart hits and randomly sampled tracks draw their
//! audio features from different distributions, so the data carries a
//! learnable but noisy signal. Recording a run against it produces a fixture
//! set that replays offline.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::TrackRecord;
use crate::error::Result;
use crate::ingest::{
    self, AcquisitionParams, AcquisitionSummary, RecordingTransport, Request, Response, SamplingParams, Service,
    Transport, CHART_PATH, FEATURES_PATH, SEARCH_PATH,
};

const WORDS: [&str; 32] = [
    "love", "night", "fire", "heart", "dance", "summer", "gold", "rain", "city", "dream", "wild", "blue", "home",
    "light", "money", "girl", "boy", "road", "shadow", "sugar", "ocean", "young", "forever", "midnight", "paradise",
    "electric", "broken", "lonely", "sweet", "thunder", "diamond", "river",
];
const ARTIST_POOL: u64 = 260;
const BASE62: &[u8] = b"0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub first_year: i32,
    pub last_year: i32,
    pub sample_requests: usize,
    pub keep_per_request: usize,
    pub unresolved_rate: f64,
    pub null_feature_rate: f64,
    pub repeat_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 2024,
            first_year: 2020,
            last_year: 2021,
            sample_requests: 180,
            keep_per_request: 10,
            unresolved_rate: 0.06,
            null_feature_rate: 0.02,
            repeat_rate: 0.08,
        }
    }
}

impl SynthConfig {
    pub fn acquisition(&self, in_flight: usize) -> AcquisitionParams {
        AcquisitionParams {
            first_year: self.first_year,
            last_year: self.last_year,
            sampling: SamplingParams {
                request_count: self.sample_requests,
                per_request_keep: self.keep_per_request,
                seed: self.seed,
                wildcard: true,
                in_flight,
            },
        }
    }
}

fn stream(seed: u64, tag: &str, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update([0u8]);
    h.update(key.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn track_id(seed: u64, tag: &str, key: &str) -> String {
    let mut rng = stream(seed, tag, key);
    (0..22).map(|_| BASE62[rng.random_range(0..BASE62.len())] as char).collect()
}

fn normal<R: Rng>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("positive sd").sample(rng)
}

fn unit<R: Rng>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    normal(rng, mean, sd).clamp(0.0, 1.0)
}

fn round(v: f64, places: i32) -> f64 {
    let p = 10f64.powi(places);
    (v * p).round() / p
}

/// Catalog-level attributes shared by the search and features endpoints.
#[derive(Debug, Clone, Copy)]
struct TrackProfile {
    hit: bool,
    popularity_cap: Option<u8>,
}

pub struct SyntheticCatalog {
    config: SynthConfig,
    profiles: Mutex<HashMap<String, TrackProfile>>,
}

impl SyntheticCatalog {
    pub fn new(config: SynthConfig) -> Self {
        SyntheticCatalog {
            config,
            profiles: Mutex::new(HashMap::new()),
        }
    }

    fn register(&self, id: &str, profile: TrackProfile) {
        self.profiles.lock().expect("profiles poisoned").entry(id.to_string()).or_insert(profile);
    }

    fn chart(&self, year: i32) -> Vec<(u8, String, Vec<String>)> {
        let seed = self.config.seed;
        let mut rng = stream(seed, "chart", &year.to_string());
        let previous = if year > self.config.first_year { Some(self.chart(year - 1)) } else { None };
        (1..=100u8)
            .map(|rank| {
                if let Some(prev) = &previous {
                    if rng.random_bool(self.config.repeat_rate) {
                        let (_, title, artists) = &prev[rng.random_range(0..prev.len())];
                        return (rank, title.clone(), artists.clone());
                    }
                }
                let words = rng.random_range(1..=3);
                let title: Vec<String> = (0..words)
                    .map(|_| {
                        let w = WORDS[rng.random_range(0..WORDS.len())];
                        let mut c = w.chars();
                        c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
                    })
                    .collect();
                let title = format!("{} {}", title.join(" "), rng.random_range(1..1000));
                let mut artists = vec![format!("Artist {}", rng.random_range(0..ARTIST_POOL))];
                if rng.random_bool(0.25) {
                    artists.push(format!("Artist {}", rng.random_range(0..ARTIST_POOL)));
                }
                (rank, title, artists)
            })
            .collect()
    }

    fn track_payload(&self, id: &str, name: &str, artist: &str, profile: TrackProfile) -> Value {
        let seed = self.config.seed;
        let mut rng = stream(seed, "meta", id);
        let popularity = if profile.hit {
            normal(&mut rng, 62.0, 15.0)
        } else {
            normal(&mut rng, 42.0, 20.0)
        }
        .round()
        .clamp(0.0, 100.0) as u8;
        let popularity = profile.popularity_cap.map_or(popularity, |cap| popularity.min(cap));
        let explicit = rng.random_bool(if profile.hit { 0.3 } else { 0.2 });
        let r: f64 = rng.random();
        let album_type = match (profile.hit, r) {
            (true, r) if r < 0.55 => "single",
            (true, r) if r < 0.98 => "album",
            (false, r) if r < 0.30 => "single",
            (false, r) if r < 0.90 => "album",
            _ => "compilation",
        };
        let features = self.features(id, profile.hit);
        json!({
            "id": id,
            "name": name,
            "popularity": popularity,
            "explicit": explicit,
            "duration_ms": features["duration_ms"],
            "artists": [{"id": track_id(seed, "artist", artist), "name": artist}],
            "album": {"album_type": album_type}
        })
    }

    fn features(&self, id: &str, hit: bool) -> Value {
        let mut rng = stream(self.config.seed, "features", id);
        // Two latent factors drive the correlated features: intensity
        // (energy, loudness, acousticness) and mood (danceability, valence).
        let shift = if hit { 1.0 } else { 0.0 };
        let intensity = normal(&mut rng, 0.35 * shift, 1.0);
        let mood = normal(&mut rng, 0.3 * shift, 1.0);
        let energy = unit(&mut rng, 0.58 + 0.16 * intensity, 0.08);
        let loud = normal(&mut rng, -8.0 + 2.6 * intensity, 1.5);
        let acoustic = unit(&mut rng, 0.32 - 0.2 * intensity, 0.12);
        let dance = unit(&mut rng, 0.58 + 0.09 * mood, 0.09);
        let valence = unit(&mut rng, 0.45 + 0.14 * mood + 0.05 * intensity, 0.12);
        let speech = unit(&mut rng, 0.09 + 0.02 * shift, 0.08).max(0.022);
        let live = unit(&mut rng, 0.19, 0.12).max(0.02);
        let tempo = normal(&mut rng, 119.0 + 2.0 * intensity, 28.0);
        let dur = if hit {
            normal(&mut rng, 218_000.0, 40_000.0)
        } else {
            normal(&mut rng, 232_000.0, 60_000.0)
        };
        let instrumental = if rng.random_bool(if hit { 0.9 } else { 0.65 }) {
            rng.random_range(0.0..0.01)
        } else {
            rng.random_range(0.0..1.0)
        };
        let key: i64 = if rng.random_bool(0.01) { -1 } else { rng.random_range(0..12) };
        let mode = i64::from(rng.random_bool(if hit { 0.6 } else { 0.66 }));
        let r: f64 = rng.random();
        let time_signature = match (hit, r) {
            (true, r) if r < 0.95 => 4,
            (true, _) => 3,
            (false, r) if r < 0.88 => 4,
            (false, r) if r < 0.96 => 3,
            (false, r) if r < 0.98 => 5,
            _ => 1,
        };
        json!({
            "id": id,
            "danceability": round(dance, 3),
            "energy": round(energy, 3),
            "key": key,
            "loudness": round(loud.clamp(-40.0, 0.0), 3),
            "mode": mode,
            "speechiness": round(speech, 4),
            "acousticness": round(acoustic, 4),
            "instrumentalness": round(instrumental, 5),
            "liveness": round(live, 4),
            "valence": round(valence, 3),
            "tempo": round(tempo.clamp(40.0, 220.0), 3),
            "duration_ms": dur.clamp(60_000.0, 600_000.0).round() as u64,
            "time_signature": time_signature
        })
    }

    fn search_hit(&self, q: &str, title: &str, artist: &str, limit: usize) -> Value {
        let seed = self.config.seed;
        let mut rng = stream(seed, "hit-search", q);
        if rng.random_bool(self.config.unresolved_rate) {
            return json!({"tracks": {"items": []}});
        }
        let n = rng.random_range(1..=limit);
        let original_at = rng.random_range(0..n);
        let original = track_id(seed, "hit", &format!("{title}\u{1f}{artist}"));
        let profile = TrackProfile {
            hit: true,
            popularity_cap: None,
        };
        self.register(&original, profile);
        let original_payload = self.track_payload(&original, title, artist, profile);
        let cap = original_payload["popularity"].as_u64().unwrap_or(0) as u8;
        let items: Vec<Value> = (0..n)
            .map(|i| {
                if i == original_at {
                    return original_payload.clone();
                }
                let id = track_id(seed, "cover", &format!("{q}\u{1f}{i}"));
                let profile = TrackProfile {
                    hit: false,
                    popularity_cap: Some(cap.saturating_sub(1 + i as u8)),
                };
                self.register(&id, profile);
                let by = format!("Artist {}", rng.random_range(0..ARTIST_POOL * 4));
                self.track_payload(&id, &format!("{title} (cover)"), &by, profile)
            })
            .collect();
        json!({"tracks": {"items": items}})
    }

    fn search_random(&self, q: &str, limit: usize) -> Value {
        let seed = self.config.seed;
        let mut rng = stream(seed, "random-search", q);
        let letters = q.trim_end_matches('*').len();
        let n = if letters < 3 { limit } else { rng.random_range(limit / 2..=limit) };
        let profile = TrackProfile {
            hit: false,
            popularity_cap: None,
        };
        let items: Vec<Value> = (0..n)
            .map(|i| {
                let id = track_id(seed, "track", &format!("{q}\u{1f}{i}"));
                self.register(&id, profile);
                let artist = format!("Artist {}", rng.random_range(0..ARTIST_POOL * 20));
                self.track_payload(&id, &format!("{} {i}", q.trim_end_matches('*')), &artist, profile)
            })
            .collect();
        json!({"tracks": {"items": items}})
    }

    fn audio_features(&self, ids: &str) -> Value {
        let profiles = self.profiles.lock().expect("profiles poisoned").clone();
        let payloads: Vec<Value> = ids
            .split(',')
            .map(|id| match profiles.get(id) {
                Some(p) if !stream(self.config.seed, "null", id).random_bool(self.config.null_feature_rate) => {
                    self.features(id, p.hit)
                }
                _ => Value::Null,
            })
            .collect();
        json!({"audio_features": payloads})
    }
}

fn bad_request(message: &str) -> Response {
    Response {
        status: 400,
        body: json!({"error": {"status": 400, "message": message}}),
    }
}

impl Transport for SyntheticCatalog {
    fn send(&self, request: &Request) -> Result<Response> {
        let q = |k: &str| request.query.get(k).map(String::as_str);
        match (request.service, request.path.as_str()) {
            (Service::Billboard, CHART_PATH) => {
                let Some(year) = q("year").and_then(|y| y.parse::<i32>().ok()) else {
                    return Ok(bad_request("year required"));
                };
                let entries: Vec<Value> = self
                    .chart(year)
                    .into_iter()
                    .map(|(rank, title, artists)| json!({"rank": rank, "title": title, "artists": artists}))
                    .collect();
                Ok(Response::ok(json!({"year": year, "entries": entries})))
            }
            (Service::SpotifySearch, SEARCH_PATH) => {
                let (Some(query), Some(limit)) = (q("q"), q("limit").and_then(|l| l.parse::<usize>().ok())) else {
                    return Ok(bad_request("q and limit required"));
                };
                let limit = limit.clamp(1, 50);
                let body = match query.strip_prefix("track:").and_then(|rest| rest.split_once(" artist:")) {
                    Some((title, artist)) => self.search_hit(query, title, artist, limit),
                    None => self.search_random(query, limit),
                };
                Ok(Response::ok(body))
            }
            (Service::SpotifyFeatures, FEATURES_PATH) => match q("ids") {
                Some(ids) => Ok(Response::ok(self.audio_features(ids))),
                None => Ok(bad_request("ids required")),
            },
            _ => Ok(Response {
                status: 404,
                body: json!({"error": {"status": 404, "message": "unknown endpoint"}}),
            }),
        }
    }
}

/// Run a full acquisition against the synthetic catalog, recording fixtures under `dir`.
pub fn write_fixtures(dir: &Path, config: &SynthConfig) -> Result<(Vec<TrackRecord>, AcquisitionSummary)> {
    let recorder = RecordingTransport::new(SyntheticCatalog::new(config.clone()), dir);
    // Search must precede feature lookups for the catalog to know each id, which
    // the acquisition order guarantees.
    ingest::acquire(&config.acquisition(8), &recorder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ReplayTransport;

    fn small() -> SynthConfig {
        SynthConfig {
            first_year: 2020,
            last_year: 2020,
            sample_requests: 20,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn recorded_fixtures_replay_identically() {
        let dir = tempfile::tempdir().unwrap();
        let config = small();
        let (recorded, summary) = write_fixtures(dir.path(), &config).unwrap();
        assert_eq!(summary.chart_entries, 100);
        assert!(summary.hits_written > 70);
        assert!(summary.non_hits_written > 150);
        let replay = ReplayTransport::new(dir.path()).unwrap();
        let (replayed, again) = ingest::acquire(&config.acquisition(3), &replay).unwrap();
        assert_eq!(recorded, replayed);
        assert_eq!(summary, again);
    }

    #[test]
    fn hits_differ_from_non_hits() {
        let dir = tempfile::tempdir().unwrap();
        let (tracks, _) = write_fixtures(dir.path(), &small()).unwrap();
        let mean = |hit: bool, f: fn(&TrackRecord) -> f64| {
            let v: Vec<f64> = tracks.iter().filter(|t| t.is_hit() == hit).map(f).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(true, |t| t.popularity as f64) > mean(false, |t| t.popularity as f64) + 10.0);
        assert!(mean(true, |t| t.loudness.unwrap()) > mean(false, |t| t.loudness.unwrap()));
        assert!(tracks.iter().all(|t| t.validate().is_ok()));
    }
}
