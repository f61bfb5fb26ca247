//! Acquisition: year-end charts, hit lookup, random non-hit sampling and
//! audio-feature enrichment over an abstract transport.

#[cfg(feature = "live")]
pub mod live;
pub mod transport;

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{AlbumType, Label, TrackRecord};
use crate::error::{Error, Result};
use crate::rng;

pub use transport::{
    FixtureMode, FixtureStore, MapTransport, RecordingTransport, ReplayTransport, Request, Response, Service, Transport,
};

pub const CHART_PATH: &str = "/charts/hot-100-year-end";
pub const SEARCH_PATH: &str = "/v1/search";
pub const FEATURES_PATH: &str = "/v1/audio-features";
pub const HIT_PAGE_SIZE: usize = 10;
pub const SAMPLE_PAGE_SIZE: usize = 50;
pub const FEATURES_BATCH: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartEntry {
    pub title: String,
    pub artists: Vec<String>,
    pub year: i32,
    pub rank: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub track_id: String,
    pub artist_id: String,
    pub artist: String,
    pub popularity: u8,
    pub explicit: bool,
    pub album_type: AlbumType,
    pub raw: Value,
}

impl Candidate {
    fn to_track(&self, label: Label) -> TrackRecord {
        TrackRecord::bare(&self.track_id, &self.artist, self.popularity, self.explicit, self.album_type, label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResponse {
    pub query: String,
    pub candidates: Vec<Candidate>,
}

fn check_status(request: &Request, response: &Response) -> Result<()> {
    match response.status {
        200 => Ok(()),
        429 | 500..=599 => Err(Error::Transport {
            message: format!("{request}: status {}", response.status),
            retryable: true,
        }),
        s => Err(Error::Transport {
            message: format!("{request}: status {s}"),
            retryable: false,
        }),
    }
}

fn format_err(request: &Request, what: impl std::fmt::Display) -> Error {
    Error::Format(format!("{request}: {what}"))
}

pub fn chart_request(year: i32) -> Request {
    Request::get(Service::Billboard, CHART_PATH, &[("year", &year.to_string())])
}

pub fn search_request(query: &str, limit: usize) -> Request {
    Request::get(
        Service::SpotifySearch,
        SEARCH_PATH,
        &[("q", query), ("type", "track"), ("limit", &limit.to_string())],
    )
}

pub fn features_request(ids: &[&str]) -> Request {
    Request::get(Service::SpotifyFeatures, FEATURES_PATH, &[("ids", &ids.join(","))])
}

fn parse_chart(request: &Request, year: i32, body: &Value) -> Result<Vec<ChartEntry>> {
    #[derive(Deserialize)]
    struct Entry {
        rank: u8,
        title: String,
        artists: Vec<String>,
    }
    #[derive(Deserialize)]
    struct Chart {
        year: i32,
        entries: Vec<Entry>,
    }
    let chart: Chart = serde_json::from_value(body.clone()).map_err(|e| format_err(request, e))?;
    if chart.year != year {
        return Err(format_err(request, format!("chart is for year {}", chart.year)));
    }
    if chart.entries.len() > 100 {
        return Err(format_err(request, format!("{} entries", chart.entries.len())));
    }
    chart
        .entries
        .into_iter()
        .map(|e| {
            if !(1..=100).contains(&e.rank) {
                return Err(format_err(request, format!("rank {}", e.rank)));
            }
            if e.title.trim().is_empty() || e.artists.is_empty() {
                return Err(format_err(request, format!("entry at rank {} lacks title or artist", e.rank)));
            }
            Ok(ChartEntry {
                title: e.title,
                artists: e.artists,
                year,
                rank: e.rank,
            })
        })
        .collect()
}

pub fn fetch_charts<T: Transport + ?Sized>(years: RangeInclusive<i32>, transport: &T) -> Result<Vec<ChartEntry>> {
    if years.is_empty() {
        return Err(Error::Parameter("empty chart year range".into()));
    }
    let mut entries = Vec::new();
    for year in years {
        let request = chart_request(year);
        let response = transport.send(&request)?;
        check_status(&request, &response)?;
        entries.extend(parse_chart(&request, year, &response.body)?);
    }
    Ok(entries)
}

fn parse_candidate(item: &Value) -> std::result::Result<Candidate, String> {
    let str_field = |v: &Value, k: &str| v.get(k).and_then(Value::as_str).map(str::to_string);
    let track_id = str_field(item, "id").ok_or("missing id")?;
    let artists = item.get("artists").and_then(Value::as_array).ok_or("missing artists")?;
    let first = artists.first().ok_or("no artists")?;
    let artist_id = str_field(first, "id").ok_or("artist without id")?;
    let names: Vec<String> = artists.iter().filter_map(|a| str_field(a, "name")).collect();
    let popularity = item
        .get("popularity")
        .and_then(Value::as_u64)
        .filter(|p| *p <= 100)
        .ok_or("popularity missing or out of range")? as u8;
    let explicit = item.get("explicit").and_then(Value::as_bool).ok_or("missing explicit")?;
    let album_type = item
        .get("album")
        .and_then(|a| str_field(a, "album_type"))
        .ok_or("missing album type")?
        .parse::<AlbumType>()
        .map_err(|e| e.to_string())?;
    Ok(Candidate {
        track_id,
        artist_id,
        artist: names.join(", "),
        popularity,
        explicit,
        album_type,
        raw: item.clone(),
    })
}

/// Parse a search page; items that cannot form a valid record are skipped with a warning.
pub fn parse_search(request: &Request, limit: usize, body: &Value) -> Result<SearchResponse> {
    let items = body
        .pointer("/tracks/items")
        .and_then(Value::as_array)
        .ok_or_else(|| format_err(request, "missing tracks.items"))?;
    if items.len() > limit {
        return Err(format_err(request, format!("{} items for page size {limit}", items.len())));
    }
    let mut candidates = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        match parse_candidate(item) {
            Ok(c) => candidates.push(c),
            Err(reason) => log::warn!("{request}: skipping item {i}: {reason}"),
        }
    }
    Ok(SearchResponse {
        query: request.query.get("q").cloned().unwrap_or_default(),
        candidates,
    })
}

pub fn hit_query(entry: &ChartEntry) -> String {
    format!("track:{} artist:{}", entry.title, entry.artists[0])
}

/// Index of the most popular candidate; ties go to the earliest.
pub fn most_popular(candidates: &[Candidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if best.is_none_or(|b| c.popularity > candidates[b].popularity) {
            best = Some(i);
        }
    }
    best
}

fn select_hit(entry: &ChartEntry, request: &Request, response: &Response) -> Result<TrackRecord> {
    check_status(request, response)?;
    let page = parse_search(request, HIT_PAGE_SIZE, &response.body)?;
    match most_popular(&page.candidates) {
        Some(i) => Ok(page.candidates[i].to_track(Label::Hit)),
        None => Err(Error::Unresolved(format!("{} ({} #{})", page.query, entry.year, entry.rank))),
    }
}

pub fn resolve_hit<T: Transport + ?Sized>(entry: &ChartEntry, transport: &T) -> Result<TrackRecord> {
    if entry.title.trim().is_empty() || entry.artists.is_empty() {
        return Err(Error::Parameter("chart entry needs a title and an artist".into()));
    }
    let request = search_request(&hit_query(entry), HIT_PAGE_SIZE);
    let response = transport.send(&request)?;
    select_hit(entry, &request, &response)
}

/// Random lowercase query of 1–3 letters, optionally wildcarded.
pub fn random_query<R: Rng>(rng: &mut R, wildcard: bool) -> String {
    let len = rng.random_range(1..=3);
    let mut q: String = (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
    if wildcard {
        q.push('*');
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingParams {
    pub request_count: usize,
    pub per_request_keep: usize,
    pub seed: u64,
    pub wildcard: bool,
    pub in_flight: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SamplingSummary {
    pub requests: usize,
    pub failed_requests: usize,
    pub sampled: usize,
}

pub fn sampling_requests(params: &SamplingParams) -> Vec<Request> {
    (0..params.request_count)
        .map(|i| {
            let mut rng = rng::indexed_substream(params.seed, rng::SAMPLING, i as u64);
            search_request(&random_query(&mut rng, params.wildcard), SAMPLE_PAGE_SIZE)
        })
        .collect()
}

pub fn sample_random_tracks<T: Transport + ?Sized>(
    params: &SamplingParams,
    transport: &T,
) -> Result<(Vec<TrackRecord>, SamplingSummary)> {
    if params.request_count == 0 {
        return Err(Error::Parameter("request count must be at least 1".into()));
    }
    if params.per_request_keep > SAMPLE_PAGE_SIZE {
        return Err(Error::Parameter(format!(
            "per-request keep {} exceeds page size {SAMPLE_PAGE_SIZE}",
            params.per_request_keep
        )));
    }
    let requests = sampling_requests(params);
    let responses = transport::send_all(transport, &requests, params.in_flight);
    let mut summary = SamplingSummary {
        requests: requests.len(),
        ..Default::default()
    };
    let mut tracks = Vec::new();
    for (i, (request, response)) in requests.iter().zip(responses).enumerate() {
        let page = match response.and_then(|r| check_status(request, &r).map(|_| r)) {
            Ok(r) => parse_search(request, SAMPLE_PAGE_SIZE, &r.body)?,
            Err(e @ Error::Transport { .. }) => {
                log::warn!("skipping sampling request: {e}");
                summary.failed_requests += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        // The query draw consumed the head of this stream; the keep draw continues it.
        let mut rng = rng::indexed_substream(params.seed, rng::SAMPLING, i as u64);
        let _ = random_query(&mut rng, params.wildcard);
        let n = page.candidates.len();
        let mut keep = sample(&mut rng, n, params.per_request_keep.min(n)).into_vec();
        keep.sort_unstable();
        tracks.extend(keep.into_iter().map(|k| page.candidates[k].to_track(Label::NonHit)));
    }
    summary.sampled = tracks.len();
    Ok((tracks, summary))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EnrichSummary {
    pub requested: usize,
    pub enriched: usize,
    pub dropped_null: usize,
    pub dropped_invalid: usize,
}

fn apply_features(track: &mut TrackRecord, f: &Value) -> std::result::Result<(), String> {
    let num = |k: &str| f.get(k).and_then(Value::as_f64).ok_or_else(|| format!("missing {k}"));
    let int = |k: &str| f.get(k).and_then(Value::as_i64).ok_or_else(|| format!("missing {k}"));
    let narrow = |k: &str, v: i64| format!("{k}={v} out of range");
    track.danceability = Some(num("danceability")?);
    track.energy = Some(num("energy")?);
    let key = int("key")?;
    track.key = Some(i8::try_from(key).map_err(|_| narrow("key", key))?);
    track.loudness = Some(num("loudness")?);
    let mode = int("mode")?;
    track.mode = Some(u8::try_from(mode).map_err(|_| narrow("mode", mode))?);
    track.speechiness = Some(num("speechiness")?);
    track.acousticness = Some(num("acousticness")?);
    track.instrumentalness = Some(num("instrumentalness")?);
    track.liveness = Some(num("liveness")?);
    track.valence = Some(num("valence")?);
    track.tempo = Some(num("tempo")?);
    let duration = int("duration_ms")?;
    track.duration_ms = Some(u64::try_from(duration).map_err(|_| narrow("duration_ms", duration))?);
    let ts = int("time_signature")?;
    track.time_signature = Some(u8::try_from(ts).map_err(|_| narrow("time_signature", ts))?);
    track.validate().map_err(|e| e.to_string())
}

/// Fill audio features by id, in batches; null or invalid payloads drop the track.
pub fn enrich_audio_features<T: Transport + ?Sized>(
    tracks: Vec<TrackRecord>,
    transport: &T,
    in_flight: usize,
) -> Result<(Vec<TrackRecord>, EnrichSummary)> {
    if let Some(i) = tracks.iter().position(|t| t.id.is_empty()) {
        return Err(Error::Validation {
            field: "id".into(),
            value: "\"\"".into(),
            row: Some(i),
        });
    }
    let requests: Vec<Request> = tracks
        .chunks(FEATURES_BATCH)
        .map(|chunk| features_request(&chunk.iter().map(|t| t.id.as_str()).collect::<Vec<_>>()))
        .collect();
    let responses = transport::send_all(transport, &requests, in_flight);
    let mut summary = EnrichSummary {
        requested: tracks.len(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(tracks.len());
    let chunks: Vec<Vec<TrackRecord>> = tracks.chunks(FEATURES_BATCH).map(<[_]>::to_vec).collect();
    for ((request, response), chunk) in requests.iter().zip(responses).zip(chunks) {
        let response = response?;
        check_status(request, &response)?;
        let payloads = response
            .body
            .get("audio_features")
            .and_then(Value::as_array)
            .ok_or_else(|| format_err(request, "missing audio_features"))?;
        if payloads.len() != chunk.len() {
            return Err(format_err(
                request,
                format!("{} payloads for {} ids", payloads.len(), chunk.len()),
            ));
        }
        for (mut track, payload) in chunk.into_iter().zip(payloads) {
            if payload.is_null() {
                log::info!("dropping {}: no audio features", track.id);
                summary.dropped_null += 1;
                continue;
            }
            if let Some(id) = payload.get("id").and_then(Value::as_str) {
                if id != track.id {
                    return Err(format_err(request, format!("payload for {id} where {} expected", track.id)));
                }
            }
            match apply_features(&mut track, payload) {
                Ok(()) => out.push(track),
                Err(reason) => {
                    log::warn!("dropping {}: {reason}", track.id);
                    summary.dropped_invalid += 1;
                }
            }
        }
    }
    summary.enriched = out.len();
    Ok((out, summary))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcquisitionParams {
    pub first_year: i32,
    pub last_year: i32,
    pub sampling: SamplingParams,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AcquisitionSummary {
    pub chart_entries: usize,
    pub hits_resolved: usize,
    pub unresolved: usize,
    pub sampling_requests: usize,
    pub failed_sampling_requests: usize,
    pub non_hits_sampled: usize,
    pub dropped_null_features: usize,
    pub dropped_invalid: usize,
    pub hits_written: usize,
    pub non_hits_written: usize,
}

impl AcquisitionSummary {
    pub fn lines(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("chart_entries", self.chart_entries),
            ("hits_resolved", self.hits_resolved),
            ("unresolved", self.unresolved),
            ("sampling_requests", self.sampling_requests),
            ("failed_sampling_requests", self.failed_sampling_requests),
            ("non_hits_sampled", self.non_hits_sampled),
            ("dropped_null_features", self.dropped_null_features),
            ("dropped_invalid", self.dropped_invalid),
            ("hits_written", self.hits_written),
            ("non_hits_written", self.non_hits_written),
        ]
    }
}

/// Full acquisition: hits from the charts, then random non-hits, then features for all.
pub fn acquire<T: Transport + ?Sized>(
    params: &AcquisitionParams,
    transport: &T,
) -> Result<(Vec<TrackRecord>, AcquisitionSummary)> {
    let entries = fetch_charts(params.first_year..=params.last_year, transport)?;
    let requests: Vec<Request> = entries.iter().map(|e| search_request(&hit_query(e), HIT_PAGE_SIZE)).collect();
    let responses = transport::send_all(transport, &requests, params.sampling.in_flight);
    let mut summary = AcquisitionSummary {
        chart_entries: entries.len(),
        ..Default::default()
    };
    let mut tracks = Vec::new();
    for ((entry, request), response) in entries.iter().zip(&requests).zip(responses) {
        match select_hit(entry, request, &response?) {
            Ok(track) => tracks.push(track),
            Err(Error::Unresolved(what)) => {
                log::info!("unresolved chart entry: {what}");
                summary.unresolved += 1;
            }
            Err(e) => return Err(e),
        }
    }
    summary.hits_resolved = tracks.len();

    let (non_hits, sampling) = sample_random_tracks(&params.sampling, transport)?;
    summary.sampling_requests = sampling.requests;
    summary.failed_sampling_requests = sampling.failed_requests;
    summary.non_hits_sampled = sampling.sampled;
    tracks.extend(non_hits);

    let (tracks, enrich) = enrich_audio_features(tracks, transport, params.sampling.in_flight)?;
    summary.dropped_null_features = enrich.dropped_null;
    summary.dropped_invalid = enrich.dropped_invalid;
    summary.hits_written = tracks.iter().filter(|t| t.is_hit()).count();
    summary.non_hits_written = tracks.len() - summary.hits_written;
    Ok((tracks, summary))
}

/// Count of chart entries per year, for reporting.
pub fn entries_per_year(entries: &[ChartEntry]) -> BTreeMap<i32, usize> {
    let mut counts = BTreeMap::new();
    for e in entries {
        *counts.entry(e.year).or_insert(0) += 1;
    }
    counts
}
