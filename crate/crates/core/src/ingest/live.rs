//! HTTP transport against the real services (client-credentials auth).

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::Value;

use super::transport::{with_retries, RateLimiter, Request, Response, Service, Transport};
use crate::error::{Error, Result};

pub const SPOTIFY_API: &str = "https://api.spotify.com";
pub const SPOTIFY_TOKEN_URL: &str = "https://accounts.spotify.com/api/token";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub chart_base_url: String,
    pub requests_per_second: f64,
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            chart_base_url: "http://localhost:8080".into(),
            requests_per_second: 5.0,
            max_retries: 5,
            backoff_base: Duration::from_millis(500),
        }
    }
}

pub struct LiveTransport {
    client: reqwest::blocking::Client,
    config: LiveConfig,
    limiter: RateLimiter,
    client_id: String,
    client_secret: String,
    token: Mutex<Option<(String, Instant)>>,
}

fn transport_err(message: impl std::fmt::Display, retryable: bool) -> Error {
    Error::Transport {
        message: message.to_string(),
        retryable,
    }
}

impl LiveTransport {
    /// Reads `SPOTIFY_CLIENT_ID` and `SPOTIFY_CLIENT_SECRET`.
    pub fn from_env(config: LiveConfig) -> Result<Self> {
        let var = |name: &str| {
            std::env::var(name)
                .ok()
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::Credentials(format!("{name} is not set")))
        };
        let client_id = var("SPOTIFY_CLIENT_ID")?;
        let client_secret = var("SPOTIFY_CLIENT_SECRET")?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| transport_err(e, false))?;
        let limiter = RateLimiter::new(config.requests_per_second, config.requests_per_second.max(1.0));
        Ok(LiveTransport {
            client,
            config,
            limiter,
            client_id,
            client_secret,
            token: Mutex::new(None),
        })
    }

    fn bearer(&self) -> Result<String> {
        let mut token = self.token.lock().expect("token lock poisoned");
        if let Some((t, expires)) = token.as_ref() {
            if Instant::now() < *expires {
                return Ok(t.clone());
            }
        }
        let response = self
            .client
            .post(SPOTIFY_TOKEN_URL)
            .basic_auth(&self.client_id, Some(&self.client_secret))
            .form(&[("grant_type", "client_credentials")])
            .send()
            .map_err(|e| transport_err(e, true))?;
        if response.status().as_u16() == 400 || response.status().as_u16() == 401 {
            return Err(Error::Credentials(format!("token request rejected: {}", response.status())));
        }
        let body: Value = response.json().map_err(|e| transport_err(e, true))?;
        let access = body
            .get("access_token")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Credentials("token response without access_token".into()))?
            .to_string();
        let ttl = body.get("expires_in").and_then(Value::as_u64).unwrap_or(3600);
        *token = Some((access.clone(), Instant::now() + Duration::from_secs(ttl.saturating_sub(60))));
        Ok(access)
    }

    fn send_once(&self, request: &Request) -> Result<Response> {
        self.limiter.acquire();
        let url = match request.service {
            Service::Billboard => format!("{}{}", self.config.chart_base_url.trim_end_matches('/'), request.path),
            Service::SpotifySearch | Service::SpotifyFeatures => format!("{SPOTIFY_API}{}", request.path),
        };
        let mut builder = self.client.get(&url).query(&request.query);
        if request.service != Service::Billboard {
            builder = builder.bearer_auth(self.bearer()?);
        }
        let response = builder.send().map_err(|e| transport_err(format!("{request}: {e}"), true))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            if let Some(wait) = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok())
            {
                std::thread::sleep(Duration::from_secs(wait));
            }
            return Err(transport_err(format!("{request}: status {status}"), true));
        }
        if status == 401 {
            *self.token.lock().expect("token lock poisoned") = None;
            return Err(transport_err(format!("{request}: unauthorized"), true));
        }
        let body: Value = response.json().map_err(|e| Error::Format(format!("{request}: {e}")))?;
        Ok(Response { status, body })
    }
}

impl Transport for LiveTransport {
    fn send(&self, request: &Request) -> Result<Response> {
        with_retries(self.config.max_retries, self.config.backoff_base, || self.send_once(request))
    }
}
