//! Analyzer and detector service clients.
//!
//! Two backends share the [`GroundingServices`] trait: a blocking HTTP client
//! for live services, and a fixture replayer that maps each canonical request
//! to a recorded response.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const ANALYZE_ENDPOINT: &str = "/analyze";
pub const DETECT_ENDPOINT: &str = "/detect";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("service unreachable: {0}")]
    Unreachable(String),

    #[error("service timed out: {0}")]
    Timeout(String),

    #[error("service protocol error: {0}")]
    Protocol(String),

    #[error("no fixture recorded for {endpoint} {request}")]
    MissingFixture { endpoint: String, request: String },

    #[error("cannot load fixtures from {path}: {reason}")]
    FixtureLoad { path: String, reason: String },
}

impl ServiceError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ServiceError::Unreachable(_) | ServiceError::Timeout(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeResponse {
    pub objects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub video_ref: String,
    pub frame_index: usize,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub box_xyxy: [f64; 4],
    pub score: f64,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub detections: Vec<RawDetection>,
}

pub trait GroundingServices: Send + Sync {
    fn analyze(&self, req: &AnalyzeRequest) -> Result<AnalyzeResponse, ServiceError>;
    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, ServiceError>;
}

/// Retries retryable failures up to `max_retries` extra times, sleeping
/// `backoff * attempt` between tries.
pub fn with_retries<T>(
    max_retries: u32,
    backoff: Duration,
    mut call: impl FnMut() -> Result<T, ServiceError>,
) -> Result<T, ServiceError> {
    let mut attempt = 0;
    loop {
        match call() {
            Err(e) if e.is_retryable() && attempt < max_retries => {
                attempt += 1;
                log::warn!("retrying after {e} (attempt {attempt}/{max_retries})");
                if !backoff.is_zero() {
                    thread::sleep(backoff * attempt);
                }
            }
            other => return other,
        }
    }
}

/// Sorts object keys recursively so logically equal requests compare equal.
pub fn canonical_json(value: &Value) -> String {
    fn sorted(v: &Value) -> Value {
        match v {
            Value::Object(map) => {
                let mut entries: Vec<_> = map.iter().collect();
                entries.sort_by(|a, b| a.0.cmp(b.0));
                Value::Object(entries.into_iter().map(|(k, v)| (k.clone(), sorted(v))).collect())
            }
            Value::Array(items) => Value::Array(items.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    sorted(value).to_string()
}

/// Blocking JSON-over-HTTP client.
pub struct HttpServices {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpServices {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        endpoint: &str,
        req: &Req,
    ) -> Result<Resp, ServiceError> {
        let url = format!("{}{endpoint}", self.base_url);
        let body = serde_json::to_string(req).map_err(|e| ServiceError::Protocol(e.to_string()))?;
        let mut resp = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| map_transport_error(&url, e))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| map_transport_error(&url, e))?;
        serde_json::from_str(&text)
            .map_err(|e| ServiceError::Protocol(format!("{url}: malformed response: {e}")))
    }
}

fn map_transport_error(url: &str, e: ureq::Error) -> ServiceError {
    match e {
        ureq::Error::Timeout(_) => ServiceError::Timeout(url.to_string()),
        ureq::Error::StatusCode(code) if code >= 500 || code == 429 => {
            ServiceError::Unreachable(format!("{url}: HTTP {code}"))
        }
        ureq::Error::StatusCode(code) => ServiceError::Protocol(format!("{url}: HTTP {code}")),
        ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            ServiceError::Unreachable(format!("{url}: {e}"))
        }
        other => ServiceError::Protocol(format!("{url}: {other}")),
    }
}

impl GroundingServices for HttpServices {
    fn analyze(&self, req: &AnalyzeRequest) -> Result<AnalyzeResponse, ServiceError> {
        self.post(ANALYZE_ENDPOINT, req)
    }

    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, ServiceError> {
        self.post(DETECT_ENDPOINT, req)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub endpoint: String,
    pub request: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<Value>,
    /// Replays a failure instead of a response: `"timeout"` or `"unreachable"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FixtureFile {
    pub entries: Vec<FixtureEntry>,
}

enum Replay {
    Response(Value),
    Failure(String),
}

/// Replays recorded service traffic.
pub struct MockServices {
    table: HashMap<String, Replay>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    log: Mutex<Vec<String>>,
}

impl MockServices {
    pub fn from_fixtures(fixtures: FixtureFile) -> Result<Self, ServiceError> {
        let mut table = HashMap::with_capacity(fixtures.entries.len());
        for e in fixtures.entries {
            let replay = match (e.response, e.error) {
                (Some(r), None) => Replay::Response(r),
                (None, Some(err)) => Replay::Failure(err),
                _ => {
                    return Err(ServiceError::FixtureLoad {
                        path: "<memory>".into(),
                        reason: format!(
                            "entry for {} {} needs exactly one of response/error",
                            e.endpoint, e.request
                        ),
                    })
                }
            };
            table.insert(fixture_key(&e.endpoint, &e.request), replay);
        }
        Ok(Self {
            table,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let load_err = |reason: String| ServiceError::FixtureLoad {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        let fixtures: FixtureFile = serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))?;
        Self::from_fixtures(fixtures).map_err(|e| match e {
            ServiceError::FixtureLoad { reason, .. } => load_err(reason),
            other => other,
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of calls observed in progress at once.
    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    /// Fixture keys in call order (order across threads is not deterministic).
    pub fn call_log(&self) -> Vec<String> {
        self.log.lock().expect("log lock").clone()
    }

    fn replay<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        endpoint: &str,
        req: &Req,
    ) -> Result<Resp, ServiceError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        let result = self.lookup(endpoint, req);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }

    fn lookup<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        endpoint: &str,
        req: &Req,
    ) -> Result<Resp, ServiceError> {
        let request = serde_json::to_value(req).map_err(|e| ServiceError::Protocol(e.to_string()))?;
        let key = fixture_key(endpoint, &request);
        self.log.lock().expect("log lock").push(key.clone());
        match self.table.get(&key) {
            None => Err(ServiceError::MissingFixture {
                endpoint: endpoint.to_string(),
                request: canonical_json(&request),
            }),
            Some(Replay::Failure(kind)) => Err(match kind.as_str() {
                "timeout" => ServiceError::Timeout(format!("{endpoint} (fixture)")),
                "unreachable" => ServiceError::Unreachable(format!("{endpoint} (fixture)")),
                other => ServiceError::Protocol(format!("{endpoint}: {other}")),
            }),
            Some(Replay::Response(v)) => serde_json::from_value(v.clone())
                .map_err(|e| ServiceError::Protocol(format!("{endpoint}: malformed response: {e}"))),
        }
    }
}

fn fixture_key(endpoint: &str, request: &Value) -> String {
    format!("{endpoint} {}", canonical_json(request))
}

impl GroundingServices for MockServices {
    fn analyze(&self, req: &AnalyzeRequest) -> Result<AnalyzeResponse, ServiceError> {
        self.replay(ANALYZE_ENDPOINT, req)
    }

    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, ServiceError> {
        self.replay(DETECT_ENDPOINT, req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_json_sorts_keys() {
        let a = json!({"b": 1, "a": {"d": [1, {"z": 0, "y": 1}], "c": "x"}});
        assert_eq!(canonical_json(&a), r#"{"a":{"c":"x","d":[1,{"y":1,"z":0}]},"b":1}"#);
    }

    #[test]
    fn mock_replays_and_reports_missing() {
        let fixtures = FixtureFile {
            entries: vec![FixtureEntry {
                endpoint: ANALYZE_ENDPOINT.into(),
                request: json!({"caption": "a dog"}),
                response: Some(json!({"objects": ["dog"]})),
                error: None,
            }],
        };
        let mock = MockServices::from_fixtures(fixtures).unwrap();
        let resp = mock.analyze(&AnalyzeRequest { caption: "a dog".into() }).unwrap();
        assert_eq!(resp.objects, vec!["dog"]);
        let err = mock.analyze(&AnalyzeRequest { caption: "a cat".into() }).unwrap_err();
        assert!(matches!(err, ServiceError::MissingFixture { .. }));
        assert!(!err.is_retryable());
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn malformed_fixture_response_is_protocol_error() {
        let fixtures = FixtureFile {
            entries: vec![FixtureEntry {
                endpoint: ANALYZE_ENDPOINT.into(),
                request: json!({"caption": "x"}),
                response: Some(json!({"things": 3})),
                error: None,
            }],
        };
        let mock = MockServices::from_fixtures(fixtures).unwrap();
        assert!(matches!(
            mock.analyze(&AnalyzeRequest { caption: "x".into() }),
            Err(ServiceError::Protocol(_))
        ));
    }

    #[test]
    fn fixture_entries_need_one_outcome() {
        let both = FixtureFile {
            entries: vec![FixtureEntry {
                endpoint: ANALYZE_ENDPOINT.into(),
                request: json!({"caption": "x"}),
                response: Some(json!({"objects": []})),
                error: Some("timeout".into()),
            }],
        };
        assert!(MockServices::from_fixtures(both).is_err());
    }

    #[test]
    fn retries_only_retryable_errors() {
        let mut n = 0;
        let r: Result<(), _> = with_retries(2, Duration::ZERO, || {
            n += 1;
            Err(ServiceError::Timeout("t".into()))
        });
        assert!(matches!(r, Err(ServiceError::Timeout(_))));
        assert_eq!(n, 3);

        let mut n = 0;
        let r: Result<(), _> = with_retries(2, Duration::ZERO, || {
            n += 1;
            Err(ServiceError::Protocol("p".into()))
        });
        assert!(r.is_err());
        assert_eq!(n, 1);

        let mut n = 0;
        let r = with_retries(2, Duration::ZERO, || {
            n += 1;
            if n < 2 {
                Err(ServiceError::Unreachable("u".into()))
            } else {
                Ok(n)
            }
        });
        assert_eq!(r.unwrap(), 2);
    }

    #[test]
    fn missing_fixture_file() {
        let err = MockServices::load(Path::new("/nonexistent/fixtures.json")).err().unwrap();
        assert!(matches!(err, ServiceError::FixtureLoad { .. }));
    }
}
