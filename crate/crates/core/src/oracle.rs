//! Pluggable causal-knowledge oracle. Answers templated pairwise causal
//! queries and cluster-topic queries through one of three backends:
//! record/replay (the primary, fully deterministic path), an explicit
//! rule file, or a generic HTTP endpoint.
//!
//! Query templates are versioned through the canonical key itself: any
//! template change invalidates stale replay files loudly instead of
//! silently answering the wrong question.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("replay miss for key: {0}")]
    ReplayMiss(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed oracle file: {0}")]
    Malformed(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
    Unknown,
}

/// One oracle response. Unknown always carries zero confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub answer: Answer,
    pub confidence: f64,
    /// Verbatim backend response.
    pub raw: String,
}

impl OracleVerdict {
    pub fn yes(confidence: f64, raw: impl Into<String>) -> Self {
        OracleVerdict {
            answer: Answer::Yes,
            confidence,
            raw: raw.into(),
        }
    }

    pub fn no(confidence: f64, raw: impl Into<String>) -> Self {
        OracleVerdict {
            answer: Answer::No,
            confidence,
            raw: raw.into(),
        }
    }

    pub fn unknown(raw: impl Into<String>) -> Self {
        OracleVerdict {
            answer: Answer::Unknown,
            confidence: 0.0,
            raw: raw.into(),
        }
    }
}

fn normalize_label(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// A templated pairwise causal question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalQuery {
    pub cause_label: String,
    pub effect_label: String,
}

impl CausalQuery {
    pub fn new(cause: impl Into<String>, effect: impl Into<String>) -> Self {
        CausalQuery {
            cause_label: cause.into(),
            effect_label: effect.into(),
        }
    }

    /// The exact lookup/template key, lowercase and whitespace-normalized.
    pub fn canonical_key(&self) -> String {
        format!(
            "does {} causally affect {}?",
            normalize_label(&self.cause_label),
            normalize_label(&self.effect_label)
        )
    }
}

/// A cluster-topic question; order-insensitive in its member labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicQuery {
    pub member_labels: Vec<String>,
}

impl TopicQuery {
    pub fn new(labels: impl IntoIterator<Item = impl Into<String>>) -> Self {
        TopicQuery {
            member_labels: labels.into_iter().map(Into::into).collect(),
        }
    }

    pub fn canonical_key(&self) -> String {
        let mut labels: Vec<String> =
            self.member_labels.iter().map(|l| normalize_label(l)).collect();
        labels.sort();
        format!("topic: {}", labels.join(", "))
    }
}

pub trait OracleBackend: Send + Sync {
    fn causal(&self, query: &CausalQuery) -> Result<OracleVerdict, OracleError>;
    fn topic(&self, query: &TopicQuery) -> Result<String, OracleError>;
    fn name(&self) -> &'static str;
}

/// Ask a causal question; self-causation is rejected before any backend
/// dispatch.
pub fn query_causal(
    backend: &dyn OracleBackend,
    query: &CausalQuery,
) -> Result<OracleVerdict, OracleError> {
    if normalize_label(&query.cause_label) == normalize_label(&query.effect_label) {
        return Ok(OracleVerdict::no(1.0, "self-causation rejected"));
    }
    backend.causal(query)
}

/// Ask for a cluster topic; singleton clusters pass their label through
/// unchanged (normalized), skipping the backend.
pub fn query_topic(backend: &dyn OracleBackend, query: &TopicQuery) -> Result<String, OracleError> {
    assert!(!query.member_labels.is_empty(), "topic query needs labels");
    if query.member_labels.len() == 1 {
        return Ok(normalize_label(&query.member_labels[0]));
    }
    backend.topic(query)
}

/// One stored replay answer: "yes"/"no" for causal keys, the topic string
/// for topic keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub answer: String,
    pub confidence: f64,
}

/// Exact-lookup backend over a recorded answer map.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    entries: BTreeMap<String, ReplayEntry>,
    /// In strict mode a missing key is an error instead of Unknown.
    pub strict: bool,
}

impl ReplayBackend {
    pub fn from_map(entries: BTreeMap<String, ReplayEntry>, strict: bool) -> Self {
        ReplayBackend { entries, strict }
    }

    pub fn from_file(path: &Path, strict: bool) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path)?;
        let entries: BTreeMap<String, ReplayEntry> = serde_json::from_str(&text)?;
        Ok(ReplayBackend { entries, strict })
    }
}

impl OracleBackend for ReplayBackend {
    fn causal(&self, query: &CausalQuery) -> Result<OracleVerdict, OracleError> {
        let key = query.canonical_key();
        match self.entries.get(&key) {
            Some(e) => Ok(match e.answer.to_lowercase().as_str() {
                "yes" => OracleVerdict::yes(e.confidence, e.answer.clone()),
                "no" => OracleVerdict::no(e.confidence, e.answer.clone()),
                _ => OracleVerdict::unknown(e.answer.clone()),
            }),
            None if self.strict => Err(OracleError::ReplayMiss(key)),
            None => Ok(OracleVerdict::unknown("replay-miss")),
        }
    }

    fn topic(&self, query: &TopicQuery) -> Result<String, OracleError> {
        let key = query.canonical_key();
        match self.entries.get(&key) {
            Some(e) => Ok(normalize_label(&e.answer)),
            None if self.strict => Err(OracleError::ReplayMiss(key)),
            // A missing topic falls back to the deterministic heuristic so
            // the pipeline stays total.
            None => Ok(heuristic_topic(&query.member_labels)),
        }
    }

    fn name(&self) -> &'static str {
        "replay"
    }
}

/// Rule-file backend: a causal query answers Yes iff the ordered label
/// pair is listed. Keeps fixtures honest instead of simulating a model.
#[derive(Debug, Clone, Default)]
pub struct HeuristicBackend {
    yes_pairs: BTreeSet<(String, String)>,
}

impl HeuristicBackend {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        HeuristicBackend {
            yes_pairs: pairs
                .into_iter()
                .map(|(a, b)| (normalize_label(&a), normalize_label(&b)))
                .collect(),
        }
    }

    /// Rules file: a JSON array of `[cause, effect]` label pairs.
    pub fn from_file(path: &Path) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path)?;
        let pairs: Vec<(String, String)> = serde_json::from_str(&text)?;
        Ok(HeuristicBackend::new(pairs))
    }
}

impl OracleBackend for HeuristicBackend {
    fn causal(&self, query: &CausalQuery) -> Result<OracleVerdict, OracleError> {
        let pair = (
            normalize_label(&query.cause_label),
            normalize_label(&query.effect_label),
        );
        if self.yes_pairs.contains(&pair) {
            Ok(OracleVerdict::yes(1.0, "rule: listed pair"))
        } else {
            Ok(OracleVerdict::no(1.0, "rule: unlisted pair"))
        }
    }

    fn topic(&self, query: &TopicQuery) -> Result<String, OracleError> {
        Ok(heuristic_topic(&query.member_labels))
    }

    fn name(&self) -> &'static str {
        "heuristic"
    }
}

/// Longest token common to every member label, falling back to the
/// lexicographically first label.
fn heuristic_topic(labels: &[String]) -> String {
    let normalized: Vec<String> = labels.iter().map(|l| normalize_label(l)).collect();
    let token_sets: Vec<BTreeSet<&str>> =
        normalized.iter().map(|l| l.split(' ').collect()).collect();
    let mut common: Vec<&str> = token_sets
        .first()
        .map(|first| {
            first
                .iter()
                .copied()
                .filter(|t| token_sets.iter().all(|s| s.contains(t)))
                .collect()
        })
        .unwrap_or_default();
    common.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    match common.first() {
        Some(t) => t.to_string(),
        None => normalized.into_iter().min().unwrap_or_default(),
    }
}

/// HTTP backend configuration. The auth header value comes from the
/// environment, never from config files.
#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub auth_header: Option<(String, String)>,
    pub timeout: Duration,
    pub max_inflight: usize,
    /// Requests per second budget.
    pub rps: f64,
    pub retries: u32,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: String::new(),
            auth_header: None,
            timeout: Duration::from_secs(30),
            max_inflight: 4,
            rps: 2.0,
            retries: 3,
        }
    }
}

/// Generic HTTP backend: POSTs the templated query as plain text and
/// scans the response for the first standalone yes/no token.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    limiter: Mutex<LimiterState>,
}

struct LimiterState {
    next_allowed: Instant,
    inflight: usize,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .expect("http client");
        HttpBackend {
            config,
            client,
            limiter: Mutex::new(LimiterState {
                next_allowed: Instant::now(),
                inflight: 0,
            }),
        }
    }

    fn acquire_slot(&self) {
        loop {
            let mut state = self.limiter.lock().expect("limiter poisoned");
            let now = Instant::now();
            if state.inflight < self.config.max_inflight && now >= state.next_allowed {
                state.inflight += 1;
                let interval = Duration::from_secs_f64(1.0 / self.config.rps.max(0.01));
                state.next_allowed = now + interval;
                return;
            }
            let wait = state.next_allowed.saturating_duration_since(now).max(Duration::from_millis(5));
            drop(state);
            std::thread::sleep(wait);
        }
    }

    fn release_slot(&self) {
        let mut state = self.limiter.lock().expect("limiter poisoned");
        state.inflight = state.inflight.saturating_sub(1);
    }

    /// POST with bounded retries and exponential backoff; exhaustion
    /// returns the last error text instead of failing the pipeline.
    fn post(&self, body: String) -> Result<String, String> {
        let mut backoff = Duration::from_millis(200);
        let mut last_err = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            self.acquire_slot();
            let mut req = self.client.post(&self.config.endpoint).body(body.clone());
            if let Some((name, value)) = &self.config.auth_header {
                req = req.header(name.as_str(), value.as_str());
            }
            let result = req.send().and_then(|r| r.error_for_status()).and_then(|r| r.text());
            self.release_slot();
            match result {
                Ok(text) => return Ok(text),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(format!("http exhausted after {} retries: {last_err}", self.config.retries))
    }
}

/// First standalone "yes"/"no" token, case-insensitive.
pub fn parse_yes_no(text: &str) -> Option<Answer> {
    for token in text.split(|c: char| !c.is_alphanumeric()) {
        match token.to_lowercase().as_str() {
            "yes" => return Some(Answer::Yes),
            "no" => return Some(Answer::No),
            _ => {}
        }
    }
    None
}

impl OracleBackend for HttpBackend {
    fn causal(&self, query: &CausalQuery) -> Result<OracleVerdict, OracleError> {
        match self.post(query.canonical_key()) {
            Ok(text) => Ok(match parse_yes_no(&text) {
                Some(Answer::Yes) => OracleVerdict::yes(1.0, text),
                Some(Answer::No) => OracleVerdict::no(1.0, text),
                _ => OracleVerdict::unknown(text),
            }),
            Err(raw) => Ok(OracleVerdict::unknown(raw)),
        }
    }

    fn topic(&self, query: &TopicQuery) -> Result<String, OracleError> {
        let labels = query
            .member_labels
            .iter()
            .map(|l| normalize_label(l))
            .collect::<Vec<_>>()
            .join(", ");
        let prompt = format!("give a one-or-two-word topic for: {labels}");
        match self.post(prompt) {
            Ok(text) => Ok(text.lines().next().unwrap_or("").trim().to_lowercase()),
            // Total fallback keeps the pipeline running without the endpoint.
            Err(_) => Ok(heuristic_topic(&query.member_labels)),
        }
    }

    fn name(&self) -> &'static str {
        "http"
    }
}

/// Wrapper recording every backend-dispatched verdict so a run can emit a
/// replay file that reproduces itself.
pub struct RecordingOracle {
    inner: Box<dyn OracleBackend>,
    log: Mutex<BTreeMap<String, ReplayEntry>>,
}

impl RecordingOracle {
    pub fn new(inner: Box<dyn OracleBackend>) -> Self {
        RecordingOracle {
            inner,
            log: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn recorded(&self) -> BTreeMap<String, ReplayEntry> {
        self.log.lock().expect("log poisoned").clone()
    }

    pub fn write_replay_file(&self, path: &Path) -> Result<(), OracleError> {
        let map = self.recorded();
        let mut text = serde_json::to_string_pretty(&map)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

impl OracleBackend for RecordingOracle {
    fn causal(&self, query: &CausalQuery) -> Result<OracleVerdict, OracleError> {
        let verdict = self.inner.causal(query)?;
        let answer = match verdict.answer {
            Answer::Yes => "yes",
            Answer::No => "no",
            Answer::Unknown => "unknown",
        };
        self.log.lock().expect("log poisoned").insert(
            query.canonical_key(),
            ReplayEntry {
                answer: answer.to_string(),
                confidence: verdict.confidence,
            },
        );
        Ok(verdict)
    }

    fn topic(&self, query: &TopicQuery) -> Result<String, OracleError> {
        let topic = self.inner.topic(query)?;
        self.log.lock().expect("log poisoned").insert(
            query.canonical_key(),
            ReplayEntry {
                answer: topic.clone(),
                confidence: 1.0,
            },
        );
        Ok(topic)
    }

    fn name(&self) -> &'static str {
        self.inner.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_key_template_and_normalization() {
        let q = CausalQuery::new("  Weather ", "COVID-19   Death Rate");
        assert_eq!(
            q.canonical_key(),
            "does weather causally affect covid-19 death rate?"
        );
    }

    #[test]
    fn topic_key_order_insensitive() {
        let a = TopicQuery::new(["pop density", "Pop  Size"]);
        let b = TopicQuery::new(["pop size", "pop density"]);
        assert_eq!(a.canonical_key(), b.canonical_key());
        assert_eq!(a.canonical_key(), "topic: pop density, pop size");
    }

    #[test]
    fn replay_lookup_yes() {
        let mut map = BTreeMap::new();
        map.insert(
            "does weather causally affect covid-19 death rate?".to_string(),
            ReplayEntry { answer: "yes".into(), confidence: 0.9 },
        );
        let backend = ReplayBackend::from_map(map, false);
        let v = query_causal(&backend, &CausalQuery::new("weather", "covid-19 death rate")).unwrap();
        assert_eq!(v.answer, Answer::Yes);
        assert_eq!(v.confidence, 0.9);
    }

    #[test]
    fn replay_miss_modes() {
        let lax = ReplayBackend::from_map(BTreeMap::new(), false);
        let v = query_causal(&lax, &CausalQuery::new("a", "b")).unwrap();
        assert_eq!(v.answer, Answer::Unknown);
        assert_eq!(v.confidence, 0.0);
        let strict = ReplayBackend::from_map(BTreeMap::new(), true);
        let err = query_causal(&strict, &CausalQuery::new("a", "b")).unwrap_err();
        assert!(matches!(err, OracleError::ReplayMiss(k) if k == "does a causally affect b?"));
    }

    #[test]
    fn self_query_rejected_before_dispatch() {
        // A strict empty replay would error on dispatch, so passing proves
        // the guard runs first.
        let strict = ReplayBackend::from_map(BTreeMap::new(), true);
        let v = query_causal(&strict, &CausalQuery::new("Economy", " economy ")).unwrap();
        assert_eq!(v.answer, Answer::No);
    }

    #[test]
    fn singleton_topic_passthrough() {
        let strict = ReplayBackend::from_map(BTreeMap::new(), true);
        let t = query_topic(&strict, &TopicQuery::new(["Mask  Policy"])).unwrap();
        assert_eq!(t, "mask policy");
    }

    #[test]
    fn heuristic_common_token_topic() {
        let backend = HeuristicBackend::default();
        let t = query_topic(&backend, &TopicQuery::new(["avg temp", "min temp"])).unwrap();
        assert_eq!(t, "temp");
        let t = query_topic(&backend, &TopicQuery::new(["alpha", "beta"])).unwrap();
        assert_eq!(t, "alpha");
    }

    #[test]
    fn heuristic_rules_pairs() {
        let backend = HeuristicBackend::new([("Weather".to_string(), "Death Cases".to_string())]);
        let yes = query_causal(&backend, &CausalQuery::new("weather", "death cases")).unwrap();
        assert_eq!(yes.answer, Answer::Yes);
        // Ordered: the reverse pair is not listed.
        let no = query_causal(&backend, &CausalQuery::new("death cases", "weather")).unwrap();
        assert_eq!(no.answer, Answer::No);
    }

    #[test]
    fn backends_are_pure() {
        let backend = HeuristicBackend::new([("a".to_string(), "b".to_string())]);
        let q = CausalQuery::new("a", "b");
        let v1 = query_causal(&backend, &q).unwrap();
        let v2 = query_causal(&backend, &q).unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn yes_no_parsing() {
        assert_eq!(
            parse_yes_no("Yes, because rainfall reduces compliance."),
            Some(Answer::Yes)
        );
        assert_eq!(parse_yes_no("I think NO since..."), Some(Answer::No));
        assert_eq!(parse_yes_no("nothing yesterday"), None);
        assert_eq!(parse_yes_no("maybe"), None);
    }

    #[test]
    fn recording_round_trips_through_replay() {
        let backend = RecordingOracle::new(Box::new(HeuristicBackend::new([(
            "weather".to_string(),
            "death cases".to_string(),
        )])));
        let q = CausalQuery::new("weather", "death cases");
        let v1 = query_causal(&backend, &q).unwrap();
        let t1 = query_topic(&backend, &TopicQuery::new(["avg temp", "min temp"])).unwrap();
        let replay = ReplayBackend::from_map(backend.recorded(), true);
        let v2 = query_causal(&replay, &q).unwrap();
        let t2 = query_topic(&replay, &TopicQuery::new(["avg temp", "min temp"])).unwrap();
        assert_eq!(v1.answer, v2.answer);
        assert_eq!(t1, t2);
    }

    #[test]
    fn http_backend_parses_and_survives_unreachable() {
        use std::io::{Read, Write};
        // Tiny one-shot HTTP server for the happy path.
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            if let Ok((mut stream, _)) = listener.accept() {
                let mut buf = [0u8; 4096];
                let _ = stream.read(&mut buf);
                let body = "Yes, because rainfall reduces compliance.";
                let resp = format!(
                    "HTTP/1.1 200 OK\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                    body.len(),
                    body
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        let backend = HttpBackend::new(HttpConfig {
            endpoint: format!("http://{addr}/oracle"),
            timeout: Duration::from_secs(5),
            rps: 100.0,
            retries: 0,
            ..HttpConfig::default()
        });
        let v = query_causal(&backend, &CausalQuery::new("rain", "delay")).unwrap();
        assert_eq!(v.answer, Answer::Yes);
        assert!(v.raw.contains("rainfall"));
        handle.join().unwrap();

        // Unreachable endpoint: bounded retries then Unknown.
        let dead = HttpBackend::new(HttpConfig {
            endpoint: "http://127.0.0.1:1/oracle".to_string(),
            timeout: Duration::from_millis(200),
            rps: 1000.0,
            retries: 1,
            ..HttpConfig::default()
        });
        let v = query_causal(&dead, &CausalQuery::new("a", "b")).unwrap();
        assert_eq!(v.answer, Answer::Unknown);
        assert_eq!(v.confidence, 0.0);
        assert!(v.raw.contains("http exhausted"));
    }
}
