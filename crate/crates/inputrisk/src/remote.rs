//! Traces from a served model through an OpenAI-compatible completions
//! endpoint.
//!
//! Each prompt is sent once with `echo: true, max_tokens: 0`, so the response
//! carries the prompt's own tokens with their log-probabilities. Only what the
//! endpoint returns is filled in: surprisal always, max probability and
//! oddballness when top-k alternatives are requested, never entropy, KL or CIS
//! (those need the full distribution).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use inputrisk_core::corpus::CharSpan;
use inputrisk_core::trace::{map_span, TokenRange, TokenStep, TokenTrace};

pub const API_KEY_VARS: [&str; 2] = ["INPUTRISK_API_KEY", "OPENAI_API_KEY"];

#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("endpoint does not return prompt logprobs: {0}")]
    MissingLogprobs(String),

    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("request failed after {attempts} attempt(s): {msg}")]
    Transport { attempts: u32, msg: String },

    #[error("example `{example_id}`: malformed response: {msg}")]
    Malformed { example_id: String, msg: String },

    #[error("example `{example_id}`: token {index} {token:?} does not match the prompt at char {offset}")]
    Misaligned {
        example_id: String,
        index: usize,
        token: String,
        offset: usize,
    },

    #[error("example `{example_id}`: no scored token overlaps the sentence")]
    SentenceNotCovered { example_id: String },

    #[error("request log {}: {source}", path.display())]
    Log { path: PathBuf, source: std::io::Error },
}

/// How many alternatives to ask for at each position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TopKMode {
    /// Observed-token log-probabilities only.
    #[default]
    ObservedOnly,
    TopK(u32),
}

impl TopKMode {
    fn logprobs_param(self) -> u32 {
        match self {
            TopKMode::ObservedOnly => 0,
            TopKMode::TopK(k) => k,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL such as `http://localhost:8000`; `/v1/completions` is
    /// appended unless the URL already ends in `/completions`.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub top_k: TopKMode,
    /// Requests in flight at once.
    pub concurrency: usize,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub timeout: Duration,
    /// Request/response pairs are appended here as JSONL.
    pub log_path: Option<PathBuf>,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key_from_env(),
            top_k: TopKMode::default(),
            concurrency: 4,
            max_retries: 5,
            initial_backoff: Duration::from_millis(250),
            max_backoff: Duration::from_secs(8),
            timeout: Duration::from_secs(120),
            log_path: None,
        }
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/completions") {
            base.to_string()
        } else if base.ends_with("/v1") {
            format!("{base}/completions")
        } else {
            format!("{base}/v1/completions")
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let d = self.initial_backoff.saturating_mul(1u32 << attempt.min(16));
        d.min(self.max_backoff)
    }
}

pub fn api_key_from_env() -> Option<String> {
    API_KEY_VARS
        .iter()
        .find_map(|v| std::env::var(v).ok().filter(|k| !k.is_empty()))
}

/// A prompt to score and where its sentence sits, in char offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemotePrompt {
    pub example_id: String,
    pub text: String,
    pub sentence: CharSpan,
}

/// The `logprobs` object of a completions choice.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct LogprobsPayload {
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    pub top_logprobs: Option<Vec<Option<HashMap<String, f64>>>>,
    #[serde(default)]
    pub text_offset: Option<Vec<usize>>,
}

fn extract_logprobs(body: &Value) -> Option<LogprobsPayload> {
    let lp = body.get("choices")?.get(0)?.get("logprobs")?;
    serde_json::from_value(lp.clone()).ok()
}

/// Builds a trace from an echoed logprobs payload.
///
/// Leading tokens without a log-probability (the first prompt token, or a
/// BOS marker) are dropped. Tokens starting at or past the end of the prompt
/// are generated text and ignored.
pub fn trace_from_logprobs(prompt: &RemotePrompt, lp: &LogprobsPayload) -> Result<TokenTrace, RemoteError> {
    let malformed = |msg: String| RemoteError::Malformed {
        example_id: prompt.example_id.clone(),
        msg,
    };
    let n = lp.tokens.len();
    if lp.token_logprobs.len() != n {
        return Err(malformed(format!("{n} tokens but {} logprobs", lp.token_logprobs.len())));
    }
    if let Some(top) = &lp.top_logprobs {
        if top.len() != n {
            return Err(malformed(format!("{n} tokens but {} top_logprobs", top.len())));
        }
    }
    let chars: Vec<char> = prompt.text.chars().collect();
    // without offsets, tokens are assumed to tile the prompt
    let offsets: Vec<usize> = match &lp.text_offset {
        Some(o) if o.len() == n => o.clone(),
        Some(o) => return Err(malformed(format!("{n} tokens but {} text offsets", o.len()))),
        None => lp
            .tokens
            .iter()
            .scan(0, |at, t| {
                let start = *at;
                *at += t.chars().count();
                Some(start)
            })
            .collect(),
    };

    let mut tokens = Vec::new();
    let mut started = false;
    for i in 0..n {
        let offset = offsets[i];
        if offset >= chars.len() {
            break;
        }
        let text = &lp.tokens[i];
        let len = text.chars().count();
        let end = offset + len;
        if end > chars.len() || chars[offset..end].iter().copied().ne(text.chars()) {
            return Err(RemoteError::Misaligned {
                example_id: prompt.example_id.clone(),
                index: i,
                token: text.clone(),
                offset,
            });
        }
        let Some(logprob) = lp.token_logprobs[i] else {
            if started {
                return Err(malformed(format!("token {i} has no logprob")));
            }
            continue;
        };
        started = true;
        if !logprob.is_finite() {
            return Err(malformed(format!("token {i} has logprob {logprob}")));
        }
        // natural log to bits; a slightly positive value is rounding noise
        let logprob = logprob.min(0.0);
        let mut step = TokenStep::observed(text.clone(), CharSpan::new(offset, end), -logprob / std::f64::consts::LN_2);
        let top = lp.top_logprobs.as_ref().and_then(|t| t[i].as_ref()).filter(|m| !m.is_empty());
        if let Some(top) = top {
            let p_obs = logprob.exp();
            let max_top = top.values().map(|&l| l.min(0.0).exp()).fold(0.0, f64::max);
            step.max_prob = Some(max_top.max(p_obs));
            // every token outside the top-k is no likelier than the least likely
            // member, so the sum is exact once the observed token is inside it
            if top.contains_key(text) {
                let odd: f64 = top
                    .iter()
                    .filter(|(t, _)| *t != text)
                    .map(|(_, &l)| (l.min(0.0).exp() - p_obs).max(0.0))
                    .sum();
                step.oddball = Some(odd.min(1.0));
            }
        }
        tokens.push(step);
    }
    if tokens.is_empty() {
        return Err(malformed("no scored prompt tokens".into()));
    }

    let mut trace = TokenTrace {
        example_id: prompt.example_id.clone(),
        sentence_token_range: TokenRange::new(0, 0),
        tokens,
    };
    let covered = map_span(&trace, prompt.sentence).map_err(|_| RemoteError::SentenceNotCovered {
        example_id: prompt.example_id.clone(),
    })?;
    let (first, last) = (covered[0], covered[covered.len() - 1]);
    trace.sentence_token_range = TokenRange::new(first, last);
    Ok(trace)
}

struct Logger {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl Logger {
    fn open(path: &PathBuf) -> Result<Self, RemoteError> {
        let log_err = |source| RemoteError::Log {
            path: path.clone(),
            source,
        };
        let file = File::options().create(true).append(true).open(path).map_err(log_err)?;
        Ok(Self {
            path: path.clone(),
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    fn write(&self, entry: &Value) -> Result<(), RemoteError> {
        let mut out = self.out.lock().unwrap_or_else(|p| p.into_inner());
        let res = serde_json::to_writer(&mut *out, entry)
            .map_err(std::io::Error::other)
            .and_then(|_| out.write_all(b"\n"))
            .and_then(|_| out.flush());
        res.map_err(|source| RemoteError::Log {
            path: self.path.clone(),
            source,
        })
    }
}

struct Client<'a> {
    cfg: &'a RemoteConfig,
    agent: ureq::Agent,
    url: String,
    log: Option<Logger>,
}

fn transient_status(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

fn transient_error(e: &ureq::Error) -> bool {
    matches!(
        e,
        ureq::Error::Io(_)
            | ureq::Error::Timeout(_)
            | ureq::Error::ConnectionFailed
            | ureq::Error::HostNotFound
            | ureq::Error::Protocol(_)
            | ureq::Error::BodyStalled
    )
}

impl<'a> Client<'a> {
    fn new(cfg: &'a RemoteConfig) -> Result<Self, RemoteError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let log = cfg.log_path.as_ref().map(Logger::open).transpose()?;
        Ok(Self {
            cfg,
            agent,
            url: cfg.url(),
            log,
        })
    }

    fn body(&self, prompt: &str) -> Value {
        json!({
            "model": self.cfg.model,
            "prompt": prompt,
            "max_tokens": 0,
            "echo": true,
            "logprobs": self.cfg.top_k.logprobs_param(),
            "temperature": 0,
        })
    }

    /// POSTs with retries on transient failures and returns the JSON body.
    fn post(&self, example_id: &str, body: &Value) -> Result<Value, RemoteError> {
        let attempts = self.cfg.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.cfg.backoff(attempt - 1));
            }
            let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
            if let Some(key) = &self.cfg.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            let outcome = req.send_json(body).and_then(|mut resp| {
                let status = resp.status().as_u16();
                resp.body_mut().read_to_string().map(|text| (status, text))
            });
            let (status, text) = match outcome {
                Ok(ok) => ok,
                Err(e) => {
                    self.log(example_id, attempt, body, None, &json!({ "error": e.to_string() }))?;
                    if transient_error(&e) {
                        log::warn!("{example_id}: attempt {} failed: {e}", attempt + 1);
                        last = e.to_string();
                        continue;
                    }
                    return Err(RemoteError::Transport {
                        attempts: attempt + 1,
                        msg: e.to_string(),
                    });
                }
            };
            let parsed: Option<Value> = serde_json::from_str(&text).ok();
            let logged = parsed.clone().unwrap_or_else(|| Value::String(text.clone()));
            self.log(example_id, attempt, body, Some(status), &json!({ "response": logged }))?;
            if (200..300).contains(&status) {
                return parsed.ok_or_else(|| RemoteError::Malformed {
                    example_id: example_id.to_string(),
                    msg: "response is not JSON".into(),
                });
            }
            if transient_status(status) {
                log::warn!("{example_id}: attempt {} got HTTP {status}", attempt + 1);
                last = format!("HTTP {status}: {text}");
                continue;
            }
            return Err(RemoteError::Http { status, body: text });
        }
        Err(RemoteError::Transport { attempts, msg: last })
    }

    fn log(&self, example_id: &str, attempt: u32, request: &Value, status: Option<u16>, outcome: &Value) -> Result<(), RemoteError> {
        let Some(log) = &self.log else { return Ok(()) };
        let mut entry = json!({
            "example_id": example_id,
            "attempt": attempt,
            "status": status,
            "request": request,
        });
        if let (Some(e), Some(o)) = (entry.as_object_mut(), outcome.as_object()) {
            e.extend(o.clone());
        }
        log.write(&entry)
    }

    fn probe(&self) -> Result<(), RemoteError> {
        let body = self.body("The cat sat on the mat.");
        let resp = self.post("<probe>", &body)?;
        match extract_logprobs(&resp) {
            Some(lp) if lp.token_logprobs.iter().any(Option::is_some) => Ok(()),
            Some(_) => Err(RemoteError::MissingLogprobs("token_logprobs are all null".into())),
            None => Err(RemoteError::MissingLogprobs("no choices[0].logprobs in the response".into())),
        }
    }

    fn fetch(&self, prompt: &RemotePrompt) -> Result<TokenTrace, RemoteError> {
        let resp = self.post(&prompt.example_id, &self.body(&prompt.text))?;
        let lp = extract_logprobs(&resp).ok_or_else(|| RemoteError::Malformed {
            example_id: prompt.example_id.clone(),
            msg: "no choices[0].logprobs".into(),
        })?;
        trace_from_logprobs(prompt, &lp)
    }
}

/// Scores every prompt, at most `concurrency` requests in flight. The outer
/// error is for failures before any prompt is sent (capability probe, log
/// file); per-example failures are returned in place, in input order.
pub fn fetch_remote_traces(
    cfg: &RemoteConfig,
    prompts: &[RemotePrompt],
) -> Result<Vec<Result<TokenTrace, RemoteError>>, RemoteError> {
    let client = Client::new(cfg)?;
    client.probe()?;

    let slots: Vec<Mutex<Option<Result<TokenTrace, RemoteError>>>> = prompts.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.concurrency.max(1).min(prompts.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(p) = prompts.get(i) else { break };
                let r = client.fetch(p);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
            });
        }
    });
    Ok(slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .expect("every slot is filled once the workers join")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(text: &str, sentence: CharSpan) -> RemotePrompt {
        RemotePrompt {
            example_id: "x".into(),
            text: text.into(),
            sentence,
        }
    }

    fn payload(tokens: &[&str], lps: &[Option<f64>]) -> LogprobsPayload {
        LogprobsPayload {
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            token_logprobs: lps.to_vec(),
            top_logprobs: None,
            text_offset: None,
        }
    }

    #[test]
    fn nats_to_bits_and_leading_null_dropped() {
        let p = prompt("ab cd", CharSpan::new(3, 5));
        let lp = payload(&["ab", " cd"], &[None, Some(-std::f64::consts::LN_2)]);
        let t = trace_from_logprobs(&p, &lp).unwrap();
        assert_eq!(t.len(), 1);
        assert!((t.tokens[0].surprisal - 1.0).abs() < 1e-12);
        assert_eq!(t.tokens[0].span, CharSpan::new(2, 5));
        assert_eq!(t.sentence_token_range, TokenRange::new(0, 0));
        assert_eq!(t.tokens[0].entropy, None);
        assert_eq!(t.tokens[0].max_prob, None);
    }

    #[test]
    fn misaligned_offsets_are_reported() {
        let p = prompt("ab cd", CharSpan::new(3, 5));
        let mut lp = payload(&["ab", " cd"], &[None, Some(-1.0)]);
        lp.text_offset = Some(vec![0, 1]);
        assert!(matches!(trace_from_logprobs(&p, &lp), Err(RemoteError::Misaligned { index: 1, .. })));
    }

    #[test]
    fn oddball_only_when_observed_in_top_k() {
        let p = prompt("abc", CharSpan::new(0, 3));
        let mut lp = payload(&["a", "b", "c"], &[None, Some(0.5f64.ln()), Some(0.1f64.ln())]);
        let m = |pairs: &[(&str, f64)]| Some(pairs.iter().map(|(t, p)| (t.to_string(), p.ln())).collect());
        lp.top_logprobs = Some(vec![None, m(&[("x", 0.3), ("b", 0.5)]), m(&[("x", 0.6), ("y", 0.2)])]);
        let t = trace_from_logprobs(&p, &lp).unwrap();
        assert_eq!(t.tokens[0].oddball, Some(0.0));
        assert!((t.tokens[0].max_prob.unwrap() - 0.5).abs() < 1e-12);
        // observed token outside the top-k: the tail is unknown
        assert_eq!(t.tokens[1].oddball, None);
        assert!((t.tokens[1].max_prob.unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn url_forms() {
        let mut c = RemoteConfig::new("http://h:1/", "m");
        assert_eq!(c.url(), "http://h:1/v1/completions");
        c.endpoint = "http://h:1/v1".into();
        assert_eq!(c.url(), "http://h:1/v1/completions");
        c.endpoint = "http://h:1/api/completions".into();
        assert_eq!(c.url(), "http://h:1/api/completions");
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let c = RemoteConfig::new("http://h", "m");
        assert_eq!(c.backoff(0), Duration::from_millis(250));
        assert_eq!(c.backoff(2), Duration::from_millis(1000));
        assert_eq!(c.backoff(10), Duration::from_secs(8));
    }
}
