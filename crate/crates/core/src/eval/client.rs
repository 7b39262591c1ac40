//! Blocking client for the generation endpoint.
//!
//! Wire contract: `POST {"prompt", "max_output_tokens", "beam_size"}` answered
//! by `{"text"}`. Transport failures, 5xx and 429 are retried with
//! exponential backoff; other 4xx statuses and malformed bodies are protocol
//! errors and are not retried.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::PromptBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub endpoint_url: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Delay before the first retry; doubled on each further retry.
    pub backoff_ms: u64,
    pub max_output_tokens: usize,
    pub beam_size: usize,
    /// Requests in flight at once.
    pub concurrency: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:8000/generate".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 200,
            max_output_tokens: 128,
            beam_size: 4,
            concurrency: 4,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0) {
            return Err(Error::Config("generation timeout must be positive".into()));
        }
        if self.concurrency == 0 {
            return Err(Error::Config("generation concurrency must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct Request<'a> {
    prompt: &'a str,
    max_output_tokens: usize,
    beam_size: usize,
}

#[derive(Debug, Deserialize)]
struct Response {
    text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub text: String,
    pub attempts: u32,
}

pub fn generate(bundle: &PromptBundle, config: &GenerationConfig) -> Result<Generated> {
    generate_text(&bundle.prompt_text, config)
}

pub fn generate_text(prompt: &str, config: &GenerationConfig) -> Result<Generated> {
    config.validate()?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into();
    let body = Request {
        prompt,
        max_output_tokens: config.max_output_tokens,
        beam_size: config.beam_size,
    };
    let total = config.max_retries + 1;
    let mut last = String::new();
    for attempt in 1..=total {
        if attempt > 1 {
            let factor = 1u64 << (attempt - 2).min(16);
            thread::sleep(Duration::from_millis(config.backoff_ms.saturating_mul(factor)));
        }
        match agent.post(&config.endpoint_url).send_json(&body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if status == 429 || status >= 500 {
                    last = format!("HTTP {status}");
                    continue;
                }
                if !(200..300).contains(&status) {
                    return Err(Error::Protocol(format!("endpoint answered HTTP {status}")));
                }
                let text = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| Error::Protocol(format!("unreadable response body: {e}")))?;
                let parsed: Response = serde_json::from_str(&text)
                    .map_err(|e| Error::Protocol(format!("malformed response `{text}`: {e}")))?;
                return Ok(Generated {
                    text: parsed.text,
                    attempts: attempt,
                });
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::GenerationUnavailable {
        attempts: total,
        reason: last,
    })
}

/// Generates for every prompt with at most `config.concurrency` requests in
/// flight. Results keep the order of `prompts`.
pub fn generate_batch(prompts: &[&str], config: &GenerationConfig) -> Vec<Result<Generated>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<Generated>>>> = prompts.iter().map(|_| Mutex::new(None)).collect();
    let workers = config.concurrency.max(1).min(prompts.len());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= prompts.len() {
                    break;
                }
                let r = generate_text(prompts[i], config);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}
