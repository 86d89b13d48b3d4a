use std::thread;
use std::time::{Duration, Instant};

use ados_core::prompt::PromptBundle;
use log::{debug, warn};
use reqwest::blocking::Client;
use reqwest::header::RETRY_AFTER;
use serde_json::{json, Value};

use crate::admission::Admission;
use crate::record::{prompt_digest, AttemptLog, EndpointDescriptor, ExchangeRecord, ExchangeStore};
use crate::{Completion, CompletionBackend, GatewayError, ModelEndpoint};

const EXCERPT_CHARS: usize = 200;

fn excerpt(body: &str) -> String {
    body.chars().take(EXCERPT_CHARS).collect()
}

/// Live chat-completion client.
#[derive(Debug)]
pub struct HttpGateway {
    endpoint: ModelEndpoint,
    api_key: String,
    client: Client,
    admission: Admission,
    store: Option<ExchangeStore>,
}

enum Failure {
    RateLimited,
    Timeout,
    Server(u16, String),
    Transport(String),
}

impl HttpGateway {
    /// Fails with `Auth` when the key variable is unset or empty.
    pub fn new(endpoint: ModelEndpoint) -> Result<Self, GatewayError> {
        endpoint.validate()?;
        let api_key = std::env::var(&endpoint.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| {
                GatewayError::Auth(format!("environment variable {} is not set", endpoint.api_key_env))
            })?;
        let client = Client::builder()
            .timeout(endpoint.timeout())
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let admission = Admission::new(
            endpoint.max_concurrent,
            endpoint.requests_per_minute as usize,
            Duration::from_millis(endpoint.rate_window_ms),
        );
        Ok(HttpGateway {
            endpoint,
            api_key,
            client,
            admission,
            store: None,
        })
    }

    /// Persists every exchange, successful or not, into `store`.
    pub fn with_store(mut self, store: ExchangeStore) -> Self {
        self.store = Some(store);
        self
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    pub fn request_body(&self, bundle: &PromptBundle) -> Value {
        let mut body = json!({
            "model": self.endpoint.model_name,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text},
            ],
        });
        let obj = body.as_object_mut().expect("object literal");
        for (k, v) in &self.endpoint.extra {
            obj.insert(k.clone(), v.clone());
        }
        body
    }

    fn finish(&self, record: ExchangeRecord) -> Result<ExchangeRecord, GatewayError> {
        if let Some(store) = &self.store {
            store.save(&record, true)?;
        }
        Ok(record)
    }
}

fn assistant_text(body: &str) -> Option<String> {
    let v: Value = serde_json::from_str(body).ok()?;
    v.pointer("/choices/0/message/content")?.as_str().map(str::to_string)
}

fn retry_after(resp: &reqwest::blocking::Response) -> Option<Duration> {
    let secs: f64 = resp.headers().get(RETRY_AFTER)?.to_str().ok()?.trim().parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

impl CompletionBackend for HttpGateway {
    fn complete(&self, request_id: &str, bundle: &PromptBundle) -> Result<Completion, GatewayError> {
        let body = self.request_body(bundle);
        let started = Instant::now();
        let mut record = ExchangeRecord {
            request_id: request_id.to_string(),
            endpoint: EndpointDescriptor::from(&self.endpoint),
            prompt_digest: prompt_digest(bundle),
            request_body: body.clone(),
            response_body: None,
            response_text: None,
            error: None,
            latency_ms: 0,
            attempt_count: 0,
            attempts: Vec::new(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        let url = self.endpoint.url();
        let max_attempts = self.endpoint.max_retries + 1;
        let mut last = Failure::Transport("no attempt made".into());

        for attempt in 1..=max_attempts {
            let t0 = Instant::now();
            let sent = {
                let _permit = self.admission.acquire();
                self.client
                    .post(&url)
                    .bearer_auth(&self.api_key)
                    .json(&body)
                    .send()
                    .and_then(|r| {
                        let status = r.status().as_u16();
                        let wait = retry_after(&r);
                        r.text().map(|text| (status, wait, text))
                    })
            };
            let latency_ms = t0.elapsed().as_millis() as u64;
            record.attempt_count = attempt;
            let mut log = AttemptLog {
                attempt,
                status: None,
                error: None,
                latency_ms,
                backoff_ms: 0,
            };
            let mut server_wait = None;

            match sent {
                Ok((status, wait, text)) => {
                    log.status = Some(status);
                    record.response_body = Some(text.clone());
                    match status {
                        200..=299 => {
                            record.attempts.push(log);
                            record.latency_ms = started.elapsed().as_millis() as u64;
                            return match assistant_text(&text) {
                                Some(answer) => {
                                    record.response_text = Some(answer.clone());
                                    let record = self.finish(record)?;
                                    Ok(Completion {
                                        text: answer,
                                        record: Some(record),
                                    })
                                }
                                None => {
                                    let err = GatewayError::Protocol {
                                        status,
                                        excerpt: excerpt(&text),
                                    };
                                    record.error = Some(err.to_string());
                                    self.finish(record)?;
                                    Err(err)
                                }
                            };
                        }
                        401 | 403 => {
                            let err = GatewayError::Auth(format!("HTTP {status}: {}", excerpt(&text)));
                            log.error = Some(err.to_string());
                            record.attempts.push(log);
                            record.error = Some(err.to_string());
                            record.latency_ms = started.elapsed().as_millis() as u64;
                            self.finish(record)?;
                            return Err(err);
                        }
                        429 => {
                            last = Failure::RateLimited;
                            server_wait = wait;
                        }
                        500..=599 => last = Failure::Server(status, excerpt(&text)),
                        _ => {
                            let err = GatewayError::Protocol {
                                status,
                                excerpt: excerpt(&text),
                            };
                            log.error = Some(err.to_string());
                            record.attempts.push(log);
                            record.error = Some(err.to_string());
                            record.latency_ms = started.elapsed().as_millis() as u64;
                            self.finish(record)?;
                            return Err(err);
                        }
                    }
                }
                Err(e) if e.is_timeout() => {
                    log.error = Some(format!("timeout: {e}"));
                    last = Failure::Timeout;
                }
                Err(e) => {
                    log.error = Some(e.to_string());
                    last = Failure::Transport(e.to_string());
                }
            }

            if attempt < max_attempts {
                let wait = server_wait
                    .unwrap_or_else(|| self.endpoint.backoff(attempt))
                    .min(Duration::from_millis(self.endpoint.backoff_max_ms));
                log.backoff_ms = wait.as_millis() as u64;
                debug!("{request_id}: attempt {attempt} failed, retrying in {wait:?}");
                record.attempts.push(log);
                thread::sleep(wait);
            } else {
                record.attempts.push(log);
            }
        }

        let err = match last {
            Failure::RateLimited => GatewayError::RateLimitedExhausted {
                attempts: max_attempts,
            },
            Failure::Timeout => GatewayError::TimeoutExhausted {
                attempts: max_attempts,
            },
            Failure::Server(status, excerpt) => GatewayError::Protocol { status, excerpt },
            Failure::Transport(msg) => GatewayError::Transport(msg),
        };
        warn!("{request_id}: giving up after {max_attempts} attempt(s): {err}");
        record.error = Some(err.to_string());
        record.latency_ms = started.elapsed().as_millis() as u64;
        self.finish(record)?;
        Err(err)
    }
}
