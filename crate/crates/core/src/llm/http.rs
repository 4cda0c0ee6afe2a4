//! Blocking JSON-over-HTTP client with bounded retries.

use std::time::Duration;

use serde_json::{json, Value as Json};

use super::{AuthStyle, ChatRequest, EndpointConfig, GatewayError};

/// POSTs JSON to one URL. Transport errors, timeouts, 429 and 5xx responses
/// are retried up to `max_retries` times; other non-2xx statuses fail at once.
pub(crate) struct JsonClient {
    agent: ureq::Agent,
    url: String,
    auth: AuthStyle,
    credential_env: Option<String>,
    max_retries: u32,
    backoff: Duration,
}

impl JsonClient {
    pub(crate) fn new(config: &EndpointConfig) -> Result<Self, GatewayError> {
        let url = config
            .base_url
            .clone()
            .ok_or_else(|| GatewayError::InvalidConfig("missing base_url".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            url,
            auth: config.auth,
            credential_env: config.credential_env.clone(),
            max_retries: config.max_retries,
            backoff: Duration::from_millis(config.retry_backoff_ms),
        })
    }

    fn credential(&self) -> Result<Option<String>, GatewayError> {
        match &self.credential_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| GatewayError::MissingCredential(var.clone())),
        }
    }

    /// Returns the parsed body and the number of attempts made.
    pub(crate) fn post(&self, body: &Json) -> Result<(Json, u32), GatewayError> {
        let key = self.credential()?;
        let total = self.max_retries + 1;
        let mut last_err = None;
        for attempt in 1..=total {
            if attempt > 1 && !self.backoff.is_zero() {
                let factor = 1u32 << (attempt - 2).min(6);
                std::thread::sleep(self.backoff * factor);
            }
            let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
            if let Some(key) = &key {
                req = match self.auth {
                    AuthStyle::Bearer => req.header("Authorization", format!("Bearer {key}")),
                    AuthStyle::ApiKey => req.header("api-key", key.as_str()),
                };
            }
            let mut resp = match req.send_json(body) {
                Ok(resp) => resp,
                Err(ureq::Error::Timeout(_)) => {
                    last_err = Some(GatewayError::Timeout { attempts: attempt });
                    continue;
                }
                Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => {
                    last_err = Some(GatewayError::Timeout { attempts: attempt });
                    continue;
                }
                Err(e) => {
                    last_err = Some(GatewayError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            let status = resp.status().as_u16();
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            if (200..300).contains(&status) {
                let parsed = serde_json::from_str(&text)
                    .map_err(|e| GatewayError::MalformedResponse(format!("invalid JSON body: {e}")))?;
                return Ok((parsed, attempt));
            }
            let err = GatewayError::Protocol {
                status,
                body_excerpt: text.chars().take(200).collect(),
            };
            if status == 429 || status >= 500 {
                log::info!("{} returned {status} on attempt {attempt}/{total}", self.url);
                last_err = Some(err);
                continue;
            }
            return Err(err);
        }
        Err(last_err.expect("at least one attempt"))
    }
}

pub(crate) struct HttpChat {
    client: JsonClient,
}

impl HttpChat {
    pub(crate) fn new(config: &EndpointConfig) -> Result<Self, GatewayError> {
        Ok(Self {
            client: JsonClient::new(config)?,
        })
    }

    pub(crate) fn send(&self, request: &ChatRequest) -> Result<(String, u32), GatewayError> {
        let body = json!({
            "model": request.model_id,
            "messages": request.messages,
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        });
        let (resp, attempts) = self.client.post(&body)?;
        let content = resp
            .pointer("/choices/0/message/content")
            .and_then(Json::as_str)
            .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))?;
        Ok((content.to_string(), attempts))
    }
}
