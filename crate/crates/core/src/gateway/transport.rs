use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{GatewayError, API_KEY_VAR};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    Timeout,
    Connection(String),
    ScriptExhausted,
}

/// Sends one serialized request body and returns the raw reply.
pub trait Transport: Send + Sync {
    fn post(&self, body: &str, timeout: Duration) -> Result<HttpReply, TransportFailure>;
}

/// Blocking HTTP POST to an OpenAI-compatible endpoint. The key travels only
/// in the `Authorization` header.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: String,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, api_key: impl Into<String>) -> Result<Self, GatewayError> {
        let url = url.into();
        if url.trim().is_empty() {
            return Err(GatewayError::InvalidConfig("endpoint_url is empty".into()));
        }
        let api_key = api_key.into();
        if api_key.is_empty() {
            return Err(GatewayError::MissingCredential);
        }
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpTransport {
            agent,
            url,
            api_key,
        })
    }

    pub fn from_env(url: &str) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_VAR).map_err(|_| GatewayError::MissingCredential)?;
        Self::new(url, key)
    }
}

impl Transport for HttpTransport {
    fn post(&self, body: &str, timeout: Duration) -> Result<HttpReply, TransportFailure> {
        let result = self
            .agent
            .post(&self.url)
            .config()
            .timeout_global(Some(timeout))
            .build()
            .header("Authorization", format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body);
        match result {
            Ok(response) => {
                let status = response.status().as_u16();
                let body = response
                    .into_body()
                    .read_to_string()
                    .map_err(|e| TransportFailure::Connection(e.to_string()))?;
                Ok(HttpReply { status, body })
            }
            Err(ureq::Error::Timeout(_)) => Err(TransportFailure::Timeout),
            Err(e) => Err(TransportFailure::Connection(e.to_string())),
        }
    }
}

/// One scripted reply. In script files: a bare string is a successful
/// completion with that content; `{"status": 429}` an HTTP error;
/// `{"raw": "..."}` a 200 with a literal body; `{"timeout": true}` a timeout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Content(String),
    Status {
        status: u16,
        #[serde(default)]
        body: String,
    },
    Raw {
        raw: String,
    },
    Timeout {
        timeout: bool,
    },
}

impl MockReply {
    pub fn status(status: u16) -> Self {
        MockReply::Status {
            status,
            body: String::new(),
        }
    }

    fn into_reply(self) -> Result<HttpReply, TransportFailure> {
        match self {
            MockReply::Content(content) => {
                let body = serde_json::json!({
                    "choices": [{ "index": 0, "message": { "role": "assistant", "content": content } }]
                });
                Ok(HttpReply {
                    status: 200,
                    body: body.to_string(),
                })
            }
            MockReply::Status { status, body } => Ok(HttpReply { status, body }),
            MockReply::Raw { raw } => Ok(HttpReply {
                status: 200,
                body: raw,
            }),
            MockReply::Timeout { .. } => Err(TransportFailure::Timeout),
        }
    }
}

/// Replays a script in order and records every request body.
#[derive(Debug, Default)]
pub struct MockTransport {
    script: Mutex<VecDeque<MockReply>>,
    requests: Mutex<Vec<String>>,
}

impl MockTransport {
    pub fn new(script: Vec<MockReply>) -> Self {
        MockTransport {
            script: Mutex::new(script.into()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn from_script_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    pub fn calls(&self) -> usize {
        self.requests.lock().expect("mock lock").len()
    }

    pub fn requests(&self) -> Vec<String> {
        self.requests.lock().expect("mock lock").clone()
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().expect("mock lock").len()
    }
}

impl Transport for MockTransport {
    fn post(&self, body: &str, _timeout: Duration) -> Result<HttpReply, TransportFailure> {
        self.requests
            .lock()
            .expect("mock lock")
            .push(body.to_string());
        let next = self.script.lock().expect("mock lock").pop_front();
        next.ok_or(TransportFailure::ScriptExhausted)?.into_reply()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_file_forms() {
        let mock = MockTransport::from_script_json(
            r#"["{2, zone b}", {"status": 429}, {"raw": "nope"}, {"timeout": true}]"#,
        )
        .unwrap();
        assert_eq!(mock.remaining(), 4);
        let ok = mock.post("x", Duration::ZERO).unwrap();
        assert_eq!(
            super::super::extract_content(&ok.body).unwrap(),
            "{2, zone b}"
        );
        assert_eq!(mock.post("x", Duration::ZERO).unwrap().status, 429);
        assert_eq!(mock.post("x", Duration::ZERO).unwrap().body, "nope");
        assert_eq!(
            mock.post("x", Duration::ZERO),
            Err(TransportFailure::Timeout)
        );
        assert_eq!(
            mock.post("x", Duration::ZERO),
            Err(TransportFailure::ScriptExhausted)
        );
        assert_eq!(mock.calls(), 5);
    }

    #[test]
    fn http_transport_requires_key() {
        assert!(matches!(
            HttpTransport::new("http://localhost:1", ""),
            Err(GatewayError::MissingCredential)
        ));
        assert!(matches!(
            HttpTransport::new("", "k"),
            Err(GatewayError::InvalidConfig(_))
        ));
    }
}
