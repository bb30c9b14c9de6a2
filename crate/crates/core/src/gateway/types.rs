//! Request/response types shared by every backend.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

/// Sampling parameters for one class of calls. Generation and optimization
/// default to mild sampling; judge calls run at temperature 0 to keep
/// scoring variance down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_hint: Option<i64>,
}

impl GenParams {
    pub fn generation() -> Self {
        GenParams {
            temperature: 0.7,
            top_p: 0.9,
            max_tokens: 1024,
            seed_hint: None,
        }
    }

    pub fn judge() -> Self {
        GenParams {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 256,
            seed_hint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_hint: Option<i64>,
}

impl ChatRequest {
    /// Single user-message request, the shape every pipeline stage uses.
    pub fn single_user(model_id: impl Into<String>, params: GenParams, text: impl Into<String>) -> Self {
        ChatRequest {
            model_id: model_id.into(),
            messages: vec![ChatMessage {
                role: Role::User,
                text: text.into(),
            }],
            temperature: params.temperature,
            top_p: params.top_p,
            max_tokens: params.max_tokens,
            seed_hint: params.seed_hint,
        }
    }

    /// Extend a request with the model's previous (rejected) reply and a
    /// correction. Used for re-asks; the digest changes, so caches and
    /// fixtures see a distinct request.
    pub fn with_followup(&self, assistant_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        let mut next = self.clone();
        next.messages.push(ChatMessage {
            role: Role::Assistant,
            text: assistant_text.into(),
        });
        next.messages.push(ChatMessage {
            role: Role::User,
            text: user_text.into(),
        });
        next
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_id.is_empty() {
            return Err(Error::InvalidRequest {
                reason: "model_id is empty".into(),
            });
        }
        if self.messages.is_empty() {
            return Err(Error::InvalidRequest {
                reason: "messages is empty".into(),
            });
        }
        if self.messages[0].role == Role::Assistant {
            return Err(Error::InvalidRequest {
                reason: "first message must be system or user".into(),
            });
        }
        if self.messages.iter().any(|m| m.text.is_empty()) {
            return Err(Error::InvalidRequest {
                reason: "message text is empty".into(),
            });
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::InvalidRequest {
                reason: format!("temperature {} out of range", self.temperature),
            });
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidRequest {
                reason: format!("top_p {} out of range", self.top_p),
            });
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidRequest {
                reason: "max_tokens must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        super::digest::request_digest(self)
    }

    /// Concatenated prompt text, used by token accounting and test
    /// instrumentation.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub model_id: String,
    pub usage: Usage,
    pub cache_hit: bool,
}

/// Which transport serves completions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendKind {
    /// Live chat-completions endpoint. `auth_env` names the environment
    /// variable holding the bearer token (defaults to GSEO_API_KEY);
    /// the token itself never appears in flags or config files.
    Remote {
        endpoint_url: String,
        auth_env: Option<String>,
    },
    /// Offline digest-to-response fixture replay. Never touches the network.
    Scripted { fixture_path: PathBuf },
    /// Live endpoint that also persists every (digest, response) pair it
    /// observes, so later runs can replay scripted.
    Recording {
        endpoint_url: String,
        fixture_path: PathBuf,
    },
}

impl BackendKind {
    /// Parse the CLI/config syntax: `remote:<url>`, `scripted:<path>`,
    /// `recording:<url>,<path>`.
    pub fn parse(spec: &str) -> Result<BackendKind> {
        let bad = |reason: String| Error::ConfigError { reason };
        match spec.split_once(':') {
            Some(("remote", url)) if !url.is_empty() => Ok(BackendKind::Remote {
                endpoint_url: url.to_string(),
                auth_env: None,
            }),
            Some(("scripted", path)) if !path.is_empty() => Ok(BackendKind::Scripted {
                fixture_path: PathBuf::from(path),
            }),
            Some(("recording", rest)) => match rest.split_once(',') {
                Some((url, path)) if !url.is_empty() && !path.is_empty() => {
                    Ok(BackendKind::Recording {
                        endpoint_url: url.to_string(),
                        fixture_path: PathBuf::from(path),
                    })
                }
                _ => Err(bad(format!(
                    "recording backend needs `recording:<url>,<path>`, got {spec:?}"
                ))),
            },
            _ => Err(bad(format!(
                "backend must be remote:<url>, scripted:<path>, or recording:<url>,<path>, got {spec:?}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_request() -> ChatRequest {
        ChatRequest::single_user("m", GenParams::generation(), "hello")
    }

    #[test]
    fn validate_accepts_wellformed() {
        assert!(base_request().validate().is_ok());
    }

    #[test]
    fn validate_rejects_bad_fields() {
        let mut r = base_request();
        r.messages.clear();
        assert!(r.validate().is_err());

        let mut r = base_request();
        r.temperature = -0.1;
        assert!(r.validate().is_err());

        let mut r = base_request();
        r.top_p = 0.0;
        assert!(r.validate().is_err());

        let mut r = base_request();
        r.top_p = 1.5;
        assert!(r.validate().is_err());

        let mut r = base_request();
        r.max_tokens = 0;
        assert!(r.validate().is_err());

        let mut r = base_request();
        r.messages.insert(
            0,
            ChatMessage {
                role: Role::Assistant,
                text: "hi".into(),
            },
        );
        assert!(r.validate().is_err());
    }

    #[test]
    fn backend_kind_parse_roundtrip() {
        assert_eq!(
            BackendKind::parse("remote:http://localhost:1").unwrap(),
            BackendKind::Remote {
                endpoint_url: "http://localhost:1".into(),
                auth_env: None
            }
        );
        assert_eq!(
            BackendKind::parse("scripted:fixtures/run.jsonl").unwrap(),
            BackendKind::Scripted {
                fixture_path: "fixtures/run.jsonl".into()
            }
        );
        assert_eq!(
            BackendKind::parse("recording:http://h:1,fix.jsonl").unwrap(),
            BackendKind::Recording {
                endpoint_url: "http://h:1".into(),
                fixture_path: "fix.jsonl".into()
            }
        );
        assert!(BackendKind::parse("bogus").is_err());
        assert!(BackendKind::parse("recording:http://h:1").is_err());
    }
}
