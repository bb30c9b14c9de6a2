//! Content addressing for requests.
//!
//! The digest is SHA-256 over a canonical compact-JSON serialization with
//! fields in a fixed order: max_tokens, messages (as [role, text] pairs),
//! model_id, temperature, top_p. `seed_hint` is deliberately excluded so a
//! replay fixture recorded without a seed still matches. Two structurally
//! equal requests digest identically no matter how they were built.

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::types::ChatRequest;

#[derive(Serialize)]
struct Canonical<'a> {
    max_tokens: u32,
    messages: Vec<(&'a str, &'a str)>,
    model_id: &'a str,
    temperature: f64,
    top_p: f64,
}

pub fn request_digest(request: &ChatRequest) -> String {
    let canonical = Canonical {
        max_tokens: request.max_tokens,
        messages: request
            .messages
            .iter()
            .map(|m| (m.role.as_str(), m.text.as_str()))
            .collect(),
        model_id: &request.model_id,
        temperature: request.temperature,
        top_p: request.top_p,
    };
    let payload = serde_json::to_string(&canonical).expect("canonical request serializes");
    hex::encode(Sha256::digest(payload.as_bytes()))
}
