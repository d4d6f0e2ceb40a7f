//! Fixtures shared by the request-path benchmarks.

use semrouter_core::{samples, Router, RoutingConfig};

pub fn sample_router() -> Router {
    let config = RoutingConfig::from_yaml_str(samples::ROUTER_YAML).expect("sample config parses");
    Router::from_config(config).expect("sample config builds")
}

/// A prompt of exactly `len` bytes cycling through the sample routes' vocabulary.
pub fn vocabulary_prompt(router: &Router, len: usize) -> String {
    let words: Vec<&str> = router
        .config()
        .routes
        .iter()
        .flat_map(|r| r.utterances.iter().flat_map(|u| u.split_whitespace()))
        .collect();
    let mut out = String::with_capacity(len + 16);
    for w in words.iter().cycle() {
        if out.len() >= len {
            break;
        }
        out.push_str(w);
        out.push(' ');
    }
    out.truncate(len);
    out
}

/// A minimal chat-completions request body carrying `prompt`.
pub fn chat_body(prompt: &str) -> Vec<u8> {
    serde_json::to_vec(&serde_json::json!({
        "model": "client",
        "messages": [{"role": "user", "content": prompt}],
    }))
    .expect("request serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_has_requested_length() {
        let r = sample_router();
        assert_eq!(vocabulary_prompt(&r, 4096).len(), 4096);
        assert!(semrouter_core::RequestEnvelope::from_slice(&chat_body("hi")).is_ok());
    }
}
