//! HTTP front end for the simulated chat-completions backend.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use serde_json::json;
use tokio::net::TcpListener;

use semrouter_core::policy::{bool_at, DEFAULT_FIELD_PATH, DEFAULT_SYSTEM_PROMPT_OFF, DEFAULT_SYSTEM_PROMPT_ON};
use semrouter_core::sim::{request_key, SimMeta};
use semrouter_core::{simulate, CostModel, ReasoningMode, RequestEnvelope};

use crate::extproc::{CHAT_COMPLETIONS_PATH, HEADER_CATEGORY, HEADER_DECISION_ID, HEADER_REASONING};

pub const HEADER_REQUEST_ID: &str = "x-request-id";

#[derive(Debug, Clone)]
pub struct SimSettings {
    /// Multiplier on the simulated latency before responding; 0 answers at once.
    pub delay_scale: f64,
    /// Where to look for the reasoning flag when no mode header is present.
    pub field_path: String,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            delay_scale: 1.0,
            field_path: DEFAULT_FIELD_PATH.to_string(),
        }
    }
}

#[derive(Debug)]
struct SimState {
    model: CostModel,
    settings: SimSettings,
}

pub fn sim_app(model: CostModel, settings: SimSettings) -> axum::Router {
    let state = Arc::new(SimState { model, settings });
    axum::Router::new()
        .route(CHAT_COMPLETIONS_PATH, post(chat_completions))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(state)
}

pub async fn serve_sim(
    listener: TcpListener,
    model: CostModel,
    settings: SimSettings,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, sim_app(model, settings))
        .with_graceful_shutdown(shutdown)
        .await
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    let body = json!({"error": {"code": status.as_u16(), "message": message.into()}});
    (status, [(header::CONTENT_TYPE, "application/json")], body.to_string()).into_response()
}

fn header_str<'a>(headers: &'a HeaderMap, name: &str) -> Option<&'a str> {
    headers.get(name)?.to_str().ok().map(str::trim).filter(|s| !s.is_empty())
}

/// Mode header first, then the reasoning flag or system prompt in the body,
/// otherwise on.
fn infer_mode(headers: &HeaderMap, request: &RequestEnvelope, field_path: &str) -> Result<ReasoningMode, String> {
    if let Some(v) = header_str(headers, HEADER_REASONING) {
        return v.parse();
    }
    if let Some(flag) = bool_at(&request.extra, field_path) {
        return Ok(if flag { ReasoningMode::On } else { ReasoningMode::Off });
    }
    for m in &request.messages {
        if m.content == DEFAULT_SYSTEM_PROMPT_OFF {
            return Ok(ReasoningMode::Off);
        }
        if m.content == DEFAULT_SYSTEM_PROMPT_ON {
            return Ok(ReasoningMode::On);
        }
    }
    Ok(ReasoningMode::On)
}

fn request_id(headers: &HeaderMap, body: &[u8]) -> String {
    header_str(headers, HEADER_REQUEST_ID)
        .or_else(|| header_str(headers, HEADER_DECISION_ID))
        .map(str::to_string)
        .unwrap_or_else(|| format!("body-{:016x}", request_key(0, &String::from_utf8_lossy(body))))
}

async fn chat_completions(State(state): State<Arc<SimState>>, headers: HeaderMap, body: Bytes) -> Response {
    let Some(category) = header_str(&headers, HEADER_CATEGORY) else {
        return error(StatusCode::BAD_REQUEST, format!("missing {HEADER_CATEGORY} header"));
    };
    let request = match RequestEnvelope::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let reasoning_mode = match infer_mode(&headers, &request, &state.settings.field_path) {
        Ok(m) => m,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let meta = SimMeta {
        category_label: category.to_string(),
        reasoning_mode,
        request_id: request_id(&headers, &body),
    };
    let sim = match simulate(&request, &meta, &state.model) {
        Ok(s) => s,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let delay = sim.latency_ms * state.settings.delay_scale;
    if delay > 0.0 {
        tokio::time::sleep(Duration::from_secs_f64(delay / 1000.0)).await;
    }
    (StatusCode::OK, [(header::CONTENT_TYPE, "application/json")], sim.body_bytes()).into_response()
}

#[cfg(test)]
mod tests {
    use super::*;
    use axum::http::HeaderValue;
    use semrouter_core::samples;

    fn headers(pairs: &[(&'static str, &str)]) -> HeaderMap {
        let mut h = HeaderMap::new();
        for (k, v) in pairs {
            h.insert(*k, HeaderValue::from_str(v).unwrap());
        }
        h
    }

    fn envelope(extra: serde_json::Value) -> RequestEnvelope {
        let mut doc = json!({"model": "m", "messages": [{"role": "user", "content": "hi"}]});
        doc.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
        RequestEnvelope::from_slice(doc.to_string().as_bytes()).unwrap()
    }

    #[test]
    fn mode_precedence() {
        let flag_off = envelope(json!({"chat_template_kwargs": {"enable_thinking": false}}));
        assert_eq!(infer_mode(&headers(&[]), &flag_off, DEFAULT_FIELD_PATH), Ok(ReasoningMode::Off));
        assert_eq!(
            infer_mode(&headers(&[(HEADER_REASONING, "on")]), &flag_off, DEFAULT_FIELD_PATH),
            Ok(ReasoningMode::On)
        );
        assert_eq!(infer_mode(&headers(&[]), &envelope(json!({})), DEFAULT_FIELD_PATH), Ok(ReasoningMode::On));
        assert!(infer_mode(&headers(&[(HEADER_REASONING, "maybe")]), &flag_off, DEFAULT_FIELD_PATH).is_err());
    }

    #[test]
    fn request_id_precedence() {
        let both = headers(&[(HEADER_REQUEST_ID, "r1"), (HEADER_DECISION_ID, "d1")]);
        assert_eq!(request_id(&both, b"{}"), "r1");
        assert_eq!(request_id(&headers(&[(HEADER_DECISION_ID, "d1")]), b"{}"), "d1");
        assert_eq!(request_id(&headers(&[]), b"{}"), request_id(&headers(&[]), b"{}"));
        assert_ne!(request_id(&headers(&[]), b"{}"), request_id(&headers(&[]), b"[]"));
    }

    #[test]
    fn shipped_model_loads() {
        let model = CostModel::from_yaml_str(samples::TABLE1_YAML).unwrap();
        let _app = sim_app(model, SimSettings::default());
    }
}
