use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("upstream unreachable: {0}")]
    Unreachable(String),
    #[error("upstream returned {status}: {body}")]
    UpstreamStatus { status: u16, body: String },
    #[error("upstream stream violates the contract: missing {missing_field}")]
    MissingField { missing_field: String, detail: String },
    #[error("upstream stream error: {0}")]
    Stream(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("upstream health check failed: {0}")]
    Health(String),
}

impl GatewayError {
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::Config(_) => "invalid_config",
            GatewayError::BadRequest(_) => "invalid_request",
            GatewayError::Unreachable(_) => "upstream_unreachable",
            GatewayError::UpstreamStatus { .. } => "upstream_error",
            GatewayError::MissingField { .. } => "upstream_contract_violation",
            GatewayError::Stream(_) => "upstream_stream_error",
            GatewayError::Bind { .. } => "bind_failure",
            GatewayError::Health(_) => "upstream_unhealthy",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            GatewayError::BadRequest(_) => StatusCode::BAD_REQUEST,
            GatewayError::Config(_) | GatewayError::Bind { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_GATEWAY,
        }
    }

    /// OpenAI-style error object with gateway-specific fields.
    pub fn body(&self) -> Value {
        let mut err = json!({
            "type": self.kind(),
            "message": self.to_string(),
        });
        match self {
            GatewayError::MissingField { missing_field, detail } => {
                err["missing_field"] = json!(missing_field);
                err["detail"] = json!(detail);
            }
            GatewayError::UpstreamStatus { status, .. } => err["upstream_status"] = json!(status),
            _ => {}
        }
        json!({ "error": err })
    }
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}
