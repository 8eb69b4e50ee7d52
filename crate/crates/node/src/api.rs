use std::collections::HashMap;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use qdnet_core::etsi::{DecKeysRequest, EncKeysRequest, ErrorBody, KeyContainer, Status};

use crate::NodeService;

/// An API failure, rendered as `{"message": ...}` with its status code.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{status}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn unavailable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, message)
    }

    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { message: self.message })).into_response()
    }
}

/// HTTP routes of the ETSI GS QKD 014 key delivery API.
pub fn router(node: NodeService) -> Router {
    Router::new()
        .route("/api/v1/keys/{sae}/status", get(status))
        .route("/api/v1/keys/{sae}/enc_keys", get(enc_keys_get).post(enc_keys_post))
        .route("/api/v1/keys/{sae}/dec_keys", get(dec_keys_get).post(dec_keys_post))
        .with_state(node)
}

async fn status(State(node): State<NodeService>, Path(sae): Path<String>) -> Result<Json<Status>, ApiError> {
    node.status(&sae).map(Json)
}

fn parse_u32(query: &HashMap<String, String>, name: &str) -> Result<Option<u32>, ApiError> {
    query
        .get(name)
        .map(|v| {
            v.parse::<u32>()
                .map_err(|_| ApiError::bad_request(format!("{name} must be a non-negative integer, got `{v}`")))
        })
        .transpose()
}

async fn enc_keys_get(
    State(node): State<NodeService>,
    Path(sae): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Json<KeyContainer>, ApiError> {
    let number = parse_u32(&query, "number")?;
    let size = parse_u32(&query, "size")?;
    node.get_key(&sae, number, size).await.map(Json)
}

async fn enc_keys_post(
    State(node): State<NodeService>,
    Path(sae): Path<String>,
    body: Bytes,
) -> Result<Json<KeyContainer>, ApiError> {
    let request: EncKeysRequest = if body.iter().all(u8::is_ascii_whitespace) {
        EncKeysRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))?
    };
    node.get_key(&sae, request.number, request.size).await.map(Json)
}

async fn dec_keys_get(
    State(node): State<NodeService>,
    Path(sae): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Json<KeyContainer>, ApiError> {
    let key_id = query
        .get("key_ID")
        .ok_or_else(|| ApiError::bad_request("missing key_ID query parameter"))?;
    node.get_key_with_ids(&sae, std::slice::from_ref(key_id)).map(Json)
}

async fn dec_keys_post(
    State(node): State<NodeService>,
    Path(sae): Path<String>,
    body: Bytes,
) -> Result<Json<KeyContainer>, ApiError> {
    let request: DecKeysRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))?;
    let ids: Vec<String> = request.key_IDs.into_iter().map(|k| k.key_ID).collect();
    node.get_key_with_ids(&sae, &ids).map(Json)
}
