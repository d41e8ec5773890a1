//! HTTP key-delivery service over a [`KeyPool`], plus the matching client.
//!
//! The wire protocol follows the ETSI GS QKD 014 REST shape:
//!
//! - `GET  /api/v1/keys/{slave_SAE_ID}/status` returns the pool status
//! - `POST /api/v1/keys/{slave_SAE_ID}/enc_keys` with `{"number": n,
//!   "size": 256}` (both optional) draws fresh keys for the master side
//! - `POST /api/v1/keys/{master_SAE_ID}/dec_keys` with `{"key_IDs": [...]}`
//!   picks reserved keys up on the slave side
//!
//! Key containers serialize as `{"keys": [{"key_ID": ..., "key": base64}]}`.
//! A path naming any other SAE is 404, malformed or unsupported requests are
//! 400, and an exhausted pool is 503; error bodies carry a single `message`
//! field. Responses never include key bytes except in the key containers
//! themselves, and nothing is ever logged.

use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::prelude::{Engine, BASE64_STANDARD};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use qspan_core::keystore::{Identities, KeyPool, KeyRecord, KeystoreError, KEY_SIZE_BITS};
use qspan_core::simkit::Scenario;

mod client;
pub use client::{HttpKeySource, KdClient, KdClientError};

/// Shared service state: one node's pool and the identity tuple it serves.
#[derive(Clone)]
pub struct KmsState {
    pool: Arc<Mutex<KeyPool>>,
    identities: Identities,
}

impl KmsState {
    pub fn new(pool: KeyPool, identities: Identities) -> Self {
        KmsState { pool: Arc::new(Mutex::new(pool)), identities }
    }

    /// Handle onto the pool, e.g. for a producer feeding it keys.
    pub fn pool(&self) -> Arc<Mutex<KeyPool>> {
        Arc::clone(&self.pool)
    }

    pub fn identities(&self) -> &Identities {
        &self.identities
    }
}

/// Wire form of one delivered key.
#[derive(Debug, Serialize, Deserialize)]
pub struct WireKey {
    #[serde(rename = "key_ID")]
    pub key_id: Uuid,
    /// Base64 of the 32 key octets.
    pub key: String,
}

/// Wire form of an enc_keys / dec_keys response.
#[derive(Debug, Serialize, Deserialize)]
pub struct KeyContainer {
    pub keys: Vec<WireKey>,
}

impl KeyContainer {
    fn from_records(records: Vec<KeyRecord>) -> Self {
        KeyContainer {
            keys: records
                .into_iter()
                .map(|r| WireKey { key_id: r.key_id, key: BASE64_STANDARD.encode(r.key_bytes) })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ErrorBody {
    message: String,
}

struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn unknown_sae(sae_id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, format!("no key association for SAE {sae_id:?}"))
    }
}

impl From<KeystoreError> for ApiError {
    fn from(e: KeystoreError) -> Self {
        let status = match e {
            KeystoreError::InsufficientKeys { .. } => StatusCode::SERVICE_UNAVAILABLE,
            KeystoreError::UnsupportedSize(_)
            | KeystoreError::InvalidCount(_)
            | KeystoreError::UnknownKeyId(_)
            | KeystoreError::BadKeyLength(_) => StatusCode::BAD_REQUEST,
            KeystoreError::PoolFull(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { message: self.message })).into_response()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncKeysRequest {
    #[serde(default = "default_number")]
    pub number: usize,
    #[serde(default = "default_size")]
    pub size: u32,
}

fn default_number() -> usize {
    1
}

fn default_size() -> u32 {
    KEY_SIZE_BITS
}

impl Default for EncKeysRequest {
    fn default() -> Self {
        EncKeysRequest { number: default_number(), size: default_size() }
    }
}

/// One entry of a dec_keys id list; both the bare-string form and the
/// object form are accepted.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum KeyIdEntry {
    Plain(Uuid),
    Tagged {
        #[serde(rename = "key_ID")]
        key_id: Uuid,
    },
}

impl KeyIdEntry {
    fn id(&self) -> Uuid {
        match *self {
            KeyIdEntry::Plain(id) | KeyIdEntry::Tagged { key_id: id } => id,
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct DecKeysRequest {
    #[serde(rename = "key_IDs")]
    pub key_ids: Vec<KeyIdEntry>,
}

async fn status_handler(
    State(state): State<KmsState>,
    Path(sae_id): Path<String>,
) -> Result<Json<qspan_core::keystore::StatusReport>, ApiError> {
    if sae_id != state.identities.slave_sae_id {
        return Err(ApiError::unknown_sae(&sae_id));
    }
    let pool = state.pool.lock().expect("pool mutex");
    Ok(Json(pool.get_status(&state.identities)))
}

/// Reads an optional JSON body into `T`, mapping malformed input to 400.
/// An absent or empty body yields the default.
fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &[u8]) -> Result<T, ApiError> {
    if body.is_empty() {
        return Ok(T::default());
    }
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))
}

async fn enc_keys_handler(
    State(state): State<KmsState>,
    Path(sae_id): Path<String>,
    body: axum::body::Bytes,
) -> Result<Json<KeyContainer>, ApiError> {
    if sae_id != state.identities.slave_sae_id {
        return Err(ApiError::unknown_sae(&sae_id));
    }
    let request: EncKeysRequest = parse_body(&body)?;
    let mut pool = state.pool.lock().expect("pool mutex");
    let records = pool.get_enc_keys(request.number, request.size)?;
    Ok(Json(KeyContainer::from_records(records)))
}

async fn dec_keys_handler(
    State(state): State<KmsState>,
    Path(sae_id): Path<String>,
    body: axum::body::Bytes,
) -> Result<Json<KeyContainer>, ApiError> {
    if sae_id != state.identities.master_sae_id {
        return Err(ApiError::unknown_sae(&sae_id));
    }
    if body.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "request body with key_IDs required"));
    }
    let request: DecKeysRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;
    let ids: Vec<Uuid> = request.key_ids.iter().map(KeyIdEntry::id).collect();
    let mut pool = state.pool.lock().expect("pool mutex");
    let records = pool.get_dec_keys(&ids)?;
    Ok(Json(KeyContainer::from_records(records)))
}

/// The key-delivery routes over `state`.
pub fn router(state: KmsState) -> Router {
    Router::new()
        .route("/api/v1/keys/{sae_id}/status", get(status_handler))
        .route("/api/v1/keys/{sae_id}/enc_keys", post(enc_keys_handler))
        .route("/api/v1/keys/{sae_id}/dec_keys", post(dec_keys_handler))
        .with_state(state)
}

/// Derives a service setup from a scenario: the pool and identity tuple of
/// the chain's first hop, and that hop's production rate in keys per second.
pub fn service_config_from_scenario(scenario: &Scenario) -> (KeyPool, Identities, f64) {
    let link = &scenario.links[0];
    let pairing = &scenario.pairings[0];
    let identities = Identities {
        source_kme_id: link.from.clone(),
        target_kme_id: link.to.clone(),
        master_sae_id: pairing.master_sae_id.clone(),
        slave_sae_id: pairing.slave_sae_id.clone(),
    };
    let mut pool = KeyPool::from_entropy();
    let mut rng = ChaCha12Rng::from_os_rng();
    for _ in 0..scenario.initial_pool_fill {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        pool.push_key(&bytes).expect("validated fill fits the pool");
    }
    let rate = if scenario.produce_keys { link.estimate().skr_bps / 256.0 } else { 0.0 };
    (pool, identities, rate)
}

/// Feeds `pool` with fresh entropy keys at `rate` keys per second until the
/// pool handle is dropped elsewhere; surplus beyond capacity is discarded.
pub async fn produce_keys(pool: Arc<Mutex<KeyPool>>, rate: f64) {
    let mut acc = 0.0f64;
    let mut rng = ChaCha12Rng::from_os_rng();
    loop {
        tokio::time::sleep(std::time::Duration::from_secs(1)).await;
        acc += rate;
        let want = acc.floor() as usize;
        acc -= want as f64;
        let mut pool = pool.lock().expect("pool mutex");
        let take = want.min(pool.free_capacity());
        for _ in 0..take {
            let mut bytes = [0u8; 32];
            rng.fill_bytes(&mut bytes);
            pool.push_key(&bytes).expect("capacity checked above");
        }
    }
}

/// Serves the API on `listener` until the process ends.
pub async fn serve(listener: tokio::net::TcpListener, state: KmsState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Blocking entry point for the CLI: binds `addr`, spawns the key producer,
/// and serves forever. Prints one line saying where it listens; never prints
/// key material.
pub fn serve_blocking(addr: &str, scenario: &Scenario) -> std::io::Result<()> {
    let (pool, identities, rate) = service_config_from_scenario(scenario);
    let state = KmsState::new(pool, identities);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!(
            "key-delivery service for SAE pair ({}, {}) listening on {} ({:.1} keys/s)",
            state.identities.master_sae_id,
            state.identities.slave_sae_id,
            listener.local_addr()?,
            rate
        );
        if rate > 0.0 {
            tokio::spawn(produce_keys(state.pool(), rate));
        }
        serve(listener, state).await
    })
}
