//! Client side of the key-delivery API.

use base64::prelude::{Engine, BASE64_STANDARD};
use serde_json::json;
use thiserror::Error;
use uuid::Uuid;

use qspan_core::encryptor::{GkDelivery, KeySource, KeySourceError};
use qspan_core::keystore::{KeyRecord, StatusReport, KEY_SIZE_BYTES};
use qspan_core::relay::GlobalKey;

use crate::{KeyContainer, WireKey};

#[derive(Debug, Error)]
pub enum KdClientError {
    #[error("key-delivery transport error: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("key-delivery request failed with status {status}: {message}")]
    Api { status: u16, message: String },
    #[error("malformed key in response: {0}")]
    MalformedKey(String),
}

/// Async client for one key-delivery service.
#[derive(Clone)]
pub struct KdClient {
    base_url: String,
    http: reqwest::Client,
}

impl KdClient {
    /// `base_url` is scheme, host, and port, e.g. `http://127.0.0.1:8600`.
    pub fn new(base_url: impl Into<String>) -> Self {
        let mut base_url = base_url.into();
        while base_url.ends_with('/') {
            base_url.pop();
        }
        KdClient { base_url, http: reqwest::Client::new() }
    }

    fn url(&self, sae_id: &str, leaf: &str) -> String {
        format!("{}/api/v1/keys/{sae_id}/{leaf}", self.base_url)
    }

    async fn parse_error(response: reqwest::Response) -> KdClientError {
        let status = response.status().as_u16();
        let message = match response.json::<serde_json::Value>().await {
            Ok(body) => body
                .get("message")
                .and_then(|m| m.as_str())
                .unwrap_or("no error message")
                .to_string(),
            Err(_) => "unreadable error body".to_string(),
        };
        KdClientError::Api { status, message }
    }

    fn decode(container: KeyContainer) -> Result<Vec<KeyRecord>, KdClientError> {
        container
            .keys
            .into_iter()
            .map(|WireKey { key_id, key }| {
                let bytes = BASE64_STANDARD
                    .decode(&key)
                    .map_err(|e| KdClientError::MalformedKey(format!("key {key_id}: {e}")))?;
                let key_bytes: [u8; KEY_SIZE_BYTES] = bytes.try_into().map_err(|b: Vec<u8>| {
                    KdClientError::MalformedKey(format!(
                        "key {key_id}: {} octets, want {KEY_SIZE_BYTES}",
                        b.len()
                    ))
                })?;
                Ok(KeyRecord { key_id, key_bytes })
            })
            .collect()
    }

    pub async fn get_status(&self, slave_sae_id: &str) -> Result<StatusReport, KdClientError> {
        let response = self.http.get(self.url(slave_sae_id, "status")).send().await?;
        if !response.status().is_success() {
            return Err(Self::parse_error(response).await);
        }
        Ok(response.json().await?)
    }

    pub async fn get_enc_keys(
        &self,
        slave_sae_id: &str,
        number: usize,
    ) -> Result<Vec<KeyRecord>, KdClientError> {
        let response = self
            .http
            .post(self.url(slave_sae_id, "enc_keys"))
            .json(&json!({ "number": number }))
            .send()
            .await?;
        if !response.status().is_success() {
            return Err(Self::parse_error(response).await);
        }
        Self::decode(response.json().await?)
    }

    pub async fn get_dec_keys(
        &self,
        master_sae_id: &str,
        key_ids: &[Uuid],
    ) -> Result<Vec<KeyRecord>, KdClientError> {
        let response = self
            .http
            .post(self.url(master_sae_id, "dec_keys"))
            .json(&json!({ "key_IDs": key_ids }))
            .send()
            .await?;
        if !response.status().is_success() {
            return Err(Self::parse_error(response).await);
        }
        Self::decode(response.json().await?)
    }
}

/// Master-side global-key source backed by the key-delivery API: each rekey
/// draws one fresh key over HTTP. Drive it from a plain thread; it owns a
/// private single-thread runtime, so constructing or calling it inside
/// another async runtime panics.
pub struct HttpKeySource {
    client: KdClient,
    slave_sae_id: String,
    runtime: tokio::runtime::Runtime,
}

impl HttpKeySource {
    pub fn new(base_url: impl Into<String>, slave_sae_id: impl Into<String>) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
        Ok(HttpKeySource {
            client: KdClient::new(base_url),
            slave_sae_id: slave_sae_id.into(),
            runtime,
        })
    }
}

impl KeySource for HttpKeySource {
    fn deliver_gk(&mut self) -> Result<GkDelivery, KeySourceError> {
        let drawn = self.runtime.block_on(self.client.get_enc_keys(&self.slave_sae_id, 1));
        match drawn {
            Ok(keys) => {
                let record = keys.into_iter().next().ok_or_else(|| {
                    KeySourceError::Unavailable("empty key container".to_string())
                })?;
                Ok(GkDelivery { gk: GlobalKey::from_bytes(record.key_bytes), gk_id: record.key_id })
            }
            Err(KdClientError::Api { status: 503, message }) => {
                Err(KeySourceError::Insufficient(message))
            }
            Err(e) => Err(KeySourceError::Unavailable(e.to_string())),
        }
    }
}
