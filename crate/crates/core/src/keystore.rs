//! Per-node key store with ETSI GS QKD 014-style delivery semantics.
//!
//! A [`KeyPool`] holds up to `max_key_count` 256-bit keys in FIFO order. The
//! master side of an encryptor pairing draws fresh keys with
//! [`KeyPool::get_enc_keys`], which moves them to a reservation map; the
//! slave side picks the same bytes up by id with [`KeyPool::get_dec_keys`].
//! [`KeyPool::get_status`] snapshots the counters without touching key
//! traffic.
//!
//! Key bytes never appear in `Debug` output, logs, or status reports; only
//! ids and counts do.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

pub const KEY_SIZE_BITS: u32 = 256;
pub const KEY_SIZE_BYTES: usize = (KEY_SIZE_BITS / 8) as usize;
pub const DEFAULT_MAX_KEY_COUNT: usize = 1000;
pub const MAX_KEY_PER_REQUEST: usize = 1000;

/// One stored key. `Debug` prints the id only.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyRecord {
    pub key_id: Uuid,
    pub key_bytes: [u8; KEY_SIZE_BYTES],
}

impl std::fmt::Debug for KeyRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyRecord")
            .field("key_id", &self.key_id)
            .field("key_bytes", &"[redacted]")
            .finish()
    }
}

/// Who is asking and on whose behalf; echoed into status reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identities {
    pub source_kme_id: String,
    pub target_kme_id: String,
    pub master_sae_id: String,
    pub slave_sae_id: String,
}

/// The Get Status response body. Field names follow the key-delivery API
/// wire format exactly, capitals included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusReport {
    #[serde(rename = "source_KME_ID")]
    pub source_kme_id: String,
    #[serde(rename = "target_KME_ID")]
    pub target_kme_id: String,
    #[serde(rename = "master_SAE_ID")]
    pub master_sae_id: String,
    #[serde(rename = "slave_SAE_ID")]
    pub slave_sae_id: String,
    pub key_size: u32,
    pub stored_key_count: usize,
    pub max_key_count: usize,
    pub max_key_per_request: usize,
    pub max_key_size: u32,
    pub min_key_size: u32,
    #[serde(rename = "max_SAE_ID_count")]
    pub max_sae_id_count: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeystoreError {
    #[error("pool is at capacity ({0} keys)")]
    PoolFull(usize),
    #[error("key must be {KEY_SIZE_BYTES} octets, got {0}")]
    BadKeyLength(usize),
    #[error("requested {requested} keys but only {available} stored")]
    InsufficientKeys { requested: usize, available: usize },
    #[error("only {KEY_SIZE_BITS}-bit keys are provisioned, got {0}")]
    UnsupportedSize(u32),
    #[error("number of keys must be 1..={MAX_KEY_PER_REQUEST}, got {0}")]
    InvalidCount(usize),
    #[error("key id {0} is not reserved here")]
    UnknownKeyId(Uuid),
}

/// FIFO pool of 256-bit keys plus the reservation map for keys already
/// handed to the master side and awaiting slave pickup.
pub struct KeyPool {
    stored: VecDeque<KeyRecord>,
    reserved: HashMap<Uuid, KeyRecord>,
    max_key_count: usize,
    /// Every id this pool has ever minted; new ids are drawn until unique.
    issued_ids: HashSet<Uuid>,
    rng: ChaCha12Rng,
    pushed_count: u64,
    delivered_count: u64,
}

impl KeyPool {
    /// Pool with deterministic id generation, for simulation.
    pub fn seeded(seed: u64) -> Self {
        Self::with_rng(ChaCha12Rng::seed_from_u64(seed))
    }

    /// Pool drawing ids from operating-system entropy, for service mode.
    pub fn from_entropy() -> Self {
        Self::with_rng(ChaCha12Rng::from_os_rng())
    }

    fn with_rng(rng: ChaCha12Rng) -> Self {
        KeyPool {
            stored: VecDeque::new(),
            reserved: HashMap::new(),
            max_key_count: DEFAULT_MAX_KEY_COUNT,
            issued_ids: HashSet::new(),
            rng,
            pushed_count: 0,
            delivered_count: 0,
        }
    }

    pub fn with_max_key_count(mut self, max: usize) -> Self {
        self.max_key_count = max;
        self
    }

    pub fn stored_key_count(&self) -> usize {
        self.stored.len()
    }

    pub fn reserved_key_count(&self) -> usize {
        self.reserved.len()
    }

    pub fn max_key_count(&self) -> usize {
        self.max_key_count
    }

    /// Free capacity for new keys.
    pub fn free_capacity(&self) -> usize {
        self.max_key_count - self.stored.len()
    }

    /// Total keys ever pushed.
    pub fn pushed_count(&self) -> u64 {
        self.pushed_count
    }

    /// Total keys ever moved out by `get_enc_keys`.
    pub fn delivered_count(&self) -> u64 {
        self.delivered_count
    }

    fn mint_id(&mut self) -> Uuid {
        loop {
            let mut raw = [0u8; 16];
            self.rng.fill_bytes(&mut raw);
            let id = uuid::Builder::from_random_bytes(raw).into_uuid();
            if self.issued_ids.insert(id) {
                return id;
            }
        }
    }

    /// Appends one key produced by the QKD link. Capacity is checked before
    /// an id is minted, so a rejected push has no side effects.
    pub fn push_key(&mut self, key_bytes: &[u8]) -> Result<Uuid, KeystoreError> {
        if self.stored.len() >= self.max_key_count {
            return Err(KeystoreError::PoolFull(self.max_key_count));
        }
        let bytes: [u8; KEY_SIZE_BYTES] = key_bytes
            .try_into()
            .map_err(|_| KeystoreError::BadKeyLength(key_bytes.len()))?;
        let key_id = self.mint_id();
        self.stored.push_back(KeyRecord { key_id, key_bytes: bytes });
        self.pushed_count += 1;
        Ok(key_id)
    }

    /// The master-side Get Key call: pops `number` keys in FIFO order, parks
    /// them in the reservation map for the slave, and returns them. All or
    /// nothing; a failed call changes no state.
    pub fn get_enc_keys(
        &mut self,
        number: usize,
        size_bits: u32,
    ) -> Result<Vec<KeyRecord>, KeystoreError> {
        if number == 0 || number > MAX_KEY_PER_REQUEST {
            return Err(KeystoreError::InvalidCount(number));
        }
        if size_bits != KEY_SIZE_BITS {
            return Err(KeystoreError::UnsupportedSize(size_bits));
        }
        if self.stored.len() < number {
            return Err(KeystoreError::InsufficientKeys {
                requested: number,
                available: self.stored.len(),
            });
        }
        let mut out = Vec::with_capacity(number);
        for _ in 0..number {
            let record = self.stored.pop_front().expect("count checked above");
            self.reserved.insert(record.key_id, record.clone());
            out.push(record);
        }
        self.delivered_count += number as u64;
        Ok(out)
    }

    /// The slave-side Get Key with Key IDs call: returns and removes the
    /// reserved records, in request order. All or nothing; if any id is
    /// unknown, nothing is removed. A second fetch of the same id fails.
    pub fn get_dec_keys(&mut self, key_ids: &[Uuid]) -> Result<Vec<KeyRecord>, KeystoreError> {
        if let Some(missing) = key_ids.iter().find(|id| !self.reserved.contains_key(id)) {
            return Err(KeystoreError::UnknownKeyId(*missing));
        }
        Ok(key_ids
            .iter()
            .map(|id| self.reserved.remove(id).expect("presence checked above"))
            .collect())
    }

    /// Consistent counter snapshot; never touches key traffic.
    pub fn get_status(&self, identities: &Identities) -> StatusReport {
        StatusReport {
            source_kme_id: identities.source_kme_id.clone(),
            target_kme_id: identities.target_kme_id.clone(),
            master_sae_id: identities.master_sae_id.clone(),
            slave_sae_id: identities.slave_sae_id.clone(),
            key_size: KEY_SIZE_BITS,
            stored_key_count: self.stored.len(),
            max_key_count: self.max_key_count,
            max_key_per_request: MAX_KEY_PER_REQUEST,
            max_key_size: 1_048_576,
            min_key_size: 8,
            max_sae_id_count: 0,
        }
    }

    /// Administrative cleanup of reservations nobody picked up. Returns how
    /// many were dropped.
    pub fn purge_reserved(&mut self) -> usize {
        let n = self.reserved.len();
        self.reserved.clear();
        n
    }
}

impl std::fmt::Debug for KeyPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPool")
            .field("stored", &self.stored.len())
            .field("reserved", &self.reserved.len())
            .field("max_key_count", &self.max_key_count)
            .finish_non_exhaustive()
    }
}
