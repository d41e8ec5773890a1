//! Trusted-node key relay: carries one Global Key across a chain of QKD
//! hops by XOR one-time-pad re-encoding.
//!
//! The source node draws a fresh Quantum Key from hop 1 and publishes
//! NK-1 = GK xor QK-1. The next node recovers GK (it also holds QK-1),
//! draws QK-2, publishes NK-2 = GK xor QK-2, and so on until the far end
//! extracts GK. Network Keys are safe to log: each is the pad of a
//! uniformly random quantum key over the global key, so the public
//! transcript is itself uniform. Quantum-key and global-key bytes never
//! leave the nodes, and `Debug` for those types is redacted.

use rand::RngCore;
use thiserror::Error;
use uuid::Uuid;

use crate::keystore::{KeyPool, KeystoreError, KEY_SIZE_BYTES};

/// The 256-bit secret being relayed end to end. `Debug` prints no bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct GlobalKey(pub(crate) [u8; KEY_SIZE_BYTES]);

impl GlobalKey {
    /// Fresh key from a cryptographically strong generator.
    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut bytes = [0u8; KEY_SIZE_BYTES];
        rng.fill_bytes(&mut bytes);
        GlobalKey(bytes)
    }

    pub fn from_bytes(bytes: [u8; KEY_SIZE_BYTES]) -> Self {
        GlobalKey(bytes)
    }

    /// Key bytes, for feeding a key-derivation step. Not for logging.
    pub fn expose_bytes(&self) -> &[u8; KEY_SIZE_BYTES] {
        &self.0
    }
}

impl std::fmt::Debug for GlobalKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("GlobalKey([redacted])")
    }
}

impl TryFrom<&[u8]> for GlobalKey {
    type Error = KeystoreError;
    fn try_from(value: &[u8]) -> Result<Self, Self::Error> {
        let bytes: [u8; KEY_SIZE_BYTES] =
            value.try_into().map_err(|_| KeystoreError::BadKeyLength(value.len()))?;
        Ok(GlobalKey(bytes))
    }
}

/// One hop's QKD-produced key, identical at both ends of that hop.
/// `Debug` prints the hop only.
#[derive(Clone, PartialEq, Eq)]
pub struct QuantumKey {
    pub(crate) bytes: [u8; KEY_SIZE_BYTES],
    pub hop_index: usize,
}

impl QuantumKey {
    pub fn new(bytes: [u8; KEY_SIZE_BYTES], hop_index: usize) -> Self {
        assert!(hop_index >= 1, "hop indices are 1-based");
        QuantumKey { bytes, hop_index }
    }
}

impl std::fmt::Debug for QuantumKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "QuantumKey {{ hop_index: {}, bytes: [redacted] }}", self.hop_index)
    }
}

/// The re-encoded key published between nodes. Treated as public, so it
/// derives a transparent `Debug`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkKey {
    pub bytes: [u8; KEY_SIZE_BYTES],
    pub hop_index: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RelayError {
    #[error("hop {hop_index}: {source}")]
    KeyDraw { hop_index: usize, source: KeystoreError },
    #[error("network key of hop {nk_hop} combined with quantum key of hop {qk_hop}")]
    HopMismatch { nk_hop: usize, qk_hop: usize },
}

/// Bitwise exclusive-or of two 256-bit strings. Length equality is enforced
/// by the array type. Self-inverse: `xor_combine(xor_combine(a, b), b) == a`.
pub fn xor_combine(a: &[u8; KEY_SIZE_BYTES], b: &[u8; KEY_SIZE_BYTES]) -> [u8; KEY_SIZE_BYTES] {
    let mut out = [0u8; KEY_SIZE_BYTES];
    for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b.iter())) {
        *o = x ^ y;
    }
    out
}

/// Pads the global key with one hop's quantum key, producing the public
/// network key for that hop.
pub fn encode_hop(gk: &GlobalKey, qk: &QuantumKey) -> NetworkKey {
    NetworkKey { bytes: xor_combine(&gk.0, &qk.bytes), hop_index: qk.hop_index }
}

/// Recovers the global key from a network key using the matching hop's
/// quantum key.
pub fn decode_hop(nk: &NetworkKey, qk: &QuantumKey) -> Result<GlobalKey, RelayError> {
    if nk.hop_index != qk.hop_index {
        return Err(RelayError::HopMismatch { nk_hop: nk.hop_index, qk_hop: qk.hop_index });
    }
    Ok(GlobalKey(xor_combine(&nk.bytes, &qk.bytes)))
}

/// Public record of one hop of a delivery: fresh ids for the network key and
/// the quantum key it consumed, plus the network key itself (which is safe
/// to publish).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopTrace {
    pub hop_index: usize,
    pub nk_id: Uuid,
    pub qk_id: Uuid,
    pub network_key: NetworkKey,
}

impl HopTrace {
    /// The event-log line for this hop.
    pub fn event_line(&self) -> String {
        format!("hop,{},nk_id,{},qk_id,{}", self.hop_index, self.nk_id, self.qk_id)
    }
}

/// A completed end-to-end delivery.
#[derive(Debug)]
pub struct Delivery {
    /// The key as extracted at the far end; equals the source key by the
    /// XOR involution.
    pub delivered: GlobalKey,
    pub hops: Vec<HopTrace>,
    /// Health notes (currently only the all-zero quantum key guard); never
    /// carries key bytes.
    pub warnings: Vec<String>,
}

/// Relays `gk` across the chain, drawing one quantum key per hop from that
/// hop's pool (master draw plus slave pickup, so both sides consume it).
/// `rng` mints the public network-key ids.
///
/// Aborts on the first hop whose pool cannot supply a key; keys consumed by
/// earlier hops stay consumed, later pools are untouched, and no partial
/// secret leaves the function.
pub fn chain_deliver(
    gk: &GlobalKey,
    hop_pools: &mut [KeyPool],
    rng: &mut impl RngCore,
) -> Result<Delivery, RelayError> {
    let mut hops = Vec::with_capacity(hop_pools.len());
    let mut warnings = Vec::new();
    let mut carried = gk.clone();
    for (i, pool) in hop_pools.iter_mut().enumerate() {
        let hop_index = i + 1;
        let draw = |source| RelayError::KeyDraw { hop_index, source };
        // Master-side draw reserves the key; slave-side pickup consumes the
        // reservation. Same bytes both times, by the QKD pairing contract.
        let enc = pool.get_enc_keys(1, 256).map_err(draw)?;
        let dec = pool.get_dec_keys(&[enc[0].key_id]).map_err(draw)?;
        let qk = QuantumKey::new(dec[0].key_bytes, hop_index);
        if qk.bytes == [0u8; KEY_SIZE_BYTES] {
            warnings.push(format!(
                "hop {hop_index}: quantum key {} is all zeros; check the key source",
                dec[0].key_id
            ));
        }
        let nk = encode_hop(&carried, &qk);
        carried = decode_hop(&nk, &qk).expect("hop indices match by construction");
        let mut raw = [0u8; 16];
        rng.fill_bytes(&mut raw);
        hops.push(HopTrace {
            hop_index,
            nk_id: uuid::Builder::from_random_bytes(raw).into_uuid(),
            qk_id: dec[0].key_id,
            network_key: nk,
        });
    }
    Ok(Delivery { delivered: carried, hops, warnings })
}
