//! Paired-transponder encryption: session keys derived from a relayed
//! global key mixed with a pairing-wide Diffie-Hellman secret, refreshed on
//! a 60-second cadence, and used to seal data frames with AES-256-GCM.
//!
//! A [`Pairing`] models both line transponders of one encrypted wavelength.
//! The two boxes hold identical state by construction (same DH secret, same
//! delivered global keys, same derivation), so the pairing is a single
//! serialized state machine here. Every sixty seconds [`Pairing::rekey_tick`]
//! pulls one global key from its [`KeySource`] and derives the epoch's
//! session key; if the source is starved the pairing raises an alarm and
//! holds the last key rather than dropping traffic.
//!
//! Log records and epoch CSVs carry ids, epochs, and flags only, never key
//! or payload bytes.

use std::collections::HashSet;

use aes_gcm::aead::Aead;
use aes_gcm::{Aes256Gcm, KeyInit, Nonce};
use hkdf::Hkdf;
use rand::RngCore;
use sha2::Sha256;
use thiserror::Error;
use uuid::Uuid;

use crate::relay::GlobalKey;

/// Public context label bound into every session-key derivation.
pub const KDF_CONTEXT: &[u8] = b"otnsec-session";

/// Seconds per rekey epoch.
pub const EPOCH_SECONDS: u64 = 60;

pub const AUTH_TAG_BYTES: usize = 16;
pub const NONCE_BYTES: usize = 12;

/// The 512-bit pairing secret both transponders embed. `Debug` is redacted.
#[derive(Clone, PartialEq, Eq)]
pub struct DhKey(pub(crate) [u8; 64]);

impl DhKey {
    /// Raw secret, for derivation and test vectors. Not for logging.
    pub fn expose_bytes(&self) -> &[u8; 64] {
        &self.0
    }

    pub fn from_bytes(bytes: [u8; 64]) -> Self {
        DhKey(bytes)
    }
}

impl std::fmt::Debug for DhKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("DhKey([redacted])")
    }
}

/// One epoch's 256-bit cipher key plus the provenance needed for logs.
/// `Debug` prints epoch and source id only.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey {
    bytes: [u8; 32],
    /// 60-second slot index this key was derived for.
    pub epoch: u32,
    pub source_gk_id: Uuid,
}

impl SessionKey {
    /// Raw key, for cross-implementation test vectors. Not for logging.
    pub fn expose_bytes(&self) -> &[u8; 32] {
        &self.bytes
    }
}

impl std::fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionKey")
            .field("epoch", &self.epoch)
            .field("source_gk_id", &self.source_gk_id)
            .field("bytes", &"[redacted]")
            .finish()
    }
}

/// An encrypted frame. The nonce is the deterministic big-endian encoding
/// epoch (4 octets) followed by sequence (8 octets), so (epoch, sequence)
/// uniqueness is exactly nonce uniqueness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedFrame {
    pub epoch: u32,
    pub sequence: u64,
    pub nonce: [u8; NONCE_BYTES],
    pub ciphertext: Vec<u8>,
    pub auth_tag: [u8; AUTH_TAG_BYTES],
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncryptorError {
    #[error("pairing channel is down; no handshake completed")]
    HandshakeFailed,
    #[error("pairing holds no session key yet")]
    NotKeyed,
    #[error("sequence {sequence} already sealed in epoch {epoch}")]
    SequenceReused { epoch: u32, sequence: u64 },
    #[error("frame epoch {frame_epoch} does not match key epoch {key_epoch}")]
    EpochMismatch { frame_epoch: u32, key_epoch: u32 },
    #[error("frame (epoch {epoch}, sequence {sequence}) already opened")]
    Replayed { epoch: u32, sequence: u64 },
    #[error("frame nonce does not encode its (epoch, sequence)")]
    NonceMismatch,
    #[error("authentication failed")]
    AuthenticationFailed,
}

/// Why a rekey could not obtain a global key.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeySourceError {
    #[error("key pool exhausted: {0}")]
    Insufficient(String),
    #[error("key service unreachable: {0}")]
    Unavailable(String),
}

/// One delivered global key with its public id.
pub struct GkDelivery {
    pub gk: GlobalKey,
    pub gk_id: Uuid,
}

/// Where a pairing's global keys come from: a trusted-node relay chain in
/// simulation, the key-delivery HTTP API in service mode.
pub trait KeySource {
    fn deliver_gk(&mut self) -> Result<GkDelivery, KeySourceError>;
}

/// One row of the per-pairing epoch log: what key (if any) the epoch got.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub gk_id: Option<Uuid>,
    pub alarm: bool,
}

/// Writes epoch records as CSV with header `epoch,gk_id,alarm`; the id field
/// is empty for holdover epochs.
pub fn write_epoch_csv<W: std::io::Write>(
    mut w: W,
    records: &[EpochRecord],
) -> std::io::Result<()> {
    writeln!(w, "epoch,gk_id,alarm")?;
    for r in records {
        let id = r.gk_id.map(|u| u.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{}", r.epoch, id, r.alarm)?;
    }
    Ok(())
}

/// Extract-then-expand derivation of the epoch session key:
/// HKDF-SHA256 with input keying material dhk followed by gk, empty salt,
/// and the fixed public label [`KDF_CONTEXT`] as expansion info.
pub fn kdf_derive(dhk: &DhKey, gk: &GlobalKey, gk_id: Uuid, epoch: u32) -> SessionKey {
    let mut ikm = [0u8; 96];
    ikm[..64].copy_from_slice(&dhk.0);
    ikm[64..].copy_from_slice(gk.expose_bytes());
    let hk = Hkdf::<Sha256>::new(None, &ikm);
    let mut bytes = [0u8; 32];
    hk.expand(KDF_CONTEXT, &mut bytes)
        .expect("32 octets is a valid HKDF-SHA256 output length");
    SessionKey { bytes, epoch, source_gk_id: gk_id }
}

fn nonce_for(epoch: u32, sequence: u64) -> [u8; NONCE_BYTES] {
    let mut n = [0u8; NONCE_BYTES];
    n[..4].copy_from_slice(&epoch.to_be_bytes());
    n[4..].copy_from_slice(&sequence.to_be_bytes());
    n
}

/// Stateless AEAD seal under a session key. Callers that need the
/// sequence-reuse guard go through [`Pairing::seal_frame`].
pub fn seal_with(key: &SessionKey, plaintext: &[u8], sequence: u64) -> SealedFrame {
    let cipher = Aes256Gcm::new((&key.bytes).into());
    let nonce_bytes = nonce_for(key.epoch, sequence);
    let nonce = Nonce::from(nonce_bytes);
    let mut buf = cipher
        .encrypt(&nonce, plaintext)
        .expect("AES-GCM sealing of an in-memory payload cannot fail");
    let split = buf.len() - AUTH_TAG_BYTES;
    let auth_tag: [u8; AUTH_TAG_BYTES] = buf[split..].try_into().expect("tag is 16 octets");
    buf.truncate(split);
    SealedFrame { epoch: key.epoch, sequence, nonce: nonce_bytes, ciphertext: buf, auth_tag }
}

/// Stateless AEAD open. Rejects a frame whose key epoch disagrees, whose
/// nonce is not the canonical encoding, or whose tag fails.
pub fn open_with(key: &SessionKey, frame: &SealedFrame) -> Result<Vec<u8>, EncryptorError> {
    if frame.epoch != key.epoch {
        return Err(EncryptorError::EpochMismatch {
            frame_epoch: frame.epoch,
            key_epoch: key.epoch,
        });
    }
    if frame.nonce != nonce_for(frame.epoch, frame.sequence) {
        return Err(EncryptorError::NonceMismatch);
    }
    let cipher = Aes256Gcm::new((&key.bytes).into());
    let nonce = Nonce::from(frame.nonce);
    let mut buf = Vec::with_capacity(frame.ciphertext.len() + AUTH_TAG_BYTES);
    buf.extend_from_slice(&frame.ciphertext);
    buf.extend_from_slice(&frame.auth_tag);
    cipher.decrypt(&nonce, buf.as_slice()).map_err(|_| EncryptorError::AuthenticationFailed)
}

/// Both transponders of one encrypted wavelength, as a single serialized
/// state machine (their states are identical by construction).
pub struct Pairing {
    pub name: String,
    pub master_sae_id: String,
    pub slave_sae_id: String,
    dhk: DhKey,
    session: Option<SessionKey>,
    /// Highest epoch a tick has fired for; keeps epochs strictly increasing.
    last_epoch: Option<u32>,
    /// Pairing is running on a stale key because the source starved.
    pub holdover: bool,
    /// Sequences sealed under the current session key.
    sealed: HashSet<u64>,
    /// Frames already accepted by open_frame, across epochs.
    opened: HashSet<(u32, u64)>,
    pub epoch_log: Vec<EpochRecord>,
    pub gk_requests: u64,
    pub alarm_count: u64,
}

/// Establishes the pairing secret. Atomic: if the channel is down no state
/// is created at all.
pub fn dh_pair_setup(
    name: &str,
    master_sae_id: &str,
    slave_sae_id: &str,
    rng: &mut impl RngCore,
    channel_up: bool,
) -> Result<Pairing, EncryptorError> {
    if !channel_up {
        return Err(EncryptorError::HandshakeFailed);
    }
    let mut secret = [0u8; 64];
    rng.fill_bytes(&mut secret);
    Ok(Pairing {
        name: name.to_string(),
        master_sae_id: master_sae_id.to_string(),
        slave_sae_id: slave_sae_id.to_string(),
        dhk: DhKey(secret),
        session: None,
        last_epoch: None,
        holdover: false,
        sealed: HashSet::new(),
        opened: HashSet::new(),
        epoch_log: Vec::new(),
        gk_requests: 0,
        alarm_count: 0,
    })
}

impl Pairing {
    /// The shared 512-bit secret (equal at both endpoints by construction).
    pub fn dh_key(&self) -> &DhKey {
        &self.dhk
    }

    pub fn session(&self) -> Option<&SessionKey> {
        self.session.as_ref()
    }

    /// Epoch index for a clock second on a boundary: the first rekey happens
    /// at t = 60 s and starts epoch 0.
    fn boundary_epoch(clock_s: u64) -> Option<u32> {
        if clock_s == 0 || !clock_s.is_multiple_of(EPOCH_SECONDS) {
            return None;
        }
        Some((clock_s / EPOCH_SECONDS - 1) as u32)
    }

    /// Drives the rekey schedule. Off epoch boundaries this is a no-op; on
    /// each boundary it requests one global key and derives the epoch's
    /// session key. If the source cannot deliver, the pairing keeps the last
    /// key, raises an alarm, and retries at the next boundary.
    pub fn rekey_tick(
        &mut self,
        clock_s: u64,
        source: &mut dyn KeySource,
    ) -> Option<&SessionKey> {
        let epoch = Self::boundary_epoch(clock_s)?;
        if self.last_epoch.is_some_and(|last| last >= epoch) {
            return None;
        }
        self.last_epoch = Some(epoch);
        self.gk_requests += 1;
        match source.deliver_gk() {
            Ok(delivery) => {
                let key = kdf_derive(&self.dhk, &delivery.gk, delivery.gk_id, epoch);
                self.sealed.clear();
                self.holdover = false;
                self.epoch_log.push(EpochRecord {
                    epoch,
                    gk_id: Some(delivery.gk_id),
                    alarm: false,
                });
                self.session = Some(key);
                self.session.as_ref()
            }
            Err(_) => {
                self.holdover = true;
                self.alarm_count += 1;
                self.epoch_log.push(EpochRecord { epoch, gk_id: None, alarm: true });
                None
            }
        }
    }

    /// Seals a frame under the current session key, refusing any sequence
    /// already used with that key (nonce-misuse guard).
    pub fn seal_frame(
        &mut self,
        plaintext: &[u8],
        sequence: u64,
    ) -> Result<SealedFrame, EncryptorError> {
        let key = self.session.as_ref().ok_or(EncryptorError::NotKeyed)?;
        if !self.sealed.insert(sequence) {
            return Err(EncryptorError::SequenceReused { epoch: key.epoch, sequence });
        }
        Ok(seal_with(key, plaintext, sequence))
    }

    /// Opens a frame under the current session key, rejecting wrong-epoch
    /// frames, tampered content, and replays of already-accepted frames.
    pub fn open_frame(&mut self, frame: &SealedFrame) -> Result<Vec<u8>, EncryptorError> {
        let key = self.session.as_ref().ok_or(EncryptorError::NotKeyed)?;
        let slot = (frame.epoch, frame.sequence);
        if self.opened.contains(&slot) {
            return Err(EncryptorError::Replayed { epoch: frame.epoch, sequence: frame.sequence });
        }
        let plaintext = open_with(key, frame)?;
        self.opened.insert(slot);
        Ok(plaintext)
    }
}

impl std::fmt::Debug for Pairing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pairing")
            .field("name", &self.name)
            .field("master_sae_id", &self.master_sae_id)
            .field("slave_sae_id", &self.slave_sae_id)
            .field("epoch", &self.session.as_ref().map(|s| s.epoch))
            .field("holdover", &self.holdover)
            .field("gk_requests", &self.gk_requests)
            .field("alarm_count", &self.alarm_count)
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::collections::VecDeque;

    /// Key source that follows a script of per-request outcomes (`true` =
    /// deliver a fresh random key), then succeeds forever.
    struct ScriptedSource {
        rng: ChaCha12Rng,
        script: VecDeque<bool>,
        delivered: u64,
    }

    impl ScriptedSource {
        fn always_ok(seed: u64) -> Self {
            ScriptedSource { rng: ChaCha12Rng::seed_from_u64(seed), script: VecDeque::new(), delivered: 0 }
        }

        fn scripted(seed: u64, outcomes: &[bool]) -> Self {
            ScriptedSource {
                rng: ChaCha12Rng::seed_from_u64(seed),
                script: outcomes.iter().copied().collect(),
                delivered: 0,
            }
        }
    }

    impl KeySource for ScriptedSource {
        fn deliver_gk(&mut self) -> Result<GkDelivery, KeySourceError> {
            if !self.script.pop_front().unwrap_or(true) {
                return Err(KeySourceError::Insufficient("scripted starvation".into()));
            }
            self.delivered += 1;
            let gk = GlobalKey::generate(&mut self.rng);
            let mut raw = [0u8; 16];
            self.rng.fill_bytes(&mut raw);
            Ok(GkDelivery { gk, gk_id: uuid::Builder::from_random_bytes(raw).into_uuid() })
        }
    }

    fn keyed_pairing(seed: u64) -> (Pairing, ScriptedSource) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut pairing = dh_pair_setup("pair-a", "sae-m", "sae-s", &mut rng, true).unwrap();
        let mut source = ScriptedSource::always_ok(seed ^ 0xAB);
        assert!(pairing.rekey_tick(60, &mut source).is_some());
        (pairing, source)
    }

    fn dhk_from_fn(f: impl Fn(usize) -> u8) -> DhKey {
        let mut b = [0u8; 64];
        for (i, x) in b.iter_mut().enumerate() {
            *x = f(i);
        }
        DhKey::from_bytes(b)
    }

    fn gk_from_fn(f: impl Fn(usize) -> u8) -> GlobalKey {
        let mut b = [0u8; 32];
        for (i, x) in b.iter_mut().enumerate() {
            *x = f(i);
        }
        GlobalKey::from_bytes(b)
    }

    #[test]
    fn kdf_frozen_vectors() {
        // Cross-checked against an independent HKDF-SHA256 implementation
        // with ikm = dhk || gk, empty salt, info = "otnsec-session".
        let cases: [(DhKey, GlobalKey, &str); 3] = [
            (
                dhk_from_fn(|i| i as u8),
                gk_from_fn(|i| (i + 64) as u8),
                "81d582a851c0d8858020055b86a6c9ee34bfc5fe34737d653773403f07756898",
            ),
            (
                dhk_from_fn(|_| 0xAB),
                gk_from_fn(|_| 0xCD),
                "433a5307813c8db350284fb29c7ae09304aa00654f9393ab95eb71a341b7991a",
            ),
            (
                dhk_from_fn(|i| ((i * 7 + 3) % 256) as u8),
                gk_from_fn(|i| ((i * 13 + 1) % 256) as u8),
                "3d73ae4e215b5b58b9052e9d8a77120ad52a52d088793490eb6329ccf6df3a48",
            ),
        ];
        for (dhk, gk, want) in cases {
            let key = kdf_derive(&dhk, &gk, Uuid::nil(), 0);
            assert_eq!(hex::encode(key.expose_bytes()), want);
        }
    }

    #[test]
    fn kdf_is_deterministic_and_avalanches() {
        let dhk = dhk_from_fn(|i| i as u8);
        let gk = gk_from_fn(|i| (i * 3) as u8);
        let a = kdf_derive(&dhk, &gk, Uuid::nil(), 0);
        let b = kdf_derive(&dhk, &gk, Uuid::nil(), 0);
        assert_eq!(a.expose_bytes(), b.expose_bytes());

        let mut gk_flipped = *gk.expose_bytes();
        gk_flipped[17] ^= 0x01;
        let c = kdf_derive(&dhk, &GlobalKey::from_bytes(gk_flipped), Uuid::nil(), 0);
        assert_ne!(a.expose_bytes(), c.expose_bytes());

        let mut dhk_flipped = *dhk.expose_bytes();
        dhk_flipped[63] ^= 0x80;
        let d = kdf_derive(&DhKey::from_bytes(dhk_flipped), &gk, Uuid::nil(), 0);
        assert_ne!(a.expose_bytes(), d.expose_bytes());
    }

    #[test]
    fn seal_matches_frozen_aead_vector() {
        // Independent AES-256-GCM oracle: key 00..1f, epoch 1, sequence 2,
        // empty additional data.
        let key = SessionKey {
            bytes: std::array::from_fn(|i| i as u8),
            epoch: 1,
            source_gk_id: Uuid::nil(),
        };
        let frame = seal_with(&key, b"attack at dawn", 2);
        assert_eq!(hex::encode(frame.nonce), "000000010000000000000002");
        let mut wire = frame.ciphertext.clone();
        wire.extend_from_slice(&frame.auth_tag);
        assert_eq!(
            hex::encode(wire),
            "b1dc209a782ec2666b8dd7f7a4342c60413e3177a87d2f113d73c957f1d2"
        );
        assert_eq!(open_with(&key, &frame).unwrap(), b"attack at dawn");
    }

    #[test]
    fn round_trip_across_payload_sizes() {
        let (mut pairing, _) = keyed_pairing(1);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for (seq, size) in [0usize, 1, 13, 1024, 65536].into_iter().enumerate() {
            let mut payload = vec![0u8; size];
            rng.fill_bytes(&mut payload);
            let frame = pairing.seal_frame(&payload, seq as u64).unwrap();
            assert_eq!(frame.ciphertext.len(), size);
            assert_eq!(pairing.open_frame(&frame).unwrap(), payload);
        }
    }

    #[test]
    fn tampering_with_any_frame_field_fails_authentication() {
        let (mut pairing, _) = keyed_pairing(3);
        let frame = pairing.seal_frame(b"payload bytes", 9).unwrap();

        let mut bent = frame.clone();
        bent.ciphertext[4] ^= 0x40;
        assert_eq!(pairing.open_frame(&bent), Err(EncryptorError::AuthenticationFailed));

        let mut bent = frame.clone();
        bent.auth_tag[15] ^= 0x01;
        assert_eq!(pairing.open_frame(&bent), Err(EncryptorError::AuthenticationFailed));

        let mut bent = frame.clone();
        bent.nonce[11] ^= 0x02;
        assert_eq!(pairing.open_frame(&bent), Err(EncryptorError::NonceMismatch));

        // The untouched frame still opens after all those rejections.
        assert_eq!(pairing.open_frame(&frame).unwrap(), b"payload bytes");
    }

    #[test]
    fn wrong_pairing_key_fails_authentication() {
        let (mut a, _) = keyed_pairing(4);
        let (mut b, _) = keyed_pairing(5);
        let frame = a.seal_frame(b"for a only", 1).unwrap();
        assert_eq!(b.open_frame(&frame), Err(EncryptorError::AuthenticationFailed));
    }

    #[test]
    fn sequence_reuse_is_refused() {
        let (mut pairing, _) = keyed_pairing(6);
        pairing.seal_frame(b"first", 5).unwrap();
        assert_eq!(
            pairing.seal_frame(b"second", 5),
            Err(EncryptorError::SequenceReused { epoch: 0, sequence: 5 })
        );
        // After a rekey the sequence space is fresh.
        let mut source = ScriptedSource::always_ok(60);
        pairing.rekey_tick(120, &mut source).unwrap();
        pairing.seal_frame(b"third", 5).unwrap();
    }

    #[test]
    fn replayed_frame_is_rejected() {
        let (mut pairing, _) = keyed_pairing(7);
        let frame = pairing.seal_frame(b"once only", 2).unwrap();
        assert_eq!(pairing.open_frame(&frame).unwrap(), b"once only");
        assert_eq!(
            pairing.open_frame(&frame),
            Err(EncryptorError::Replayed { epoch: 0, sequence: 2 })
        );
    }

    #[test]
    fn stale_epoch_frame_is_rejected_after_rekey() {
        let (mut pairing, mut source) = keyed_pairing(8);
        let old = pairing.seal_frame(b"epoch zero", 0).unwrap();
        pairing.rekey_tick(120, &mut source).unwrap();
        assert_eq!(
            pairing.open_frame(&old),
            Err(EncryptorError::EpochMismatch { frame_epoch: 0, key_epoch: 1 })
        );
    }

    #[test]
    fn unkeyed_pairing_cannot_seal_or_open() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut pairing = dh_pair_setup("p", "m", "s", &mut rng, true).unwrap();
        assert_eq!(pairing.seal_frame(b"x", 0), Err(EncryptorError::NotKeyed));
        let (mut other, _) = keyed_pairing(10);
        let frame = other.seal_frame(b"x", 0).unwrap();
        assert_eq!(pairing.open_frame(&frame), Err(EncryptorError::NotKeyed));
    }

    #[test]
    fn handshake_fails_atomically_when_channel_is_down() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        assert_eq!(
            dh_pair_setup("p", "m", "s", &mut rng, false).unwrap_err(),
            EncryptorError::HandshakeFailed
        );
    }

    #[test]
    fn distinct_pairings_get_distinct_dh_keys() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let mut seen = HashSet::new();
        for i in 0..1000 {
            let p = dh_pair_setup(&format!("p{i}"), "m", "s", &mut rng, true).unwrap();
            assert!(seen.insert(*p.dh_key().expose_bytes()), "collision at pairing {i}");
        }
    }

    #[test]
    fn ten_minutes_of_ticks_request_ten_keys_for_epochs_zero_through_nine() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let mut pairing = dh_pair_setup("p", "m", "s", &mut rng, true).unwrap();
        let mut source = ScriptedSource::always_ok(14);
        for t in 0..=600u64 {
            pairing.rekey_tick(t, &mut source);
        }
        assert_eq!(pairing.gk_requests, 10);
        assert_eq!(source.delivered, 10);
        let epochs: Vec<u32> = pairing.epoch_log.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, (0..10).collect::<Vec<_>>());
        assert_eq!(pairing.alarm_count, 0);
    }

    #[test]
    fn one_second_run_never_rekeys() {
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let mut pairing = dh_pair_setup("p", "m", "s", &mut rng, true).unwrap();
        let mut source = ScriptedSource::always_ok(16);
        for t in 0..=1u64 {
            assert!(pairing.rekey_tick(t, &mut source).is_none());
        }
        assert_eq!(pairing.gk_requests, 0);
        assert!(pairing.session().is_none());
    }

    #[test]
    fn a_full_day_of_ticks_requests_1440_keys() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let mut pairing = dh_pair_setup("p", "m", "s", &mut rng, true).unwrap();
        let mut source = ScriptedSource::always_ok(18);
        for t in 0..=86_400u64 {
            pairing.rekey_tick(t, &mut source);
        }
        assert_eq!(pairing.gk_requests, 1440);
        assert_eq!(pairing.alarm_count, 0);
        assert_eq!(pairing.session().unwrap().epoch, 1439);
    }

    #[test]
    fn starvation_raises_alarm_holds_key_and_resumes_on_refill() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let mut pairing = dh_pair_setup("p", "m", "s", &mut rng, true).unwrap();
        // Epochs 0..4 keyed, epoch 4 (minute 5) starved, then recovery.
        let mut source = ScriptedSource::scripted(20, &[true, true, true, true, false]);
        for t in 0..=420u64 {
            pairing.rekey_tick(t, &mut source);
        }
        assert_eq!(pairing.alarm_count, 1);
        assert_eq!(pairing.gk_requests, 7);
        let starved = &pairing.epoch_log[4];
        assert_eq!((starved.epoch, starved.gk_id, starved.alarm), (4, None, true));

        // During the starved epoch the pairing kept the epoch-3 key sealed
        // traffic flowing (holdover), then epoch 5 rekeyed normally.
        assert!(!pairing.holdover, "recovered by epoch 5");
        assert_eq!(pairing.session().unwrap().epoch, 6);
        let keyed: Vec<bool> = pairing.epoch_log.iter().map(|r| r.gk_id.is_some()).collect();
        assert_eq!(keyed, [true, true, true, true, false, true, true]);
    }

    #[test]
    fn holdover_continues_sealing_under_the_last_key() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let mut pairing = dh_pair_setup("p", "m", "s", &mut rng, true).unwrap();
        let mut source = ScriptedSource::scripted(22, &[true, false]);
        pairing.rekey_tick(60, &mut source);
        pairing.seal_frame(b"before", 0).unwrap();
        pairing.rekey_tick(120, &mut source);
        assert!(pairing.holdover);
        let frame = pairing.seal_frame(b"during holdover", 1).unwrap();
        assert_eq!(frame.epoch, 0, "stale key keeps its epoch");
        assert_eq!(pairing.open_frame(&frame).unwrap(), b"during holdover");
        // The old sequence space is still guarded.
        assert_eq!(
            pairing.seal_frame(b"reuse", 0),
            Err(EncryptorError::SequenceReused { epoch: 0, sequence: 0 })
        );
    }

    #[test]
    fn epoch_csv_format_is_stable() {
        let id = Uuid::from_u128(7);
        let records = vec![
            EpochRecord { epoch: 0, gk_id: Some(id), alarm: false },
            EpochRecord { epoch: 1, gk_id: None, alarm: true },
        ];
        let mut buf = Vec::new();
        write_epoch_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            format!("epoch,gk_id,alarm\n0,{id},false\n1,,true\n")
        );
    }

    #[test]
    fn logs_and_debug_never_carry_key_bytes() {
        let (mut pairing, _) = keyed_pairing(23);
        pairing.seal_frame(b"secret payload", 0).unwrap();
        let key_hex = hex::encode(pairing.session().unwrap().expose_bytes());
        let dhk_hex = hex::encode(pairing.dh_key().expose_bytes());
        let mut csv = Vec::new();
        write_epoch_csv(&mut csv, &pairing.epoch_log).unwrap();
        let all = format!(
            "{:?} {:?} {}",
            pairing,
            pairing.session().unwrap(),
            String::from_utf8(csv).unwrap()
        );
        assert!(!all.contains(&key_hex));
        assert!(!all.contains(&dhk_hex));
        assert!(all.contains("[redacted]") || !all.contains("bytes"));
    }
}
