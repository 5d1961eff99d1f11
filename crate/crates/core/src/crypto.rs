// SPDX-License-Identifier: Apache-2.0

//! Cryptographic substrate: SHA-256 hashing, an HMAC-SHA-256 keyed one-way
//! function, and Ed25519 signatures with deterministic seed-based key
//! generation.
//!
//! Every hashed or signed payload in this workspace starts with a
//! single-byte domain tag (see [`tags`]) so that no two payload kinds can
//! share a preimage.

use core::fmt;

use ed25519_dalek::{Signer as _, Verifier as _};
use hmac::{Hmac, Mac};
use sha2::{Digest as Sha2Digest, Sha256};
use thiserror::Error;

/// Domain-separation tags, one per hashed or signed payload kind.
pub mod tags {
    /// CDI derivation (UDS-keyed hash of the first-mutable-code digest).
    pub const CDI: u8 = 0x01;
    /// Per-layer secret derivation.
    pub const LAYER_SECRET: u8 = 0x02;
    /// Seed of the layer-0 device identity key pair.
    pub const DEVICE_ID_SEED: u8 = 0x03;
    /// Seed of a per-layer alias key pair.
    pub const ALIAS_ID_SEED: u8 = 0x04;
    /// Register extension and quote signing.
    pub const QUOTE: u8 = 0x05;
    /// Manifest signing.
    pub const MANIFEST: u8 = 0x06;
    /// Gateway assertions and their quorum co-signatures.
    pub const ASSERTION: u8 = 0x07;
    /// Public transaction-identifier masking.
    pub const MASKED_TXID: u8 = 0x08;
    /// Membership credential signing.
    pub const MEMBERSHIP: u8 = 0x09;
    /// Digest of a serialized public identity chain.
    pub const CHAIN_DIGEST: u8 = 0x0a;
    /// Session identifier derived from the two trust-challenge nonces.
    pub const SESSION: u8 = 0x0b;
    /// Ledger transaction references.
    pub const TX_REF: u8 = 0x0c;
    /// Event-log payload digests.
    pub const EVENT: u8 = 0x0d;
}

pub const DIGEST_LEN: usize = 32;
pub const SEED_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum CryptoError {
    #[error("{what} must be {expected} bytes, got {got}")]
    InvalidLength {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

fn to_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        use fmt::Write as _;
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// 32-byte hash output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest([u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub const fn new(bytes: [u8; DIGEST_LEN]) -> Self {
        Digest(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; DIGEST_LEN] =
            bytes.try_into().map_err(|_| CryptoError::InvalidLength {
                what: "digest",
                expected: DIGEST_LEN,
                got: bytes.len(),
            })?;
        Ok(Digest(arr))
    }

    pub const fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        to_hex(&self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// 32-byte secret seed material (UDS and friends).
///
/// `Debug` deliberately redacts the value; the bytes must never reach a
/// wire message, log line, or report.
#[derive(Clone, PartialEq, Eq)]
pub struct Seed([u8; SEED_LEN]);

impl Seed {
    pub const fn new(bytes: [u8; SEED_LEN]) -> Self {
        Seed(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; SEED_LEN] =
            bytes.try_into().map_err(|_| CryptoError::InvalidLength {
                what: "seed",
                expected: SEED_LEN,
                got: bytes.len(),
            })?;
        Ok(Seed(arr))
    }

    pub const fn as_bytes(&self) -> &[u8; SEED_LEN] {
        &self.0
    }
}

impl fmt::Debug for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Seed(<redacted>)")
    }
}

/// Ed25519 verification key bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey([u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub const fn new(bytes: [u8; PUBLIC_KEY_LEN]) -> Self {
        PublicKey(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; PUBLIC_KEY_LEN] =
            bytes.try_into().map_err(|_| CryptoError::InvalidLength {
                what: "public key",
                expected: PUBLIC_KEY_LEN,
                got: bytes.len(),
            })?;
        Ok(PublicKey(arr))
    }

    pub const fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        to_hex(&self.0)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Ed25519 signature bytes.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature([u8; SIGNATURE_LEN]);

impl Signature {
    pub const fn new(bytes: [u8; SIGNATURE_LEN]) -> Self {
        Signature(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; SIGNATURE_LEN] =
            bytes.try_into().map_err(|_| CryptoError::InvalidLength {
                what: "signature",
                expected: SIGNATURE_LEN,
                got: bytes.len(),
            })?;
        Ok(Signature(arr))
    }

    pub const fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        to_hex(&self.0)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", self.to_hex())
    }
}

/// Ed25519 key pair derived deterministically from a 32-byte seed.
///
/// `Debug` shows only the public half.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    public: PublicKey,
    secret: [u8; SEED_LEN],
}

impl KeyPair {
    pub const fn public(&self) -> PublicKey {
        self.public
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        let key = ed25519_dalek::SigningKey::from_bytes(&self.secret);
        Signature(key.sign(message).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair(public: {}, secret: <redacted>)", self.public)
    }
}

/// SHA-256 of `data`. Deterministic; empty input is legal.
pub fn hash(data: &[u8]) -> Digest {
    let out = Sha256::digest(data);
    Digest(out.into())
}

/// HMAC-SHA-256 of `data` under `key`. Deterministic.
pub fn keyed_owf(key: &Seed, data: &[u8]) -> Digest {
    let mut mac = Hmac::<Sha256>::new_from_slice(key.as_bytes())
        .expect("hmac accepts 32-byte keys");
    mac.update(data);
    let out = mac.finalize().into_bytes();
    Digest(out.into())
}

/// Derives an Ed25519 key pair with the seed as the private scalar source.
/// The same seed always yields byte-identical keys.
pub fn keypair_from_seed(seed: &Seed) -> KeyPair {
    let signing = ed25519_dalek::SigningKey::from_bytes(seed.as_bytes());
    KeyPair {
        public: PublicKey(signing.verifying_key().to_bytes()),
        secret: *seed.as_bytes(),
    }
}

/// Signs `message` with `key`'s secret half.
pub fn sign(key: &KeyPair, message: &[u8]) -> Signature {
    key.sign(message)
}

/// Verifies `signature` over `message` under `public_key`.
///
/// Malformed key or signature bytes verify as `false` rather than erroring.
pub fn verify(public_key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(key) = ed25519_dalek::VerifyingKey::from_bytes(public_key.as_bytes()) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(signature.as_bytes());
    key.verify(message, &sig).is_ok()
}
