// SPDX-License-Identifier: Apache-2.0

//! Layered TCB identity chain: a unique device secret seeds a compound
//! device identifier, which anchors a device identity key pair and a chain
//! of per-layer secrets and alias key pairs. Each layer secret binds the
//! full measurement of its layer (index, code digest, product id, SVN) and
//! the secret of the layer below, so identity is sensitive to every
//! measured field and to layer order.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::crypto::{self, tags, Digest, KeyPair, PublicKey, Seed};
use crate::wire::{CanonicalReader, CanonicalWriter, WireError};

/// Maximum number of layers in one identity chain.
pub const MAX_CHAIN_DEPTH: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("chain has no measurements")]
    Empty,
    #[error("chain gap: expected layer {expected}, found layer {found}")]
    Gap { expected: u64, found: u64 },
    #[error("duplicate layer index {0}")]
    DuplicateIndex(u64),
    #[error("chain depth {0} exceeds the maximum of {MAX_CHAIN_DEPTH}")]
    DepthExceeded(usize),
}

/// Measurement of one TCB layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMeasurement {
    pub layer_index: u64,
    pub code_digest: Digest,
    pub product_id: String,
    pub svn: u64,
}

impl LayerMeasurement {
    pub(crate) fn encode_into(&self, w: &mut CanonicalWriter) {
        w.put_u64(self.layer_index)
            .put_digest(&self.code_digest)
            .put_str(&self.product_id)
            .put_u64(self.svn);
    }

    pub(crate) fn decode_from(r: &mut CanonicalReader<'_>) -> Result<Self, WireError> {
        Ok(LayerMeasurement {
            layer_index: r.take_u64()?,
            code_digest: r.take_digest()?,
            product_id: r.take_string()?,
            svn: r.take_u64()?,
        })
    }
}

/// Compound device identifier: UDS-keyed hash of the layer-0 code digest.
pub fn derive_cdi(uds: &Seed, fmc: &Digest) -> Digest {
    let mut w = CanonicalWriter::tagged(tags::CDI);
    w.put_digest(fmc);
    crypto::keyed_owf(uds, &w.finish())
}

/// Layer-0 device identity key pair, seeded from the CDI.
pub fn derive_device_id(cdi: &Digest) -> KeyPair {
    let mut w = CanonicalWriter::tagged(tags::DEVICE_ID_SEED);
    w.put_digest(cdi);
    crypto::keypair_from_seed(&Seed::new(*crypto::hash(&w.finish()).as_bytes()))
}

/// Next layer secret: previous secret keyed over the full measurement.
pub fn derive_layer_secret(prev_secret: &Digest, measurement: &LayerMeasurement) -> Digest {
    let mut w = CanonicalWriter::tagged(tags::LAYER_SECRET);
    measurement.encode_into(&mut w);
    crypto::keyed_owf(&Seed::new(*prev_secret.as_bytes()), &w.finish())
}

/// Alias key pair for a layer, seeded from that layer's secret.
pub fn derive_alias_id(layer_secret: &Digest) -> KeyPair {
    let mut w = CanonicalWriter::tagged(tags::ALIAS_ID_SEED);
    w.put_digest(layer_secret);
    crypto::keypair_from_seed(&Seed::new(*crypto::hash(&w.finish()).as_bytes()))
}

/// Fully derived per-device identity chain.
///
/// `layer_secrets[n]` is the secret identifying layer `n`;
/// `alias_ids[n - 1]` is the alias key pair of layer `n` (layers >= 1).
#[derive(Debug, Clone)]
pub struct DeviceIdentity {
    uds: Seed,
    cdi: Digest,
    layer_secrets: Vec<Digest>,
    device_id: KeyPair,
    alias_ids: Vec<KeyPair>,
    chain: Vec<LayerMeasurement>,
}

impl DeviceIdentity {
    pub fn cdi(&self) -> &Digest {
        &self.cdi
    }

    pub fn uds(&self) -> &Seed {
        &self.uds
    }

    pub fn layer_secrets(&self) -> &[Digest] {
        &self.layer_secrets
    }

    pub fn device_id(&self) -> &KeyPair {
        &self.device_id
    }

    pub fn alias_ids(&self) -> &[KeyPair] {
        &self.alias_ids
    }

    pub fn chain(&self) -> &[LayerMeasurement] {
        &self.chain
    }

    /// Topmost alias key pair; `None` for a single-layer chain.
    pub fn signing_alias(&self) -> Option<&KeyPair> {
        self.alias_ids.last()
    }

    /// Public portion of the identity, safe to put on the wire.
    pub fn public(&self) -> PublicIdentity {
        PublicIdentity {
            device_id: self.device_id.public(),
            alias_ids: self.alias_ids.iter().map(KeyPair::public).collect(),
            chain: self.chain.clone(),
        }
    }
}

/// Builds the full identity chain from the UDS and the ordered layer
/// measurements. Measurements must be contiguous from layer 0.
pub fn build_chain(
    uds: Seed,
    measurements: Vec<LayerMeasurement>,
) -> Result<DeviceIdentity, ChainError> {
    if measurements.is_empty() {
        return Err(ChainError::Empty);
    }
    if measurements.len() > MAX_CHAIN_DEPTH {
        return Err(ChainError::DepthExceeded(measurements.len()));
    }
    for (i, m) in measurements.iter().enumerate() {
        let expected = i as u64;
        if m.layer_index != expected {
            let duplicate = measurements[..i]
                .iter()
                .any(|earlier| earlier.layer_index == m.layer_index);
            if duplicate {
                return Err(ChainError::DuplicateIndex(m.layer_index));
            }
            return Err(ChainError::Gap {
                expected,
                found: m.layer_index,
            });
        }
    }

    let cdi = derive_cdi(&uds, &measurements[0].code_digest);
    let device_id = derive_device_id(&cdi);

    let mut layer_secrets = Vec::with_capacity(measurements.len());
    let mut alias_ids = Vec::with_capacity(measurements.len().saturating_sub(1));
    let mut prev = cdi;
    for measurement in &measurements {
        let secret = derive_layer_secret(&prev, measurement);
        if measurement.layer_index >= 1 {
            alias_ids.push(derive_alias_id(&secret));
        }
        layer_secrets.push(secret);
        prev = secret;
    }

    Ok(DeviceIdentity {
        uds,
        cdi,
        layer_secrets,
        device_id,
        alias_ids,
        chain: measurements,
    })
}

/// Wire form of an identity: keys and measurements only, no secrets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicIdentity {
    pub device_id: PublicKey,
    pub alias_ids: Vec<PublicKey>,
    pub chain: Vec<LayerMeasurement>,
}

impl PublicIdentity {
    /// Topmost alias public key, if the chain has more than one layer.
    pub fn signing_alias(&self) -> Option<PublicKey> {
        self.alias_ids.last().copied()
    }

    pub(crate) fn encode_into(&self, w: &mut CanonicalWriter) {
        w.put_public_key(&self.device_id);
        w.put_count(self.alias_ids.len());
        for key in &self.alias_ids {
            w.put_public_key(key);
        }
        w.put_count(self.chain.len());
        for measurement in &self.chain {
            measurement.encode_into(w);
        }
    }

    pub(crate) fn decode_from(r: &mut CanonicalReader<'_>) -> Result<Self, WireError> {
        let device_id = r.take_public_key()?;
        let alias_count = r.take_count(MAX_CHAIN_DEPTH as u64)?;
        let mut alias_ids = Vec::with_capacity(alias_count);
        for _ in 0..alias_count {
            alias_ids.push(r.take_public_key()?);
        }
        let chain_count = r.take_count(MAX_CHAIN_DEPTH as u64)?;
        let mut chain = Vec::with_capacity(chain_count);
        for _ in 0..chain_count {
            chain.push(LayerMeasurement::decode_from(r)?);
        }
        Ok(PublicIdentity {
            device_id,
            alias_ids,
            chain,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::new();
        self.encode_into(&mut w);
        w.finish()
    }

    /// Digest binding the whole public chain; quoted by attestation.
    pub fn digest(&self) -> Digest {
        let mut w = CanonicalWriter::tagged(tags::CHAIN_DIGEST);
        self.encode_into(&mut w);
        crypto::hash(&w.finish())
    }
}

/// Outcome of an SVN offer against the recorded high-water mark.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SvnDecision {
    Accept,
    Reject { recorded: u64, offered: u64 },
}

impl SvnDecision {
    pub fn is_accept(&self) -> bool {
        matches!(self, SvnDecision::Accept)
    }
}

/// Highest SVN ever accepted per (layer index, product id).
#[derive(Debug, Clone, Default)]
pub struct SvnRecord {
    accepted: BTreeMap<(u64, String), u64>,
}

impl SvnRecord {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts iff the offered SVN is at least the recorded one; on accept
    /// the record advances to the maximum seen.
    pub fn check(&mut self, measurement: &LayerMeasurement) -> SvnDecision {
        let key = (measurement.layer_index, measurement.product_id.clone());
        match self.accepted.get(&key) {
            Some(&recorded) if measurement.svn < recorded => SvnDecision::Reject {
                recorded,
                offered: measurement.svn,
            },
            Some(&recorded) => {
                self.accepted.insert(key, recorded.max(measurement.svn));
                SvnDecision::Accept
            }
            None => {
                self.accepted.insert(key, measurement.svn);
                SvnDecision::Accept
            }
        }
    }

    pub fn recorded(&self, layer_index: u64, product_id: &str) -> Option<u64> {
        self.accepted
            .get(&(layer_index, product_id.to_string()))
            .copied()
    }
}
