// SPDX-License-Identifier: Apache-2.0

//! Attestation evidence and policy: extendable measurement registers,
//! nonce-bound quotes signed by a chain's topmost alias key, signed system
//! manifests, policy evaluation, pseudonymous group membership
//! credentials, and the group-quote protocol.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::crypto::{self, tags, Digest, KeyPair, PublicKey, Signature};
use crate::dice::{DeviceIdentity, PublicIdentity};
use crate::wire::{CanonicalReader, CanonicalWriter, WireError};

/// Number of measurement register slots.
pub const REGISTER_COUNT: usize = 32;

const MAX_MANIFEST_ENTRIES: u64 = 4096;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttestError {
    #[error("register index {0} out of range (0..{REGISTER_COUNT})")]
    RegisterOutOfRange(usize),
    #[error("identity chain has no alias layer to sign with")]
    NoSigningKey,
    #[error("node lacks TCB capabilities required for quoting")]
    NotTcbCapable,
    #[error("manifest must list at least one component")]
    EmptyManifest,
    #[error("duplicate manifest component {0:?}")]
    DuplicateComponent(String),
    #[error("pseudonym must not equal any of the holder's identity keys")]
    PseudonymNotFresh,
    #[error("group quote quorum must be at least 1")]
    QuorumZero,
}

/// Reason an evidence object failed verification.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyRejection {
    #[error("bad signature")]
    BadSignature,
    #[error("nonce mismatch")]
    NonceMismatch,
    #[error("unexpected signer")]
    UnexpectedSigner,
    #[error("non-canonical encoding")]
    NonCanonical,
    #[error("stale quote: age {age} exceeds {max} ticks")]
    StaleQuote { age: u64, max: u64 },
}

/// Boolean capability flags standing in for "performs a well-defined
/// function" and "operates shielded from interference". Nodes missing
/// either flag cannot produce quotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcbCapabilities {
    pub well_defined: bool,
    pub shielded: bool,
}

impl TcbCapabilities {
    pub const FULL: TcbCapabilities = TcbCapabilities {
        well_defined: true,
        shielded: true,
    };

    pub fn capable(&self) -> bool {
        self.well_defined && self.shielded
    }
}

/// Bank of 32 extend-only measurement registers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registers {
    slots: [Digest; REGISTER_COUNT],
}

impl Default for Registers {
    fn default() -> Self {
        Registers {
            slots: [Digest::ZERO; REGISTER_COUNT],
        }
    }
}

impl Registers {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds `measurement` into slot `index`:
    /// `slot <- hash(tag || slot || measurement)`.
    pub fn extend(&mut self, index: usize, measurement: &Digest) -> Result<(), AttestError> {
        if index >= REGISTER_COUNT {
            return Err(AttestError::RegisterOutOfRange(index));
        }
        let mut w = CanonicalWriter::tagged(tags::QUOTE);
        w.put_digest(&self.slots[index]).put_digest(measurement);
        self.slots[index] = crypto::hash(&w.finish());
        Ok(())
    }

    /// Resets slot `index` to the all-zero value.
    pub fn reset(&mut self, index: usize) -> Result<(), AttestError> {
        if index >= REGISTER_COUNT {
            return Err(AttestError::RegisterOutOfRange(index));
        }
        self.slots[index] = Digest::ZERO;
        Ok(())
    }

    pub fn slot(&self, index: usize) -> Result<&Digest, AttestError> {
        self.slots
            .get(index)
            .ok_or(AttestError::RegisterOutOfRange(index))
    }

    pub fn snapshot(&self) -> [Digest; REGISTER_COUNT] {
        self.slots
    }
}

/// Signed snapshot of all registers, bound to a challenge nonce and to the
/// digest of the signer's public identity chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quote {
    pub signer: PublicKey,
    pub registers: [Digest; REGISTER_COUNT],
    pub nonce: [u8; 32],
    pub chain_digest: Digest,
    pub signature: Signature,
}

fn quote_payload(
    registers: &[Digest; REGISTER_COUNT],
    nonce: &[u8; 32],
    chain_digest: &Digest,
) -> Vec<u8> {
    let mut w = CanonicalWriter::tagged(tags::QUOTE);
    w.put_count(REGISTER_COUNT);
    for slot in registers {
        w.put_digest(slot);
    }
    w.put_bytes(nonce).put_digest(chain_digest);
    w.finish()
}

impl Quote {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::new();
        self.encode_into(&mut w);
        w.finish()
    }

    pub(crate) fn encode_into(&self, w: &mut CanonicalWriter) {
        w.put_public_key(&self.signer);
        w.put_count(REGISTER_COUNT);
        for slot in &self.registers {
            w.put_digest(slot);
        }
        w.put_bytes(&self.nonce)
            .put_digest(&self.chain_digest)
            .put_signature(&self.signature);
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = CanonicalReader::new(bytes);
        let quote = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(quote)
    }

    pub(crate) fn decode_from(r: &mut CanonicalReader<'_>) -> Result<Self, WireError> {
        let signer = r.take_public_key()?;
        let count = r.take_count(REGISTER_COUNT as u64)?;
        if count != REGISTER_COUNT {
            return Err(WireError::BadDiscriminant(count as u64));
        }
        let mut registers = [Digest::ZERO; REGISTER_COUNT];
        for slot in registers.iter_mut() {
            *slot = r.take_digest()?;
        }
        Ok(Quote {
            signer,
            registers,
            nonce: r.take_array32()?,
            chain_digest: r.take_digest()?,
            signature: r.take_signature()?,
        })
    }
}

/// Signs the register snapshot with the identity's topmost alias key.
pub fn create_quote(
    identity: &DeviceIdentity,
    registers: &Registers,
    nonce: [u8; 32],
) -> Result<Quote, AttestError> {
    let alias = identity.signing_alias().ok_or(AttestError::NoSigningKey)?;
    let snapshot = registers.snapshot();
    let chain_digest = identity.public().digest();
    let payload = quote_payload(&snapshot, &nonce, &chain_digest);
    Ok(Quote {
        signer: alias.public(),
        registers: snapshot,
        nonce,
        chain_digest,
        signature: alias.sign(&payload),
    })
}

/// Accepts iff the signature is valid, the nonce matches the challenge,
/// and the signer is the expected key.
pub fn verify_quote(
    quote: &Quote,
    expected_signer: &PublicKey,
    nonce: &[u8; 32],
) -> Result<(), VerifyRejection> {
    if quote.signer != *expected_signer {
        return Err(VerifyRejection::UnexpectedSigner);
    }
    if quote.nonce != *nonce {
        return Err(VerifyRejection::NonceMismatch);
    }
    let payload = quote_payload(&quote.registers, &quote.nonce, &quote.chain_digest);
    if !crypto::verify(&quote.signer, &payload, &quote.signature) {
        return Err(VerifyRejection::BadSignature);
    }
    Ok(())
}

/// [`verify_quote`] plus the freshness window: the quote's challenge must
/// have been issued no more than `max_age_ticks` ago.
pub fn verify_quote_fresh(
    quote: &Quote,
    expected_signer: &PublicKey,
    nonce: &[u8; 32],
    age_ticks: u64,
    max_age_ticks: u64,
) -> Result<(), VerifyRejection> {
    if age_ticks > max_age_ticks {
        return Err(VerifyRejection::StaleQuote {
            age: age_ticks,
            max: max_age_ticks,
        });
    }
    verify_quote(quote, expected_signer, nonce)
}

/// One inventory row of a signed system manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub component: String,
    pub version: String,
    pub svn: u64,
    pub code_digest: Digest,
}

impl ManifestEntry {
    fn encode_into(&self, w: &mut CanonicalWriter) {
        w.put_str(&self.component)
            .put_str(&self.version)
            .put_u64(self.svn)
            .put_digest(&self.code_digest);
    }

    fn decode_from(r: &mut CanonicalReader<'_>) -> Result<Self, WireError> {
        Ok(ManifestEntry {
            component: r.take_string()?,
            version: r.take_string()?,
            svn: r.take_u64()?,
            code_digest: r.take_digest()?,
        })
    }
}

/// Signed list of the components a node runs, sorted by component name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub node_id: PublicKey,
    pub entries: Vec<ManifestEntry>,
    pub signature: Signature,
}

fn manifest_payload(node_id: &PublicKey, entries: &[ManifestEntry]) -> Vec<u8> {
    let mut w = CanonicalWriter::tagged(tags::MANIFEST);
    w.put_public_key(node_id);
    w.put_count(entries.len());
    for entry in entries {
        entry.encode_into(&mut w);
    }
    w.finish()
}

impl Manifest {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::new();
        self.encode_into(&mut w);
        w.finish()
    }

    pub(crate) fn encode_into(&self, w: &mut CanonicalWriter) {
        w.put_public_key(&self.node_id);
        w.put_count(self.entries.len());
        for entry in &self.entries {
            entry.encode_into(w);
        }
        w.put_signature(&self.signature);
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = CanonicalReader::new(bytes);
        let manifest = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(manifest)
    }

    pub(crate) fn decode_from(r: &mut CanonicalReader<'_>) -> Result<Self, WireError> {
        let node_id = r.take_public_key()?;
        let count = r.take_count(MAX_MANIFEST_ENTRIES)?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            entries.push(ManifestEntry::decode_from(r)?);
        }
        Ok(Manifest {
            node_id,
            entries,
            signature: r.take_signature()?,
        })
    }

    pub fn entry(&self, component: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.component == component)
    }
}

/// Sorts the entries, signs them with the node's topmost alias key.
pub fn create_manifest(
    identity: &DeviceIdentity,
    mut entries: Vec<ManifestEntry>,
) -> Result<Manifest, AttestError> {
    if entries.is_empty() {
        return Err(AttestError::EmptyManifest);
    }
    let alias = identity.signing_alias().ok_or(AttestError::NoSigningKey)?;
    entries.sort_by(|a, b| a.component.cmp(&b.component));
    for pair in entries.windows(2) {
        if pair[0].component == pair[1].component {
            return Err(AttestError::DuplicateComponent(pair[0].component.clone()));
        }
    }
    let node_id = alias.public();
    let signature = alias.sign(&manifest_payload(&node_id, &entries));
    Ok(Manifest {
        node_id,
        entries,
        signature,
    })
}

/// Checks the signature and the canonical (strictly sorted) entry order.
pub fn verify_manifest(
    manifest: &Manifest,
    expected_signer: &PublicKey,
) -> Result<(), VerifyRejection> {
    if manifest.node_id != *expected_signer {
        return Err(VerifyRejection::UnexpectedSigner);
    }
    for pair in manifest.entries.windows(2) {
        if pair[0].component >= pair[1].component {
            return Err(VerifyRejection::NonCanonical);
        }
    }
    let payload = manifest_payload(&manifest.node_id, &manifest.entries);
    if !crypto::verify(&manifest.node_id, &payload, &manifest.signature) {
        return Err(VerifyRejection::BadSignature);
    }
    Ok(())
}

/// One component requirement inside a [`DtcbPolicy`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequiredComponent {
    pub component: String,
    pub min_svn: u64,
    pub pinned_digest: Option<Digest>,
}

/// Group admission policy: required components, quote freshness window,
/// and the group authority that vouches for membership credentials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DtcbPolicy {
    pub required_components: Vec<RequiredComponent>,
    pub max_quote_age_ticks: u64,
    pub group_authority_key: PublicKey,
}

/// One way a manifest can fail policy evaluation.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyFailure {
    #[error("missing component {0}")]
    MissingComponent(String),
    #[error("svn regression component {component}: svn {svn} below minimum {min_svn}")]
    SvnBelowMinimum {
        component: String,
        svn: u64,
        min_svn: u64,
    },
    #[error("code digest mismatch for component {0}")]
    DigestMismatch(String),
}

/// Compliant iff the returned list is empty; the list enumerates every
/// failed requirement. The manifest must already be signature-verified.
pub fn evaluate_policy(manifest: &Manifest, policy: &DtcbPolicy) -> Vec<PolicyFailure> {
    let mut failures = Vec::new();
    for required in &policy.required_components {
        let Some(entry) = manifest.entry(&required.component) else {
            failures.push(PolicyFailure::MissingComponent(required.component.clone()));
            continue;
        };
        if entry.svn < required.min_svn {
            failures.push(PolicyFailure::SvnBelowMinimum {
                component: required.component.clone(),
                svn: entry.svn,
                min_svn: required.min_svn,
            });
        }
        if let Some(pinned) = &required.pinned_digest {
            if entry.code_digest != *pinned {
                failures.push(PolicyFailure::DigestMismatch(required.component.clone()));
            }
        }
    }
    failures
}

/// Authority-signed binding of a fresh pseudonym to a group, carrying no
/// bytes of the holder's device identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipCredential {
    pub pseudonym: PublicKey,
    pub group_id: String,
    pub authority_signature: Signature,
}

fn membership_payload(pseudonym: &PublicKey, group_id: &str) -> Vec<u8> {
    let mut w = CanonicalWriter::tagged(tags::MEMBERSHIP);
    w.put_public_key(pseudonym).put_str(group_id);
    w.finish()
}

impl MembershipCredential {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::new();
        self.encode_into(&mut w);
        w.finish()
    }

    pub(crate) fn encode_into(&self, w: &mut CanonicalWriter) {
        w.put_public_key(&self.pseudonym)
            .put_str(&self.group_id)
            .put_signature(&self.authority_signature);
    }

    pub(crate) fn decode_from(r: &mut CanonicalReader<'_>) -> Result<Self, WireError> {
        Ok(MembershipCredential {
            pseudonym: r.take_public_key()?,
            group_id: r.take_string()?,
            authority_signature: r.take_signature()?,
        })
    }
}

/// Issues a credential for `pseudonym`, refusing pseudonyms that collide
/// with any key of the holder's identity (that would make the credential
/// linkable to the device).
pub fn issue_membership(
    authority: &KeyPair,
    pseudonym: &PublicKey,
    group_id: &str,
    holder: &PublicIdentity,
) -> Result<MembershipCredential, AttestError> {
    let linkable = *pseudonym == holder.device_id
        || holder.alias_ids.iter().any(|alias| alias == pseudonym);
    if linkable {
        return Err(AttestError::PseudonymNotFresh);
    }
    Ok(MembershipCredential {
        pseudonym: *pseudonym,
        group_id: group_id.to_string(),
        authority_signature: authority.sign(&membership_payload(pseudonym, group_id)),
    })
}

pub fn verify_membership(credential: &MembershipCredential, authority: &PublicKey) -> bool {
    crypto::verify(
        authority,
        &membership_payload(&credential.pseudonym, &credential.group_id),
        &credential.authority_signature,
    )
}

/// Quotes from a group of members over one shared challenge.
#[derive(Debug, Clone)]
pub struct GroupQuote {
    pub challenge: [u8; 32],
    pub member_quotes: Vec<Quote>,
    pub quorum_met: bool,
}

/// Number of distinct signers whose quotes verify over `challenge`.
/// Duplicate signers are counted once.
pub fn count_verified_signers(challenge: &[u8; 32], quotes: &[Quote]) -> usize {
    let mut signers = BTreeSet::new();
    for quote in quotes {
        if verify_quote(quote, &quote.signer, challenge).is_ok() {
            signers.insert(quote.signer);
        }
    }
    signers.len()
}

/// Collects one quote per member over the shared challenge; members that
/// cannot sign contribute nothing. Quorum is met iff at least `quorum_m`
/// quotes verify from distinct signers.
pub fn group_quote(
    members: &[(&DeviceIdentity, &Registers)],
    challenge: [u8; 32],
    quorum_m: usize,
) -> Result<GroupQuote, AttestError> {
    if quorum_m == 0 {
        return Err(AttestError::QuorumZero);
    }
    let member_quotes: Vec<Quote> = members
        .iter()
        .filter_map(|(identity, registers)| create_quote(identity, registers, challenge).ok())
        .collect();
    let quorum_met = count_verified_signers(&challenge, &member_quotes) >= quorum_m;
    Ok(GroupQuote {
        challenge,
        member_quotes,
        quorum_met,
    })
}
