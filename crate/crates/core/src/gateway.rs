// SPDX-License-Identifier: Apache-2.0

//! Cross-chain transfer protocol between two gateways: mutual
//! attestation-based trust establishment, transaction-identifier masking,
//! the mirrored source/destination state machines driving the lock /
//! register / invalidate / unlock sequence, signed assertions, and m-of-n
//! quorum approval for sensitive transfers.
//!
//! `handle` is a deterministic transition function: it consumes one input
//! (wire message, ledger event, or timer), mutates the gateway state, and
//! returns the outbound messages, ledger submissions, timers, and log
//! notes the world must carry out.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::attestation::{
    create_quote, evaluate_policy, verify_manifest, verify_quote_fresh, DtcbPolicy, Manifest,
    MembershipCredential, PolicyFailure, Quote, Registers, TcbCapabilities, VerifyRejection,
};
use crate::crypto::{self, tags, Digest, KeyPair, PublicKey, Signature};
use crate::dice::{DeviceIdentity, PublicIdentity};
use crate::ledger::{Ledger, LedgerEvent, LedgerTx, Tick};
use crate::rng::DetRng;
use crate::wire::{CanonicalReader, CanonicalWriter, WireError};

pub const MSG_TRUST_CHALLENGE: u8 = 0x10;
pub const MSG_TRUST_EVIDENCE: u8 = 0x11;
pub const MSG_TRANSFER_REQUEST: u8 = 0x12;
pub const MSG_REGISTERED_ASSERTION: u8 = 0x13;
pub const MSG_INVALIDATED_ASSERTION: u8 = 0x14;
pub const MSG_ERROR: u8 = 0x15;

const MAX_APPROVALS: u64 = 64;

/// Masks a private transaction identifier for cross-domain use. The nonce
/// must be freshly drawn from the world rng per masking.
pub fn mask_txid(private_id: &Digest, chain_id: &str, nonce: &[u8; 32]) -> Digest {
    let mut w = CanonicalWriter::tagged(tags::MASKED_TXID);
    w.put_str(chain_id).put_digest(private_id).put_bytes(nonce);
    crypto::hash(&w.finish())
}

/// Session identifier bound into every assertion: hash of both parties'
/// trust-challenge nonces, initiator first.
pub fn derive_session_nonce(initiator_nonce: &[u8; 32], responder_nonce: &[u8; 32]) -> [u8; 32] {
    let mut w = CanonicalWriter::tagged(tags::SESSION);
    w.put_bytes(initiator_nonce).put_bytes(responder_nonce);
    *crypto::hash(&w.finish()).as_bytes()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssertionKind {
    Registered,
    Invalidated,
}

impl AssertionKind {
    pub fn name(&self) -> &'static str {
        match self {
            AssertionKind::Registered => "registered",
            AssertionKind::Invalidated => "invalidated",
        }
    }

    fn discriminant(&self) -> u64 {
        match self {
            AssertionKind::Registered => 0,
            AssertionKind::Invalidated => 1,
        }
    }

    fn from_discriminant(d: u64) -> Result<Self, WireError> {
        match d {
            0 => Ok(AssertionKind::Registered),
            1 => Ok(AssertionKind::Invalidated),
            other => Err(WireError::BadDiscriminant(other)),
        }
    }
}

/// Statement that an asset has been registered (destination) or
/// invalidated (source), bound to the session and signed by the asserting
/// gateway's alias key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedAssertion {
    pub kind: AssertionKind,
    pub txid1_public: Digest,
    pub txid2_public: Digest,
    pub asserter: PublicKey,
    pub session_nonce: [u8; 32],
    pub signature: Signature,
}

fn assertion_payload(
    kind: AssertionKind,
    txid1: &Digest,
    txid2: &Digest,
    asserter: &PublicKey,
    session_nonce: &[u8; 32],
) -> Vec<u8> {
    let mut w = CanonicalWriter::tagged(tags::ASSERTION);
    w.put_u64(kind.discriminant())
        .put_digest(txid1)
        .put_digest(txid2)
        .put_public_key(asserter)
        .put_bytes(session_nonce);
    w.finish()
}

impl SignedAssertion {
    /// The canonical payload the signature (and any quorum co-signature)
    /// covers.
    pub fn signed_payload(&self) -> Vec<u8> {
        assertion_payload(
            self.kind,
            &self.txid1_public,
            &self.txid2_public,
            &self.asserter,
            &self.session_nonce,
        )
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::new();
        self.encode_into(&mut w);
        w.finish()
    }

    fn encode_into(&self, w: &mut CanonicalWriter) {
        w.put_u64(self.kind.discriminant())
            .put_digest(&self.txid1_public)
            .put_digest(&self.txid2_public)
            .put_public_key(&self.asserter)
            .put_bytes(&self.session_nonce)
            .put_signature(&self.signature);
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = CanonicalReader::new(bytes);
        let assertion = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(assertion)
    }

    fn decode_from(r: &mut CanonicalReader<'_>) -> Result<Self, WireError> {
        Ok(SignedAssertion {
            kind: AssertionKind::from_discriminant(r.take_u64()?)?,
            txid1_public: r.take_digest()?,
            txid2_public: r.take_digest()?,
            asserter: r.take_public_key()?,
            session_nonce: r.take_array32()?,
            signature: r.take_signature()?,
        })
    }
}

pub fn create_assertion(
    kind: AssertionKind,
    txid1: Digest,
    txid2: Digest,
    signer: &KeyPair,
    session_nonce: [u8; 32],
) -> SignedAssertion {
    let asserter = signer.public();
    let payload = assertion_payload(kind, &txid1, &txid2, &asserter, &session_nonce);
    SignedAssertion {
        kind,
        txid1_public: txid1,
        txid2_public: txid2,
        asserter,
        session_nonce,
        signature: signer.sign(&payload),
    }
}

pub fn verify_assertion(
    assertion: &SignedAssertion,
    expected_signer: &PublicKey,
    expected_session: &[u8; 32],
) -> Result<(), VerifyRejection> {
    if assertion.asserter != *expected_signer {
        return Err(VerifyRejection::UnexpectedSigner);
    }
    if assertion.session_nonce != *expected_session {
        return Err(VerifyRejection::NonceMismatch);
    }
    if !crypto::verify(
        &assertion.asserter,
        &assertion.signed_payload(),
        &assertion.signature,
    ) {
        return Err(VerifyRejection::BadSignature);
    }
    Ok(())
}

/// A gateway able to co-sign assertions for its autonomous system.
#[derive(Debug, Clone)]
pub struct QuorumSigner {
    pub node_id: String,
    pub key: KeyPair,
    pub live: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QuorumRefusal {
    #[error("quorum unreachable: {live} live signers, {required} required")]
    Unreachable { live: usize, required: usize },
}

/// Collects signatures over `payload` from the live signers; refuses when
/// fewer than `m` distinct signers are reachable.
pub fn quorum_approve(
    signers: &[QuorumSigner],
    payload: &[u8],
    m: usize,
) -> Result<Vec<(PublicKey, Signature)>, QuorumRefusal> {
    let mut approvals = Vec::new();
    let mut seen = BTreeSet::new();
    for signer in signers.iter().filter(|s| s.live) {
        if seen.insert(signer.key.public()) {
            approvals.push((signer.key.public(), signer.key.sign(payload)));
        }
    }
    if approvals.len() < m {
        return Err(QuorumRefusal::Unreachable {
            live: approvals.len(),
            required: m,
        });
    }
    Ok(approvals)
}

/// True iff at least `m` valid signatures over the assertion payload come
/// from distinct members of `authorized`.
pub fn verify_quorum(
    assertion: &SignedAssertion,
    approvals: &[(PublicKey, Signature)],
    authorized: &[PublicKey],
    m: usize,
) -> bool {
    let payload = assertion.signed_payload();
    let mut valid = BTreeSet::new();
    for (key, signature) in approvals {
        if authorized.contains(key) && crypto::verify(key, &payload, signature) {
            valid.insert(*key);
        }
    }
    valid.len() >= m
}

/// Peering terms between two blockchain autonomous systems.
#[derive(Debug, Clone)]
pub struct PeeringPolicy {
    pub dtcb_policy: DtcbPolicy,
    pub quorum_m: usize,
    pub quorum_n: usize,
    /// Transfers of at least this value require quorum approval on the
    /// invalidation assertion.
    pub sensitive_threshold: u64,
}

impl PeeringPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.quorum_m < 1 || self.quorum_m > self.quorum_n {
            return Err(format!(
                "quorum must satisfy 1 <= m <= n, got m={} n={}",
                self.quorum_m, self.quorum_n
            ));
        }
        Ok(())
    }
}

/// Why trust establishment failed.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrustFailure {
    #[error("membership credential required")]
    MembershipMissing,
    #[error("membership credential invalid")]
    MembershipInvalid,
    #[error("membership credential for group {got:?}, expected {expected:?}")]
    WrongGroup { expected: String, got: String },
    #[error("peer identity chain has no alias layer")]
    NoAliasKey,
    #[error("quote chain digest does not match the presented identity")]
    ChainDigestMismatch,
    #[error("quote rejected: {0}")]
    QuoteRejected(VerifyRejection),
    #[error("manifest rejected: {0}")]
    ManifestRejected(VerifyRejection),
    #[error("noncompliant: {}", format_failures(.0))]
    Noncompliant(Vec<PolicyFailure>),
    #[error("node lacks TCB capabilities required for quoting")]
    NotTcbCapable,
    #[error("node has no signed manifest")]
    MissingManifest,
    #[error("no known peer gateway {0}")]
    UnknownPeer(String),
}

fn format_failures(failures: &[PolicyFailure]) -> String {
    failures
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Evidence a node presents during trust establishment.
#[derive(Debug, Clone, Copy)]
pub struct LocalNode<'a> {
    pub identity: &'a DeviceIdentity,
    pub registers: &'a Registers,
    pub manifest: Option<&'a Manifest>,
    pub credential: Option<&'a MembershipCredential>,
    pub capabilities: TcbCapabilities,
}

fn check_membership(
    credential: Option<&MembershipCredential>,
    policy: &PeeringPolicy,
    group_id: &str,
) -> Result<(), TrustFailure> {
    let credential = credential.ok_or(TrustFailure::MembershipMissing)?;
    if credential.group_id != group_id {
        return Err(TrustFailure::WrongGroup {
            expected: group_id.to_string(),
            got: credential.group_id.clone(),
        });
    }
    if !crypto::verify(
        &policy.dtcb_policy.group_authority_key,
        &membership_check_payload(credential),
        &credential.authority_signature,
    ) {
        return Err(TrustFailure::MembershipInvalid);
    }
    Ok(())
}

fn membership_check_payload(credential: &MembershipCredential) -> Vec<u8> {
    let mut w = CanonicalWriter::tagged(tags::MEMBERSHIP);
    w.put_public_key(&credential.pseudonym)
        .put_str(&credential.group_id);
    w.finish()
}

/// Verifies a peer's quote + manifest + policy compliance against the
/// challenge we issued `age_ticks` ago. Returns the peer's pinned alias
/// key on success.
pub fn check_peer_evidence(
    public_identity: &PublicIdentity,
    quote: &Quote,
    manifest: &Manifest,
    challenge: &[u8; 32],
    age_ticks: Tick,
    policy: &PeeringPolicy,
) -> Result<PublicKey, TrustFailure> {
    let alias = public_identity
        .signing_alias()
        .ok_or(TrustFailure::NoAliasKey)?;
    if quote.chain_digest != public_identity.digest() {
        return Err(TrustFailure::ChainDigestMismatch);
    }
    verify_quote_fresh(
        quote,
        &alias,
        challenge,
        age_ticks,
        policy.dtcb_policy.max_quote_age_ticks,
    )
    .map_err(TrustFailure::QuoteRejected)?;
    verify_manifest(manifest, &alias).map_err(TrustFailure::ManifestRejected)?;
    let failures = evaluate_policy(manifest, &policy.dtcb_policy);
    if !failures.is_empty() {
        return Err(TrustFailure::Noncompliant(failures));
    }
    Ok(alias)
}

fn produce_evidence(
    local: &LocalNode<'_>,
    challenge: [u8; 32],
) -> Result<WireMessage, TrustFailure> {
    if !local.capabilities.capable() {
        return Err(TrustFailure::NotTcbCapable);
    }
    let manifest = local.manifest.ok_or(TrustFailure::MissingManifest)?;
    let quote = create_quote(local.identity, local.registers, challenge)
        .map_err(|_| TrustFailure::NoAliasKey)?;
    Ok(WireMessage::TrustEvidence {
        public_identity: local.identity.public(),
        quote,
        manifest: manifest.clone(),
    })
}

/// Result of a synchronous trust establishment run.
#[derive(Debug, Clone)]
pub struct TrustOutcome {
    pub session_nonce: [u8; 32],
    pub initiator_alias: PublicKey,
    pub responder_alias: PublicKey,
    pub initiator_messages: usize,
    pub responder_messages: usize,
}

/// Rejection carrying which side refused and how many messages each side
/// had sent by then (error notices included).
#[derive(Debug, Clone)]
pub struct TrustRejection {
    pub failure: TrustFailure,
    pub rejected_by: &'static str,
    pub initiator_messages: usize,
    pub responder_messages: usize,
}

/// Runs the four-message exchange directly: nonce challenge each way, then
/// quote + manifest + credential each way. Membership is checked before
/// any manifest is disclosed.
pub fn establish_trust(
    initiator: &LocalNode<'_>,
    responder: &LocalNode<'_>,
    policy: &PeeringPolicy,
    group_id: &str,
    rng: &mut DetRng,
) -> Result<TrustOutcome, TrustRejection> {
    let initiator_nonce = rng.bytes32();
    let responder_nonce = rng.bytes32();

    // M1: initiator challenge + credential; responder gates on membership
    // before revealing anything of its own.
    if let Err(failure) = check_membership(initiator.credential, policy, group_id) {
        return Err(TrustRejection {
            failure,
            rejected_by: "responder",
            initiator_messages: 1,
            responder_messages: 1, // the error notice
        });
    }
    // M2: responder challenge + credential.
    if let Err(failure) = check_membership(responder.credential, policy, group_id) {
        return Err(TrustRejection {
            failure,
            rejected_by: "initiator",
            initiator_messages: 2, // challenge + error notice
            responder_messages: 1,
        });
    }
    // M3: initiator evidence over the responder's challenge.
    let m3 = produce_evidence(initiator, responder_nonce).map_err(|failure| TrustRejection {
        failure,
        rejected_by: "initiator",
        initiator_messages: 2,
        responder_messages: 1,
    })?;
    let WireMessage::TrustEvidence {
        public_identity: initiator_identity,
        quote: initiator_quote,
        manifest: initiator_manifest,
    } = m3
    else {
        unreachable!("produce_evidence yields TrustEvidence");
    };
    let initiator_alias = check_peer_evidence(
        &initiator_identity,
        &initiator_quote,
        &initiator_manifest,
        &responder_nonce,
        0,
        policy,
    )
    .map_err(|failure| TrustRejection {
        failure,
        rejected_by: "responder",
        initiator_messages: 2,
        responder_messages: 2, // challenge + error notice
    })?;
    // M4: responder evidence over the initiator's challenge.
    let m4 = produce_evidence(responder, initiator_nonce).map_err(|failure| TrustRejection {
        failure,
        rejected_by: "responder",
        initiator_messages: 2,
        responder_messages: 2,
    })?;
    let WireMessage::TrustEvidence {
        public_identity: responder_identity,
        quote: responder_quote,
        manifest: responder_manifest,
    } = m4
    else {
        unreachable!("produce_evidence yields TrustEvidence");
    };
    let responder_alias = check_peer_evidence(
        &responder_identity,
        &responder_quote,
        &responder_manifest,
        &initiator_nonce,
        0,
        policy,
    )
    .map_err(|failure| TrustRejection {
        failure,
        rejected_by: "initiator",
        initiator_messages: 3, // challenge + evidence + error notice
        responder_messages: 2,
    })?;

    Ok(TrustOutcome {
        session_nonce: derive_session_nonce(&initiator_nonce, &responder_nonce),
        initiator_alias,
        responder_alias,
        initiator_messages: 2,
        responder_messages: 2,
    })
}

/// Inter-gateway wire messages: a 1-byte kind header followed by canonical
/// fields.
#[derive(Debug, Clone, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum WireMessage {
    TrustChallenge {
        nonce: [u8; 32],
        credential: Option<MembershipCredential>,
    },
    TrustEvidence {
        public_identity: PublicIdentity,
        quote: Quote,
        manifest: Manifest,
    },
    TransferRequest {
        session_nonce: [u8; 32],
        txid1: Digest,
        dest_owner: PublicKey,
        value: u64,
    },
    RegisteredAssertion {
        assertion: SignedAssertion,
    },
    InvalidatedAssertion {
        assertion: SignedAssertion,
        approvals: Vec<(PublicKey, Signature)>,
    },
    Error {
        reason: String,
    },
}

impl WireMessage {
    pub fn kind_byte(&self) -> u8 {
        match self {
            WireMessage::TrustChallenge { .. } => MSG_TRUST_CHALLENGE,
            WireMessage::TrustEvidence { .. } => MSG_TRUST_EVIDENCE,
            WireMessage::TransferRequest { .. } => MSG_TRANSFER_REQUEST,
            WireMessage::RegisteredAssertion { .. } => MSG_REGISTERED_ASSERTION,
            WireMessage::InvalidatedAssertion { .. } => MSG_INVALIDATED_ASSERTION,
            WireMessage::Error { .. } => MSG_ERROR,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            WireMessage::TrustChallenge { .. } => "trust_challenge",
            WireMessage::TrustEvidence { .. } => "trust_evidence",
            WireMessage::TransferRequest { .. } => "transfer_request",
            WireMessage::RegisteredAssertion { .. } => "registered_assertion",
            WireMessage::InvalidatedAssertion { .. } => "invalidated_assertion",
            WireMessage::Error { .. } => "error",
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::tagged(self.kind_byte());
        match self {
            WireMessage::TrustChallenge { nonce, credential } => {
                w.put_bytes(nonce);
                match credential {
                    Some(cred) => {
                        w.put_count(1);
                        cred.encode_into(&mut w);
                    }
                    None => {
                        w.put_count(0);
                    }
                }
            }
            WireMessage::TrustEvidence {
                public_identity,
                quote,
                manifest,
            } => {
                public_identity.encode_into(&mut w);
                quote.encode_into(&mut w);
                manifest.encode_into(&mut w);
            }
            WireMessage::TransferRequest {
                session_nonce,
                txid1,
                dest_owner,
                value,
            } => {
                w.put_bytes(session_nonce)
                    .put_digest(txid1)
                    .put_public_key(dest_owner)
                    .put_u64(*value);
            }
            WireMessage::RegisteredAssertion { assertion } => {
                assertion.encode_into(&mut w);
            }
            WireMessage::InvalidatedAssertion {
                assertion,
                approvals,
            } => {
                assertion.encode_into(&mut w);
                w.put_count(approvals.len());
                for (key, signature) in approvals {
                    w.put_public_key(key).put_signature(signature);
                }
            }
            WireMessage::Error { reason } => {
                w.put_str(reason);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let (&kind, rest) = bytes.split_first().ok_or(WireError::Empty)?;
        let mut r = CanonicalReader::new(rest);
        let message = match kind {
            MSG_TRUST_CHALLENGE => {
                let nonce = r.take_array32()?;
                let credential = match r.take_count(1)? {
                    0 => None,
                    _ => Some(MembershipCredential::decode_from(&mut r)?),
                };
                WireMessage::TrustChallenge { nonce, credential }
            }
            MSG_TRUST_EVIDENCE => WireMessage::TrustEvidence {
                public_identity: PublicIdentity::decode_from(&mut r)?,
                quote: Quote::decode_from(&mut r)?,
                manifest: Manifest::decode_from(&mut r)?,
            },
            MSG_TRANSFER_REQUEST => WireMessage::TransferRequest {
                session_nonce: r.take_array32()?,
                txid1: r.take_digest()?,
                dest_owner: r.take_public_key()?,
                value: r.take_u64()?,
            },
            MSG_REGISTERED_ASSERTION => WireMessage::RegisteredAssertion {
                assertion: SignedAssertion::decode_from(&mut r)?,
            },
            MSG_INVALIDATED_ASSERTION => {
                let assertion = SignedAssertion::decode_from(&mut r)?;
                let count = r.take_count(MAX_APPROVALS)?;
                let mut approvals = Vec::with_capacity(count);
                for _ in 0..count {
                    approvals.push((r.take_public_key()?, r.take_signature()?));
                }
                WireMessage::InvalidatedAssertion {
                    assertion,
                    approvals,
                }
            }
            MSG_ERROR => WireMessage::Error {
                reason: r.take_string()?,
            },
            other => return Err(WireError::BadMessageKind(other)),
        };
        r.finish()?;
        Ok(message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Source,
    Destination,
}

/// Protocol phases of both mirrored machines. A gateway is neutral in
/// `Idle` and takes a role when a transfer or challenge arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    SourceTrustEstablishing,
    SourceAwaitRegistration,
    SourceAwaitRegistrationAssertion,
    SourceInvalidationSubmitted,
    SourceAwaitInvalidationConfirm,
    SourceFinalAssertionSent,
    SourceDone,
    SourceAborted,
    DestTrustEstablishing,
    DestRegistrationSubmitted,
    DestAwaitLocalConfirm,
    DestRegistrationAssertionSent,
    DestAwaitInvalidationAssertion,
    DestUnlockSubmitted,
    DestDone,
    DestRolledBack,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Idle => "Idle",
            Phase::SourceTrustEstablishing => "source:TrustEstablishing",
            Phase::SourceAwaitRegistration => "source:AwaitRegistration",
            Phase::SourceAwaitRegistrationAssertion => "source:AwaitRegistrationAssertion",
            Phase::SourceInvalidationSubmitted => "source:InvalidationSubmitted",
            Phase::SourceAwaitInvalidationConfirm => "source:AwaitInvalidationConfirm",
            Phase::SourceFinalAssertionSent => "source:FinalAssertionSent",
            Phase::SourceDone => "source:Done",
            Phase::SourceAborted => "source:Aborted",
            Phase::DestTrustEstablishing => "destination:TrustEstablishing",
            Phase::DestRegistrationSubmitted => "destination:RegistrationSubmitted",
            Phase::DestAwaitLocalConfirm => "destination:AwaitLocalConfirm",
            Phase::DestRegistrationAssertionSent => "destination:RegistrationAssertionSent",
            Phase::DestAwaitInvalidationAssertion => "destination:AwaitInvalidationAssertion",
            Phase::DestUnlockSubmitted => "destination:UnlockSubmitted",
            Phase::DestDone => "destination:Done",
            Phase::DestRolledBack => "destination:RolledBack",
        }
    }

    /// Done, Aborted, and RolledBack never transition again.
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            Phase::SourceDone | Phase::SourceAborted | Phase::DestDone | Phase::DestRolledBack
        )
    }

    /// True when the gateway has nothing in flight (terminal or idle).
    pub fn is_quiescent(&self) -> bool {
        matches!(self, Phase::Idle) || self.is_terminal()
    }
}

/// Every phase transition the two machines may take.
pub const DECLARED_EDGES: &[(Phase, Phase)] = &[
    (Phase::Idle, Phase::SourceTrustEstablishing),
    (Phase::SourceTrustEstablishing, Phase::SourceAwaitRegistration),
    (
        Phase::SourceTrustEstablishing,
        Phase::SourceAwaitRegistrationAssertion,
    ),
    (Phase::SourceTrustEstablishing, Phase::SourceAborted),
    (
        Phase::SourceAwaitRegistration,
        Phase::SourceAwaitRegistrationAssertion,
    ),
    (Phase::SourceAwaitRegistration, Phase::SourceAborted),
    (
        Phase::SourceAwaitRegistrationAssertion,
        Phase::SourceInvalidationSubmitted,
    ),
    (Phase::SourceAwaitRegistrationAssertion, Phase::SourceAborted),
    (
        Phase::SourceInvalidationSubmitted,
        Phase::SourceAwaitInvalidationConfirm,
    ),
    (Phase::SourceInvalidationSubmitted, Phase::SourceAborted),
    (
        Phase::SourceAwaitInvalidationConfirm,
        Phase::SourceFinalAssertionSent,
    ),
    (Phase::SourceFinalAssertionSent, Phase::SourceDone),
    (Phase::Idle, Phase::DestTrustEstablishing),
    (Phase::DestTrustEstablishing, Phase::Idle),
    (Phase::DestTrustEstablishing, Phase::DestRegistrationSubmitted),
    (Phase::DestRegistrationSubmitted, Phase::DestAwaitLocalConfirm),
    (Phase::DestRegistrationSubmitted, Phase::DestRolledBack),
    (Phase::DestRegistrationSubmitted, Phase::Idle),
    (
        Phase::DestAwaitLocalConfirm,
        Phase::DestRegistrationAssertionSent,
    ),
    (Phase::DestAwaitLocalConfirm, Phase::DestRolledBack),
    (
        Phase::DestRegistrationAssertionSent,
        Phase::DestAwaitInvalidationAssertion,
    ),
    (
        Phase::DestRegistrationAssertionSent,
        Phase::DestUnlockSubmitted,
    ),
    (Phase::DestRegistrationAssertionSent, Phase::DestRolledBack),
    (
        Phase::DestAwaitInvalidationAssertion,
        Phase::DestUnlockSubmitted,
    ),
    (Phase::DestAwaitInvalidationAssertion, Phase::DestRolledBack),
    (Phase::DestUnlockSubmitted, Phase::DestDone),
];

/// Per-transfer context carried by a session.
#[derive(Debug, Clone, Default)]
pub struct TransferCtx {
    /// Source-side private asset id.
    pub asset: Option<Digest>,
    pub txid1: Option<Digest>,
    pub txid2: Option<Digest>,
    pub value: u64,
    pub dest_chain: Option<String>,
    pub dest_owner: Option<PublicKey>,
    pub outbound_locked: bool,
}

/// Live trust/transfer session with one peer gateway.
#[derive(Debug, Clone)]
pub struct Session {
    pub seq: u64,
    pub role: Role,
    pub peer_node: String,
    pub peer_chain: String,
    pub our_nonce: [u8; 32],
    pub peer_nonce: Option<[u8; 32]>,
    pub session_nonce: Option<[u8; 32]>,
    pub challenge_issued_at: Tick,
    pub established: bool,
    pub peer_alias: Option<PublicKey>,
    pub deadline: Tick,
    pub transfer: TransferCtx,
}

/// Static wiring a gateway gets from the scenario.
#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub policy: PeeringPolicy,
    pub group_id: String,
    /// Whether this node is the one delegated to speak for its chain.
    pub is_designated: bool,
    /// chain id -> designated peer gateway node.
    pub peer_gateways: BTreeMap<String, String>,
    /// chain id -> alias keys authorized to co-sign that chain's
    /// assertions.
    pub authorized_remote_signers: BTreeMap<String, Vec<PublicKey>>,
    pub block_interval: Tick,
    pub confirmation_depth: u64,
    pub lock_grace: Tick,
}

impl GatewayConfig {
    /// Provisional session deadline window: worst-case time for a local
    /// transaction to apply and confirm, plus the lock grace.
    fn deadline_window(&self) -> Tick {
        (self.confirmation_depth + 1) * self.block_interval + self.lock_grace
    }

    fn peer_chain_of(&self, node_id: &str) -> Option<String> {
        self.peer_gateways
            .iter()
            .find(|(_, peer)| peer.as_str() == node_id)
            .map(|(chain, _)| chain.clone())
    }
}

#[derive(Debug, Clone)]
pub struct GatewayState {
    pub node_id: String,
    pub chain_id: String,
    pub phase: Phase,
    pub session: Option<Session>,
    pub config: GatewayConfig,
    next_session_seq: u64,
}

impl GatewayState {
    pub fn new(node_id: impl Into<String>, chain_id: impl Into<String>, config: GatewayConfig) -> Self {
        GatewayState {
            node_id: node_id.into(),
            chain_id: chain_id.into(),
            phase: Phase::Idle,
            session: None,
            config,
            next_session_seq: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    SessionDeadline { session_seq: u64 },
    Finalize { session_seq: u64 },
}

/// One input consumed by the transition function.
#[derive(Debug)]
pub enum GatewayInput<'a> {
    Wire { from: String, bytes: &'a [u8] },
    Ledger(&'a LedgerEvent),
    Timer(TimerKind),
}

/// Structured observations for the event log and the auditors.
#[derive(Debug, Clone)]
pub enum GatewayNote {
    PhaseTransition {
        from: &'static str,
        to: &'static str,
    },
    SessionEstablished {
        peer: String,
    },
    TrustRejected {
        reason: String,
    },
    TransferStarted {
        asset: Digest,
        txid1: Digest,
        value: u64,
        dest_chain: String,
    },
    RegistrationMapped {
        txid1: Digest,
        txid2: Digest,
    },
    InvalidationStarted {
        txid1: Digest,
        txid2: Digest,
    },
    AssertionSent {
        kind: &'static str,
    },
    MessageIgnored {
        reason: String,
    },
    DeadlineExpired {
        phase: &'static str,
    },
    QuorumRefused {
        reason: String,
    },
}

/// Side effects the world must carry out after one `handle` call.
#[derive(Debug, Default)]
pub struct GatewayEffects {
    pub outbound: Vec<(String, WireMessage)>,
    pub submissions: Vec<LedgerTx>,
    pub timers: Vec<(Tick, TimerKind)>,
    pub notes: Vec<GatewayNote>,
}

impl GatewayEffects {
    fn ignored(&mut self, reason: impl Into<String>) {
        self.notes.push(GatewayNote::MessageIgnored {
            reason: reason.into(),
        });
    }
}

/// World-supplied context for one transition.
pub struct GatewayCtx<'a> {
    pub now: Tick,
    pub rng: &'a mut DetRng,
    pub own_ledger: &'a Ledger,
    pub co_signers: &'a [QuorumSigner],
}

fn set_phase(state: &mut GatewayState, fx: &mut GatewayEffects, to: Phase) {
    if state.phase != to {
        fx.notes.push(GatewayNote::PhaseTransition {
            from: state.phase.name(),
            to: to.name(),
        });
        state.phase = to;
    }
}

/// Unlocks the outbound asset if it was locked and parks the machine in
/// `Aborted`.
fn abort_source(state: &mut GatewayState, fx: &mut GatewayEffects) {
    if let Some(session) = &state.session {
        if session.transfer.outbound_locked {
            if let Some(asset) = session.transfer.asset {
                fx.submissions.push(LedgerTx::Unlock { asset });
            }
        }
    }
    set_phase(state, fx, Phase::SourceAborted);
}

fn reset_to_idle(state: &mut GatewayState, fx: &mut GatewayEffects) {
    state.session = None;
    set_phase(state, fx, Phase::Idle);
}

/// The gateway transition function.
pub fn handle(
    state: &mut GatewayState,
    local: &LocalNode<'_>,
    input: GatewayInput<'_>,
    ctx: &mut GatewayCtx<'_>,
) -> GatewayEffects {
    let mut fx = GatewayEffects::default();
    match input {
        GatewayInput::Wire { from, bytes } => match WireMessage::decode(bytes) {
            Ok(message) => handle_wire(state, local, from, message, ctx, &mut fx),
            Err(err) => fx.ignored(format!("malformed message from {from}: {err}")),
        },
        GatewayInput::Ledger(event) => handle_ledger(state, local, event, ctx, &mut fx),
        GatewayInput::Timer(kind) => handle_timer(state, kind, ctx, &mut fx),
    }
    fx
}

fn start_transfer(
    state: &mut GatewayState,
    local: &LocalNode<'_>,
    asset_id: Digest,
    dest_chain: String,
    dest_owner: PublicKey,
    ctx: &mut GatewayCtx<'_>,
    fx: &mut GatewayEffects,
) {
    let Some(record) = ctx.own_ledger.asset(&asset_id) else {
        fx.ignored(format!("transfer references unknown asset {asset_id}"));
        return;
    };
    let Some(peer_node) = state.config.peer_gateways.get(&dest_chain).cloned() else {
        fx.ignored(format!("no peer gateway known for chain {dest_chain}"));
        return;
    };

    let mask_nonce = ctx.rng.bytes32();
    let txid1 = mask_txid(&asset_id, &state.chain_id, &mask_nonce);
    let our_nonce = ctx.rng.bytes32();
    let deadline = ctx.now + state.config.deadline_window();
    let seq = state.next_session_seq;
    state.next_session_seq += 1;
    state.session = Some(Session {
        seq,
        role: Role::Source,
        peer_node: peer_node.clone(),
        peer_chain: dest_chain.clone(),
        our_nonce,
        peer_nonce: None,
        session_nonce: None,
        challenge_issued_at: ctx.now,
        established: false,
        peer_alias: None,
        deadline,
        transfer: TransferCtx {
            asset: Some(asset_id),
            txid1: Some(txid1),
            txid2: None,
            value: record.value,
            dest_chain: Some(dest_chain.clone()),
            dest_owner: Some(dest_owner),
            outbound_locked: false,
        },
    });
    fx.notes.push(GatewayNote::TransferStarted {
        asset: asset_id,
        txid1,
        value: record.value,
        dest_chain,
    });
    fx.outbound.push((
        peer_node,
        WireMessage::TrustChallenge {
            nonce: our_nonce,
            credential: local.credential.cloned(),
        },
    ));
    fx.timers
        .push((deadline, TimerKind::SessionDeadline { session_seq: seq }));
    set_phase(state, fx, Phase::SourceTrustEstablishing);
}

fn send_transfer_request(state: &mut GatewayState, fx: &mut GatewayEffects) {
    let Some(session) = &state.session else { return };
    let (Some(session_nonce), Some(txid1), Some(dest_owner)) = (
        session.session_nonce,
        session.transfer.txid1,
        session.transfer.dest_owner,
    ) else {
        return;
    };
    fx.outbound.push((
        session.peer_node.clone(),
        WireMessage::TransferRequest {
            session_nonce,
            txid1,
            dest_owner,
            value: session.transfer.value,
        },
    ));
    set_phase(state, fx, Phase::SourceAwaitRegistrationAssertion);
}

fn handle_wire(
    state: &mut GatewayState,
    local: &LocalNode<'_>,
    from: String,
    message: WireMessage,
    ctx: &mut GatewayCtx<'_>,
    fx: &mut GatewayEffects,
) {
    match message {
        WireMessage::TrustChallenge { nonce, credential } => {
            handle_trust_challenge(state, local, from, nonce, credential, ctx, fx)
        }
        WireMessage::TrustEvidence {
            public_identity,
            quote,
            manifest,
        } => handle_trust_evidence(state, local, from, public_identity, quote, manifest, ctx, fx),
        WireMessage::TransferRequest {
            session_nonce,
            txid1,
            dest_owner,
            value,
        } => handle_transfer_request(state, from, session_nonce, txid1, dest_owner, value, ctx, fx),
        WireMessage::RegisteredAssertion { assertion } => {
            handle_registered_assertion(state, from, assertion, fx)
        }
        WireMessage::InvalidatedAssertion {
            assertion,
            approvals,
        } => handle_invalidated_assertion(state, from, assertion, approvals, fx),
        WireMessage::Error { reason } => handle_peer_error(state, from, reason, fx),
    }
}

fn handle_trust_challenge(
    state: &mut GatewayState,
    local: &LocalNode<'_>,
    from: String,
    nonce: [u8; 32],
    credential: Option<MembershipCredential>,
    ctx: &mut GatewayCtx<'_>,
    fx: &mut GatewayEffects,
) {
    // Response leg: the responder's challenge coming back to the source.
    if state.phase == Phase::SourceTrustEstablishing {
        let Some(session) = state.session.as_mut() else {
            fx.ignored("challenge without a session");
            return;
        };
        if session.peer_node != from || session.peer_nonce.is_some() {
            fx.ignored(format!("unexpected trust challenge from {from}"));
            return;
        }
        if let Err(failure) = check_membership(
            credential.as_ref(),
            &state.config.policy,
            &state.config.group_id,
        ) {
            fx.notes.push(GatewayNote::TrustRejected {
                reason: failure.to_string(),
            });
            fx.outbound.push((
                from,
                WireMessage::Error {
                    reason: failure.to_string(),
                },
            ));
            abort_source(state, fx);
            return;
        }
        session.peer_nonce = Some(nonce);
        session.session_nonce = Some(derive_session_nonce(&session.our_nonce, &nonce));
        match produce_evidence(local, nonce) {
            Ok(evidence) => fx.outbound.push((from, evidence)),
            Err(failure) => {
                fx.notes.push(GatewayNote::TrustRejected {
                    reason: failure.to_string(),
                });
                fx.outbound.push((
                    from,
                    WireMessage::Error {
                        reason: failure.to_string(),
                    },
                ));
                abort_source(state, fx);
            }
        }
        return;
    }

    // Retransmission of a challenge this session already answered.
    if let Some(session) = &state.session {
        if session.peer_node == from && session.peer_nonce == Some(nonce) {
            fx.ignored(format!("duplicate trust challenge from {from}"));
            return;
        }
    }

    // First leg: a fresh challenge arriving at a would-be destination.
    if state.phase != Phase::Idle {
        fx.ignored(format!(
            "trust challenge from {from} while {}",
            state.phase.name()
        ));
        fx.outbound.push((
            from,
            WireMessage::Error {
                reason: "gateway unavailable".to_string(),
            },
        ));
        return;
    }
    // Membership is checked before this node reveals anything of its own.
    if let Err(failure) = check_membership(
        credential.as_ref(),
        &state.config.policy,
        &state.config.group_id,
    ) {
        fx.notes.push(GatewayNote::TrustRejected {
            reason: failure.to_string(),
        });
        fx.outbound.push((
            from,
            WireMessage::Error {
                reason: failure.to_string(),
            },
        ));
        return;
    }
    let Some(peer_chain) = state.config.peer_chain_of(&from) else {
        let failure = TrustFailure::UnknownPeer(from.clone());
        fx.notes.push(GatewayNote::TrustRejected {
            reason: failure.to_string(),
        });
        fx.outbound.push((
            from,
            WireMessage::Error {
                reason: failure.to_string(),
            },
        ));
        return;
    };

    let our_nonce = ctx.rng.bytes32();
    let deadline = ctx.now + state.config.deadline_window();
    let seq = state.next_session_seq;
    state.next_session_seq += 1;
    state.session = Some(Session {
        seq,
        role: Role::Destination,
        peer_node: from.clone(),
        peer_chain,
        our_nonce,
        peer_nonce: Some(nonce),
        session_nonce: Some(derive_session_nonce(&nonce, &our_nonce)),
        challenge_issued_at: ctx.now,
        established: false,
        peer_alias: None,
        deadline,
        transfer: TransferCtx::default(),
    });
    fx.outbound.push((
        from,
        WireMessage::TrustChallenge {
            nonce: our_nonce,
            credential: local.credential.cloned(),
        },
    ));
    fx.timers
        .push((deadline, TimerKind::SessionDeadline { session_seq: seq }));
    set_phase(state, fx, Phase::DestTrustEstablishing);
}

#[allow(clippy::too_many_arguments)]
fn handle_trust_evidence(
    state: &mut GatewayState,
    local: &LocalNode<'_>,
    from: String,
    public_identity: PublicIdentity,
    quote: Quote,
    manifest: Manifest,
    ctx: &mut GatewayCtx<'_>,
    fx: &mut GatewayEffects,
) {
    let Some(session) = state.session.as_mut() else {
        fx.ignored(format!("evidence from {from} without a session"));
        return;
    };
    if session.peer_node != from || session.established {
        fx.ignored(format!("unexpected evidence from {from}"));
        return;
    }
    let age = ctx.now.saturating_sub(session.challenge_issued_at);
    let checked = check_peer_evidence(
        &public_identity,
        &quote,
        &manifest,
        &session.our_nonce,
        age,
        &state.config.policy,
    );

    match (state.phase, checked) {
        (Phase::DestTrustEstablishing, Ok(alias)) => {
            session.peer_alias = Some(alias);
            let challenge = session.peer_nonce.expect("responder stored peer nonce");
            match produce_evidence(local, challenge) {
                Ok(evidence) => {
                    session.established = true;
                    fx.outbound.push((from.clone(), evidence));
                    fx.notes.push(GatewayNote::SessionEstablished { peer: from });
                }
                Err(failure) => {
                    fx.notes.push(GatewayNote::TrustRejected {
                        reason: failure.to_string(),
                    });
                    fx.outbound.push((
                        from,
                        WireMessage::Error {
                            reason: failure.to_string(),
                        },
                    ));
                    reset_to_idle(state, fx);
                }
            }
        }
        (Phase::DestTrustEstablishing, Err(failure)) => {
            fx.notes.push(GatewayNote::TrustRejected {
                reason: failure.to_string(),
            });
            fx.outbound.push((
                from,
                WireMessage::Error {
                    reason: failure.to_string(),
                },
            ));
            reset_to_idle(state, fx);
        }
        (Phase::SourceTrustEstablishing, Ok(alias)) => {
            session.peer_alias = Some(alias);
            session.established = true;
            let outbound_locked = session.transfer.outbound_locked;
            fx.notes.push(GatewayNote::SessionEstablished { peer: from });
            if outbound_locked {
                send_transfer_request(state, fx);
            } else {
                set_phase(state, fx, Phase::SourceAwaitRegistration);
            }
        }
        (Phase::SourceTrustEstablishing, Err(failure)) => {
            fx.notes.push(GatewayNote::TrustRejected {
                reason: failure.to_string(),
            });
            fx.outbound.push((
                from,
                WireMessage::Error {
                    reason: failure.to_string(),
                },
            ));
            abort_source(state, fx);
        }
        _ => fx.ignored(format!("evidence from {from} while {}", state.phase.name())),
    }
}

#[allow(clippy::too_many_arguments)]
fn handle_transfer_request(
    state: &mut GatewayState,
    from: String,
    session_nonce: [u8; 32],
    txid1: Digest,
    dest_owner: PublicKey,
    value: u64,
    ctx: &mut GatewayCtx<'_>,
    fx: &mut GatewayEffects,
) {
    if state.phase != Phase::DestTrustEstablishing {
        fx.ignored(format!(
            "transfer request from {from} while {}",
            state.phase.name()
        ));
        return;
    }
    let Some(session) = state.session.as_mut() else {
        fx.ignored("transfer request without a session");
        return;
    };
    if !session.established
        || session.peer_node != from
        || session.session_nonce != Some(session_nonce)
    {
        fx.ignored(format!("transfer request from {from} not session-bound"));
        return;
    }

    // Register the soon-to-arrive asset under a fresh masked identifier.
    let private_id = Digest::new(ctx.rng.bytes32());
    let mask_nonce = ctx.rng.bytes32();
    let txid2 = mask_txid(&private_id, &state.chain_id, &mask_nonce);
    session.transfer = TransferCtx {
        asset: None,
        txid1: Some(txid1),
        txid2: Some(txid2),
        value,
        dest_chain: None,
        dest_owner: Some(dest_owner),
        outbound_locked: false,
    };
    fx.submissions.push(LedgerTx::Register {
        masked_id: txid2,
        owner: dest_owner,
        lock_holder: state.node_id.clone(),
        value,
    });
    fx.notes
        .push(GatewayNote::RegistrationMapped { txid1, txid2 });
    set_phase(state, fx, Phase::DestRegistrationSubmitted);
}

fn handle_registered_assertion(
    state: &mut GatewayState,
    from: String,
    assertion: SignedAssertion,
    fx: &mut GatewayEffects,
) {
    if state.phase != Phase::SourceAwaitRegistrationAssertion {
        fx.ignored(format!(
            "registered assertion from {from} while {}",
            state.phase.name()
        ));
        return;
    }
    let Some(session) = state.session.as_mut() else {
        fx.ignored("assertion without a session");
        return;
    };
    let (Some(expected_signer), Some(expected_session)) =
        (session.peer_alias, session.session_nonce)
    else {
        fx.ignored("assertion before session establishment");
        return;
    };
    if assertion.kind != AssertionKind::Registered {
        fx.ignored("assertion has wrong kind");
        return;
    }
    if Some(assertion.txid1_public) != session.transfer.txid1 {
        fx.ignored("assertion references a different transfer");
        return;
    }
    if let Err(rejection) = verify_assertion(&assertion, &expected_signer, &expected_session) {
        fx.ignored(format!("registered assertion rejected: {rejection}"));
        return;
    }

    session.transfer.txid2 = Some(assertion.txid2_public);
    let asset = session.transfer.asset.expect("source session has an asset");
    let txid1 = assertion.txid1_public;
    let txid2 = assertion.txid2_public;
    let remote_chain = session.peer_chain.clone();
    fx.submissions.push(LedgerTx::Invalidate {
        asset,
        txid1_public: txid1,
        txid2_public: txid2,
        remote_chain,
    });
    fx.notes
        .push(GatewayNote::InvalidationStarted { txid1, txid2 });
    set_phase(state, fx, Phase::SourceInvalidationSubmitted);
}

fn handle_invalidated_assertion(
    state: &mut GatewayState,
    from: String,
    assertion: SignedAssertion,
    approvals: Vec<(PublicKey, Signature)>,
    fx: &mut GatewayEffects,
) {
    if !matches!(
        state.phase,
        Phase::DestRegistrationAssertionSent | Phase::DestAwaitInvalidationAssertion
    ) {
        fx.ignored(format!(
            "invalidated assertion from {from} while {}",
            state.phase.name()
        ));
        return;
    }
    let Some(session) = state.session.as_mut() else {
        fx.ignored("assertion without a session");
        return;
    };
    let (Some(expected_signer), Some(expected_session)) =
        (session.peer_alias, session.session_nonce)
    else {
        fx.ignored("assertion before session establishment");
        return;
    };
    if assertion.kind != AssertionKind::Invalidated {
        fx.ignored("assertion has wrong kind");
        return;
    }
    if Some(assertion.txid1_public) != session.transfer.txid1
        || Some(assertion.txid2_public) != session.transfer.txid2
    {
        fx.ignored("assertion references a different transfer");
        return;
    }
    if let Err(rejection) = verify_assertion(&assertion, &expected_signer, &expected_session) {
        fx.ignored(format!("invalidated assertion rejected: {rejection}"));
        return;
    }
    if session.transfer.value >= state.config.policy.sensitive_threshold {
        let authorized = state
            .config
            .authorized_remote_signers
            .get(&session.peer_chain)
            .cloned()
            .unwrap_or_default();
        if !verify_quorum(
            &assertion,
            &approvals,
            &authorized,
            state.config.policy.quorum_m,
        ) {
            fx.ignored("invalidated assertion lacks quorum approval");
            return;
        }
    }

    let txid2 = session.transfer.txid2.expect("destination stored txid2");
    fx.submissions.push(LedgerTx::Unlock { asset: txid2 });
    set_phase(state, fx, Phase::DestUnlockSubmitted);
}

fn handle_peer_error(
    state: &mut GatewayState,
    from: String,
    reason: String,
    fx: &mut GatewayEffects,
) {
    let session_peer = state.session.as_ref().map(|s| s.peer_node.clone());
    if session_peer.as_deref() != Some(from.as_str()) {
        fx.ignored(format!("error notice from {from}: {reason}"));
        return;
    }
    match state.phase {
        Phase::SourceTrustEstablishing
        | Phase::SourceAwaitRegistration
        | Phase::SourceAwaitRegistrationAssertion => {
            fx.notes.push(GatewayNote::TrustRejected {
                reason: format!("peer error: {reason}"),
            });
            abort_source(state, fx);
        }
        Phase::DestTrustEstablishing => {
            fx.notes.push(GatewayNote::TrustRejected {
                reason: format!("peer error: {reason}"),
            });
            reset_to_idle(state, fx);
        }
        _ => fx.ignored(format!("error notice from {from}: {reason}")),
    }
}

fn handle_ledger(
    state: &mut GatewayState,
    local: &LocalNode<'_>,
    event: &LedgerEvent,
    ctx: &mut GatewayCtx<'_>,
    fx: &mut GatewayEffects,
) {
    match event {
        LedgerEvent::TxSubmitted { tx, .. } => {
            // The designated gateway picks up pending outbound transfers.
            if let LedgerTx::TransferOut {
                asset,
                dest_chain,
                dest_pubkey,
            } = tx
            {
                if state.config.is_designated
                    && state.phase == Phase::Idle
                    && *dest_chain != state.chain_id
                {
                    start_transfer(
                        state,
                        local,
                        *asset,
                        dest_chain.clone(),
                        *dest_pubkey,
                        ctx,
                        fx,
                    );
                }
            }
        }
        LedgerEvent::TxApplied {
            tx, lock_deadline, ..
        } => handle_tx_applied(state, tx, *lock_deadline, ctx, fx),
        LedgerEvent::TxFailed { tx, reason, .. } => handle_tx_failed(state, tx, reason, fx),
        LedgerEvent::TxConfirmed { tx, .. } => handle_tx_confirmed(state, local, tx, ctx, fx),
        LedgerEvent::BlockProduced { .. } => {}
    }
}

fn session_matches_transfer_out(session: &Session, asset: &Digest) -> bool {
    session.role == Role::Source && session.transfer.asset == Some(*asset)
}

fn handle_tx_applied(
    state: &mut GatewayState,
    tx: &LedgerTx,
    lock_deadline: Option<Tick>,
    ctx: &mut GatewayCtx<'_>,
    fx: &mut GatewayEffects,
) {
    match tx {
        LedgerTx::TransferOut { asset, .. } => {
            let Some(session) = state.session.as_mut() else { return };
            if !session_matches_transfer_out(session, asset) {
                return;
            }
            session.transfer.outbound_locked = true;
            if let Some(deadline) = lock_deadline {
                session.deadline = deadline;
                let seq = session.seq;
                fx.timers
                    .push((deadline, TimerKind::SessionDeadline { session_seq: seq }));
            }
            match state.phase {
                Phase::SourceAwaitRegistration => send_transfer_request(state, fx),
                Phase::SourceAborted => {
                    // The abort fired before the lock applied; release it now.
                    fx.submissions.push(LedgerTx::Unlock { asset: *asset });
                }
                _ => {}
            }
        }
        LedgerTx::Register { masked_id, .. } => {
            let Some(session) = state.session.as_mut() else { return };
            if session.transfer.txid2 != Some(*masked_id) {
                return;
            }
            match state.phase {
                Phase::DestRegistrationSubmitted => {
                    if let Some(deadline) = lock_deadline {
                        session.deadline = deadline;
                        let seq = session.seq;
                        fx.timers
                            .push((deadline, TimerKind::SessionDeadline { session_seq: seq }));
                    }
                    set_phase(state, fx, Phase::DestAwaitLocalConfirm);
                }
                Phase::DestRolledBack => {
                    // Registration landed after the deadline already fired.
                    fx.submissions.push(LedgerTx::Rollback { asset: *masked_id });
                }
                _ => {}
            }
        }
        LedgerTx::Invalidate { asset, .. } => {
            let Some(session) = state.session.as_ref() else { return };
            if session.transfer.asset == Some(*asset)
                && state.phase == Phase::SourceInvalidationSubmitted
            {
                set_phase(state, fx, Phase::SourceAwaitInvalidationConfirm);
            }
        }
        LedgerTx::Unlock { asset } => {
            let Some(session) = state.session.as_ref() else { return };
            if session.transfer.txid2 == Some(*asset) && state.phase == Phase::DestUnlockSubmitted
            {
                set_phase(state, fx, Phase::DestDone);
            }
        }
        LedgerTx::Rollback { .. } => {}
    }
    let _ = ctx;
}

fn handle_tx_failed(
    state: &mut GatewayState,
    tx: &LedgerTx,
    reason: &crate::ledger::ApplyFailure,
    fx: &mut GatewayEffects,
) {
    match tx {
        LedgerTx::TransferOut { asset, .. } => {
            let Some(session) = state.session.as_ref() else { return };
            if session_matches_transfer_out(session, asset)
                && matches!(
                    state.phase,
                    Phase::SourceTrustEstablishing
                        | Phase::SourceAwaitRegistration
                        | Phase::SourceAwaitRegistrationAssertion
                )
            {
                fx.ignored(format!("outbound transfer failed to apply: {reason}"));
                abort_source(state, fx);
            }
        }
        LedgerTx::Register { masked_id, .. } => {
            let Some(session) = state.session.as_ref() else { return };
            if session.transfer.txid2 == Some(*masked_id)
                && state.phase == Phase::DestRegistrationSubmitted
            {
                fx.ignored(format!("registration failed to apply: {reason}"));
                let peer = session.peer_node.clone();
                fx.outbound.push((
                    peer,
                    WireMessage::Error {
                        reason: format!("registration failed: {reason}"),
                    },
                ));
                reset_to_idle(state, fx);
            }
        }
        LedgerTx::Invalidate { asset, .. } => {
            let Some(session) = state.session.as_ref() else { return };
            if session.transfer.asset == Some(*asset)
                && state.phase == Phase::SourceInvalidationSubmitted
            {
                fx.ignored(format!("invalidation failed to apply: {reason}"));
                abort_source(state, fx);
            }
        }
        _ => {}
    }
}

fn handle_tx_confirmed(
    state: &mut GatewayState,
    local: &LocalNode<'_>,
    tx: &LedgerTx,
    ctx: &mut GatewayCtx<'_>,
    fx: &mut GatewayEffects,
) {
    match tx {
        LedgerTx::Register { masked_id, .. } => {
            let Some(session) = state.session.as_mut() else { return };
            if session.transfer.txid2 != Some(*masked_id)
                || state.phase != Phase::DestAwaitLocalConfirm
            {
                return;
            }
            // Local confirmation achieved: assert the registration.
            let Some(session_nonce) = session.session_nonce else { return };
            let seq = session.seq;
            let Some(signer) = local.identity.signing_alias() else {
                fx.ignored("no signing key available for assertion");
                return;
            };
            let assertion = create_assertion(
                AssertionKind::Registered,
                session.transfer.txid1.expect("destination stored txid1"),
                *masked_id,
                signer,
                session_nonce,
            );
            let peer = session.peer_node.clone();
            fx.outbound
                .push((peer, WireMessage::RegisteredAssertion { assertion }));
            fx.notes.push(GatewayNote::AssertionSent {
                kind: AssertionKind::Registered.name(),
            });
            fx.timers
                .push((ctx.now + 1, TimerKind::Finalize { session_seq: seq }));
            set_phase(state, fx, Phase::DestRegistrationAssertionSent);
        }
        LedgerTx::Invalidate {
            asset,
            txid1_public,
            txid2_public,
            ..
        } => {
            let Some(session) = state.session.as_mut() else { return };
            if session.transfer.asset != Some(*asset)
                || state.phase != Phase::SourceAwaitInvalidationConfirm
            {
                return;
            }
            let Some(session_nonce) = session.session_nonce else { return };
            let seq = session.seq;
            let Some(signer) = local.identity.signing_alias() else {
                fx.ignored("no signing key available for assertion");
                return;
            };
            let assertion = create_assertion(
                AssertionKind::Invalidated,
                *txid1_public,
                *txid2_public,
                signer,
                session_nonce,
            );
            let approvals = if session.transfer.value >= state.config.policy.sensitive_threshold {
                match quorum_approve(
                    ctx.co_signers,
                    &assertion.signed_payload(),
                    state.config.policy.quorum_m,
                ) {
                    Ok(approvals) => approvals,
                    Err(refusal) => {
                        fx.notes.push(GatewayNote::QuorumRefused {
                            reason: refusal.to_string(),
                        });
                        return;
                    }
                }
            } else {
                Vec::new()
            };
            let peer = session.peer_node.clone();
            fx.outbound.push((
                peer,
                WireMessage::InvalidatedAssertion {
                    assertion,
                    approvals,
                },
            ));
            fx.notes.push(GatewayNote::AssertionSent {
                kind: AssertionKind::Invalidated.name(),
            });
            fx.timers
                .push((ctx.now + 1, TimerKind::Finalize { session_seq: seq }));
            set_phase(state, fx, Phase::SourceFinalAssertionSent);
        }
        _ => {}
    }
}

fn handle_timer(
    state: &mut GatewayState,
    kind: TimerKind,
    ctx: &mut GatewayCtx<'_>,
    fx: &mut GatewayEffects,
) {
    match kind {
        TimerKind::Finalize { session_seq } => {
            let Some(session) = state.session.as_ref() else { return };
            if session.seq != session_seq {
                return;
            }
            match state.phase {
                Phase::SourceFinalAssertionSent => set_phase(state, fx, Phase::SourceDone),
                Phase::DestRegistrationAssertionSent => {
                    set_phase(state, fx, Phase::DestAwaitInvalidationAssertion)
                }
                _ => {}
            }
        }
        TimerKind::SessionDeadline { session_seq } => {
            let Some(session) = state.session.as_ref() else { return };
            if session.seq != session_seq {
                return;
            }
            if ctx.now < session.deadline {
                // Deadline was extended after this timer was scheduled.
                let deadline = session.deadline;
                fx.timers
                    .push((deadline, TimerKind::SessionDeadline { session_seq }));
                return;
            }
            match state.phase {
                Phase::SourceTrustEstablishing
                | Phase::SourceAwaitRegistration
                | Phase::SourceAwaitRegistrationAssertion => {
                    fx.notes.push(GatewayNote::DeadlineExpired {
                        phase: state.phase.name(),
                    });
                    abort_source(state, fx);
                }
                Phase::DestTrustEstablishing => {
                    fx.notes.push(GatewayNote::DeadlineExpired {
                        phase: state.phase.name(),
                    });
                    reset_to_idle(state, fx);
                }
                Phase::DestRegistrationSubmitted
                | Phase::DestAwaitLocalConfirm
                | Phase::DestRegistrationAssertionSent
                | Phase::DestAwaitInvalidationAssertion => {
                    fx.notes.push(GatewayNote::DeadlineExpired {
                        phase: state.phase.name(),
                    });
                    if let Some(txid2) = state
                        .session
                        .as_ref()
                        .and_then(|s| s.transfer.txid2)
                    {
                        fx.submissions.push(LedgerTx::Rollback { asset: txid2 });
                    }
                    set_phase(state, fx, Phase::DestRolledBack);
                }
                _ => {}
            }
        }
    }
}
