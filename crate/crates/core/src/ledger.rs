// SPDX-License-Identifier: Apache-2.0

//! Simulated blockchain autonomous system: an append-only block list fed
//! from a pending queue, asset records with lock / invalidate / redirect
//! semantics, and a confirmation-depth oracle. Consensus is abstracted to
//! "one block every `block_interval` ticks"; a transaction is confirmed
//! once its block is followed by `confirmation_depth` later blocks.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::crypto::{self, tags, Digest, PublicKey};
use crate::wire::CanonicalWriter;

pub type Tick = u64;

/// Where an asset record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssetOrigin {
    /// Created at world setup; its ledger identifier is private.
    Genesis,
    /// Created by a `Register` transaction; its identifier is the public
    /// masked id chosen by the registering gateway.
    Registered,
}

/// Destination recorded when an asset is transferred out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferDest {
    pub chain_id: String,
    pub recipient: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssetState {
    Active,
    Locked { holder: String, deadline: Tick },
    Invalidated {
        local_public_id: Digest,
        remote_public_id: Digest,
        remote_chain: String,
    },
}

impl AssetState {
    pub fn name(&self) -> &'static str {
        match self {
            AssetState::Active => "Active",
            AssetState::Locked { .. } => "Locked",
            AssetState::Invalidated { .. } => "Invalidated",
        }
    }
}

/// One asset on one ledger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetRecord {
    pub private_tx_id: Digest,
    pub owner: PublicKey,
    pub value: u64,
    pub origin: AssetOrigin,
    pub dest: Option<TransferDest>,
    pub state: AssetState,
}

/// Ledger transactions. Preconditions are enforced at apply time; failures
/// become first-class events and leave state unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LedgerTx {
    TransferOut {
        asset: Digest,
        dest_chain: String,
        dest_pubkey: PublicKey,
    },
    Register {
        masked_id: Digest,
        owner: PublicKey,
        lock_holder: String,
        value: u64,
    },
    Invalidate {
        asset: Digest,
        txid1_public: Digest,
        txid2_public: Digest,
        remote_chain: String,
    },
    Unlock {
        asset: Digest,
    },
    Rollback {
        asset: Digest,
    },
}

impl LedgerTx {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LedgerTx::TransferOut { .. } => "transfer_out",
            LedgerTx::Register { .. } => "register",
            LedgerTx::Invalidate { .. } => "invalidate",
            LedgerTx::Unlock { .. } => "unlock",
            LedgerTx::Rollback { .. } => "rollback",
        }
    }

    /// Asset id this transaction references, if it references an existing
    /// record.
    pub fn referenced_asset(&self) -> Option<&Digest> {
        match self {
            LedgerTx::TransferOut { asset, .. }
            | LedgerTx::Invalidate { asset, .. }
            | LedgerTx::Unlock { asset }
            | LedgerTx::Rollback { asset } => Some(asset),
            LedgerTx::Register { .. } => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::new();
        match self {
            LedgerTx::TransferOut {
                asset,
                dest_chain,
                dest_pubkey,
            } => {
                w.put_u64(0)
                    .put_digest(asset)
                    .put_str(dest_chain)
                    .put_public_key(dest_pubkey);
            }
            LedgerTx::Register {
                masked_id,
                owner,
                lock_holder,
                value,
            } => {
                w.put_u64(1)
                    .put_digest(masked_id)
                    .put_public_key(owner)
                    .put_str(lock_holder)
                    .put_u64(*value);
            }
            LedgerTx::Invalidate {
                asset,
                txid1_public,
                txid2_public,
                remote_chain,
            } => {
                w.put_u64(2)
                    .put_digest(asset)
                    .put_digest(txid1_public)
                    .put_digest(txid2_public)
                    .put_str(remote_chain);
            }
            LedgerTx::Unlock { asset } => {
                w.put_u64(3).put_digest(asset);
            }
            LedgerTx::Rollback { asset } => {
                w.put_u64(4).put_digest(asset);
            }
        }
        w.finish()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SubmitError {
    #[error("unknown asset {0}")]
    UnknownAsset(Digest),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApplyFailure {
    #[error("unknown asset {0}")]
    UnknownAsset(Digest),
    #[error("asset not Active (state {state})")]
    AssetNotActive { state: &'static str },
    #[error("asset not Locked (state {state})")]
    AssetNotLocked { state: &'static str },
    #[error("asset already Invalidated (terminal)")]
    AlreadyInvalidated,
    #[error("asset {0} already exists")]
    AssetExists(Digest),
    #[error("rollback only removes Register-created assets")]
    NotRegisteredOrigin,
    #[error("chain has no designated gateway to hold the outbound lock")]
    NoDesignatedGateway,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxOutcome {
    Applied,
    Failed(ApplyFailure),
}

#[derive(Debug, Clone)]
pub struct BlockEntry {
    pub tx_ref: Digest,
    pub tx: LedgerTx,
    pub outcome: TxOutcome,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub index: u64,
    pub produced_at: Tick,
    pub entries: Vec<BlockEntry>,
}

impl Block {
    /// Stable serialization used by the append-only audit.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::new();
        w.put_u64(self.index).put_u64(self.produced_at);
        w.put_count(self.entries.len());
        for entry in &self.entries {
            w.put_digest(&entry.tx_ref);
            w.put_bytes(&entry.tx.encode());
            match &entry.outcome {
                TxOutcome::Applied => w.put_u64(0),
                TxOutcome::Failed(reason) => w.put_u64(1).put_str(&reason.to_string()),
            };
        }
        w.finish()
    }
}

#[derive(Debug, Clone)]
struct PendingTx {
    tx_ref: Digest,
    tx: LedgerTx,
}

/// Events a ledger emits toward the simulation log and the gateways
/// watching the chain.
#[derive(Debug, Clone)]
pub enum LedgerEvent {
    BlockProduced {
        chain_id: String,
        index: u64,
        tx_count: usize,
    },
    /// Emitted by the world at submission time, before any block holds
    /// the transaction.
    TxSubmitted {
        chain_id: String,
        tx_ref: Digest,
        tx: LedgerTx,
    },
    TxApplied {
        chain_id: String,
        tx_ref: Digest,
        tx: LedgerTx,
        /// Deadline assigned when this application created a lock.
        lock_deadline: Option<Tick>,
    },
    TxFailed {
        chain_id: String,
        tx_ref: Digest,
        tx: LedgerTx,
        reason: ApplyFailure,
    },
    TxConfirmed {
        chain_id: String,
        tx_ref: Digest,
        tx: LedgerTx,
    },
}

/// Answer to an asset query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryStatus {
    Active,
    Locked,
    Redirect {
        chain: String,
        remote_public_id: Digest,
    },
    NotFound,
}

/// Record of one state transition, for the state-machine safety audit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionRecord {
    pub tick: Tick,
    pub asset: Digest,
    pub from: &'static str,
    pub to: &'static str,
}

/// Every asset-state transition `apply` may take; anything else observed
/// in a transition log is a safety violation.
pub const DECLARED_TRANSITIONS: &[(&str, &str)] = &[
    ("(genesis)", "Active"),
    ("(registered)", "Locked"),
    ("Active", "Locked"),
    ("Active", "Invalidated"),
    ("Locked", "Invalidated"),
    ("Locked", "Active"),
    ("Locked", "(removed)"),
];

/// One blockchain autonomous system's shared ledger.
#[derive(Debug, Clone)]
pub struct Ledger {
    pub chain_id: String,
    pub block_interval: Tick,
    pub confirmation_depth: u64,
    /// Grace added past the confirmation point when a lock deadline is
    /// assigned.
    pub lock_grace: Tick,
    /// Node delegated to speak for this chain on inter-domain transfers.
    pub designated_gateway: Option<String>,
    blocks: Vec<Block>,
    pending: VecDeque<PendingTx>,
    assets: BTreeMap<Digest, AssetRecord>,
    /// Invalidated local public id -> private record id.
    public_index: BTreeMap<Digest, Digest>,
    /// tx_ref -> index of the block that applied it.
    tx_blocks: BTreeMap<Digest, u64>,
    transitions: Vec<TransitionRecord>,
    next_submit_seq: u64,
}

impl Ledger {
    pub fn new(
        chain_id: impl Into<String>,
        block_interval: Tick,
        confirmation_depth: u64,
        lock_grace: Tick,
    ) -> Self {
        Ledger {
            chain_id: chain_id.into(),
            block_interval,
            confirmation_depth,
            lock_grace,
            designated_gateway: None,
            blocks: Vec::new(),
            pending: VecDeque::new(),
            assets: BTreeMap::new(),
            public_index: BTreeMap::new(),
            tx_blocks: BTreeMap::new(),
            transitions: Vec::new(),
            next_submit_seq: 0,
        }
    }

    /// Installs an asset with a private identifier at world setup.
    pub fn genesis_asset(&mut self, private_tx_id: Digest, owner: PublicKey, value: u64) {
        self.assets.insert(
            private_tx_id,
            AssetRecord {
                private_tx_id,
                owner,
                value,
                origin: AssetOrigin::Genesis,
                dest: None,
                state: AssetState::Active,
            },
        );
        self.transitions.push(TransitionRecord {
            tick: 0,
            asset: private_tx_id,
            from: "(genesis)",
            to: "Active",
        });
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn asset(&self, id: &Digest) -> Option<&AssetRecord> {
        self.assets.get(id)
    }

    pub fn assets(&self) -> impl Iterator<Item = &AssetRecord> {
        self.assets.values()
    }

    pub fn transitions(&self) -> &[TransitionRecord] {
        &self.transitions
    }

    /// True once the block holding `tx_ref` has `confirmation_depth`
    /// blocks after it.
    pub fn confirmed(&self, tx_ref: &Digest) -> bool {
        match self.tx_blocks.get(tx_ref) {
            Some(&block_index) => {
                (self.blocks.len() as u64) > block_index + self.confirmation_depth
            }
            None => false,
        }
    }

    /// Queues a transaction. Transactions referencing assets unknown to
    /// the ledger are rejected at submission; everything else waits for
    /// block production.
    pub fn submit(&mut self, tx: LedgerTx, now: Tick) -> Result<Digest, SubmitError> {
        if let Some(asset) = tx.referenced_asset() {
            if !self.assets.contains_key(asset) {
                return Err(SubmitError::UnknownAsset(*asset));
            }
        }
        let mut w = CanonicalWriter::tagged(tags::TX_REF);
        w.put_str(&self.chain_id)
            .put_u64(self.next_submit_seq)
            .put_u64(now)
            .put_bytes(&tx.encode());
        let tx_ref = crypto::hash(&w.finish());
        self.next_submit_seq += 1;
        self.pending.push_back(PendingTx { tx_ref, tx });
        Ok(tx_ref)
    }

    /// Deadline assigned to locks created by a transaction applied at
    /// `now`: its confirmation time plus the configured grace.
    fn lock_deadline(&self, now: Tick) -> Tick {
        now + self.confirmation_depth * self.block_interval + self.lock_grace
    }

    fn record_transition(&mut self, tick: Tick, asset: Digest, from: &'static str, to: &'static str) {
        self.transitions.push(TransitionRecord {
            tick,
            asset,
            from,
            to,
        });
    }

    fn apply(&mut self, tx: &LedgerTx, now: Tick) -> Result<Option<Tick>, ApplyFailure> {
        match tx {
            LedgerTx::TransferOut {
                asset,
                dest_chain,
                dest_pubkey,
            } => {
                let holder = self
                    .designated_gateway
                    .clone()
                    .ok_or(ApplyFailure::NoDesignatedGateway)?;
                let deadline = self.lock_deadline(now);
                let record = self
                    .assets
                    .get_mut(asset)
                    .ok_or(ApplyFailure::UnknownAsset(*asset))?;
                if record.state != AssetState::Active {
                    return Err(ApplyFailure::AssetNotActive {
                        state: record.state.name(),
                    });
                }
                record.state = AssetState::Locked { holder, deadline };
                record.dest = Some(TransferDest {
                    chain_id: dest_chain.clone(),
                    recipient: *dest_pubkey,
                });
                self.record_transition(now, *asset, "Active", "Locked");
                Ok(Some(deadline))
            }
            LedgerTx::Register {
                masked_id,
                owner,
                lock_holder,
                value,
            } => {
                if self.assets.contains_key(masked_id) {
                    return Err(ApplyFailure::AssetExists(*masked_id));
                }
                let deadline = self.lock_deadline(now);
                self.assets.insert(
                    *masked_id,
                    AssetRecord {
                        private_tx_id: *masked_id,
                        owner: *owner,
                        value: *value,
                        origin: AssetOrigin::Registered,
                        dest: None,
                        state: AssetState::Locked {
                            holder: lock_holder.clone(),
                            deadline,
                        },
                    },
                );
                self.record_transition(now, *masked_id, "(registered)", "Locked");
                Ok(Some(deadline))
            }
            LedgerTx::Invalidate {
                asset,
                txid1_public,
                txid2_public,
                remote_chain,
            } => {
                let record = self
                    .assets
                    .get_mut(asset)
                    .ok_or(ApplyFailure::UnknownAsset(*asset))?;
                let from = record.state.name();
                match record.state {
                    AssetState::Invalidated { .. } => Err(ApplyFailure::AlreadyInvalidated),
                    AssetState::Active | AssetState::Locked { .. } => {
                        record.state = AssetState::Invalidated {
                            local_public_id: *txid1_public,
                            remote_public_id: *txid2_public,
                            remote_chain: remote_chain.clone(),
                        };
                        self.public_index.insert(*txid1_public, *asset);
                        self.record_transition(now, *asset, from, "Invalidated");
                        Ok(None)
                    }
                }
            }
            LedgerTx::Unlock { asset } => {
                let record = self
                    .assets
                    .get_mut(asset)
                    .ok_or(ApplyFailure::UnknownAsset(*asset))?;
                match record.state {
                    AssetState::Locked { .. } => {
                        record.state = AssetState::Active;
                        self.record_transition(now, *asset, "Locked", "Active");
                        Ok(None)
                    }
                    _ => Err(ApplyFailure::AssetNotLocked {
                        state: record.state.name(),
                    }),
                }
            }
            LedgerTx::Rollback { asset } => {
                let record = self
                    .assets
                    .get(asset)
                    .ok_or(ApplyFailure::UnknownAsset(*asset))?;
                if record.origin != AssetOrigin::Registered {
                    return Err(ApplyFailure::NotRegisteredOrigin);
                }
                match record.state {
                    AssetState::Locked { .. } => {
                        self.assets.remove(asset);
                        self.record_transition(now, *asset, "Locked", "(removed)");
                        Ok(None)
                    }
                    _ => Err(ApplyFailure::AssetNotLocked {
                        state: record.state.name(),
                    }),
                }
            }
        }
    }

    /// Drains the pending queue into a new block, applying each
    /// transaction in submission order, then emits confirmation events for
    /// the block that just crossed the confirmation depth.
    pub fn produce_block(&mut self, now: Tick) -> Vec<LedgerEvent> {
        let mut events = Vec::new();
        let mut entries = Vec::new();
        let drained: Vec<PendingTx> = self.pending.drain(..).collect();
        for pending in drained {
            match self.apply(&pending.tx, now) {
                Ok(lock_deadline) => {
                    events.push(LedgerEvent::TxApplied {
                        chain_id: self.chain_id.clone(),
                        tx_ref: pending.tx_ref,
                        tx: pending.tx.clone(),
                        lock_deadline,
                    });
                    entries.push(BlockEntry {
                        tx_ref: pending.tx_ref,
                        tx: pending.tx,
                        outcome: TxOutcome::Applied,
                    });
                }
                Err(reason) => {
                    events.push(LedgerEvent::TxFailed {
                        chain_id: self.chain_id.clone(),
                        tx_ref: pending.tx_ref,
                        tx: pending.tx.clone(),
                        reason: reason.clone(),
                    });
                    entries.push(BlockEntry {
                        tx_ref: pending.tx_ref,
                        tx: pending.tx,
                        outcome: TxOutcome::Failed(reason),
                    });
                }
            }
        }

        let index = self.blocks.len() as u64;
        for entry in &entries {
            if matches!(entry.outcome, TxOutcome::Applied) {
                self.tx_blocks.insert(entry.tx_ref, index);
            }
        }
        let tx_count = entries.len();
        self.blocks.push(Block {
            index,
            produced_at: now,
            entries,
        });
        events.insert(
            0,
            LedgerEvent::BlockProduced {
                chain_id: self.chain_id.clone(),
                index,
                tx_count,
            },
        );

        // The block that just crossed the confirmation depth.
        let total = self.blocks.len() as u64;
        if total > self.confirmation_depth {
            let confirmed_index = (total - 1 - self.confirmation_depth) as usize;
            for entry in &self.blocks[confirmed_index].entries {
                if matches!(entry.outcome, TxOutcome::Applied) {
                    events.push(LedgerEvent::TxConfirmed {
                        chain_id: self.chain_id.clone(),
                        tx_ref: entry.tx_ref,
                        tx: entry.tx.clone(),
                    });
                }
            }
        }
        events
    }

    /// Looks up an asset by private or public identifier.
    ///
    /// `inside_domain` is true for queriers inside this chain's trust
    /// domain; private (genesis) identifiers are invisible from outside.
    pub fn query(&self, id: &Digest, inside_domain: bool) -> QueryStatus {
        if let Some(record) = self.assets.get(id) {
            let visible = inside_domain || record.origin == AssetOrigin::Registered;
            if !visible {
                return QueryStatus::NotFound;
            }
            return match &record.state {
                AssetState::Active => QueryStatus::Active,
                AssetState::Locked { .. } => QueryStatus::Locked,
                AssetState::Invalidated {
                    remote_public_id,
                    remote_chain,
                    ..
                } => QueryStatus::Redirect {
                    chain: remote_chain.clone(),
                    remote_public_id: *remote_public_id,
                },
            };
        }
        if let Some(private_id) = self.public_index.get(id) {
            if let Some(record) = self.assets.get(private_id) {
                if let AssetState::Invalidated {
                    remote_public_id,
                    remote_chain,
                    ..
                } = &record.state
                {
                    return QueryStatus::Redirect {
                        chain: remote_chain.clone(),
                        remote_public_id: *remote_public_id,
                    };
                }
            }
        }
        QueryStatus::NotFound
    }
}
