// SPDX-License-Identifier: Apache-2.0

//! Deterministic discrete-event world: both ledgers, all nodes, in-flight
//! messages, per-link delay/drop draws, and the tab-separated event log.
//! Event execution order is a pure function of (configuration, seed);
//! same-tick events run in schedule order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::attestation::{
    create_quote, AttestError, Manifest, MembershipCredential, Quote, Registers, TcbCapabilities,
};
use crate::crypto::{self, tags, Digest, PublicKey};
use crate::dice::DeviceIdentity;
use crate::gateway::{
    GatewayCtx, GatewayEffects, GatewayInput, GatewayNote, GatewayState, QuorumSigner, TimerKind,
    WireMessage,
};
use crate::ledger::{Ledger, LedgerEvent, LedgerTx, Tick};
use crate::rng::DetRng;
use crate::wire::CanonicalWriter;

/// One simulated node: identity, measurement registers, evidence, and an
/// optional gateway role.
#[derive(Debug, Clone)]
pub struct Node {
    pub node_id: String,
    pub chain_id: String,
    pub identity: DeviceIdentity,
    pub registers: Registers,
    pub manifest: Option<Manifest>,
    pub credential: Option<MembershipCredential>,
    pub capabilities: TcbCapabilities,
    pub gateway: Option<GatewayState>,
    pub crashed: bool,
}

impl Node {
    /// Quote creation gated on the node's capability flags.
    pub fn try_create_quote(&self, nonce: [u8; 32]) -> Result<Quote, AttestError> {
        if !self.capabilities.capable() {
            return Err(AttestError::NotTcbCapable);
        }
        create_quote(&self.identity, &self.registers, nonce)
    }
}

/// Directed link parameters between two nodes.
#[derive(Debug, Clone)]
pub struct LinkConfig {
    pub delay_min: Tick,
    pub delay_max: Tick,
    pub drop_probability: f64,
    /// Chance that a message is delivered twice (independent delays).
    pub duplicate_probability: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            delay_min: 1,
            delay_max: 1,
            drop_probability: 0.0,
            duplicate_probability: 0.0,
        }
    }
}

/// Actions a scenario script can inject.
#[derive(Debug, Clone)]
pub enum ScriptAction {
    SubmitTransfer {
        chain_id: String,
        asset: Digest,
        dest_chain: String,
        dest_owner: PublicKey,
    },
    CrashNode {
        node_id: String,
    },
    CorruptNextMessage {
        from: String,
        to: String,
    },
}

/// Scheduled simulation events.
#[derive(Debug, Clone)]
enum SimEvent {
    BlockTick {
        chain_id: String,
    },
    Deliver {
        from: String,
        to: String,
        bytes: Vec<u8>,
    },
    Timer {
        node_id: String,
        kind: TimerKind,
    },
    Script(ScriptAction),
}

/// Everything the log records, in structured form.
#[derive(Debug, Clone)]
pub enum EventKind {
    BlockProduced { index: u64, tx_count: usize },
    TxSubmitted { tx_ref: Digest, kind: &'static str },
    TxSubmitRejected { kind: &'static str, reason: String },
    TxApplied { tx_ref: Digest, kind: &'static str },
    TxFailed { tx_ref: Digest, kind: &'static str, reason: String },
    TxConfirmed { tx_ref: Digest, kind: &'static str },
    MessageSent { from: String, to: String, kind: &'static str },
    MessageDropped { from: String, to: String, kind: &'static str },
    MessageCorrupted { from: String, to: String },
    MessageDuplicated { from: String, to: String, kind: &'static str },
    MessageLost { from: String, to: String },
    PhaseTransition { node: String, from: &'static str, to: &'static str },
    SessionEstablished { node: String, peer: String },
    TrustRejected { node: String, reason: String },
    TransferStarted { node: String, asset: Digest, txid1: Digest, value: u64, dest_chain: String },
    RegistrationMapped { node: String, txid1: Digest, txid2: Digest },
    InvalidationStarted { node: String, txid1: Digest, txid2: Digest },
    AssertionSent { node: String, kind: &'static str },
    MessageIgnored { node: String, reason: String },
    DeadlineExpired { node: String, phase: &'static str },
    QuorumRefused { node: String, reason: String },
    NodeCrashed { node: String },
    ScriptInjected { summary: String },
    ConfinementViolation { from: String, to: String },
    HazardFlagged { txid1: Digest },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::BlockProduced { .. } => "block_produced",
            EventKind::TxSubmitted { .. } => "tx_submitted",
            EventKind::TxSubmitRejected { .. } => "tx_submit_rejected",
            EventKind::TxApplied { .. } => "tx_applied",
            EventKind::TxFailed { .. } => "tx_failed",
            EventKind::TxConfirmed { .. } => "tx_confirmed",
            EventKind::MessageSent { .. } => "message_sent",
            EventKind::MessageDropped { .. } => "message_dropped",
            EventKind::MessageCorrupted { .. } => "message_corrupted",
            EventKind::MessageDuplicated { .. } => "message_duplicated",
            EventKind::MessageLost { .. } => "message_lost",
            EventKind::PhaseTransition { .. } => "phase_transition",
            EventKind::SessionEstablished { .. } => "session_established",
            EventKind::TrustRejected { .. } => "trust_rejected",
            EventKind::TransferStarted { .. } => "transfer_started",
            EventKind::RegistrationMapped { .. } => "registration_mapped",
            EventKind::InvalidationStarted { .. } => "invalidation_started",
            EventKind::AssertionSent { .. } => "assertion_sent",
            EventKind::MessageIgnored { .. } => "message_ignored",
            EventKind::DeadlineExpired { .. } => "deadline_expired",
            EventKind::QuorumRefused { .. } => "quorum_refused",
            EventKind::NodeCrashed { .. } => "node_crashed",
            EventKind::ScriptInjected { .. } => "script_injected",
            EventKind::ConfinementViolation { .. } => "confinement_violation",
            EventKind::HazardFlagged { .. } => "hazard_flagged",
        }
    }

    pub fn summary(&self) -> String {
        match self {
            EventKind::BlockProduced { index, tx_count } => {
                format!("block {index} with {tx_count} txs")
            }
            EventKind::TxSubmitted { tx_ref, kind } => format!("{kind} {tx_ref} pending"),
            EventKind::TxSubmitRejected { kind, reason } => {
                format!("{kind} rejected at submission: {reason}")
            }
            EventKind::TxApplied { tx_ref, kind } => format!("{kind} {tx_ref} applied"),
            EventKind::TxFailed { tx_ref, kind, reason } => {
                format!("{kind} {tx_ref} failed: {reason}")
            }
            EventKind::TxConfirmed { tx_ref, kind } => format!("{kind} {tx_ref} confirmed"),
            EventKind::MessageSent { from, to, kind } => format!("{from} -> {to} {kind}"),
            EventKind::MessageDropped { from, to, kind } => {
                format!("{from} -> {to} {kind} dropped by link")
            }
            EventKind::MessageCorrupted { from, to } => {
                format!("{from} -> {to} payload corrupted in flight")
            }
            EventKind::MessageDuplicated { from, to, kind } => {
                format!("{from} -> {to} {kind} duplicated by link")
            }
            EventKind::MessageLost { from, to } => {
                format!("{from} -> {to} lost: recipient unavailable")
            }
            EventKind::PhaseTransition { node, from, to } => format!("{node}: {from} -> {to}"),
            EventKind::SessionEstablished { node, peer } => {
                format!("{node} established session with {peer}")
            }
            EventKind::TrustRejected { node, reason } => format!("{node} rejected trust: {reason}"),
            EventKind::TransferStarted { node, asset, txid1, value, dest_chain } => {
                format!("{node} transfer of {asset} (value {value}) to {dest_chain} as {txid1}")
            }
            EventKind::RegistrationMapped { node, txid1, txid2 } => {
                format!("{node} registering {txid1} as {txid2}")
            }
            EventKind::InvalidationStarted { node, txid1, txid2 } => {
                format!("{node} invalidating {txid1} redirect {txid2}")
            }
            EventKind::AssertionSent { node, kind } => format!("{node} sent {kind} assertion"),
            EventKind::MessageIgnored { node, reason } => format!("{node} ignored: {reason}"),
            EventKind::DeadlineExpired { node, phase } => {
                format!("{node} deadline expired in {phase}")
            }
            EventKind::QuorumRefused { node, reason } => format!("{node}: {reason}"),
            EventKind::NodeCrashed { node } => format!("{node} crashed"),
            EventKind::ScriptInjected { summary } => summary.clone(),
            EventKind::ConfinementViolation { from, to } => {
                format!("private id bytes on the wire {from} -> {to}")
            }
            EventKind::HazardFlagged { txid1 } => {
                format!("delayed-assertion hazard on transfer {txid1}")
            }
        }
    }
}

/// One event-log line.
#[derive(Debug, Clone)]
pub struct LogEntry {
    pub tick: Tick,
    pub chain: Option<String>,
    pub kind: EventKind,
}

impl LogEntry {
    /// `tick<TAB>chain<TAB>event_kind<TAB>payload digest<TAB>summary`
    pub fn line(&self) -> String {
        let summary = self.kind.summary();
        let mut w = CanonicalWriter::tagged(tags::EVENT);
        w.put_u64(self.tick)
            .put_str(self.chain.as_deref().unwrap_or("-"))
            .put_str(self.kind.name())
            .put_str(&summary);
        let digest = crypto::hash(&w.finish());
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.tick,
            self.chain.as_deref().unwrap_or("-"),
            self.kind.name(),
            digest,
            summary
        )
    }
}

/// Append-only simulation log.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    entries: Vec<LogEntry>,
}

impl EventLog {
    pub fn push(&mut self, tick: Tick, chain: Option<String>, kind: EventKind) {
        self.entries.push(LogEntry { tick, chain, kind });
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&entry.line());
            out.push('\n');
        }
        out
    }

    /// Digest of the rendered log; identical digests mean identical runs.
    pub fn digest(&self) -> Digest {
        crypto::hash(self.render().as_bytes())
    }
}

enum Job {
    Gateway { node_id: String, input: OwnedInput },
}

enum OwnedInput {
    Wire { from: String, bytes: Vec<u8> },
    Ledger(LedgerEvent),
    Timer(TimerKind),
}

/// The deterministic event scheduler holding the whole simulation.
pub struct SimWorld {
    pub now: Tick,
    next_seq: u64,
    queue: BTreeMap<(Tick, u64), SimEvent>,
    pub rng: DetRng,
    pub ledgers: BTreeMap<String, Ledger>,
    pub nodes: BTreeMap<String, Node>,
    pub links: BTreeMap<(String, String), LinkConfig>,
    corrupt_pending: BTreeMap<(String, String), u32>,
    pub log: EventLog,
    /// Private identifiers that must never appear in wire messages.
    pub confidential_ids: BTreeSet<Digest>,
    pub confinement_violations: usize,
    pub script_failures: usize,
    work: VecDeque<Job>,
}

impl SimWorld {
    pub fn new(seed: u64) -> Self {
        SimWorld {
            now: 0,
            next_seq: 0,
            queue: BTreeMap::new(),
            rng: DetRng::new(seed),
            ledgers: BTreeMap::new(),
            nodes: BTreeMap::new(),
            links: BTreeMap::new(),
            corrupt_pending: BTreeMap::new(),
            log: EventLog::default(),
            confidential_ids: BTreeSet::new(),
            confinement_violations: 0,
            script_failures: 0,
            work: VecDeque::new(),
        }
    }

    pub fn add_ledger(&mut self, ledger: Ledger) {
        self.ledgers.insert(ledger.chain_id.clone(), ledger);
    }

    pub fn add_node(&mut self, node: Node) {
        self.nodes.insert(node.node_id.clone(), node);
    }

    pub fn add_link(&mut self, from: &str, to: &str, config: LinkConfig) {
        self.links.insert((from.to_string(), to.to_string()), config);
    }

    /// Schedules the first block production tick of every ledger. Call
    /// once after all ledgers are added.
    pub fn start_block_production(&mut self) {
        let chains: Vec<(String, Tick)> = self
            .ledgers
            .values()
            .map(|l| (l.chain_id.clone(), l.block_interval))
            .collect();
        for (chain_id, interval) in chains {
            self.schedule(interval, SimEvent::BlockTick { chain_id });
        }
    }

    pub fn schedule_script(&mut self, at: Tick, action: ScriptAction) {
        self.schedule(at, SimEvent::Script(action));
    }

    fn schedule(&mut self, at: Tick, event: SimEvent) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.insert((at, seq), event);
    }

    /// Tick of the next scheduled event.
    pub fn next_tick(&self) -> Option<Tick> {
        self.queue.keys().next().map(|(tick, _)| *tick)
    }

    /// True when every gateway is parked, no ledger has pending
    /// transactions, and nothing but block production (or timers for
    /// parked gateways) remains scheduled.
    pub fn quiescent(&self) -> bool {
        let mut has_gateway = false;
        for node in self.nodes.values() {
            if let Some(gateway) = &node.gateway {
                has_gateway = true;
                if !gateway.phase.is_quiescent() {
                    return false;
                }
            }
        }
        if !has_gateway {
            return false;
        }
        if self.ledgers.values().any(|l| l.pending_len() > 0) {
            return false;
        }
        self.queue.values().all(|event| match event {
            SimEvent::BlockTick { .. } => true,
            SimEvent::Timer { node_id, .. } => self
                .nodes
                .get(node_id)
                .and_then(|n| n.gateway.as_ref())
                .is_none_or(|g| g.phase.is_quiescent()),
            _ => false,
        })
    }

    /// Pops and executes every event at the next occupied tick (including
    /// events those executions schedule for the same tick). Returns false
    /// when the queue is empty.
    pub fn step(&mut self) -> bool {
        let Some(&(tick, _)) = self.queue.keys().next() else {
            return false;
        };
        self.now = tick;
        while let Some((&(next_tick, seq), _)) = self.queue.first_key_value() {
            if next_tick != tick {
                break;
            }
            let event = self.queue.remove(&(next_tick, seq)).expect("peeked key");
            self.execute(event);
            self.pump();
        }
        true
    }

    fn execute(&mut self, event: SimEvent) {
        match event {
            SimEvent::BlockTick { chain_id } => self.run_block_tick(chain_id),
            SimEvent::Deliver { from, to, bytes } => self.run_delivery(from, to, bytes),
            SimEvent::Timer { node_id, kind } => {
                self.work.push_back(Job::Gateway {
                    node_id,
                    input: OwnedInput::Timer(kind),
                });
            }
            SimEvent::Script(action) => self.run_script(action),
        }
    }

    fn run_block_tick(&mut self, chain_id: String) {
        let Some(ledger) = self.ledgers.get_mut(&chain_id) else {
            return;
        };
        let interval = ledger.block_interval;
        let events = ledger.produce_block(self.now);
        let watchers = self.gateways_on_chain(&chain_id);
        for event in events {
            self.log_ledger_event(&event);
            for node_id in &watchers {
                self.work.push_back(Job::Gateway {
                    node_id: node_id.clone(),
                    input: OwnedInput::Ledger(event.clone()),
                });
            }
        }
        self.schedule(self.now + interval, SimEvent::BlockTick { chain_id });
    }

    fn run_delivery(&mut self, from: String, to: String, bytes: Vec<u8>) {
        // Confinement audit: no private identifier may cross the wire.
        for id in &self.confidential_ids {
            if bytes.windows(32).any(|window| window == id.as_bytes()) {
                self.confinement_violations += 1;
                self.log.push(
                    self.now,
                    None,
                    EventKind::ConfinementViolation {
                        from: from.clone(),
                        to: to.clone(),
                    },
                );
            }
        }
        let available = self
            .nodes
            .get(&to)
            .map(|n| !n.crashed && n.gateway.is_some())
            .unwrap_or(false);
        if !available {
            self.log
                .push(self.now, None, EventKind::MessageLost { from, to });
            return;
        }
        self.work.push_back(Job::Gateway {
            node_id: to,
            input: OwnedInput::Wire { from, bytes },
        });
    }

    fn run_script(&mut self, action: ScriptAction) {
        match action {
            ScriptAction::SubmitTransfer {
                chain_id,
                asset,
                dest_chain,
                dest_owner,
            } => {
                let tx = LedgerTx::TransferOut {
                    asset,
                    dest_chain,
                    dest_pubkey: dest_owner,
                };
                if !self.submit_tx(&chain_id, tx) {
                    self.script_failures += 1;
                }
            }
            ScriptAction::CrashNode { node_id } => {
                if let Some(node) = self.nodes.get_mut(&node_id) {
                    node.crashed = true;
                    self.log
                        .push(self.now, None, EventKind::NodeCrashed { node: node_id });
                } else {
                    self.script_failures += 1;
                    self.log.push(
                        self.now,
                        None,
                        EventKind::ScriptInjected {
                            summary: format!("crash of unknown node {node_id} failed"),
                        },
                    );
                }
            }
            ScriptAction::CorruptNextMessage { from, to } => {
                *self.corrupt_pending.entry((from.clone(), to.clone())).or_insert(0) += 1;
                self.log.push(
                    self.now,
                    None,
                    EventKind::ScriptInjected {
                        summary: format!("next message {from} -> {to} will be corrupted"),
                    },
                );
            }
        }
    }

    /// Submits a transaction to a chain, logging the outcome and notifying
    /// the chain's gateways of the pending transaction. Returns whether
    /// the ledger accepted it into the pending queue.
    pub fn submit_tx(&mut self, chain_id: &str, tx: LedgerTx) -> bool {
        let kind = tx.kind_name();
        let Some(ledger) = self.ledgers.get_mut(chain_id) else {
            self.log.push(
                self.now,
                None,
                EventKind::TxSubmitRejected {
                    kind,
                    reason: format!("unknown chain {chain_id}"),
                },
            );
            return false;
        };
        match ledger.submit(tx.clone(), self.now) {
            Ok(tx_ref) => {
                self.log.push(
                    self.now,
                    Some(chain_id.to_string()),
                    EventKind::TxSubmitted { tx_ref, kind },
                );
                let event = LedgerEvent::TxSubmitted {
                    chain_id: chain_id.to_string(),
                    tx_ref,
                    tx,
                };
                for node_id in self.gateways_on_chain(chain_id) {
                    self.work.push_back(Job::Gateway {
                        node_id,
                        input: OwnedInput::Ledger(event.clone()),
                    });
                }
                true
            }
            Err(err) => {
                self.log.push(
                    self.now,
                    Some(chain_id.to_string()),
                    EventKind::TxSubmitRejected {
                        kind,
                        reason: err.to_string(),
                    },
                );
                false
            }
        }
    }

    fn gateways_on_chain(&self, chain_id: &str) -> Vec<String> {
        self.nodes
            .values()
            .filter(|n| n.chain_id == chain_id && n.gateway.is_some() && !n.crashed)
            .map(|n| n.node_id.clone())
            .collect()
    }

    fn co_signers_for(&self, chain_id: &str) -> Vec<QuorumSigner> {
        self.nodes
            .values()
            .filter(|n| n.chain_id == chain_id && n.gateway.is_some())
            .filter_map(|n| {
                n.identity.signing_alias().map(|key| QuorumSigner {
                    node_id: n.node_id.clone(),
                    key: key.clone(),
                    live: !n.crashed,
                })
            })
            .collect()
    }

    fn log_ledger_event(&mut self, event: &LedgerEvent) {
        let (chain, kind) = match event {
            LedgerEvent::BlockProduced {
                chain_id,
                index,
                tx_count,
            } => (
                chain_id.clone(),
                EventKind::BlockProduced {
                    index: *index,
                    tx_count: *tx_count,
                },
            ),
            LedgerEvent::TxSubmitted { chain_id, tx_ref, tx } => (
                chain_id.clone(),
                EventKind::TxSubmitted {
                    tx_ref: *tx_ref,
                    kind: tx.kind_name(),
                },
            ),
            LedgerEvent::TxApplied { chain_id, tx_ref, tx, .. } => (
                chain_id.clone(),
                EventKind::TxApplied {
                    tx_ref: *tx_ref,
                    kind: tx.kind_name(),
                },
            ),
            LedgerEvent::TxFailed {
                chain_id,
                tx_ref,
                tx,
                reason,
            } => (
                chain_id.clone(),
                EventKind::TxFailed {
                    tx_ref: *tx_ref,
                    kind: tx.kind_name(),
                    reason: reason.to_string(),
                },
            ),
            LedgerEvent::TxConfirmed { chain_id, tx_ref, tx } => (
                chain_id.clone(),
                EventKind::TxConfirmed {
                    tx_ref: *tx_ref,
                    kind: tx.kind_name(),
                },
            ),
        };
        self.log.push(self.now, Some(chain), kind);
    }

    /// Runs queued gateway jobs until none remain.
    fn pump(&mut self) {
        while let Some(Job::Gateway { node_id, input }) = self.work.pop_front() {
            self.run_gateway(&node_id, input);
        }
    }

    fn run_gateway(&mut self, node_id: &str, input: OwnedInput) {
        let co_signers = match self.nodes.get(node_id) {
            Some(node) if node.gateway.is_some() && !node.crashed => {
                self.co_signers_for(&node.chain_id.clone())
            }
            _ => return,
        };
        let Some(mut node) = self.nodes.remove(node_id) else {
            return;
        };
        let chain_id = node.chain_id.clone();
        let fx = {
            let Some(ledger) = self.ledgers.get(&chain_id) else {
                self.nodes.insert(node_id.to_string(), node);
                return;
            };
            let Node {
                identity,
                registers,
                manifest,
                credential,
                capabilities,
                gateway,
                ..
            } = &mut node;
            let local = crate::gateway::LocalNode {
                identity,
                registers,
                manifest: manifest.as_ref(),
                credential: credential.as_ref(),
                capabilities: *capabilities,
            };
            let state = gateway.as_mut().expect("checked above");
            let mut ctx = GatewayCtx {
                now: self.now,
                rng: &mut self.rng,
                own_ledger: ledger,
                co_signers: &co_signers,
            };
            let borrowed = match &input {
                OwnedInput::Wire { from, bytes } => GatewayInput::Wire {
                    from: from.clone(),
                    bytes,
                },
                OwnedInput::Ledger(event) => GatewayInput::Ledger(event),
                OwnedInput::Timer(kind) => GatewayInput::Timer(*kind),
            };
            crate::gateway::handle(state, &local, borrowed, &mut ctx)
        };
        self.nodes.insert(node_id.to_string(), node);
        self.apply_effects(node_id, &chain_id, fx);
    }

    fn apply_effects(&mut self, node_id: &str, chain_id: &str, fx: GatewayEffects) {
        for note in fx.notes {
            let kind = note_to_event(node_id, note);
            self.log.push(self.now, Some(chain_id.to_string()), kind);
        }
        for (at, kind) in fx.timers {
            self.schedule(
                at.max(self.now),
                SimEvent::Timer {
                    node_id: node_id.to_string(),
                    kind,
                },
            );
        }
        for tx in fx.submissions {
            // Rejections are logged; they do not count as script failures.
            let _ = self.submit_tx(chain_id, tx);
        }
        for (to, message) in fx.outbound {
            self.send_message(node_id, &to, message);
        }
    }

    fn send_message(&mut self, from: &str, to: &str, message: WireMessage) {
        let kind = message.kind_name();
        let mut bytes = message.encode();
        self.log.push(
            self.now,
            None,
            EventKind::MessageSent {
                from: from.to_string(),
                to: to.to_string(),
                kind,
            },
        );
        let link_key = (from.to_string(), to.to_string());
        if let Some(pending) = self.corrupt_pending.get_mut(&link_key) {
            if *pending > 0 {
                *pending -= 1;
                let index = bytes.len() / 2;
                bytes[index] ^= 0x01;
                self.log.push(
                    self.now,
                    None,
                    EventKind::MessageCorrupted {
                        from: from.to_string(),
                        to: to.to_string(),
                    },
                );
            }
        }
        let link = self.links.get(&link_key).cloned().unwrap_or_default();
        if self.rng.chance(link.drop_probability) {
            self.log.push(
                self.now,
                None,
                EventKind::MessageDropped {
                    from: from.to_string(),
                    to: to.to_string(),
                    kind,
                },
            );
            return;
        }
        let delay = self.rng.range(link.delay_min, link.delay_max);
        self.schedule(
            self.now + delay,
            SimEvent::Deliver {
                from: from.to_string(),
                to: to.to_string(),
                bytes: bytes.clone(),
            },
        );
        if self.rng.chance(link.duplicate_probability) {
            let extra_delay = self.rng.range(link.delay_min, link.delay_max);
            self.log.push(
                self.now,
                None,
                EventKind::MessageDuplicated {
                    from: from.to_string(),
                    to: to.to_string(),
                    kind,
                },
            );
            self.schedule(
                self.now + extra_delay,
                SimEvent::Deliver {
                    from: from.to_string(),
                    to: to.to_string(),
                    bytes,
                },
            );
        }
    }
}

fn note_to_event(node_id: &str, note: GatewayNote) -> EventKind {
    let node = node_id.to_string();
    match note {
        GatewayNote::PhaseTransition { from, to } => EventKind::PhaseTransition { node, from, to },
        GatewayNote::SessionEstablished { peer } => EventKind::SessionEstablished { node, peer },
        GatewayNote::TrustRejected { reason } => EventKind::TrustRejected { node, reason },
        GatewayNote::TransferStarted {
            asset,
            txid1,
            value,
            dest_chain,
        } => EventKind::TransferStarted {
            node,
            asset,
            txid1,
            value,
            dest_chain,
        },
        GatewayNote::RegistrationMapped { txid1, txid2 } => {
            EventKind::RegistrationMapped { node, txid1, txid2 }
        }
        GatewayNote::InvalidationStarted { txid1, txid2 } => {
            EventKind::InvalidationStarted { node, txid1, txid2 }
        }
        GatewayNote::AssertionSent { kind } => EventKind::AssertionSent { node, kind },
        GatewayNote::MessageIgnored { reason } => EventKind::MessageIgnored { node, reason },
        GatewayNote::DeadlineExpired { phase } => EventKind::DeadlineExpired { node, phase },
        GatewayNote::QuorumRefused { reason } => EventKind::QuorumRefused { node, reason },
    }
}
