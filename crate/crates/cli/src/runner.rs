// SPDX-License-Identifier: Apache-2.0

//! Drives a world to quiescence or a tick limit while auditing the
//! protocol invariants each tick, then produces the pass/fail report.
//!
//! Verdict semantics:
//!
//! * exclusivity — at every tick, each transferred asset is Active on at
//!   most one chain;
//! * no-loss — every transfer that terminated without completing left the
//!   asset Active on the source chain and absent on the destination
//!   (known delayed-assertion hazards are flagged separately);
//! * redirect — every completed transfer answers source-chain queries for
//!   the old public id with a redirect to the destination id, which is
//!   Active there;
//! * trust-gate — no registration was ever submitted by a destination
//!   gateway without an established session;
//! * phase-audit — every observed gateway transition is a declared edge;
//! * confinement — no private identifier bytes ever crossed the wire.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use dtcb_core::crypto::Digest;
use dtcb_core::gateway::{Phase, DECLARED_EDGES};
use dtcb_core::ledger::{AssetState, QueryStatus, Tick};
use dtcb_core::sim::{EventKind, SimWorld};

use crate::config::{ConfigError, ScenarioConfig};

pub const DEFAULT_TICK_LIMIT: Tick = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub pass: bool,
    pub first_violation_tick: Option<Tick>,
    pub detail: Option<String>,
}

impl Verdict {
    fn pass() -> Self {
        Verdict {
            pass: true,
            first_violation_tick: None,
            detail: None,
        }
    }

    fn fail(tick: Option<Tick>, detail: String) -> Self {
        Verdict {
            pass: false,
            first_violation_tick: tick,
            detail: Some(detail),
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pass {
            write!(f, "pass")
        } else {
            write!(f, "FAIL")?;
            if let Some(tick) = self.first_violation_tick {
                write!(f, " (first violation at tick {tick})")?;
            }
            if let Some(detail) = &self.detail {
                write!(f, ": {detail}")?;
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone)]
pub struct HazardFlag {
    pub txid1: String,
    pub detected_tick: Tick,
}

#[derive(Debug, Clone)]
pub struct AssetSummary {
    pub id: String,
    pub state: String,
    pub owner: String,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub ticks_run: Tick,
    pub transfers_total: usize,
    pub transfers_completed: usize,
    pub final_assets: BTreeMap<String, Vec<AssetSummary>>,
    pub exclusivity: Verdict,
    pub no_loss: Verdict,
    pub redirect: Verdict,
    pub trust_gate: Verdict,
    pub phase_audit: Verdict,
    pub confinement: Verdict,
    pub hazards: Vec<HazardFlag>,
    pub script_failures: usize,
    pub event_log_digest: String,
}

impl RunReport {
    pub fn verdicts(&self) -> [(&'static str, &Verdict); 6] {
        [
            ("exclusivity", &self.exclusivity),
            ("no-loss", &self.no_loss),
            ("redirect", &self.redirect),
            ("trust-gate", &self.trust_gate),
            ("phase-audit", &self.phase_audit),
            ("confinement", &self.confinement),
        ]
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts().iter().all(|(_, v)| v.pass)
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "run report")?;
        writeln!(f, "  ticks run: {}", self.ticks_run)?;
        writeln!(
            f,
            "  transfers: {} total, {} completed",
            self.transfers_total, self.transfers_completed
        )?;
        writeln!(f, "  verdicts:")?;
        for (name, verdict) in self.verdicts() {
            writeln!(f, "    {name}: {verdict}")?;
        }
        writeln!(f, "  hazards flagged: {}", self.hazards.len())?;
        for hazard in &self.hazards {
            writeln!(
                f,
                "    transfer {} at tick {}",
                hazard.txid1, hazard.detected_tick
            )?;
        }
        if self.script_failures > 0 {
            writeln!(f, "  script failures: {}", self.script_failures)?;
        }
        writeln!(f, "  final assets:")?;
        for (chain, assets) in &self.final_assets {
            if assets.is_empty() {
                writeln!(f, "    {chain}: (none)")?;
            }
            for asset in assets {
                writeln!(
                    f,
                    "    {chain}: {} {} owner {}",
                    asset.id, asset.state, asset.owner
                )?;
            }
        }
        write!(f, "  event log digest: {}", self.event_log_digest)
    }
}

#[derive(Debug, Clone)]
struct TransferTrack {
    source_chain: String,
    dest_chain: String,
    source_gateway: String,
    dest_gateway: Option<String>,
    asset: Digest,
    txid1: Digest,
    txid2: Option<Digest>,
    hazard_tick: Option<Tick>,
    exclusivity_violation: Option<Tick>,
}

/// Incremental log consumer plus per-tick ledger scanner.
pub struct Auditor {
    watermark: usize,
    transfers: Vec<TransferTrack>,
    session_established: BTreeMap<String, Tick>,
    trust_gate_violation: Option<(Tick, String)>,
    phase_violation: Option<(Tick, String)>,
    edges: BTreeSet<(&'static str, &'static str)>,
}

impl Default for Auditor {
    fn default() -> Self {
        Self::new()
    }
}

impl Auditor {
    pub fn new() -> Self {
        Auditor {
            watermark: 0,
            transfers: Vec::new(),
            session_established: BTreeMap::new(),
            trust_gate_violation: None,
            phase_violation: None,
            edges: DECLARED_EDGES
                .iter()
                .map(|(from, to)| (from.name(), to.name()))
                .collect(),
        }
    }

    /// Consumes new log entries and scans asset states. Call after every
    /// step.
    pub fn observe(&mut self, world: &mut SimWorld) {
        let entries = world.log.entries();
        for entry in &entries[self.watermark.min(entries.len())..] {
            let tick = entry.tick;
            match &entry.kind {
                EventKind::TransferStarted {
                    node,
                    asset,
                    txid1,
                    dest_chain,
                    ..
                } => {
                    if !self.transfers.iter().any(|t| t.txid1 == *txid1) {
                        self.transfers.push(TransferTrack {
                            source_chain: entry.chain.clone().unwrap_or_default(),
                            dest_chain: dest_chain.clone(),
                            source_gateway: node.clone(),
                            dest_gateway: None,
                            asset: *asset,
                            txid1: *txid1,
                            txid2: None,
                            hazard_tick: None,
                            exclusivity_violation: None,
                        });
                    }
                }
                EventKind::RegistrationMapped { node, txid1, txid2 } => {
                    if !self.session_established.contains_key(node) {
                        self.trust_gate_violation.get_or_insert((
                            tick,
                            format!("{node} submitted a registration without a session"),
                        ));
                    }
                    if let Some(track) = self.transfers.iter_mut().find(|t| t.txid1 == *txid1) {
                        track.txid2 = Some(*txid2);
                        track.dest_gateway = Some(node.clone());
                    }
                }
                EventKind::SessionEstablished { node, .. } => {
                    self.session_established.entry(node.clone()).or_insert(tick);
                }
                EventKind::PhaseTransition { node, from, to }
                    if !self.edges.contains(&(*from, *to)) =>
                {
                    self.phase_violation
                        .get_or_insert((tick, format!("{node}: {from} -> {to}")));
                }
                _ => {}
            }
        }
        self.watermark = entries.len();

        // Per-tick asset scan.
        let now = world.now;
        let mut hazards_to_log = Vec::new();
        for track in &mut self.transfers {
            let src = world
                .ledgers
                .get(&track.source_chain)
                .and_then(|l| l.asset(&track.asset));
            let src_active = matches!(src.map(|a| &a.state), Some(AssetState::Active));
            let src_invalidated = matches!(src.map(|a| &a.state), Some(AssetState::Invalidated { .. }));
            let dst = track.txid2.and_then(|txid2| {
                world
                    .ledgers
                    .get(&track.dest_chain)
                    .and_then(|l| l.asset(&txid2))
            });
            let dst_active = matches!(dst.map(|a| &a.state), Some(AssetState::Active));
            let dst_absent = dst.is_none();

            if src_active && dst_active && track.exclusivity_violation.is_none() {
                track.exclusivity_violation = Some(now);
            }
            // Delayed-assertion hazard: the source committed the
            // invalidation but the destination rolled its registration
            // back, so the asset is active on zero chains.
            if src_invalidated
                && track.txid2.is_some()
                && dst_absent
                && track.hazard_tick.is_none()
            {
                track.hazard_tick = Some(now);
                hazards_to_log.push(track.txid1);
            }
        }
        for txid1 in hazards_to_log {
            world
                .log
                .push(now, None, EventKind::HazardFlagged { txid1 });
            self.watermark += 1;
        }
    }

    pub fn finalize(self, world: &SimWorld) -> RunReport {
        let mut final_assets: BTreeMap<String, Vec<AssetSummary>> = BTreeMap::new();
        for (chain_id, ledger) in &world.ledgers {
            let summaries = ledger
                .assets()
                .map(|record| AssetSummary {
                    id: record.private_tx_id.to_hex(),
                    state: record.state.name().to_string(),
                    owner: record.owner.to_hex(),
                })
                .collect();
            final_assets.insert(chain_id.clone(), summaries);
        }

        let phase_of = |node: &Option<String>| -> Option<Phase> {
            node.as_ref()
                .and_then(|id| world.nodes.get(id))
                .and_then(|n| n.gateway.as_ref())
                .map(|g| g.phase)
        };

        let mut transfers_completed = 0;
        let mut no_loss = Verdict::pass();
        let mut redirect = Verdict::pass();
        let mut exclusivity = Verdict::pass();
        let mut hazards = Vec::new();

        for track in &self.transfers {
            if let Some(tick) = track.exclusivity_violation {
                if exclusivity.pass {
                    exclusivity = Verdict::fail(
                        Some(tick),
                        format!("transfer {} active on both chains", track.txid1),
                    );
                }
            }
            if let Some(tick) = track.hazard_tick {
                hazards.push(HazardFlag {
                    txid1: track.txid1.to_hex(),
                    detected_tick: tick,
                });
            }

            let src_phase = phase_of(&Some(track.source_gateway.clone()));
            let dst_phase = phase_of(&track.dest_gateway);
            let completed =
                src_phase == Some(Phase::SourceDone) && dst_phase == Some(Phase::DestDone);
            if completed {
                transfers_completed += 1;
                // At-completion redirect semantics, queried from outside
                // the trust domains.
                let src_query = world
                    .ledgers
                    .get(&track.source_chain)
                    .map(|l| l.query(&track.txid1, false));
                let expected = track.txid2.map(|txid2| QueryStatus::Redirect {
                    chain: track.dest_chain.clone(),
                    remote_public_id: txid2,
                });
                let dst_query = track.txid2.and_then(|txid2| {
                    world
                        .ledgers
                        .get(&track.dest_chain)
                        .map(|l| l.query(&txid2, false))
                });
                let redirect_holds =
                    src_query == expected && dst_query == Some(QueryStatus::Active);
                if !redirect_holds && redirect.pass {
                    redirect = Verdict::fail(
                        None,
                        format!(
                            "transfer {}: source answers {src_query:?}, destination {dst_query:?}",
                            track.txid1
                        ),
                    );
                }
                continue;
            }

            // Not completed: judge no-loss only once the machines have
            // settled (aborted / rolled back / reset), never mid-flight.
            let src_settled = matches!(
                src_phase,
                Some(Phase::SourceAborted) | Some(Phase::SourceDone) | Some(Phase::Idle) | None
            );
            let dst_settled = matches!(
                dst_phase,
                Some(Phase::DestRolledBack) | Some(Phase::DestDone) | Some(Phase::Idle) | None
            );
            if !(src_settled && dst_settled) {
                continue;
            }
            if track.hazard_tick.is_some() {
                continue; // reported via the hazard flags
            }
            let src_active = world
                .ledgers
                .get(&track.source_chain)
                .and_then(|l| l.asset(&track.asset))
                .map(|a| matches!(a.state, AssetState::Active))
                .unwrap_or(false);
            let dst_absent = track
                .txid2
                .map(|txid2| {
                    world
                        .ledgers
                        .get(&track.dest_chain)
                        .and_then(|l| l.asset(&txid2))
                        .is_none()
                })
                .unwrap_or(true);
            if !(src_active && dst_absent) && no_loss.pass {
                no_loss = Verdict::fail(
                    None,
                    format!(
                        "transfer {} aborted but source active={src_active}, destination absent={dst_absent}",
                        track.txid1
                    ),
                );
            }
        }

        let trust_gate = match self.trust_gate_violation {
            None => Verdict::pass(),
            Some((tick, detail)) => Verdict::fail(Some(tick), detail),
        };
        let phase_audit = match self.phase_violation {
            None => Verdict::pass(),
            Some((tick, detail)) => Verdict::fail(Some(tick), detail),
        };
        let confinement = if world.confinement_violations == 0 {
            Verdict::pass()
        } else {
            Verdict::fail(
                None,
                format!(
                    "{} private-id bytes sightings on the wire",
                    world.confinement_violations
                ),
            )
        };

        RunReport {
            ticks_run: world.now,
            transfers_total: self.transfers.len(),
            transfers_completed,
            final_assets,
            exclusivity,
            no_loss,
            redirect,
            trust_gate,
            phase_audit,
            confinement,
            hazards,
            script_failures: world.script_failures,
            event_log_digest: world.log.digest().to_hex(),
        }
    }
}

pub struct RunOutcome {
    pub report: RunReport,
    pub world: SimWorld,
}

/// Steps the world until quiescence or the tick limit, auditing along the
/// way.
pub fn run_world(mut world: SimWorld, tick_limit: Tick) -> RunOutcome {
    let mut auditor = Auditor::new();
    auditor.observe(&mut world);
    loop {
        match world.next_tick() {
            None => break,
            Some(tick) if tick > tick_limit => break,
            Some(_) => {}
        }
        if world.quiescent() {
            break;
        }
        world.step();
        auditor.observe(&mut world);
    }
    let report = auditor.finalize(&world);
    RunOutcome { report, world }
}

/// Builds and runs a scenario in one call.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutcome, ConfigError> {
    let world = crate::builder::build_world(config)?;
    let tick_limit = config.tick_limit.unwrap_or(DEFAULT_TICK_LIMIT);
    Ok(run_world(world, tick_limit))
}
