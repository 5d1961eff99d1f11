// SPDX-License-Identifier: Apache-2.0

//! Scenario-level behavior: protocol interleavings, fault injection, and
//! audit plumbing that only show up with the whole world running.

use dtcb_cli::config::{
    AssetConfig, ChainConfig, LinkDef, MeasurementConfig, NodeConfig, PolicyConfig,
    RequiredComponentConfig, ScenarioConfig, ScriptActionConfig, ScriptStep, UserConfig,
};
use dtcb_cli::runner::{run_scenario, RunOutcome};
use dtcb_core::gateway::Phase;
use dtcb_core::ledger::AssetState;
use dtcb_core::sim::EventKind;

const ASSET_ID: &str = "a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1";

fn hexfill(byte: u8) -> String {
    format!("{byte:02x}").repeat(32)
}

fn measurement(layer: u64, fill: u8, product: &str, svn: u64) -> MeasurementConfig {
    MeasurementConfig {
        layer_index: layer,
        code_digest: hexfill(fill),
        product_id: product.into(),
        svn,
    }
}

fn gateway_node(node_id: &str, chain_id: &str, uds_fill: u8, firmware_svn: u64) -> NodeConfig {
    NodeConfig {
        node_id: node_id.into(),
        chain_id: chain_id.into(),
        uds: hexfill(uds_fill),
        measurements: vec![
            measurement(0, 0x10, "rom", 1),
            measurement(1, 0x20, "firmware", firmware_svn),
        ],
        p1_well_defined: true,
        p2_shielded: true,
        gateway: true,
        enrolled: true,
        designated: false,
    }
}

fn base_policy() -> PolicyConfig {
    PolicyConfig {
        required_components: vec![
            RequiredComponentConfig {
                component: "rom".into(),
                min_svn: 1,
                pinned_digest: None,
            },
            RequiredComponentConfig {
                component: "firmware".into(),
                min_svn: 2,
                pinned_digest: None,
            },
        ],
        max_quote_age_ticks: 100,
        quorum_m: 1,
        quorum_n: 1,
        sensitive_threshold: 1_000_000,
    }
}

fn two_chain_config(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        chains: vec![
            ChainConfig {
                chain_id: "BC1".into(),
                block_interval: 5,
                confirmation_depth: 2,
                lock_grace: Some(50),
            },
            ChainConfig {
                chain_id: "BC2".into(),
                block_interval: 5,
                confirmation_depth: 2,
                lock_grace: Some(50),
            },
        ],
        users: vec![
            UserConfig {
                user_id: "U1".into(),
                chain_id: "BC1".into(),
            },
            UserConfig {
                user_id: "U2".into(),
                chain_id: "BC2".into(),
            },
        ],
        assets: vec![AssetConfig {
            asset_id: ASSET_ID.into(),
            chain_id: "BC1".into(),
            owner: "U1".into(),
            value: 250,
        }],
        nodes: vec![
            gateway_node("G1", "BC1", 0x11, 3),
            gateway_node("G2", "BC2", 0x22, 2),
        ],
        policy: Some(base_policy()),
        links: vec![
            LinkDef {
                from: "G1".into(),
                to: "G2".into(),
                delay_min: 1,
                delay_max: 2,
                drop_probability: 0.0,
                duplicate_probability: 0.0,
            },
            LinkDef {
                from: "G2".into(),
                to: "G1".into(),
                delay_min: 1,
                delay_max: 2,
                drop_probability: 0.0,
                duplicate_probability: 0.0,
            },
        ],
        script: vec![ScriptStep {
            at_tick: 1,
            action: ScriptActionConfig::SubmitTransfer {
                chain_id: "BC1".into(),
                asset_id: ASSET_ID.into(),
                dest_chain: "BC2".into(),
                dest_user: "U2".into(),
            },
        }],
        tick_limit: Some(2_000),
    }
}

fn phase_of(outcome: &RunOutcome, node: &str) -> Phase {
    outcome.world.nodes[node].gateway.as_ref().unwrap().phase
}

fn source_asset_state(outcome: &RunOutcome) -> Option<AssetState> {
    let id = dtcb_cli::config::parse_hex32("asset", ASSET_ID).unwrap();
    outcome.world.ledgers["BC1"].asset(&id).map(|a| a.state.clone())
}

fn has_event(outcome: &RunOutcome, pred: impl Fn(&EventKind) -> bool) -> bool {
    outcome.world.log.entries().iter().any(|e| pred(&e.kind))
}

#[test]
fn happy_path_completes_and_passes_all_verdicts() {
    let outcome = run_scenario(&two_chain_config(7)).unwrap();
    assert!(outcome.report.all_pass(), "{}", outcome.report);
    assert_eq!(outcome.report.transfers_completed, 1);
    assert_eq!(phase_of(&outcome, "G1"), Phase::SourceDone);
    assert_eq!(phase_of(&outcome, "G2"), Phase::DestDone);
    assert!(matches!(
        source_asset_state(&outcome),
        Some(AssetState::Invalidated { .. })
    ));
}

#[test]
fn source_waits_in_await_registration_when_trust_outruns_the_lock() {
    // A slow source chain: trust establishment finishes well before the
    // outbound transfer is applied, so the source parks in
    // AwaitRegistration until the lock lands.
    let mut config = two_chain_config(11);
    config.chains[0].block_interval = 30;
    config.chains[0].confirmation_depth = 1;
    config.chains[0].lock_grace = Some(30);
    config.chains[1].confirmation_depth = 1;
    config.chains[1].lock_grace = Some(80);
    let outcome = run_scenario(&config).unwrap();
    assert!(outcome.report.all_pass(), "{}", outcome.report);
    assert_eq!(outcome.report.transfers_completed, 1);
    assert!(has_event(&outcome, |k| matches!(
        k,
        EventKind::PhaseTransition { to, .. } if *to == "source:AwaitRegistration"
    )));
}

#[test]
fn noncompliant_destination_never_registers() {
    let mut config = two_chain_config(13);
    config.nodes[1].measurements[1].svn = 1; // below the policy minimum of 2
    let outcome = run_scenario(&config).unwrap();
    assert!(outcome.report.all_pass(), "{}", outcome.report);
    assert_eq!(outcome.report.transfers_completed, 0);
    assert!(has_event(&outcome, |k| matches!(
        k,
        EventKind::TrustRejected { reason, .. } if reason.contains("svn regression component firmware")
    )));
    assert!(!has_event(&outcome, |k| matches!(
        k,
        EventKind::TxSubmitted { kind, .. } if *kind == "register"
    )));
    assert_eq!(outcome.world.ledgers["BC2"].assets().count(), 0);
    assert_eq!(source_asset_state(&outcome), Some(AssetState::Active));
}

#[test]
fn total_message_loss_aborts_without_losing_the_asset() {
    let mut config = two_chain_config(17);
    config.links[1].drop_probability = 1.0; // G2 -> G1 black hole
    let outcome = run_scenario(&config).unwrap();
    assert!(outcome.report.all_pass(), "{}", outcome.report);
    assert_eq!(phase_of(&outcome, "G1"), Phase::SourceAborted);
    assert_eq!(source_asset_state(&outcome), Some(AssetState::Active));
    assert_eq!(outcome.world.ledgers["BC2"].assets().count(), 0);
    assert!(outcome.report.no_loss.pass);
}

#[test]
fn unenrolled_initiator_is_refused_before_any_manifest_crosses_the_wire() {
    let mut config = two_chain_config(19);
    config.nodes[0].enrolled = false;
    let outcome = run_scenario(&config).unwrap();
    assert_eq!(outcome.report.transfers_completed, 0);
    // Message-count audit: the responder sent at most two messages and
    // none of them was evidence.
    let from_responder: Vec<&'static str> = outcome
        .world
        .log
        .entries()
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::MessageSent { from, kind, .. } if from == "G2" => Some(*kind),
            _ => None,
        })
        .collect();
    assert!(from_responder.len() <= 2, "{from_responder:?}");
    assert!(!from_responder.contains(&"trust_evidence"));
    assert_eq!(source_asset_state(&outcome), Some(AssetState::Active));
}

#[test]
fn non_tcb_capable_destination_cannot_join_the_session() {
    let mut config = two_chain_config(23);
    config.nodes[1].p2_shielded = false;
    let outcome = run_scenario(&config).unwrap();
    assert!(outcome.report.all_pass(), "{}", outcome.report);
    assert_eq!(outcome.report.transfers_completed, 0);
    assert!(has_event(&outcome, |k| matches!(
        k,
        EventKind::TrustRejected { reason, .. } if reason.contains("TCB capabilities")
    )));
    assert_eq!(outcome.world.ledgers["BC2"].assets().count(), 0);
    assert_eq!(source_asset_state(&outcome), Some(AssetState::Active));
}

#[test]
fn corrupted_challenge_leads_to_clean_abort() {
    let mut config = two_chain_config(29);
    config.script.insert(
        0,
        ScriptStep {
            at_tick: 0,
            action: ScriptActionConfig::CorruptNextMessage {
                from: "G1".into(),
                to: "G2".into(),
            },
        },
    );
    let outcome = run_scenario(&config).unwrap();
    assert!(outcome.report.all_pass(), "{}", outcome.report);
    assert!(has_event(&outcome, |k| matches!(k, EventKind::MessageCorrupted { .. })));
    assert_eq!(phase_of(&outcome, "G1"), Phase::SourceAborted);
    assert_eq!(source_asset_state(&outcome), Some(AssetState::Active));
}

#[test]
fn crashed_destination_times_out_the_source() {
    let mut config = two_chain_config(31);
    config.script.push(ScriptStep {
        at_tick: 2,
        action: ScriptActionConfig::CrashNode {
            node_id: "G2".into(),
        },
    });
    let outcome = run_scenario(&config).unwrap();
    assert!(has_event(&outcome, |k| matches!(k, EventKind::NodeCrashed { .. })));
    assert!(has_event(&outcome, |k| matches!(k, EventKind::MessageLost { .. })));
    assert_eq!(phase_of(&outcome, "G1"), Phase::SourceAborted);
    assert_eq!(source_asset_state(&outcome), Some(AssetState::Active));
    assert!(outcome.report.exclusivity.pass);
}

#[test]
fn sensitive_transfer_collects_quorum_approvals_and_completes() {
    let mut config = two_chain_config(37);
    config.nodes.push(gateway_node("G1b", "BC1", 0x33, 3));
    config.nodes.push(gateway_node("G1c", "BC1", 0x44, 3));
    let policy = config.policy.as_mut().unwrap();
    policy.quorum_m = 2;
    policy.quorum_n = 3;
    policy.sensitive_threshold = 100; // asset value 250 is sensitive
    let outcome = run_scenario(&config).unwrap();
    assert!(outcome.report.all_pass(), "{}", outcome.report);
    assert_eq!(outcome.report.transfers_completed, 1);
    assert_eq!(phase_of(&outcome, "G2"), Phase::DestDone);
}

#[test]
fn unreachable_quorum_wedges_the_transfer_and_flags_the_hazard() {
    let mut config = two_chain_config(41);
    config.nodes.push(gateway_node("G1b", "BC1", 0x33, 3));
    config.nodes.push(gateway_node("G1c", "BC1", 0x44, 3));
    let policy = config.policy.as_mut().unwrap();
    policy.quorum_m = 2;
    policy.quorum_n = 3;
    policy.sensitive_threshold = 100;
    // Both co-signers die before the invalidation confirms.
    for node_id in ["G1b", "G1c"] {
        config.script.push(ScriptStep {
            at_tick: 20,
            action: ScriptActionConfig::CrashNode {
                node_id: node_id.into(),
            },
        });
    }
    let outcome = run_scenario(&config).unwrap();
    assert!(has_event(&outcome, |k| matches!(
        k,
        EventKind::QuorumRefused { reason, .. } if reason.contains("quorum unreachable")
    )));
    assert_eq!(outcome.report.transfers_completed, 0);
    assert_eq!(outcome.report.hazards.len(), 1);
    assert!(outcome.report.exclusivity.pass);
}

#[test]
fn delayed_final_assertion_is_ignored_and_hazard_flagged() {
    // Source chain confirms slowly; destination lock expires before the
    // invalidated assertion arrives, so the destination rolls back while
    // the source has already invalidated. The late assertion is logged
    // and ignored; the auditor flags the hazard.
    let mut config = two_chain_config(43);
    config.chains[0].confirmation_depth = 8;
    config.chains[0].lock_grace = Some(20);
    config.chains[1].confirmation_depth = 1;
    config.chains[1].lock_grace = Some(10);
    let outcome = run_scenario(&config).unwrap();
    assert_eq!(phase_of(&outcome, "G2"), Phase::DestRolledBack);
    assert_eq!(phase_of(&outcome, "G1"), Phase::SourceDone);
    assert!(matches!(
        source_asset_state(&outcome),
        Some(AssetState::Invalidated { .. })
    ));
    assert_eq!(outcome.world.ledgers["BC2"].assets().count(), 0);
    assert_eq!(outcome.report.hazards.len(), 1);
    assert!(has_event(&outcome, |k| matches!(k, EventKind::HazardFlagged { .. })));
    assert!(has_event(&outcome, |k| matches!(
        k,
        EventKind::MessageIgnored { node, reason } if node == "G2" && reason.contains("invalidated assertion")
    )));
    // Exclusivity still holds: the asset is active on zero chains.
    assert!(outcome.report.exclusivity.pass);
    // The transfer is not counted as a no-loss violation; it is a hazard.
    assert!(outcome.report.no_loss.pass);
}

#[test]
fn empty_scenario_produces_empty_blocks_to_the_tick_limit() {
    let config = ScenarioConfig {
        seed: 5,
        chains: vec![ChainConfig {
            chain_id: "BC1".into(),
            block_interval: 5,
            confirmation_depth: 2,
            lock_grace: None,
        }],
        users: vec![],
        assets: vec![],
        nodes: vec![],
        policy: None,
        links: vec![],
        script: vec![],
        tick_limit: Some(50),
    };
    let outcome = run_scenario(&config).unwrap();
    assert_eq!(outcome.world.ledgers["BC1"].blocks().len(), 10);
    assert!(outcome.world.ledgers["BC1"].blocks().iter().all(|b| b.entries.is_empty()));
}

#[test]
fn trust_gate_ordering_holds_on_the_happy_path() {
    let outcome = run_scenario(&two_chain_config(47)).unwrap();
    let entries = outcome.world.log.entries();
    let session_tick = entries
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::SessionEstablished { node, .. } if node == "G2" => Some(e.tick),
            _ => None,
        })
        .expect("session established");
    let register_tick = entries
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::RegistrationMapped { node, .. } if node == "G2" => Some(e.tick),
            _ => None,
        })
        .expect("registration submitted");
    assert!(session_tick <= register_tick);
    assert!(outcome.report.trust_gate.pass);
}

#[test]
fn wire_messages_never_carry_the_private_asset_id() {
    let outcome = run_scenario(&two_chain_config(53)).unwrap();
    assert!(outcome.report.confinement.pass);
    assert_eq!(outcome.world.confinement_violations, 0);
}

#[test]
fn duplicated_deliveries_are_idempotent_and_the_transfer_completes() {
    let mut config = two_chain_config(67);
    config.links[0].duplicate_probability = 1.0;
    config.links[1].duplicate_probability = 1.0;
    let outcome = run_scenario(&config).unwrap();
    assert!(outcome.report.all_pass(), "{}", outcome.report);
    assert_eq!(outcome.report.transfers_completed, 1);
    assert!(has_event(&outcome, |k| matches!(k, EventKind::MessageDuplicated { .. })));
    // Retransmissions are observed and ignored, never replayed into the
    // state machines.
    assert!(has_event(&outcome, |k| matches!(
        k,
        EventKind::MessageIgnored { reason, .. } if reason.contains("duplicate")
            || reason.contains("unexpected")
    )));
}

#[test]
fn dropping_the_forward_link_also_aborts_via_timeout() {
    let mut config = two_chain_config(59);
    config.links[0].drop_probability = 1.0; // G1 -> G2 black hole
    let outcome = run_scenario(&config).unwrap();
    assert!(outcome.report.all_pass(), "{}", outcome.report);
    assert_eq!(phase_of(&outcome, "G1"), Phase::SourceAborted);
    assert_eq!(source_asset_state(&outcome), Some(AssetState::Active));
    assert_eq!(outcome.world.ledgers["BC2"].assets().count(), 0);
}

#[test]
fn logs_and_reports_never_leak_secret_bytes() {
    let outcome = run_scenario(&two_chain_config(61)).unwrap();
    let log_text = outcome.world.log.render();
    let report_text = outcome.report.to_string();
    for node in outcome.world.nodes.values() {
        let mut secret_hex: Vec<String> =
            vec![hex::encode(node.identity.uds().as_bytes())];
        secret_hex.extend(
            node.identity
                .layer_secrets()
                .iter()
                .map(|s| s.to_hex()),
        );
        for secret in secret_hex {
            assert!(!log_text.contains(&secret), "log leaks a secret");
            assert!(!report_text.contains(&secret), "report leaks a secret");
        }
    }
}
