// SPDX-License-Identifier: Apache-2.0

//! Turns a validated [`ScenarioConfig`] into a ready-to-run [`SimWorld`]:
//! derives identities and user keys, enrolls gateways with the group
//! authority, wires peering and quorum knowledge, seeds genesis assets,
//! and schedules the script.

use std::collections::BTreeMap;

use dtcb_core::attestation::{
    create_manifest, issue_membership, DtcbPolicy, ManifestEntry, RequiredComponent,
    TcbCapabilities,
};
use dtcb_core::crypto::{keypair_from_seed, Digest, PublicKey, Seed};
use dtcb_core::dice::{build_chain, LayerMeasurement};
use dtcb_core::gateway::{GatewayConfig, GatewayState, PeeringPolicy};
use dtcb_core::ledger::Ledger;
use dtcb_core::rng::DetRng;
use dtcb_core::sim::{LinkConfig, Node, ScriptAction, SimWorld};

use crate::config::{parse_hex32, ConfigError, ScenarioConfig, ScriptActionConfig};

pub const GATEWAY_GROUP_ID: &str = "gateways";

/// Deterministic world construction. Every random draw comes from the
/// scenario seed, in declaration order.
pub fn build_world(config: &ScenarioConfig) -> Result<SimWorld, ConfigError> {
    config.validate()?;
    let mut world = SimWorld::new(config.seed);

    // Setup draws come from a separate stream so that runtime draws do
    // not shift when the node list changes.
    let mut setup_rng = DetRng::new(config.seed ^ 0x5e7u64.rotate_left(32));
    let authority = keypair_from_seed(&Seed::new(setup_rng.bytes32()));

    let mut user_keys: BTreeMap<String, PublicKey> = BTreeMap::new();
    for user in &config.users {
        let pair = keypair_from_seed(&Seed::new(setup_rng.bytes32()));
        user_keys.insert(user.user_id.clone(), pair.public());
    }

    // Ledgers and genesis assets.
    for chain in &config.chains {
        let lock_grace = chain
            .lock_grace
            .unwrap_or(10 * chain.block_interval);
        world.add_ledger(Ledger::new(
            chain.chain_id.clone(),
            chain.block_interval,
            chain.confirmation_depth,
            lock_grace,
        ));
    }
    for asset in &config.assets {
        let id = parse_hex32("asset_id", &asset.asset_id)?;
        let owner = user_keys[&asset.owner];
        let ledger = world
            .ledgers
            .get_mut(&asset.chain_id)
            .expect("validated chain");
        ledger.genesis_asset(id, owner, asset.value);
        world.confidential_ids.insert(id);
    }

    // Delegation: explicitly designated gateway, else the first gateway
    // declared for each chain.
    let mut designated: BTreeMap<String, String> = BTreeMap::new();
    for node in config.nodes.iter().filter(|n| n.gateway) {
        if node.designated {
            designated.insert(node.chain_id.clone(), node.node_id.clone());
        }
    }
    for node in config.nodes.iter().filter(|n| n.gateway) {
        designated
            .entry(node.chain_id.clone())
            .or_insert_with(|| node.node_id.clone());
    }
    for (chain_id, gateway) in &designated {
        world
            .ledgers
            .get_mut(chain_id)
            .expect("validated chain")
            .designated_gateway = Some(gateway.clone());
    }

    let peering_policy = config.policy.as_ref().map(|p| {
        Ok::<PeeringPolicy, ConfigError>(PeeringPolicy {
            dtcb_policy: DtcbPolicy {
                required_components: p
                    .required_components
                    .iter()
                    .map(|r| {
                        Ok(RequiredComponent {
                            component: r.component.clone(),
                            min_svn: r.min_svn,
                            pinned_digest: r
                                .pinned_digest
                                .as_deref()
                                .map(|h| parse_hex32("pinned_digest", h))
                                .transpose()?,
                        })
                    })
                    .collect::<Result<Vec<_>, ConfigError>>()?,
                max_quote_age_ticks: p.max_quote_age_ticks,
                group_authority_key: authority.public(),
            },
            quorum_m: p.quorum_m,
            quorum_n: p.quorum_n,
            sensitive_threshold: p.sensitive_threshold,
        })
    });
    let peering_policy = peering_policy.transpose()?;

    // First pass: derive every node identity so quorum-signer sets can be
    // wired into each gateway afterwards.
    struct Built {
        node: Node,
        gateway: bool,
    }
    let mut built: Vec<Built> = Vec::new();
    for node_config in &config.nodes {
        let uds = Seed::new(*parse_hex32("uds", &node_config.uds)?.as_bytes());
        let measurements: Vec<LayerMeasurement> = node_config
            .measurements
            .iter()
            .map(|m| {
                Ok(LayerMeasurement {
                    layer_index: m.layer_index,
                    code_digest: parse_hex32("code_digest", &m.code_digest)?,
                    product_id: m.product_id.clone(),
                    svn: m.svn,
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let identity = build_chain(uds, measurements)
            .map_err(|e| ConfigError::Invalid(format!("node {}: {e}", node_config.node_id)))?;

        // Measured boot: each layer's digest lands in its own register.
        let mut registers = dtcb_core::attestation::Registers::new();
        for (i, m) in identity.chain().iter().enumerate() {
            registers
                .extend(i.min(31), &m.code_digest)
                .expect("index within range");
        }

        let manifest = if identity.signing_alias().is_some() {
            let entries = identity
                .chain()
                .iter()
                .map(|m| ManifestEntry {
                    component: m.product_id.clone(),
                    version: format!("{}.{}", m.svn, m.layer_index),
                    svn: m.svn,
                    code_digest: m.code_digest,
                })
                .collect();
            Some(create_manifest(&identity, entries).map_err(|e| {
                ConfigError::Invalid(format!("node {}: manifest: {e}", node_config.node_id))
            })?)
        } else {
            None
        };

        let credential = if node_config.gateway && node_config.enrolled {
            let pseudonym = keypair_from_seed(&Seed::new(setup_rng.bytes32())).public();
            Some(
                issue_membership(&authority, &pseudonym, GATEWAY_GROUP_ID, &identity.public())
                    .map_err(|e| {
                        ConfigError::Invalid(format!(
                            "node {}: enrollment: {e}",
                            node_config.node_id
                        ))
                    })?,
            )
        } else {
            None
        };

        built.push(Built {
            node: Node {
                node_id: node_config.node_id.clone(),
                chain_id: node_config.chain_id.clone(),
                identity,
                registers,
                manifest,
                credential,
                capabilities: TcbCapabilities {
                    well_defined: node_config.p1_well_defined,
                    shielded: node_config.p2_shielded,
                },
                gateway: None,
                crashed: false,
            },
            gateway: node_config.gateway,
        });
    }

    // Authorized quorum signers per chain: the alias keys of all of that
    // chain's gateway nodes.
    let mut authorized: BTreeMap<String, Vec<PublicKey>> = BTreeMap::new();
    for entry in built.iter().filter(|b| b.gateway) {
        if let Some(alias) = entry.node.identity.signing_alias() {
            authorized
                .entry(entry.node.chain_id.clone())
                .or_default()
                .push(alias.public());
        }
    }

    for mut entry in built {
        if entry.gateway {
            let policy = peering_policy
                .clone()
                .expect("validated: gateways imply a policy");
            let chain = world
                .ledgers
                .get(&entry.node.chain_id)
                .expect("validated chain");
            let peer_gateways = designated
                .iter()
                .filter(|(chain_id, _)| **chain_id != entry.node.chain_id)
                .map(|(chain_id, node)| (chain_id.clone(), node.clone()))
                .collect();
            let is_designated = designated
                .get(&entry.node.chain_id)
                .is_some_and(|d| *d == entry.node.node_id);
            entry.node.gateway = Some(GatewayState::new(
                entry.node.node_id.clone(),
                entry.node.chain_id.clone(),
                GatewayConfig {
                    policy,
                    group_id: GATEWAY_GROUP_ID.to_string(),
                    is_designated,
                    peer_gateways,
                    authorized_remote_signers: authorized.clone(),
                    block_interval: chain.block_interval,
                    confirmation_depth: chain.confirmation_depth,
                    lock_grace: chain.lock_grace,
                },
            ));
        }
        world.add_node(entry.node);
    }

    for link in &config.links {
        world.add_link(
            &link.from,
            &link.to,
            LinkConfig {
                delay_min: link.delay_min,
                delay_max: link.delay_max,
                drop_probability: link.drop_probability,
                duplicate_probability: link.duplicate_probability,
            },
        );
    }

    for step in &config.script {
        let action = match &step.action {
            ScriptActionConfig::SubmitTransfer {
                chain_id,
                asset_id,
                dest_chain,
                dest_user,
            } => ScriptAction::SubmitTransfer {
                chain_id: chain_id.clone(),
                asset: parse_hex32("asset_id", asset_id)?,
                dest_chain: dest_chain.clone(),
                dest_owner: user_keys[dest_user],
            },
            ScriptActionConfig::CrashNode { node_id } => ScriptAction::CrashNode {
                node_id: node_id.clone(),
            },
            ScriptActionConfig::CorruptNextMessage { from, to } => {
                ScriptAction::CorruptNextMessage {
                    from: from.clone(),
                    to: to.clone(),
                }
            }
        };
        world.schedule_script(step.at_tick, action);
    }

    world.start_block_production();
    Ok(world)
}

/// Looks up a configured user's derived public key (for assertions about
/// final ownership).
pub fn user_public_key(config: &ScenarioConfig, user_id: &str) -> Option<PublicKey> {
    let mut setup_rng = DetRng::new(config.seed ^ 0x5e7u64.rotate_left(32));
    let _authority = keypair_from_seed(&Seed::new(setup_rng.bytes32()));
    for user in &config.users {
        let pair = keypair_from_seed(&Seed::new(setup_rng.bytes32()));
        if user.user_id == user_id {
            return Some(pair.public());
        }
    }
    None
}

/// Convenience for tests: a digest filled with one byte.
pub fn digest_fill(byte: u8) -> Digest {
    Digest::new([byte; 32])
}
