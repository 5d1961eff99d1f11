// SPDX-License-Identifier: Apache-2.0

//! Declarative scenario configuration: JSON in, validated world
//! description out. All byte-valued fields are hex strings.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use dtcb_core::crypto::Digest;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub chains: Vec<ChainConfig>,
    #[serde(default)]
    pub users: Vec<UserConfig>,
    #[serde(default)]
    pub assets: Vec<AssetConfig>,
    #[serde(default)]
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub policy: Option<PolicyConfig>,
    #[serde(default)]
    pub links: Vec<LinkDef>,
    #[serde(default)]
    pub script: Vec<ScriptStep>,
    #[serde(default)]
    pub tick_limit: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub chain_id: String,
    pub block_interval: u64,
    pub confirmation_depth: u64,
    /// Lock grace past the confirmation point; defaults to 10 block
    /// intervals.
    #[serde(default)]
    pub lock_grace: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub user_id: String,
    pub chain_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetConfig {
    /// Private ledger identifier, 32 bytes hex.
    pub asset_id: String,
    pub chain_id: String,
    /// Owning user id.
    pub owner: String,
    pub value: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub node_id: String,
    pub chain_id: String,
    /// Unique device secret, 32 bytes hex.
    pub uds: String,
    pub measurements: Vec<MeasurementConfig>,
    #[serde(default = "default_true")]
    pub p1_well_defined: bool,
    #[serde(default = "default_true")]
    pub p2_shielded: bool,
    #[serde(default)]
    pub gateway: bool,
    /// Whether this gateway holds a membership credential.
    #[serde(default = "default_true")]
    pub enrolled: bool,
    /// Explicitly delegate this gateway to speak for its chain; defaults
    /// to the first gateway declared per chain.
    #[serde(default)]
    pub designated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    pub layer_index: u64,
    /// 32 bytes hex.
    pub code_digest: String,
    pub product_id: String,
    pub svn: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub required_components: Vec<RequiredComponentConfig>,
    pub max_quote_age_ticks: u64,
    pub quorum_m: usize,
    pub quorum_n: usize,
    pub sensitive_threshold: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequiredComponentConfig {
    pub component: String,
    pub min_svn: u64,
    #[serde(default)]
    pub pinned_digest: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDef {
    pub from: String,
    pub to: String,
    pub delay_min: u64,
    pub delay_max: u64,
    pub drop_probability: f64,
    #[serde(default)]
    pub duplicate_probability: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    pub at_tick: u64,
    pub action: ScriptActionConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptActionConfig {
    SubmitTransfer {
        chain_id: String,
        asset_id: String,
        dest_chain: String,
        dest_user: String,
    },
    CrashNode {
        node_id: String,
    },
    CorruptNextMessage {
        from: String,
        to: String,
    },
}

pub fn parse_hex32(field: &str, value: &str) -> Result<Digest, ConfigError> {
    let bytes = hex::decode(value)
        .map_err(|e| ConfigError::Invalid(format!("{field}: bad hex: {e}")))?;
    Digest::from_slice(&bytes)
        .map_err(|_| ConfigError::Invalid(format!("{field}: expected 32 bytes, got {}", bytes.len())))
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));

        if self.chains.is_empty() {
            return invalid("at least one chain is required".into());
        }
        let mut chain_ids = BTreeSet::new();
        for chain in &self.chains {
            if !chain_ids.insert(chain.chain_id.as_str()) {
                return invalid(format!("duplicate chain_id {}", chain.chain_id));
            }
            if chain.block_interval == 0 {
                return invalid(format!(
                    "chain {}: block_interval must be at least 1",
                    chain.chain_id
                ));
            }
            if chain.lock_grace == Some(0) {
                return invalid(format!(
                    "chain {}: lock_grace must be at least 1",
                    chain.chain_id
                ));
            }
        }

        let mut user_ids = BTreeSet::new();
        for user in &self.users {
            if !user_ids.insert(user.user_id.as_str()) {
                return invalid(format!("duplicate user_id {}", user.user_id));
            }
            if !chain_ids.contains(user.chain_id.as_str()) {
                return invalid(format!(
                    "user {} references unknown chain {}",
                    user.user_id, user.chain_id
                ));
            }
        }

        let mut asset_ids = BTreeSet::new();
        for asset in &self.assets {
            parse_hex32("asset_id", &asset.asset_id)?;
            if !asset_ids.insert(asset.asset_id.as_str()) {
                return invalid(format!("duplicate asset_id {}", asset.asset_id));
            }
            if !chain_ids.contains(asset.chain_id.as_str()) {
                return invalid(format!(
                    "asset {} references unknown chain {}",
                    asset.asset_id, asset.chain_id
                ));
            }
            if !user_ids.contains(asset.owner.as_str()) {
                return invalid(format!(
                    "asset {} owned by unknown user {}",
                    asset.asset_id, asset.owner
                ));
            }
        }

        let mut node_ids = BTreeSet::new();
        let mut has_gateway = false;
        for node in &self.nodes {
            if !node_ids.insert(node.node_id.as_str()) {
                return invalid(format!("duplicate node_id {}", node.node_id));
            }
            if !chain_ids.contains(node.chain_id.as_str()) {
                return invalid(format!(
                    "node {} references unknown chain {}",
                    node.node_id, node.chain_id
                ));
            }
            parse_hex32("uds", &node.uds)?;
            if node.measurements.is_empty() {
                return invalid(format!("node {} has no measurements", node.node_id));
            }
            for m in &node.measurements {
                parse_hex32("code_digest", &m.code_digest)?;
            }
            if node.gateway {
                has_gateway = true;
                if node.measurements.len() < 2 {
                    return invalid(format!(
                        "gateway node {} needs at least two layers (an alias key signs evidence)",
                        node.node_id
                    ));
                }
            }
        }

        if has_gateway {
            let Some(policy) = &self.policy else {
                return invalid("gateway nodes require a policy section".into());
            };
            if policy.required_components.is_empty() {
                return invalid("policy.required_components must be non-empty".into());
            }
            for required in &policy.required_components {
                if let Some(pinned) = &required.pinned_digest {
                    parse_hex32("pinned_digest", pinned)?;
                }
            }
            if policy.quorum_m < 1 || policy.quorum_m > policy.quorum_n {
                return invalid(format!(
                    "policy quorum must satisfy 1 <= m <= n, got m={} n={}",
                    policy.quorum_m, policy.quorum_n
                ));
            }
        }

        for link in &self.links {
            for end in [&link.from, &link.to] {
                if !node_ids.contains(end.as_str()) {
                    return invalid(format!("link references unknown node {end}"));
                }
            }
            if link.delay_min > link.delay_max {
                return invalid(format!(
                    "link {} -> {}: delay_min exceeds delay_max",
                    link.from, link.to
                ));
            }
            if !(0.0..=1.0).contains(&link.drop_probability) {
                return invalid(format!(
                    "link {} -> {}: drop_probability must be within [0, 1]",
                    link.from, link.to
                ));
            }
            if !(0.0..=1.0).contains(&link.duplicate_probability) {
                return invalid(format!(
                    "link {} -> {}: duplicate_probability must be within [0, 1]",
                    link.from, link.to
                ));
            }
        }

        for step in &self.script {
            match &step.action {
                ScriptActionConfig::SubmitTransfer {
                    chain_id,
                    asset_id,
                    dest_chain,
                    dest_user,
                } => {
                    if !chain_ids.contains(chain_id.as_str()) {
                        return invalid(format!("script references unknown chain {chain_id}"));
                    }
                    if !chain_ids.contains(dest_chain.as_str()) {
                        return invalid(format!("script references unknown chain {dest_chain}"));
                    }
                    if !asset_ids.contains(asset_id.as_str()) {
                        return invalid(format!("script references unknown asset {asset_id}"));
                    }
                    if !user_ids.contains(dest_user.as_str()) {
                        return invalid(format!("script references unknown user {dest_user}"));
                    }
                }
                ScriptActionConfig::CrashNode { node_id } => {
                    if !node_ids.contains(node_id.as_str()) {
                        return invalid(format!("script references unknown node {node_id}"));
                    }
                }
                ScriptActionConfig::CorruptNextMessage { from, to } => {
                    for end in [from, to] {
                        if !node_ids.contains(end.as_str()) {
                            return invalid(format!("script references unknown node {end}"));
                        }
                    }
                }
            }
        }

        Ok(())
    }
}
