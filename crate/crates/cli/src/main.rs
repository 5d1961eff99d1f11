// SPDX-License-Identifier: Apache-2.0

//! `sim` — scenario runner plus standalone identity-derivation and
//! quote-verification subcommands.
//!
//! Exit codes: 0 success / all verdicts pass; 1 invariant failure;
//! 2 protocol rejection (verify-quote); 3 input or parse error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use dtcb_cli::config::ScenarioConfig;
use dtcb_cli::runner::{run_world, DEFAULT_TICK_LIMIT};
use dtcb_core::attestation::{verify_quote, Quote, REGISTER_COUNT};
use dtcb_core::crypto::{Digest, PublicKey, Signature};
use dtcb_core::dice::{build_chain, LayerMeasurement};
use dtcb_core::crypto::Seed;

const EXIT_OK: u8 = 0;
const EXIT_INVARIANT: u8 = 1;
const EXIT_REJECTED: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "sim", about = "Deterministic DTCB gateway simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config to quiescence and print the invariant report.
    Run {
        /// Scenario config (JSON).
        config: PathBuf,
        /// Write the event log to this file.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Tick limit override.
        #[arg(long)]
        ticks: Option<u64>,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Derive the identity chain from a UDS and a measurements file.
    Derive {
        /// 32-byte UDS, hex.
        #[arg(long)]
        uds: String,
        /// JSON file: list of {layer_index, code_digest, product_id, svn}.
        #[arg(long)]
        measurements: PathBuf,
    },
    /// Verify a quote file against an expected nonce and signer key.
    VerifyQuote {
        /// Quote file (JSON).
        #[arg(long)]
        quote: PathBuf,
        /// 32-byte challenge nonce, hex.
        #[arg(long)]
        nonce: String,
        /// Expected signer public key, hex.
        #[arg(long)]
        key: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, log, ticks, seed } => cmd_run(config, log, ticks, seed),
        Command::Derive { uds, measurements } => cmd_derive(&uds, measurements),
        Command::VerifyQuote { quote, nonce, key } => cmd_verify_quote(quote, &nonce, &key),
    };
    ExitCode::from(code)
}

fn read_file(path: &PathBuf) -> Result<String, u8> {
    fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        EXIT_INPUT
    })
}

fn parse_hex_array<const N: usize>(what: &str, value: &str) -> Result<[u8; N], u8> {
    let bytes = hex::decode(value).map_err(|e| {
        eprintln!("error: {what}: bad hex: {e}");
        EXIT_INPUT
    })?;
    bytes.try_into().map_err(|_| {
        eprintln!("error: {what}: expected {N} bytes");
        EXIT_INPUT
    })
}

fn cmd_run(
    config_path: PathBuf,
    log_path: Option<PathBuf>,
    ticks: Option<u64>,
    seed: Option<u64>,
) -> u8 {
    let text = match read_file(&config_path) {
        Ok(text) => text,
        Err(code) => return code,
    };
    let mut config = match ScenarioConfig::from_json(&text) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let tick_limit = ticks
        .or(config.tick_limit)
        .unwrap_or(DEFAULT_TICK_LIMIT);

    let world = match dtcb_cli::builder::build_world(&config) {
        Ok(world) => world,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let outcome = run_world(world, tick_limit);

    if let Some(path) = log_path {
        if let Err(e) = fs::write(&path, outcome.world.log.render()) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return EXIT_INPUT;
        }
    }
    println!("{}", outcome.report);

    if outcome.report.all_pass() && outcome.report.script_failures == 0 {
        EXIT_OK
    } else {
        EXIT_INVARIANT
    }
}

#[derive(Deserialize)]
struct MeasurementFileEntry {
    layer_index: u64,
    code_digest: String,
    product_id: String,
    svn: u64,
}

fn cmd_derive(uds_hex: &str, measurements_path: PathBuf) -> u8 {
    let uds = match parse_hex_array::<32>("uds", uds_hex) {
        Ok(bytes) => Seed::new(bytes),
        Err(code) => return code,
    };
    let text = match read_file(&measurements_path) {
        Ok(text) => text,
        Err(code) => return code,
    };
    let entries: Vec<MeasurementFileEntry> = match serde_json::from_str(&text) {
        Ok(entries) => entries,
        Err(e) => {
            eprintln!("error: measurements: {e}");
            return EXIT_INPUT;
        }
    };
    let mut measurements = Vec::with_capacity(entries.len());
    for entry in entries {
        let digest = match parse_hex_array::<32>("code_digest", &entry.code_digest) {
            Ok(bytes) => Digest::new(bytes),
            Err(code) => return code,
        };
        measurements.push(LayerMeasurement {
            layer_index: entry.layer_index,
            code_digest: digest,
            product_id: entry.product_id,
            svn: entry.svn,
        });
    }
    let identity = match build_chain(uds, measurements) {
        Ok(identity) => identity,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    println!("cdi: {}", identity.cdi());
    println!("device_id: {}", identity.device_id().public());
    for (i, alias) in identity.alias_ids().iter().enumerate() {
        println!("layer {} alias_id: {}", i + 1, alias.public());
    }
    EXIT_OK
}

#[derive(Deserialize)]
struct QuoteFile {
    signer: String,
    registers: Vec<String>,
    nonce: String,
    chain_digest: String,
    signature: String,
}

fn cmd_verify_quote(quote_path: PathBuf, nonce_hex: &str, key_hex: &str) -> u8 {
    let nonce = match parse_hex_array::<32>("nonce", nonce_hex) {
        Ok(bytes) => bytes,
        Err(code) => return code,
    };
    let key = match parse_hex_array::<32>("key", key_hex) {
        Ok(bytes) => PublicKey::new(bytes),
        Err(code) => return code,
    };
    let text = match read_file(&quote_path) {
        Ok(text) => text,
        Err(code) => return code,
    };
    let file: QuoteFile = match serde_json::from_str(&text) {
        Ok(file) => file,
        Err(e) => {
            eprintln!("error: quote file: {e}");
            return EXIT_INPUT;
        }
    };
    if file.registers.len() != REGISTER_COUNT {
        eprintln!(
            "error: quote file: expected {REGISTER_COUNT} register values, got {}",
            file.registers.len()
        );
        return EXIT_INPUT;
    }
    let mut registers = [Digest::ZERO; REGISTER_COUNT];
    for (slot, value) in registers.iter_mut().zip(&file.registers) {
        *slot = match parse_hex_array::<32>("register", value) {
            Ok(bytes) => Digest::new(bytes),
            Err(code) => return code,
        };
    }
    let quote = Quote {
        signer: match parse_hex_array::<32>("signer", &file.signer) {
            Ok(bytes) => PublicKey::new(bytes),
            Err(code) => return code,
        },
        registers,
        nonce: match parse_hex_array::<32>("quote nonce", &file.nonce) {
            Ok(bytes) => bytes,
            Err(code) => return code,
        },
        chain_digest: match parse_hex_array::<32>("chain_digest", &file.chain_digest) {
            Ok(bytes) => Digest::new(bytes),
            Err(code) => return code,
        },
        signature: match parse_hex_array::<64>("signature", &file.signature) {
            Ok(bytes) => Signature::new(bytes),
            Err(code) => return code,
        },
    };
    match verify_quote(&quote, &key, &nonce) {
        Ok(()) => {
            println!("accepted");
            EXIT_OK
        }
        Err(reason) => {
            println!("rejected: {reason}");
            EXIT_REJECTED
        }
    }
}

