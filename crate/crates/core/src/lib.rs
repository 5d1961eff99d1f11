// SPDX-License-Identifier: Apache-2.0

//! Deterministic simulator and library for hardware-rooted layered device
//! identities, remote attestation with group membership, and the
//! cross-chain gateway asset-transfer protocol between two simulated
//! blockchain autonomous systems.
//!
//! Module map:
//!
//! * [`crypto`] — pinned primitives (SHA-256, HMAC-SHA-256, Ed25519) and
//!   domain-separation tags;
//! * [`wire`] — the canonical length-prefixed byte layout everything
//!   hashes, signs, and ships;
//! * [`dice`] — the layered identity chain (device secret, compound
//!   identifier, per-layer secrets and alias keys, SVN records);
//! * [`attestation`] — registers, quotes, manifests, policy evaluation,
//!   membership credentials, group quotes;
//! * [`ledger`] — the simulated per-chain ledger with lock / invalidate /
//!   redirect asset semantics;
//! * [`gateway`] — the two mirrored transfer state machines, trust
//!   establishment, assertions, and quorum signing;
//! * [`sim`] — the discrete-event world gluing it all together;
//! * [`rng`] — the seeded deterministic generator.

#![forbid(unsafe_code)]

pub mod attestation;
pub mod crypto;
pub mod dice;
pub mod gateway;
pub mod ledger;
pub mod rng;
pub mod sim;
pub mod wire;
