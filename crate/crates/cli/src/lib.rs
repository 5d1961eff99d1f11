// SPDX-License-Identifier: Apache-2.0

//! Scenario-driven front end for the gateway simulator: declarative JSON
//! configs, deterministic world construction, and the invariant-auditing
//! run loop behind the `sim` binary.

#![forbid(unsafe_code)]

pub mod builder;
pub mod config;
pub mod runner;
