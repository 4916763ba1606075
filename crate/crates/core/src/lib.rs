//! Deterministic desk-scale simulator for a decentralized data marketplace.
//!
//! The crate models the full life of a data purchase: buyers publish data
//! orders on a simulated chain, sellers answer off-chain with encrypted
//! payloads, a notary audits the data and locks a batched payment behind a
//! hash commitment, and revealing the notary's master key simultaneously
//! pays everyone and lets the buyer decrypt what it bought. Settlement runs
//! through a batched-payment ledger with an optimistic collect/challenge
//! game and a calibrated gas model.
//!
//! Everything is driven by a single seeded RNG and a block-quantized engine
//! loop, so a scenario run is reproducible byte for byte.

pub mod actors;
pub mod crypto;
pub mod engine;
pub mod exchange;
pub mod ledger;
pub mod matrix;
pub mod net;
pub mod protocol;
pub mod report;
pub mod scenario;

/// Sequential account identifier in the batch-payment registry.
pub type AccountId = u32;
/// Index of a registered payment batch, starting at 1.
pub type PayIndex = u64;
/// Token amount in base units.
pub type Amount = u128;
/// Ledger block counter.
pub type BlockNumber = u64;
/// Data-order identifier.
pub type OrderId = u64;

pub use crypto::{Address, Hash32, Lock, SymKey};
