//! The simulated on-chain world: token and account registry, batched
//! payments with hash-locked unlock, collect with its challenge game,
//! delegated operations, gas metering, and the order registry.

mod chain;
pub mod game;
pub mod gas;
pub mod paydata;

pub use chain::*;
pub use gas::{GasParams, GasReport, UsdPerGas};
pub use paydata::{decode_pay_data, encode_pay_data, PayData, PayDataError};
