//! Scripted participants for simulation runs. Each actor implements the
//! engine's `Actor` trait and only touches the world through its outbox.

pub mod buyer;
pub mod challenger;
pub mod delegate;
pub mod notary;
pub mod seller;
pub mod verify;

pub use buyer::{Buyer, BuyerCfg, OrderPlan};
pub use challenger::{Challenger, ChallengerCfg};
pub use delegate::{Delegate, DelegateCfg};
pub use notary::{Notary, NotaryCfg};
pub use seller::{Seller, SellerCfg};
pub use verify::Verifier;
