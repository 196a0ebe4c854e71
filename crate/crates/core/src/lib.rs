//! Protocol engine for collateralised NST borrowing against LP tokens,
//! with budgeted reward redistribution and service-fee credits.

pub mod amount;
pub mod collateral;
pub mod credits;
pub mod rewards;
pub mod risk;
pub mod sim;
pub mod staking;
pub mod state;

pub use amount::Amount;
