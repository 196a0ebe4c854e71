//! Domain types, the per-epoch ledger snapshot and the epoch engine.

mod engine;
mod market;
mod params;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::collateral::CollateralQuote;
use crate::credits::CreditState;
use crate::rewards::{ControllerDecision, ControllerState, EfficiencySeries, RewardPlan};
use crate::staking::{UnstakeTicket, Validator};

pub use engine::{
    advance_epoch, advance_epoch_with, mark_to_market, EngineError, Valuation, ValuationReport,
};
pub use market::PriceBook;
pub use params::{ParamViolation, ProtocolParams};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AssetId {
    pub symbol: String,
    pub is_nst: bool,
}

impl AssetId {
    pub fn new(symbol: impl Into<String>, is_nst: bool) -> Self {
        AssetId {
            symbol: symbol.into(),
            is_nst,
        }
    }
}

/// One LP's token reserve in one asset, mapped to one validator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveState {
    pub id: u64,
    pub owner: String,
    pub asset: String,
    pub validator: String,
    pub size: Amount,
    pub loan: Amount,
    pub lock_start: u64,
    /// Epochs committed; zero means open-ended.
    pub lock_len: u64,
}

impl ReserveState {
    pub fn lock_expired(&self, epoch: u64) -> bool {
        self.lock_len > 0 && self.lock_start + self.lock_len <= epoch
    }
}

/// A new reserve submitted during an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deposit {
    pub owner: String,
    pub asset: String,
    pub validator: String,
    pub size: Amount,
    pub lock_len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consumption {
    pub owner: String,
    pub service: String,
    pub amount: Amount,
}

/// Exogenous actions applied at the start of an epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochInputs {
    pub deposits: Vec<Deposit>,
    /// Validators misbehaving this epoch.
    pub slashes: Vec<String>,
    pub consumption: Vec<Consumption>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlashRecord {
    pub validator: String,
    pub loan_slashed: Amount,
    pub value_removed: Amount,
    pub direct_slashed: Amount,
    pub shortfall: Amount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Withdrawal {
    pub reserve: u64,
    pub owner: String,
    pub asset: String,
    pub size: Amount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub owner: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochEvents {
    pub under_collateralised: Vec<u64>,
    pub slashes: Vec<SlashRecord>,
    pub ejections: Vec<String>,
    /// Flagged wash pairs per asset.
    pub wash_flags: BTreeMap<String, usize>,
    pub withdrawals: Vec<Withdrawal>,
    /// NST reverted to the protocol by loan reductions this epoch.
    pub curtailed: Amount,
    pub curtail_all: bool,
    pub rejected_deposits: Vec<Rejection>,
    pub rejected_consumption: Vec<Rejection>,
    pub retarget: Option<String>,
    pub controller: Option<ControllerDecision>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub collateral_value: Amount,
    /// Non-wash traded notional, in NST.
    pub transaction_value: f64,
    pub basket_variance: f64,
    pub collateral_return: Option<f64>,
    /// Per-pool expected shortfall of NST-denominated returns.
    pub pool_risk: BTreeMap<String, f64>,
    pub efficiency: Option<f64>,
    pub pool_efficiency: BTreeMap<String, f64>,
    pub ceiling: Amount,
    pub w_nst: Option<f64>,
    pub stake_ratio: f64,
    pub stake_ratio_ok: bool,
}

/// Full protocol state after an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLedger {
    pub epoch: u64,
    pub assets: Vec<AssetId>,
    pub validators: BTreeMap<String, Validator>,
    pub reserves: Vec<ReserveState>,
    pub next_reserve_id: u64,
    /// Reward pool after this epoch's distribution.
    pub reward_pool: Amount,
    /// Reward pool available to this epoch's distribution.
    pub pool_before_distribution: Amount,
    pub staking_rewards: Amount,
    pub cumulative_sr: Amount,
    pub cumulative_distributed: Amount,
    pub total_direct_stake: Amount,
    /// NST reverted to the protocol and waiting in the unstaking queue.
    pub protocol_held: Amount,
    pub unstake_queue: Vec<UnstakeTicket>,
    pub released: Amount,
    /// Loan NST destroyed by slashing.
    pub slashed_total: Amount,
    /// Target weights over every asset, NST included.
    pub targets: BTreeMap<String, f64>,
    pub quotes: BTreeMap<String, CollateralQuote>,
    pub multiplier: f64,
    pub efficiency: EfficiencySeries,
    pub controller: ControllerState,
    pub plan: RewardPlan,
    pub reward_balances: BTreeMap<String, Amount>,
    pub credits: CreditState,
    pub events: EpochEvents,
    pub metrics: EpochMetrics,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenesisError {
    #[error("expected exactly one NST asset, found {0}")]
    NstCount(usize),
    #[error("duplicate asset `{0}`")]
    DuplicateAsset(String),
    #[error("duplicate validator `{0}`")]
    DuplicateValidator(String),
}

impl EpochLedger {
    /// Epoch-0 ledger: no reserves, initial targets split the non-NST
    /// weight equally, credit round 1 opened.
    pub fn genesis(
        assets: Vec<AssetId>,
        validators: Vec<Validator>,
        params: &ProtocolParams,
    ) -> Result<Self, GenesisError> {
        let nst_count = assets.iter().filter(|a| a.is_nst).count();
        if nst_count != 1 {
            return Err(GenesisError::NstCount(nst_count));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &assets {
            if !seen.insert(a.symbol.clone()) {
                return Err(GenesisError::DuplicateAsset(a.symbol.clone()));
            }
        }
        let mut registry = BTreeMap::new();
        for v in validators {
            if registry.contains_key(&v.id) {
                return Err(GenesisError::DuplicateValidator(v.id));
            }
            registry.insert(v.id.clone(), v);
        }
        let others = assets.len() - 1;
        let targets = assets
            .iter()
            .map(|a| {
                let w = if a.is_nst {
                    if others == 0 {
                        1.0
                    } else {
                        params.w_nst_target
                    }
                } else {
                    (1.0 - params.w_nst_target) / others as f64
                };
                (a.symbol.clone(), w)
            })
            .collect();
        let total_direct_stake = registry.values().map(|v: &Validator| v.direct_stake).sum();
        let increment = crate::credits::budget_increment(
            1,
            params.credit_budget_initial,
            params.credit_budget_decay,
        );
        Ok(EpochLedger {
            epoch: 0,
            assets,
            validators: registry,
            reserves: Vec::new(),
            next_reserve_id: 0,
            reward_pool: Amount::ZERO,
            pool_before_distribution: Amount::ZERO,
            staking_rewards: Amount::ZERO,
            cumulative_sr: Amount::ZERO,
            cumulative_distributed: Amount::ZERO,
            total_direct_stake,
            protocol_held: Amount::ZERO,
            unstake_queue: Vec::new(),
            released: Amount::ZERO,
            slashed_total: Amount::ZERO,
            targets,
            quotes: BTreeMap::new(),
            multiplier: 1.0,
            efficiency: EfficiencySeries::default(),
            controller: ControllerState::new(params.target_eff_init),
            plan: RewardPlan::default(),
            reward_balances: BTreeMap::new(),
            credits: CreditState::genesis(0, increment, BTreeMap::new(), &BTreeMap::new()),
            events: EpochEvents::default(),
            metrics: EpochMetrics::default(),
        })
    }

    pub fn nst(&self) -> &str {
        self.assets
            .iter()
            .find(|a| a.is_nst)
            .map(|a| a.symbol.as_str())
            .unwrap_or_default()
    }

    pub fn collateral_assets(&self) -> impl Iterator<Item = &str> {
        self.assets
            .iter()
            .filter(|a| !a.is_nst)
            .map(|a| a.symbol.as_str())
    }

    pub fn total_loan(&self) -> Amount {
        self.reserves.iter().map(|r| r.loan).sum()
    }

    pub fn pool_loan(&self, asset: &str) -> Amount {
        self.reserves
            .iter()
            .filter(|r| r.asset == asset)
            .map(|r| r.loan)
            .sum()
    }

    pub fn pool_size(&self, asset: &str) -> Amount {
        self.reserves
            .iter()
            .filter(|r| r.asset == asset)
            .map(|r| r.size)
            .sum()
    }

    pub fn validator_loan(&self, validator: &str) -> Amount {
        self.reserves
            .iter()
            .filter(|r| r.validator == validator)
            .map(|r| r.loan)
            .sum()
    }

    /// Token holdings per owner and asset.
    pub fn holdings(&self) -> BTreeMap<String, BTreeMap<String, Amount>> {
        let mut out: BTreeMap<String, BTreeMap<String, Amount>> = BTreeMap::new();
        for r in &self.reserves {
            if r.size.is_positive() {
                *out.entry(r.owner.clone())
                    .or_default()
                    .entry(r.asset.clone())
                    .or_default() += r.size;
            }
        }
        out
    }

    /// Collateral target weights renormalised over the non-NST assets.
    pub fn collateral_targets(&self) -> BTreeMap<String, f64> {
        let nst = self.nst();
        let w_nst = self.targets.get(nst).copied().unwrap_or(0.0);
        let rest = 1.0 - w_nst;
        self.collateral_assets()
            .map(|a| {
                let t = self.targets.get(a).copied().unwrap_or(0.0);
                (a.to_owned(), if rest > 0.0 { t / rest } else { 0.0 })
            })
            .collect()
    }

    /// Checks the ledger-level invariants that must hold after every epoch.
    pub fn check_invariants(&self, params: &ProtocolParams) -> Result<(), Vec<String>> {
        let mut out = Vec::new();
        let tol = crate::amount::TOLERANCE;
        if self.reward_pool.is_negative() {
            out.push(format!("reward pool negative: {}", self.reward_pool));
        }
        if self.plan.budget > self.pool_before_distribution {
            out.push(format!(
                "budget {} exceeds pool {}",
                self.plan.budget, self.pool_before_distribution
            ));
        }
        if !self.plan.pools.is_empty() && self.plan.total_distributable() != self.plan.budget {
            out.push(format!(
                "distributable {} differs from budget {}",
                self.plan.total_distributable(),
                self.plan.budget
            ));
        }
        if !self.plan.total_interest().approx_eq(Amount::ZERO, tol) {
            out.push(format!(
                "interest does not net to zero: {}",
                self.plan.total_interest()
            ));
        }
        if self.cumulative_distributed > self.cumulative_sr {
            out.push(format!(
                "lifetime distribution {} exceeds lifetime staking rewards {}",
                self.cumulative_distributed, self.cumulative_sr
            ));
        }
        if self.reward_pool != self.cumulative_sr - self.cumulative_distributed {
            out.push("reward pool does not match lifetime accrual minus distribution".into());
        }
        for q in self.quotes.values() {
            if q.rho < 1.0 || q.rho < params.rho_min - 1e-12 || q.multiplier < 1.0 {
                out.push(format!(
                    "rate below floor for {}: rho {} m {}",
                    q.asset, q.rho, q.multiplier
                ));
            }
        }
        let ceiling = self.metrics.ceiling;
        if self.total_loan() > ceiling.max(Amount::ZERO) && !self.reserves.is_empty() {
            out.push(format!(
                "total loan {} above ceiling {}",
                self.total_loan(),
                ceiling
            ));
        }
        for v in self.validators.values() {
            let c = crate::staking::liveness_ceiling(v, params);
            let l = self.validator_loan(&v.id);
            if l > c {
                out.push(format!(
                    "validator {} loan {} above liveness ceiling {}",
                    v.id, l, c
                ));
            }
        }
        for r in &self.reserves {
            if r.size.is_negative() || r.loan.is_negative() {
                out.push(format!("reserve {} negative", r.id));
            }
        }
        let e_ok = |e: f64| (0.0..=1.0).contains(&e);
        if !self.efficiency.cda.iter().all(|e| e_ok(*e))
            || !self.efficiency.pools.values().flatten().all(|e| e_ok(*e))
        {
            out.push("efficiency outside [0, 1]".into());
        }
        if !e_ok(self.controller.target) {
            out.push("target efficiency outside [0, 1]".into());
        }
        let queued: Amount = self.unstake_queue.iter().map(|t| t.amount).sum();
        if queued != self.protocol_held {
            out.push("unstake queue does not match protocol-held NST".into());
        }
        for t in &self.unstake_queue {
            if t.release_epoch - t.request_epoch != params.unstake_epochs {
                out.push("unstake ticket with wrong period".into());
            }
        }
        let credits = &self.credits;
        for a in credits.accounts.values() {
            if a.balance != a.cap - a.consumed() || a.balance.is_negative() {
                out.push(format!("credit account {} out of balance", a.address));
            }
        }
        let caps: Amount = credits.asset_caps.values().sum();
        if caps > credits.budget || credits.issued > credits.budget {
            out.push("credit caps exceed the round budget".into());
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}
