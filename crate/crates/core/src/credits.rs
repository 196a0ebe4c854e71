//! Service-fee credits: per-round caps, per-account balances, consumption,
//! rollover and the global credit budget.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::amount::Amount;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CreditError {
    #[error("consumption of {requested} exceeds balance {balance}")]
    Overdraft { requested: Amount, balance: Amount },
    #[error("negative consumption {0}")]
    NegativeAmount(Amount),
    #[error("share {share} of reserve `{reserve}` outside [0, 1]")]
    InvalidShare { reserve: String, share: f64 },
    #[error("shares of reserve `{reserve}` sum to {total} > 1")]
    ShareOverflow { reserve: String, total: f64 },
    #[error("unknown account `{0}`")]
    UnknownAccount(String),
}

pub type Result<T> = std::result::Result<T, CreditError>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CreditAccount {
    pub address: String,
    pub cap: Amount,
    pub balance: Amount,
    pub usage: BTreeMap<String, Amount>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rollover {
    /// `cap − end balance`: what the new round replenishes.
    pub replenishment: Amount,
    /// Unused credits that lapsed.
    pub expired: Amount,
    pub consumed: Amount,
}

impl CreditAccount {
    pub fn new(address: impl Into<String>, cap: Amount) -> Self {
        CreditAccount {
            address: address.into(),
            cap,
            balance: cap,
            usage: BTreeMap::new(),
        }
    }

    pub fn consumed(&self) -> Amount {
        self.usage.values().sum()
    }

    /// Spends `amount` on `service`. Overdrafts leave the account untouched.
    pub fn consume(&mut self, service: &str, amount: Amount) -> Result<()> {
        if amount.is_negative() {
            return Err(CreditError::NegativeAmount(amount));
        }
        if amount > self.balance {
            return Err(CreditError::Overdraft {
                requested: amount,
                balance: self.balance,
            });
        }
        if amount.is_zero() {
            return Ok(());
        }
        self.balance -= amount;
        *self.usage.entry(service.to_owned()).or_default() += amount;
        Ok(())
    }

    /// Closes the round: unused credits expire and the balance resets to
    /// `new_cap`.
    pub fn rollover(&mut self, new_cap: Amount) -> Rollover {
        let out = Rollover {
            replenishment: self.cap - self.balance,
            expired: self.balance,
            consumed: self.consumed(),
        };
        self.cap = new_cap;
        self.balance = new_cap;
        self.usage.clear();
        out
    }
}

/// `S·P·γ`.
pub fn asset_cap(size: Amount, price: f64, gamma: f64) -> Amount {
    size.mul_f64(price).mul_f64(gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareEntry {
    pub reserve: String,
    pub share: f64,
}

/// `Σ s·𝒞` over an account's reserve shares.
pub fn account_cap(shares: &[ShareEntry], caps: &BTreeMap<String, Amount>) -> Result<Amount> {
    let mut total = Amount::ZERO;
    for entry in shares {
        if !(0.0..=1.0).contains(&entry.share) {
            return Err(CreditError::InvalidShare {
                reserve: entry.reserve.clone(),
                share: entry.share,
            });
        }
        let cap = caps.get(&entry.reserve).copied().unwrap_or(Amount::ZERO);
        total += cap.mul_f64(entry.share);
    }
    Ok(total)
}

/// Account caps for a whole share table, checking that no reserve is
/// over-allocated.
pub fn account_caps(
    shares: &BTreeMap<String, Vec<ShareEntry>>,
    caps: &BTreeMap<String, Amount>,
) -> Result<BTreeMap<String, Amount>> {
    let mut per_reserve: BTreeMap<&str, f64> = BTreeMap::new();
    for entries in shares.values() {
        for e in entries {
            *per_reserve.entry(&e.reserve).or_default() += e.share;
        }
    }
    if let Some((reserve, total)) = per_reserve.iter().find(|(_, t)| **t > 1.0 + 1e-12) {
        return Err(CreditError::ShareOverflow {
            reserve: (*reserve).to_owned(),
            total: *total,
        });
    }
    shares
        .iter()
        .map(|(addr, entries)| Ok((addr.clone(), account_cap(entries, caps)?)))
        .collect()
}

/// Exact account caps from token holdings: each owner receives
/// `cap_asset · holding / Σ holdings` per asset.
pub fn account_caps_from_holdings(
    holdings: &BTreeMap<String, BTreeMap<String, Amount>>,
    caps: &BTreeMap<String, Amount>,
) -> BTreeMap<String, Amount> {
    let mut totals: BTreeMap<&str, Amount> = BTreeMap::new();
    for assets in holdings.values() {
        for (asset, size) in assets {
            *totals.entry(asset).or_default() += *size;
        }
    }
    holdings
        .iter()
        .map(|(owner, assets)| {
            let cap = assets
                .iter()
                .map(|(asset, size)| {
                    let total = totals[asset.as_str()];
                    let asset_cap = caps.get(asset).copied().unwrap_or(Amount::ZERO);
                    asset_cap.mul_div(*size, total).unwrap_or(Amount::ZERO)
                })
                .sum();
            (owner.clone(), cap)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetStep {
    pub budget: Amount,
    pub deficit: Amount,
}

/// `B_ℛ = B_{ℛ−1} + ΔB_ℛ − Σ𝒞_{ℛ−1}`, floored at zero with the deficit
/// reported.
pub fn credit_budget(prev: Amount, delta: Amount, issued: Amount) -> BudgetStep {
    let raw = prev + delta - issued;
    if raw.is_negative() {
        BudgetStep {
            budget: Amount::ZERO,
            deficit: -raw,
        }
    } else {
        BudgetStep {
            budget: raw,
            deficit: Amount::ZERO,
        }
    }
}

/// Budget increment for round `round` (1-based): geometric decay.
pub fn budget_increment(round: u64, initial: Amount, decay: f64) -> Amount {
    let exponent = round.saturating_sub(1).min(i32::MAX as u64) as i32;
    initial.mul_f64(decay.powi(exponent))
}

/// Scales caps down proportionally so their total fits `budget`.
pub fn scale_caps(caps: &BTreeMap<String, Amount>, budget: Amount) -> BTreeMap<String, Amount> {
    let total: Amount = caps.values().sum();
    if total <= budget {
        return caps.clone();
    }
    caps.iter()
        .map(|(k, c)| (k.clone(), c.mul_div(budget, total).unwrap_or(Amount::ZERO)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u64,
    pub start_epoch: u64,
    pub budget: Amount,
    pub increment: Amount,
    pub issued: Amount,
    pub consumed: Amount,
    pub expired: Amount,
    pub deficit: Amount,
}

/// Credit state carried by the ledger.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CreditState {
    pub round: u64,
    pub round_start: u64,
    pub budget: Amount,
    pub increment: Amount,
    /// Σ account caps issued this round.
    pub issued: Amount,
    pub deficit: Amount,
    pub asset_caps: BTreeMap<String, Amount>,
    pub accounts: BTreeMap<String, CreditAccount>,
    /// Closed rounds.
    pub history: Vec<RoundSummary>,
}

impl CreditState {
    /// Opens round 1 from a zero prior budget.
    pub fn genesis(
        epoch: u64,
        increment: Amount,
        raw_asset_caps: BTreeMap<String, Amount>,
        holdings: &BTreeMap<String, BTreeMap<String, Amount>>,
    ) -> Self {
        let mut state = CreditState::default();
        let step = credit_budget(Amount::ZERO, increment, Amount::ZERO);
        state.open(1, epoch, step, increment, raw_asset_caps, holdings);
        state
    }

    fn open(
        &mut self,
        round: u64,
        epoch: u64,
        step: BudgetStep,
        increment: Amount,
        raw_asset_caps: BTreeMap<String, Amount>,
        holdings: &BTreeMap<String, BTreeMap<String, Amount>>,
    ) {
        self.round = round;
        self.round_start = epoch;
        self.budget = step.budget;
        self.increment = increment;
        self.deficit = step.deficit;
        self.asset_caps = scale_caps(&raw_asset_caps, step.budget);
        let caps = account_caps_from_holdings(holdings, &self.asset_caps);
        for (owner, cap) in &caps {
            self.accounts
                .entry(owner.clone())
                .or_insert_with(|| CreditAccount::new(owner.clone(), Amount::ZERO))
                .rollover(*cap);
        }
        for (owner, account) in self.accounts.iter_mut() {
            if !caps.contains_key(owner) {
                account.rollover(Amount::ZERO);
            }
        }
        self.issued = self.accounts.values().map(|a| a.cap).sum();
    }

    /// Closes the current round and opens the next one.
    pub fn rollover(
        &mut self,
        epoch: u64,
        increment: Amount,
        raw_asset_caps: BTreeMap<String, Amount>,
        holdings: &BTreeMap<String, BTreeMap<String, Amount>>,
    ) -> RoundSummary {
        let summary = RoundSummary {
            round: self.round,
            start_epoch: self.round_start,
            budget: self.budget,
            increment: self.increment,
            issued: self.issued,
            consumed: self.accounts.values().map(CreditAccount::consumed).sum(),
            expired: self.accounts.values().map(|a| a.balance).sum(),
            deficit: self.deficit,
        };
        let step = credit_budget(self.budget, increment, self.issued);
        self.open(
            self.round + 1,
            epoch,
            step,
            increment,
            raw_asset_caps,
            holdings,
        );
        self.history.push(summary.clone());
        summary
    }

    pub fn consume(&mut self, address: &str, service: &str, amount: Amount) -> Result<()> {
        self.accounts
            .get_mut(address)
            .ok_or_else(|| CreditError::UnknownAccount(address.to_owned()))?
            .consume(service, amount)
    }
}
