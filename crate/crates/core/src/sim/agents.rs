use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::rewards::{present_value, sigmoid_fraction, split_exact};
use crate::staking::liveness_ceiling;
use crate::state::{Deposit, EpochLedger, PriceBook, ProtocolParams};

/// A liquidity provider holding idle capital (in NST value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: String,
    pub capital: Amount,
    /// Longest lock the agent accepts.
    pub max_lock: u64,
    pub discount_rate: f64,
}

/// Relative reward weight of a reserve locked for `lock_len` epochs.
pub fn tenure_factor(lock_len: u64, params: &ProtocolParams) -> f64 {
    let tenure = sigmoid_fraction(lock_len as f64, params.k, params.e_mid, params.nu);
    params.lock_min_fraction + (1.0 - params.lock_min_fraction) * tenure
}

/// Lock from `menu` (up to `max_lock`) with the highest present value of
/// its incentive stream. Ties go to the shorter lock.
pub fn choose_lock(
    menu: &[u64],
    max_lock: u64,
    incentive: impl Fn(u64) -> f64,
    rate: impl Fn(f64) -> f64,
) -> Option<u64> {
    let mut best: Option<(u64, f64)> = None;
    for &len in menu.iter().filter(|l| **l <= max_lock) {
        let level = incentive(len);
        let Ok(pv) = present_value(|_| level, &rate, len as f64) else {
            continue;
        };
        match best {
            Some((b_len, b_pv)) if pv < b_pv || (pv == b_pv && len >= b_len) => {}
            _ => best = Some((len, pv)),
        }
    }
    best.map(|(len, _)| len)
}

/// Splits `capital` across pools in proportion to their weights.
pub fn split_capital(capital: Amount, weights: &[(String, f64)]) -> Vec<(String, Amount)> {
    let parts: Vec<Amount> = weights
        .iter()
        .map(|(_, w)| Amount::from_f64(w.max(0.0)))
        .collect();
    weights
        .iter()
        .zip(split_exact(capital, &parts))
        .map(|((a, _), x)| (a.clone(), x))
        .filter(|(_, x)| x.is_positive())
        .collect()
}

/// Active validator with the most liveness headroom.
pub fn pick_validator(ledger: &EpochLedger, params: &ProtocolParams) -> Option<String> {
    ledger
        .validators
        .values()
        .filter(|v| v.active)
        .map(|v| {
            (
                liveness_ceiling(v, params) - ledger.validator_loan(&v.id),
                &v.id,
            )
        })
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(a.1)))
        .map(|(_, id)| id.clone())
}

/// Current lending-fee weights of admissible pools. Pools without a loan
/// this epoch get the top weight.
pub fn pool_weights(
    ledger: &EpochLedger,
    params: &ProtocolParams,
    market: &PriceBook,
) -> Vec<(String, f64)> {
    let top = params.w_floor * (1.0 + params.g_factor);
    ledger
        .collateral_targets()
        .into_iter()
        .filter(|(a, t)| *t > 0.0 && market.price(a, ledger.epoch).is_some())
        .map(|(a, _)| {
            let w = ledger.plan.pool(&a).map_or(top, |p| p.weight);
            (a, w)
        })
        .collect()
}

/// Deposits an idle agent makes after observing `ledger`: pick the lock
/// with the best present value, split capital by pool weight, delegate to
/// the validator with the most headroom.
pub fn agent_step(
    agent: &Agent,
    ledger: &EpochLedger,
    params: &ProtocolParams,
    market: &PriceBook,
    menu: &[u64],
) -> Vec<Deposit> {
    if !agent.capital.is_positive() {
        return Vec::new();
    }
    let Some(lock_len) = choose_lock(
        menu,
        agent.max_lock,
        |l| tenure_factor(l, params),
        |_| agent.discount_rate,
    ) else {
        return Vec::new();
    };
    let Some(validator) = pick_validator(ledger, params) else {
        return Vec::new();
    };
    let weights = pool_weights(ledger, params, market);
    split_capital(agent.capital, &weights)
        .into_iter()
        .filter_map(|(asset, value)| {
            let price = market.price(&asset, ledger.epoch)?;
            let size = value.mul_div(Amount::ONE, Amount::from_f64(price))?;
            size.is_positive().then(|| Deposit {
                owner: agent.id.clone(),
                asset,
                validator: validator.clone(),
                size,
                lock_len,
            })
        })
        .collect()
}
