//! The epoch state transition.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    Deposit, EpochInputs, EpochLedger, PriceBook, ProtocolParams, Rejection, ReserveState,
    SlashRecord, Withdrawal,
};
use crate::amount::Amount;
use crate::collateral::{self, Multiplier, QualificationRule};
use crate::credits::{asset_cap, budget_increment};
use crate::rewards::{self, sigmoid_fraction, split_exact};
use crate::risk::{self, CorrelationMatrix, TargetProblem};
use crate::staking::{self, liveness_ceiling, request_unstake};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("epoch {epoch}: no price for asset `{asset}`")]
    MissingPrice { asset: String, epoch: u64 },
    #[error("epoch {epoch}: unknown validator `{validator}` in slashing input")]
    UnknownValidator { validator: String, epoch: u64 },
    #[error("epoch {epoch}: {source}")]
    Rewards {
        epoch: u64,
        #[source]
        source: rewards::RewardsError,
    },
    #[error("epoch {epoch}: {source}")]
    Staking {
        epoch: u64,
        #[source]
        source: staking::StakingError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Valuation {
    pub reserve: u64,
    pub value: Amount,
    pub under_collateralised: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValuationReport {
    pub reserves: Vec<Valuation>,
    pub total: Amount,
    pub by_asset: BTreeMap<String, Amount>,
}

impl ValuationReport {
    pub fn flagged(&self) -> Vec<u64> {
        self.reserves
            .iter()
            .filter(|v| v.under_collateralised)
            .map(|v| v.reserve)
            .collect()
    }
}

fn price_amount(price: f64) -> Amount {
    Amount::from_f64(price)
}

/// Marks every reserve at `prices`, flagging loans above marked value.
pub fn mark_to_market(
    reserves: &[ReserveState],
    prices: &BTreeMap<String, f64>,
) -> ValuationReport {
    let mut report = ValuationReport::default();
    for r in reserves {
        let price = prices.get(&r.asset).copied().unwrap_or(0.0);
        let value = r.size.mul(price_amount(price));
        report.total += value;
        *report.by_asset.entry(r.asset.clone()).or_default() += value;
        report.reserves.push(Valuation {
            reserve: r.id,
            value,
            under_collateralised: r.loan > value,
        });
    }
    report
}

pub fn advance_epoch(
    ledger: &EpochLedger,
    params: &ProtocolParams,
    market: &PriceBook,
) -> Result<EpochLedger, EngineError> {
    advance_epoch_with(ledger, params, market, &EpochInputs::default())
}

/// Produces the successor ledger. The input ledger is never modified.
///
/// Order: inputs (releases, lock expiries, deposits, credit use), then
/// mark-to-market, requote, slashing, accrual, reward distribution,
/// controller update and credit rollover.
pub fn advance_epoch_with(
    ledger: &EpochLedger,
    params: &ProtocolParams,
    market: &PriceBook,
    inputs: &EpochInputs,
) -> Result<EpochLedger, EngineError> {
    let e = ledger.epoch + 1;
    let mut next = ledger.clone();
    next.epoch = e;
    next.events = Default::default();
    next.metrics = Default::default();
    next.plan = Default::default();
    next.staking_rewards = Amount::ZERO;

    release_matured(&mut next, e);
    close_expired_locks(&mut next, params, e)?;
    for d in &inputs.deposits {
        apply_deposit(&mut next, d, e);
    }
    for c in &inputs.consumption {
        if let Err(err) = next.credits.consume(&c.owner, &c.service, c.amount) {
            next.events.rejected_consumption.push(Rejection {
                owner: c.owner.clone(),
                reason: err.to_string(),
            });
        }
    }

    // 1. mark-to-market
    let prices = collect_prices(&next, market, e)?;
    let valuation = mark_to_market(&next.reserves, &prices);
    next.events.under_collateralised = valuation.flagged();

    // 2. requote
    if e.is_multiple_of(params.retarget_interval) && e as usize >= params.risk_lookback {
        retarget(&mut next, params, market, e);
    }
    requote(&mut next, params, &prices, &valuation, e)?;

    // 3. slashing
    slash_validators(&mut next, params, &prices, inputs, e)?;

    // 4. accrual
    let sr = staking::accrue_staking_rewards(next.total_loan(), e, params);
    next.staking_rewards = sr;
    next.reward_pool += sr;
    next.cumulative_sr += sr;
    next.pool_before_distribution = next.reward_pool;

    // 5. reward plan and distribution
    record_efficiency(&mut next, market, &prices, e);
    distribute(&mut next, params, e)?;

    // 6. controller
    let short = rewards::window_derivatives(&next.efficiency.cda, params.m_win)
        .map_err(|source| EngineError::Rewards { epoch: e, source })?;
    let long = rewards::window_derivatives(&next.efficiency.cda, params.n_win)
        .map_err(|source| EngineError::Rewards { epoch: e, source })?;
    let update = rewards::controller_update(next.controller, short, long, params);
    next.controller = update.state;
    next.events.controller = Some(update.decision);

    // 7. credit rollover
    if e.is_multiple_of(params.round_len) {
        let caps = next
            .collateral_assets()
            .map(|a| {
                let price = prices.get(a).copied().unwrap_or(0.0);
                (
                    a.to_owned(),
                    asset_cap(next.pool_size(a), price, params.gamma_for(a)),
                )
            })
            .filter(|(_, c)| c.is_positive())
            .collect();
        let increment = budget_increment(
            next.credits.round + 1,
            params.credit_budget_initial,
            params.credit_budget_decay,
        );
        let holdings = next.holdings();
        next.credits.rollover(e, increment, caps, &holdings);
    }

    release_matured(&mut next, e);
    record_metrics(&mut next, ledger, params, market, &prices, e);
    Ok(next)
}

fn release_matured(next: &mut EpochLedger, e: u64) {
    let (due, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut next.unstake_queue)
        .into_iter()
        .partition(|t| t.release_epoch <= e);
    for t in due {
        next.protocol_held -= t.amount;
        next.released += t.amount;
    }
    next.unstake_queue = keep;
}

fn curtail(
    next: &mut EpochLedger,
    params: &ProtocolParams,
    amount: Amount,
    e: u64,
) -> Result<(), EngineError> {
    if !amount.is_positive() {
        return Ok(());
    }
    next.protocol_held += amount;
    let ticket = request_unstake(amount, e, next.protocol_held, params)
        .map_err(|source| EngineError::Staking { epoch: e, source })?;
    next.unstake_queue.push(ticket);
    next.events.curtailed += amount;
    Ok(())
}

fn set_loan(
    next: &mut EpochLedger,
    params: &ProtocolParams,
    idx: usize,
    loan: Amount,
    e: u64,
) -> Result<(), EngineError> {
    let prev = next.reserves[idx].loan;
    next.reserves[idx].loan = loan;
    if loan < prev {
        curtail(next, params, prev - loan, e)?;
    }
    Ok(())
}

fn close_expired_locks(
    next: &mut EpochLedger,
    params: &ProtocolParams,
    e: u64,
) -> Result<(), EngineError> {
    let (expired, kept): (Vec<_>, Vec<_>) = std::mem::take(&mut next.reserves)
        .into_iter()
        .partition(|r| r.lock_expired(e));
    next.reserves = kept;
    for r in expired {
        curtail(next, params, r.loan, e)?;
        next.events.withdrawals.push(Withdrawal {
            reserve: r.id,
            owner: r.owner,
            asset: r.asset,
            size: r.size,
        });
    }
    Ok(())
}

fn apply_deposit(next: &mut EpochLedger, d: &Deposit, e: u64) {
    let reject = |reason: &str| Rejection {
        owner: d.owner.clone(),
        reason: reason.to_owned(),
    };
    let asset = next.assets.iter().find(|a| a.symbol == d.asset);
    let rejection = match (asset, next.validators.get(&d.validator)) {
        (None, _) => Some(reject(&format!("unknown asset `{}`", d.asset))),
        (Some(a), _) if a.is_nst => Some(reject("the NST cannot be posted as collateral")),
        (_, None) => Some(reject(&format!("unknown validator `{}`", d.validator))),
        (_, Some(v)) if !v.active => {
            Some(reject(&format!("validator `{}` is inactive", d.validator)))
        }
        _ if !d.size.is_positive() => Some(reject("deposit size must be positive")),
        _ => None,
    };
    if let Some(r) = rejection {
        next.events.rejected_deposits.push(r);
        return;
    }
    next.reserves.push(ReserveState {
        id: next.next_reserve_id,
        owner: d.owner.clone(),
        asset: d.asset.clone(),
        validator: d.validator.clone(),
        size: d.size,
        loan: Amount::ZERO,
        lock_start: e,
        lock_len: d.lock_len,
    });
    next.next_reserve_id += 1;
}

fn collect_prices(
    next: &EpochLedger,
    market: &PriceBook,
    e: u64,
) -> Result<BTreeMap<String, f64>, EngineError> {
    let mut prices = BTreeMap::new();
    for a in &next.assets {
        match market.price(&a.symbol, e) {
            Some(p) => {
                prices.insert(a.symbol.clone(), p);
            }
            None if next
                .reserves
                .iter()
                .any(|r| r.asset == a.symbol && !r.size.is_zero()) =>
            {
                return Err(EngineError::MissingPrice {
                    asset: a.symbol.clone(),
                    epoch: e,
                });
            }
            None => {}
        }
    }
    Ok(prices)
}

/// Re-solves target weights from the lookback window. Keeps the previous
/// targets when history is incomplete or the problem is infeasible.
fn retarget(next: &mut EpochLedger, params: &ProtocolParams, market: &PriceBook, e: u64) {
    let len = params.risk_lookback + 1;
    let mut paths = Vec::new();
    for a in &next.assets {
        match market.reference_history(&a.symbol, e, len) {
            Some(p) if p.iter().all(|x| *x > 0.0) => paths.push(p),
            _ => {
                next.events.retarget =
                    Some(format!("skipped: incomplete history for `{}`", a.symbol));
                return;
            }
        }
    }
    let refs: Vec<&[f64]> = paths.iter().map(Vec::as_slice).collect();
    let window = match risk::ReturnWindow::from_prices(&refs) {
        Ok(w) => w,
        Err(err) => {
            next.events.retarget = Some(format!("skipped: {err}"));
            return;
        }
    };
    let Ok(vols) = window.volatilities() else {
        next.events.retarget = Some("skipped: volatility undefined".into());
        return;
    };
    let rules = [
        QualificationRule::MinLiquidity(params.min_volume),
        QualificationRule::MaxVolatility(params.sigma_ceiling),
    ];
    let admissible: Vec<bool> = next
        .assets
        .iter()
        .map(|a| {
            a.is_nst
                || collateral::qualify_asset(
                    &a.symbol,
                    market,
                    &rules,
                    e,
                    params.risk_lookback,
                    params.wash_price_tol,
                    params.wash_window,
                )
                .admissible
        })
        .collect();
    let nst_index = next.assets.iter().position(|a| a.is_nst).unwrap_or(0);
    let samples = window.samples();
    let problem = TargetProblem::new(vols, window.correlation, nst_index, params)
        .with_admissible(admissible)
        .with_samples(samples);
    match risk::target_weights(&problem) {
        Ok(tw) => {
            next.targets = next
                .assets
                .iter()
                .zip(&tw.weights)
                .map(|(a, w)| (a.symbol.clone(), *w))
                .collect();
            next.events.retarget = Some("updated".into());
        }
        Err(err) => next.events.retarget = Some(format!("kept previous targets: {err}")),
    }
}

fn requote(
    next: &mut EpochLedger,
    params: &ProtocolParams,
    prices: &BTreeMap<String, f64>,
    valuation: &super::ValuationReport,
    e: u64,
) -> Result<(), EngineError> {
    let targets = next.collateral_targets();
    let total_value = valuation.total;
    let mut quotes = BTreeMap::new();
    for (asset, target) in &targets {
        let value = valuation
            .by_asset
            .get(asset)
            .copied()
            .unwrap_or(Amount::ZERO);
        let weight = value.ratio(total_value).unwrap_or(0.0).clamp(0.0, 1.0);
        if let Ok(q) = collateral::collateral_rate(asset, weight, *target, params) {
            quotes.insert(asset.clone(), q);
        }
    }
    let implied: Vec<Amount> = next
        .reserves
        .iter()
        .map(|r| {
            let active = next.validators.get(&r.validator).is_some_and(|v| v.active);
            match (quotes.get(&r.asset), prices.get(&r.asset)) {
                (Some(q), Some(p)) if active => collateral::implied_loan(r.size, *p, q.rho),
                _ => Amount::ZERO,
            }
        })
        .collect();
    let ceiling = collateral::borrow_ceiling(next.total_direct_stake, Amount::ZERO, params).ceiling;
    let (multiplier, targets_loan) = collateral::scaled_loans(&implied, ceiling);
    let m = match multiplier {
        Multiplier::Scale(m) => m,
        Multiplier::CurtailAll => {
            next.events.curtail_all = true;
            1.0
        }
    };
    for q in quotes.values_mut() {
        q.multiplier = m;
    }
    next.quotes = quotes;
    next.multiplier = m;

    let extend = e.is_multiple_of(params.extension_interval);
    for (idx, target) in targets_loan.into_iter().enumerate() {
        let current = next.reserves[idx].loan;
        if target < current || (target > current && extend) {
            set_loan(next, params, idx, target, e)?;
        }
    }
    enforce_liveness(next, params, e)
}

fn enforce_liveness(
    next: &mut EpochLedger,
    params: &ProtocolParams,
    e: u64,
) -> Result<(), EngineError> {
    let ids: Vec<String> = next.validators.keys().cloned().collect();
    for id in ids {
        let cap = liveness_ceiling(&next.validators[&id], params);
        let loan = next.validator_loan(&id);
        if loan <= cap {
            continue;
        }
        for idx in 0..next.reserves.len() {
            if next.reserves[idx].validator == id {
                let scaled = next.reserves[idx]
                    .loan
                    .mul_div(cap, loan)
                    .unwrap_or(Amount::ZERO);
                set_loan(next, params, idx, scaled, e)?;
            }
        }
    }
    Ok(())
}

fn enforce_ceiling(
    next: &mut EpochLedger,
    params: &ProtocolParams,
    e: u64,
) -> Result<(), EngineError> {
    let ceiling = collateral::borrow_ceiling(next.total_direct_stake, Amount::ZERO, params).ceiling;
    let total = next.total_loan();
    if total <= ceiling {
        return Ok(());
    }
    for idx in 0..next.reserves.len() {
        let scaled = next.reserves[idx]
            .loan
            .mul_div(ceiling, total)
            .unwrap_or(Amount::ZERO);
        set_loan(next, params, idx, scaled, e)?;
    }
    Ok(())
}

fn slash_validators(
    next: &mut EpochLedger,
    params: &ProtocolParams,
    prices: &BTreeMap<String, f64>,
    inputs: &EpochInputs,
    e: u64,
) -> Result<(), EngineError> {
    let targets: BTreeSet<&String> = inputs.slashes.iter().collect();
    for id in targets {
        if !next.validators.contains_key(id) {
            return Err(EngineError::UnknownValidator {
                validator: id.clone(),
                epoch: e,
            });
        }
        let idxs: Vec<usize> = (0..next.reserves.len())
            .filter(|&i| next.reserves[i].validator == *id)
            .collect();
        let mapped: Vec<ReserveState> = idxs.iter().map(|&i| next.reserves[i].clone()).collect();
        let outcome = staking::slash(&mapped, prices, params.varpi)
            .map_err(|source| EngineError::Staking { epoch: e, source })?;
        for (&i, r) in idxs.iter().zip(outcome.reserves) {
            next.reserves[i] = r;
        }
        let validator = next.validators.get_mut(id).expect("checked above");
        let direct_cut = validator.direct_stake.mul_f64(params.varpi);
        validator.direct_stake -= direct_cut;
        next.slashed_total += outcome.slashed;
        next.events.slashes.push(SlashRecord {
            validator: id.clone(),
            loan_slashed: outcome.slashed,
            value_removed: outcome.value_removed,
            direct_slashed: direct_cut,
            shortfall: outcome.shortfall,
        });
    }
    next.total_direct_stake = next.validators.values().map(|v| v.direct_stake).sum();

    let ids: Vec<String> = next.validators.keys().cloned().collect();
    for id in ids {
        let v = &next.validators[&id];
        if v.active && v.direct_stake + next.validator_loan(&id) < v.min_stake_req {
            next.validators.get_mut(&id).expect("present").active = false;
            next.events.ejections.push(id.clone());
            for idx in 0..next.reserves.len() {
                if next.reserves[idx].validator == id {
                    set_loan(next, params, idx, Amount::ZERO, e)?;
                }
            }
        }
    }
    enforce_liveness(next, params, e)?;
    enforce_ceiling(next, params, e)
}

fn record_efficiency(
    next: &mut EpochLedger,
    market: &PriceBook,
    prices: &BTreeMap<String, f64>,
    e: u64,
) {
    let mut deposited_total = Amount::ZERO;
    let mut available_total = Amount::ZERO;
    let assets: Vec<String> = next.collateral_assets().map(str::to_owned).collect();
    for asset in assets {
        let price = prices.get(&asset).copied().unwrap_or(0.0);
        let deposited = next.pool_size(&asset).mul(price_amount(price));
        if !deposited.is_positive() {
            continue;
        }
        let used = deposited.mul_f64(market.utilisation(&asset, e));
        let available = deposited - used;
        let eff = rewards::capital_efficiency(available, deposited).unwrap_or(0.0);
        next.efficiency
            .pools
            .entry(asset.clone())
            .or_default()
            .push(eff);
        next.metrics.pool_efficiency.insert(asset, eff);
        deposited_total += deposited;
        available_total += available;
    }
    if let Ok(eff) = rewards::capital_efficiency(available_total, deposited_total) {
        next.efficiency.cda.push(eff);
        next.metrics.efficiency = Some(eff);
    }
}

fn distribute(next: &mut EpochLedger, params: &ProtocolParams, e: u64) -> Result<(), EngineError> {
    let loan = next.total_loan();
    if !loan.is_positive() {
        return Ok(());
    }
    let target = next.controller.target;
    let eff_ma = next.efficiency.cda_ma(params.m_win).unwrap_or(target);
    let budget =
        rewards::epoch_reward_budget(loan, params.srr, eff_ma, target, next.reward_pool, params);

    let pools: Vec<(String, Amount, f64)> = next
        .collateral_assets()
        .map(|a| (a.to_owned(), next.pool_loan(a)))
        .filter(|(_, l)| l.is_positive())
        .map(|(a, l)| {
            let eff = next.efficiency.pool_ma(&a, params.m_win).unwrap_or(0.0);
            (a, l, eff)
        })
        .collect();
    let eff_max = pools.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let eff_min = pools.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let mut weighted = Vec::with_capacity(pools.len());
    for (asset, l, eff) in pools {
        let w = rewards::pool_weight(eff, eff_max, eff_min, params)
            .map_err(|source| EngineError::Rewards { epoch: e, source })?;
        weighted.push((asset, l, w));
    }
    let plan = rewards::allocate_rewards(&weighted, budget)
        .map_err(|source| EngineError::Rewards { epoch: e, source })?;

    for pool in &plan.pools {
        let idxs: Vec<usize> = (0..next.reserves.len())
            .filter(|&i| {
                next.reserves[i].asset == pool.asset && next.reserves[i].loan.is_positive()
            })
            .collect();
        let weights: Vec<Amount> = idxs
            .iter()
            .map(|&i| {
                let r = &next.reserves[i];
                let tenure = sigmoid_fraction(r.lock_len as f64, params.k, params.e_mid, params.nu);
                let factor = params.lock_min_fraction + (1.0 - params.lock_min_fraction) * tenure;
                r.loan.mul_f64(factor)
            })
            .collect();
        let shares = if weights.iter().any(|w| w.is_positive()) {
            split_exact(pool.distributable, &weights)
        } else {
            split_exact(
                pool.distributable,
                &idxs
                    .iter()
                    .map(|&i| next.reserves[i].loan)
                    .collect::<Vec<_>>(),
            )
        };
        for (&i, share) in idxs.iter().zip(shares) {
            let owner = next.reserves[i].owner.clone();
            *next.reward_balances.entry(owner).or_default() += share;
        }
    }
    next.reward_pool -= plan.budget;
    next.cumulative_distributed += plan.budget;
    next.plan = plan;
    Ok(())
}

fn record_metrics(
    next: &mut EpochLedger,
    prev: &EpochLedger,
    params: &ProtocolParams,
    market: &PriceBook,
    prices: &BTreeMap<String, f64>,
    e: u64,
) {
    let valuation = mark_to_market(&next.reserves, prices);
    next.metrics.collateral_value = valuation.total;

    let mut traded = 0.0;
    for a in &next.assets {
        let tape = market.tape(&a.symbol, e);
        let flagged = risk::detect_wash_trades(tape, params.wash_price_tol, params.wash_window);
        let mut washed = vec![false; tape.len()];
        for p in &flagged {
            washed[p.first] = true;
            washed[p.second] = true;
        }
        traded += tape
            .iter()
            .zip(&washed)
            .filter(|(_, w)| !**w)
            .map(|(t, _)| t.volume.abs() * t.price)
            .sum::<f64>();
        if !flagged.is_empty() {
            next.events
                .wash_flags
                .insert(a.symbol.clone(), flagged.len());
        }
    }
    next.metrics.transaction_value = traded;

    let held: Vec<(String, f64)> = valuation
        .by_asset
        .iter()
        .filter(|(_, v)| v.is_positive())
        .map(|(a, v)| (a.clone(), v.ratio(valuation.total).unwrap_or(0.0)))
        .collect();
    let len = params.risk_lookback + 1;
    let histories: Option<Vec<Vec<f64>>> = held
        .iter()
        .map(|(a, _)| market.history(a, e, len))
        .collect();
    if let Some(histories) = histories.filter(|h| !h.is_empty()) {
        let returns: Vec<Vec<f64>> = histories.iter().map(|p| risk::log_returns(p)).collect();
        let vols: Option<Vec<f64>> = returns
            .iter()
            .map(|r| risk::realized_volatility(r).ok())
            .collect();
        if let (Some(vols), Ok(corr)) = (vols, CorrelationMatrix::from_returns(&returns)) {
            let weights: Vec<f64> = held.iter().map(|(_, w)| *w).collect();
            next.metrics.basket_variance =
                risk::portfolio_variance(&weights, &vols, &corr).unwrap_or(0.0);
        }
        for ((asset, _), r) in held.iter().zip(&returns) {
            if let Ok(es) = risk::expected_shortfall(r, params.ci) {
                next.metrics.pool_risk.insert(asset.clone(), es);
            }
        }
    }

    let prev_prices: BTreeMap<String, f64> = prev
        .assets
        .iter()
        .filter_map(|a| {
            market
                .price(&a.symbol, prev.epoch)
                .map(|p| (a.symbol.clone(), p))
        })
        .collect();
    let prev_val = mark_to_market(&prev.reserves, &prev_prices);
    if prev_val.total.is_positive() {
        let ret: f64 = prev_val
            .by_asset
            .iter()
            .filter_map(|(a, v)| {
                let p0 = prev_prices.get(a)?;
                let p1 = prices.get(a)?;
                Some(v.ratio(prev_val.total)? * (p1 / p0 - 1.0))
            })
            .sum();
        next.metrics.collateral_return = Some(ret);
    }

    let ceiling = collateral::borrow_ceiling(next.total_direct_stake, next.total_loan(), params);
    next.metrics.ceiling = ceiling.ceiling;
    next.metrics.w_nst = ceiling.w_nst;
    let ratio =
        collateral::stake_ratio_check(valuation.total, next.total_direct_stake, params.t_ratio);
    next.metrics.stake_ratio = ratio.ratio;
    next.metrics.stake_ratio_ok = ratio.pass;
}
