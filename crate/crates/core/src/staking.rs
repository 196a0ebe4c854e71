//! Validators, slashing, liveness ceilings, the unstaking queue and
//! staking-reward accrual.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::rewards::split_exact;
use crate::state::{EpochLedger, ProtocolParams, ReserveState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StakingError {
    #[error("slashing rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("no positive price for asset `{0}`")]
    MissingPrice(String),
    #[error("unstake of {requested} exceeds protocol-held {available}")]
    OverWithdrawal {
        requested: Amount,
        available: Amount,
    },
    #[error("negative unstake amount {0}")]
    NegativeAmount(Amount),
}

pub type Result<T> = std::result::Result<T, StakingError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validator {
    pub id: String,
    pub direct_stake: Amount,
    pub min_stake_req: Amount,
    pub active: bool,
}

impl Validator {
    pub fn new(id: impl Into<String>, direct_stake: Amount, min_stake_req: Amount) -> Self {
        Validator {
            id: id.into(),
            direct_stake,
            min_stake_req,
            active: direct_stake >= min_stake_req,
        }
    }
}

/// `max(0, factor·(direct − min))`; zero for inactive validators.
pub fn liveness_ceiling(validator: &Validator, params: &ProtocolParams) -> Amount {
    if !validator.active {
        return Amount::ZERO;
    }
    (validator.direct_stake - validator.min_stake_req)
        .mul_f64(params.liveness_factor)
        .max(Amount::ZERO)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlashOutcome {
    pub reserves: Vec<ReserveState>,
    pub loan_before: Amount,
    pub loan_after: Amount,
    /// `L·ϖ`, the NST value to be removed from collateral.
    pub slashed: Amount,
    /// Marked value actually removed from reserves.
    pub value_removed: Amount,
    /// Tokens removed, per reserve id.
    pub tokens_removed: BTreeMap<u64, Amount>,
    /// Slashed value the reserves could not cover.
    pub shortfall: Amount,
}

/// Slashes one validator's reserves at rate `varpi`.
///
/// Each loan drops to `L(1 − ϖ)`. The slashed amount is taken from the
/// reserves in proportion to their marked value and converted to tokens at
/// each reserve's price.
pub fn slash(
    reserves: &[ReserveState],
    prices: &BTreeMap<String, f64>,
    varpi: f64,
) -> Result<SlashOutcome> {
    if !(0.0..=1.0).contains(&varpi) {
        return Err(StakingError::InvalidRate(varpi));
    }
    let mut price_amt = Vec::with_capacity(reserves.len());
    for r in reserves {
        match prices.get(&r.asset) {
            Some(p) if *p > 0.0 && p.is_finite() => price_amt.push(Amount::from_f64(*p)),
            _ => return Err(StakingError::MissingPrice(r.asset.clone())),
        }
    }
    let rate = Amount::from_f64(varpi);
    let mut out = reserves.to_vec();
    let loan_before: Amount = reserves.iter().map(|r| r.loan).sum();
    let mut slashed = Amount::ZERO;
    for r in &mut out {
        let cut = r.loan.mul(rate);
        r.loan -= cut;
        slashed += cut;
    }
    let values: Vec<Amount> = reserves
        .iter()
        .zip(&price_amt)
        .map(|(r, p)| r.size.mul(*p))
        .collect();
    let total_value: Amount = values.iter().sum();
    let mut tokens_removed = BTreeMap::new();
    let mut value_removed = Amount::ZERO;
    let mut shortfall = Amount::ZERO;

    if slashed >= total_value {
        for (r, v) in out.iter_mut().zip(&values) {
            tokens_removed.insert(r.id, r.size);
            value_removed += *v;
            r.size = Amount::ZERO;
        }
        shortfall = slashed - total_value;
    } else if slashed.is_positive() {
        let shares = split_exact(slashed, &values);
        for ((r, share), p) in out.iter_mut().zip(shares).zip(&price_amt) {
            let tokens = share
                .mul_div(Amount::ONE, *p)
                .unwrap_or(Amount::ZERO)
                .min(r.size);
            r.size -= tokens;
            value_removed += tokens.mul(*p);
            tokens_removed.insert(r.id, tokens);
        }
    }
    let loan_after = out.iter().map(|r| r.loan).sum();
    Ok(SlashOutcome {
        reserves: out,
        loan_before,
        loan_after,
        slashed,
        value_removed,
        tokens_removed,
        shortfall,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnstakeTicket {
    pub amount: Amount,
    pub request_epoch: u64,
    pub release_epoch: u64,
}

/// Queues `amount` of protocol-held NST for release after the unstaking
/// period.
pub fn request_unstake(
    amount: Amount,
    epoch: u64,
    available: Amount,
    params: &ProtocolParams,
) -> Result<UnstakeTicket> {
    if amount.is_negative() {
        return Err(StakingError::NegativeAmount(amount));
    }
    if amount > available {
        return Err(StakingError::OverWithdrawal {
            requested: amount,
            available,
        });
    }
    Ok(UnstakeTicket {
        amount,
        request_epoch: epoch,
        release_epoch: epoch + params.unstake_epochs,
    })
}

/// `SR_e = srr·L_e`, or zero once the accrual window has closed.
pub fn accrue_staking_rewards(total_loan: Amount, epoch: u64, params: &ProtocolParams) -> Amount {
    if params.accrual_epochs.is_some_and(|last| epoch > last) {
        return Amount::ZERO;
    }
    total_loan.mul_f64(params.srr).max(Amount::ZERO)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LivenessReport {
    pub epochs: usize,
    pub ejection_epochs: usize,
    pub frequency: f64,
    pub lambda: f64,
    pub pass: bool,
}

/// Share of epochs with at least one ejection, against `lambda`.
pub fn ejection_frequency(flags: &[bool], lambda: f64) -> LivenessReport {
    let ejection_epochs = flags.iter().filter(|f| **f).count();
    let frequency = if flags.is_empty() {
        0.0
    } else {
        ejection_epochs as f64 / flags.len() as f64
    };
    LivenessReport {
        epochs: flags.len(),
        ejection_epochs,
        frequency,
        lambda,
        pass: frequency <= lambda,
    }
}

/// Ejection frequency over every post-genesis epoch of a trace.
pub fn liveness_probability_check(trace: &[EpochLedger], lambda: f64) -> LivenessReport {
    let flags: Vec<bool> = trace
        .iter()
        .skip(1)
        .map(|l| !l.events.ejections.is_empty())
        .collect();
    ejection_frequency(&flags, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn a(x: i64) -> Amount {
        Amount::from_int(x)
    }

    fn reserve(id: u64, asset: &str, size: Amount, loan: Amount) -> ReserveState {
        ReserveState {
            id,
            owner: "lp".into(),
            asset: asset.into(),
            validator: "v".into(),
            size,
            loan,
            lock_start: 0,
            lock_len: 0,
        }
    }

    #[test]
    fn ceiling_examples() {
        let mut p = ProtocolParams::default();
        let v = Validator::new("v", a(400), a(400));
        assert_eq!(liveness_ceiling(&v, &p), Amount::ZERO);
        let v = Validator::new("v", a(1000), a(400));
        assert_eq!(liveness_ceiling(&v, &p), a(600));
        p.liveness_factor = 0.5;
        assert_eq!(liveness_ceiling(&v, &p), a(300));
    }

    #[test]
    fn slash_examples() {
        let prices = BTreeMap::from([("A".to_string(), 2.0), ("B".to_string(), 1.0)]);
        let one = [reserve(1, "A", a(100), a(1000))];
        let none = slash(&one, &prices, 0.0).unwrap();
        assert_eq!(none.reserves, one.to_vec());

        let out = slash(&one, &prices, 0.05).unwrap();
        assert_eq!(out.loan_after, a(950));
        assert_eq!(out.tokens_removed[&1], a(25));
        assert_eq!(out.shortfall, Amount::ZERO);

        // Values 300 and 100; loan 800 at 5% gives 40.
        let two = [
            reserve(1, "A", a(150), a(400)),
            reserve(2, "B", a(100), a(400)),
        ];
        let out = slash(&two, &prices, 0.05).unwrap();
        assert_eq!(out.slashed, a(40));
        assert_eq!(out.tokens_removed[&1], a(15));
        assert_eq!(out.tokens_removed[&2], a(10));
        assert_eq!(out.value_removed, a(40));
    }

    #[test]
    fn slash_shortfall() {
        let prices = BTreeMap::from([("A".to_string(), 1.0)]);
        let out = slash(&[reserve(1, "A", a(10), a(1000))], &prices, 0.5).unwrap();
        assert_eq!(out.reserves[0].size, Amount::ZERO);
        assert_eq!(out.shortfall, a(490));
        assert!(slash(&[reserve(1, "C", a(10), a(10))], &prices, 0.5).is_err());
    }

    #[test]
    fn unstake_examples() {
        let mut p = ProtocolParams::default();
        p.unstake_epochs = 0;
        assert_eq!(
            request_unstake(a(5), 3, a(10), &p).unwrap().release_epoch,
            3
        );
        p.unstake_epochs = 7;
        assert_eq!(
            request_unstake(a(5), 5, a(10), &p).unwrap().release_epoch,
            12
        );
        assert_eq!(
            request_unstake(Amount::ZERO, 5, Amount::ZERO, &p)
                .unwrap()
                .amount,
            Amount::ZERO
        );
        assert!(request_unstake(a(11), 5, a(10), &p).is_err());
    }

    #[test]
    fn accrual_examples() {
        let mut p = ProtocolParams::default();
        p.srr = 0.1;
        assert_eq!(accrue_staking_rewards(Amount::ZERO, 1, &p), Amount::ZERO);
        assert_eq!(accrue_staking_rewards(a(1000), 1, &p), a(100));
        p.accrual_epochs = Some(5);
        assert_eq!(accrue_staking_rewards(a(1000), 6, &p), Amount::ZERO);
    }

    #[test]
    fn liveness_frequency() {
        assert!(ejection_frequency(&[false; 10], 0.0).pass);
        let mut flags = vec![false; 100];
        flags[3] = true;
        flags[50] = true;
        let r = ejection_frequency(&flags, 0.05);
        assert_eq!(r.frequency, 0.02);
        assert!(r.pass);
        assert!(!ejection_frequency(&flags, 0.0).pass);
    }

    proptest! {
        #[test]
        fn slash_conserves_value(
            rows in proptest::collection::vec((1i64..1_000_000, 1i64..100_000, 1u32..10_000), 1..6),
            varpi in 0.0f64..1.0,
        ) {
            let mut prices = BTreeMap::new();
            let reserves: Vec<ReserveState> = rows
                .iter()
                .enumerate()
                .map(|(i, (s, l, p))| {
                    let asset = format!("X{i}");
                    prices.insert(asset.clone(), *p as f64 / 100.0);
                    reserve(i as u64, &asset, a(*s), a(*l))
                })
                .collect();
            let out = slash(&reserves, &prices, varpi).unwrap();
            prop_assert_eq!(out.loan_before - out.slashed, out.loan_after);
            if out.shortfall.is_zero() {
                prop_assert!(out.value_removed.approx_eq(out.slashed, 1e-9));
            }
        }
    }
}
