//! Budgeted reward allocation.
//!
//! Capital-efficiency tracking, the per-epoch reward budget, the
//! target-efficiency controller, the lending-fee chain (pool weight →
//! distributable reward → interest rate), tenure incentives and present
//! value of an incentive stream.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::state::ProtocolParams;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardsError {
    #[error("capital efficiency undefined: zero deposited liquidity")]
    NoDepositedLiquidity,
    #[error("fee efficiency undefined: zero rewards distributed")]
    NoRewards,
    #[error("pool efficiency {value} outside [{min}, {max}]")]
    EfficiencyOutOfRange { value: f64, min: f64, max: f64 },
    #[error("window length must be at least 1")]
    ZeroWindow,
    #[error("negative horizon {0}")]
    NegativeHorizon(f64),
    #[error("pool `{0}` has a non-positive weight")]
    InvalidWeight(String),
}

pub type Result<T> = std::result::Result<T, RewardsError>;

/// `max((deposited - available) / deposited, 0)`.
pub fn capital_efficiency(available: Amount, deposited: Amount) -> Result<f64> {
    if !deposited.is_positive() {
        return Err(RewardsError::NoDepositedLiquidity);
    }
    let used = deposited - available;
    Ok(used.ratio(deposited).unwrap_or(0.0).clamp(0.0, 1.0))
}

/// Fees earned per unit of reward distributed. Not clamped.
pub fn capital_efficiency_fees(fees: Amount, rewards: Amount) -> Result<f64> {
    fees.ratio(rewards).ok_or(RewardsError::NoRewards)
}

/// Simple moving average, seeding the window with the first observation
/// until enough samples exist.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(RewardsError::ZeroWindow);
    }
    let Some(&first) = series.first() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(series.len());
    let mut sum = first * window as f64;
    for (i, &x) in series.iter().enumerate() {
        let leaving = if i >= window {
            series[i - window]
        } else {
            first
        };
        sum += x - leaving;
        out.push(sum / window as f64);
    }
    // Recompute from scratch to keep rounding independent of history length.
    for (i, v) in out.iter_mut().enumerate() {
        let total: f64 = (0..window)
            .map(|k| if i >= k { series[i - k] } else { first })
            .sum();
        *v = total / window as f64;
    }
    Ok(out)
}

pub fn first_derivative(ma: &[f64]) -> Option<f64> {
    match ma {
        [.., prev, last] => Some(last - prev),
        _ => None,
    }
}

pub fn second_derivative(ma: &[f64]) -> Option<f64> {
    match ma {
        [.., prev2, prev, last] => Some(last + prev2 - 2.0 * prev),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowDerivatives {
    pub first: f64,
    pub second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingAverageReport {
    pub ma_short: f64,
    pub ma_long: f64,
    pub short: Option<WindowDerivatives>,
    pub long: Option<WindowDerivatives>,
}

/// Derivatives of the `window`-MA, present once the raw series holds
/// `window + 2` samples (three full windows).
pub fn window_derivatives(series: &[f64], window: usize) -> Result<Option<WindowDerivatives>> {
    if series.len() < window + 2 {
        if window == 0 {
            return Err(RewardsError::ZeroWindow);
        }
        return Ok(None);
    }
    let ma = moving_average(series, window)?;
    Ok(first_derivative(&ma)
        .zip(second_derivative(&ma))
        .map(|(first, second)| WindowDerivatives { first, second }))
}

/// Latest short/long moving averages and their discrete derivatives.
/// Returns `None` for an empty series.
pub fn moving_average_and_derivatives(
    series: &[f64],
    m: usize,
    n: usize,
) -> Result<Option<MovingAverageReport>> {
    let short = moving_average(series, m)?;
    let long = moving_average(series, n)?;
    let (Some(&ma_short), Some(&ma_long)) = (short.last(), long.last()) else {
        return Ok(None);
    };
    Ok(Some(MovingAverageReport {
        ma_short,
        ma_long,
        short: window_derivatives(series, m)?,
        long: window_derivatives(series, n)?,
    }))
}

/// Raw efficiency history at CDA and pool level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySeries {
    pub cda: Vec<f64>,
    pub pools: BTreeMap<String, Vec<f64>>,
}

impl EfficiencySeries {
    pub fn cda_ma(&self, window: usize) -> Option<f64> {
        moving_average(&self.cda, window)
            .ok()
            .and_then(|v| v.last().copied())
    }

    pub fn pool_ma(&self, pool: &str, window: usize) -> Option<f64> {
        self.pools
            .get(pool)
            .and_then(|s| moving_average(s, window).ok())
            .and_then(|v| v.last().copied())
    }
}

/// `min(SRR·L·max(ζ, 1 − Θ(ℰ* − ℰ)^c), RP)`, floored at `min(R_min, RP)`.
pub fn epoch_reward_budget(
    loan: Amount,
    srr: f64,
    eff_ma: f64,
    target: f64,
    pool: Amount,
    params: &ProtocolParams,
) -> Amount {
    let deviation = (target - eff_ma).powi(params.c as i32);
    let factor = params.zeta.max(1.0 - params.theta * deviation);
    let pool = pool.max(Amount::ZERO);
    let raw = loan.mul_f64(srr * factor).max(Amount::ZERO);
    raw.min(pool).max(params.r_min.min(pool))
}

/// Controller state: the target efficiency and the four derivative
/// accumulators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub target: f64,
    pub d1_short: f64,
    pub d1_long: f64,
    pub d2_short: f64,
    pub d2_long: f64,
}

impl ControllerState {
    pub fn new(target: f64) -> Self {
        ControllerState {
            target,
            d1_short: 0.0,
            d1_long: 0.0,
            d2_short: 0.0,
            d2_long: 0.0,
        }
    }

    fn reset(&mut self) {
        self.d1_short = 0.0;
        self.d1_long = 0.0;
        self.d2_short = 0.0;
        self.d2_long = 0.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ControllerDecision {
    /// Not enough history for derivatives in one of the windows.
    Hold,
    /// Bound test failed; derivatives were accumulated.
    Accumulate,
    /// Trends disagree between windows; accumulators reset.
    Neutral,
    Decrease(f64),
    Increase(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerUpdate {
    pub state: ControllerState,
    pub decision: ControllerDecision,
}

/// One step of the target capital-efficiency controller.
///
/// `short`/`long` are the derivatives of the m- and n-window moving
/// averages. The resulting target is clamped to `[0, 1]`.
pub fn controller_update(
    state: ControllerState,
    short: Option<WindowDerivatives>,
    long: Option<WindowDerivatives>,
    params: &ProtocolParams,
) -> ControllerUpdate {
    let (Some(s), Some(l)) = (short, long) else {
        return ControllerUpdate {
            state,
            decision: ControllerDecision::Hold,
        };
    };
    let mut next = state;
    let bound = params.b_lower;
    let clears_short = bound <= s.first.abs().max(state.d1_short.abs());
    let clears_long = bound <= l.first.abs().max(state.d1_long.abs());

    if !(clears_short && clears_long) {
        next.d1_short += s.first;
        next.d1_long += l.first;
        next.d2_short += s.second;
        next.d2_long += l.second;
        return ControllerUpdate {
            state: next,
            decision: ControllerDecision::Accumulate,
        };
    }

    let trend_short = s.first.max(state.d1_short);
    let trend_long = l.first.max(state.d1_long);
    let accel_short = s.second.max(state.d2_short);
    let accel_long = l.second.max(state.d2_long);
    let disagreement = (accel_short - accel_long).abs();

    let decision = if trend_short > 0.0 && trend_long > 0.0 {
        let step = if accel_short >= 0.0 && accel_long >= 0.0 {
            params.upsilon
        } else {
            params.upsilon / (params.q1 * disagreement).max(1.0)
        };
        next.target -= step;
        ControllerDecision::Decrease(step)
    } else if trend_short < 0.0 && trend_long < 0.0 {
        let step = if accel_short <= 0.0 && accel_long <= 0.0 {
            params.psi
        } else {
            params.psi / (params.q2 * disagreement).max(1.0)
        };
        next.target += step;
        ControllerDecision::Increase(step)
    } else {
        ControllerDecision::Neutral
    };
    next.target = next.target.clamp(0.0, 1.0);
    next.reset();
    ControllerUpdate {
        state: next,
        decision,
    }
}

/// Lending-fee weight of a pool from its moving-average efficiency.
pub fn pool_weight(eff: f64, eff_max: f64, eff_min: f64, params: &ProtocolParams) -> Result<f64> {
    const TOL: f64 = 1e-12;
    if eff > eff_max + TOL || eff < eff_min - TOL {
        return Err(RewardsError::EfficiencyOutOfRange {
            value: eff,
            min: eff_min,
            max: eff_max,
        });
    }
    let floor = params.w_floor;
    let ceiling = floor * (1.0 + params.g_factor);
    let span = eff_max - eff_min;
    if span < TOL {
        return Ok(ceiling);
    }
    let gap = ((eff_max - eff) / span).clamp(0.0, 1.0);
    Ok(floor + (ceiling - floor) * (1.0 - gap.powf(params.kappa_w)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolAllocation {
    pub asset: String,
    pub loan: Amount,
    pub weight: f64,
    /// Pro-rata share of the budget by loan.
    pub pro_rata: Amount,
    /// Weighted distributable reward.
    pub distributable: Amount,
    pub interest_rate: f64,
    pub interest_payable: Amount,
}

/// One epoch's reward plan. `budget` equals the sum of `distributable`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardPlan {
    pub budget: Amount,
    pub pools: Vec<PoolAllocation>,
}

impl RewardPlan {
    pub fn total_distributable(&self) -> Amount {
        self.pools.iter().map(|p| p.distributable).sum()
    }

    pub fn total_interest(&self) -> Amount {
        self.pools.iter().map(|p| p.interest_payable).sum()
    }

    pub fn pool(&self, asset: &str) -> Option<&PoolAllocation> {
        self.pools.iter().find(|p| p.asset == asset)
    }
}

/// Splits `total` in proportion to `parts`, truncating each share and
/// assigning the remainder to the largest part (first on ties).
pub fn split_exact(total: Amount, parts: &[Amount]) -> Vec<Amount> {
    let sum: Amount = parts.iter().sum();
    if !sum.is_positive() {
        return vec![Amount::ZERO; parts.len()];
    }
    let mut shares: Vec<Amount> = parts
        .iter()
        .map(|p| total.mul_div(*p, sum).unwrap_or(Amount::ZERO))
        .collect();
    let remainder = total - shares.iter().copied().sum::<Amount>();
    let largest = parts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    shares[largest] += remainder;
    shares
}

/// Distributes `budget` across pools by `loan × weight`.
///
/// Pools are `(asset, loan, weight)`. With no outstanding loans the plan is
/// empty and the budget stays in the reward pool.
pub fn allocate_rewards(pools: &[(String, Amount, f64)], budget: Amount) -> Result<RewardPlan> {
    let total_loan: Amount = pools.iter().map(|p| p.1).sum();
    if !total_loan.is_positive() || !budget.is_positive() {
        return Ok(RewardPlan::default());
    }
    let active: Vec<&(String, Amount, f64)> = pools.iter().filter(|p| p.1.is_positive()).collect();
    for (asset, _, w) in &active {
        if !(*w > 0.0 && w.is_finite()) {
            return Err(RewardsError::InvalidWeight(asset.clone()));
        }
    }
    let weighted: Vec<Amount> = active.iter().map(|p| p.1.mul_f64(p.2)).collect();
    let loans: Vec<Amount> = active.iter().map(|p| p.1).collect();
    let distributable = split_exact(budget, &weighted);
    let pro_rata = split_exact(budget, &loans);
    let pools = active
        .iter()
        .zip(distributable.into_iter().zip(pro_rata))
        .map(|((asset, loan, weight), (dr, rj))| {
            let interest_payable = rj - dr;
            PoolAllocation {
                asset: asset.clone(),
                loan: *loan,
                weight: *weight,
                pro_rata: rj,
                distributable: dr,
                interest_rate: interest_payable.ratio(rj).unwrap_or(0.0),
                interest_payable,
            }
        })
        .collect();
    Ok(RewardPlan { budget, pools })
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `1 / (1 + e^{-k(x - mid)})^shape`, evaluated without overflow.
pub fn sigmoid_fraction(elapsed: f64, k: f64, mid: f64, shape: f64) -> f64 {
    (-shape * softplus(-k * (elapsed - mid))).exp()
}

/// Min-anchored generalised sigmoid between `i_min` and `i_max`.
pub fn tenure_incentive(elapsed: f64, i_min: f64, i_max: f64, k: f64, mid: f64, shape: f64) -> f64 {
    i_min + (i_max - i_min) * sigmoid_fraction(elapsed, k, mid, shape)
}

/// Staking rewards distributed minus interest charged, floored at zero.
pub fn max_lock_reward(distributed: Amount, interest_charged: Amount) -> Amount {
    distributed.saturating_sub_floor(interest_charged)
}

const PV_STEPS: usize = 256;

fn trapezoid_pv(
    incentive: &impl Fn(f64) -> f64,
    rate: &impl Fn(f64) -> f64,
    horizon: f64,
    steps: usize,
) -> f64 {
    let h = horizon / steps as f64;
    let mut discount_exponent = 0.0;
    let mut prev_rate = rate(0.0);
    let mut prev_value = incentive(0.0);
    let mut total = 0.0;
    for i in 1..=steps {
        let t = i as f64 * h;
        let r = rate(t);
        discount_exponent += 0.5 * h * (prev_rate + r);
        let value = incentive(t) * (-discount_exponent).exp();
        total += 0.5 * h * (prev_value + value);
        prev_rate = r;
        prev_value = value;
    }
    total
}

/// `∫₀ᵀ ℐ(t)·exp(−∫₀ᵗ IR(u)du) dt` by the trapezoid rule on a 256-step
/// grid, Richardson-extrapolated against the 128-step grid.
pub fn present_value(
    incentive: impl Fn(f64) -> f64,
    rate: impl Fn(f64) -> f64,
    horizon: f64,
) -> Result<f64> {
    if horizon < 0.0 || horizon.is_nan() {
        return Err(RewardsError::NegativeHorizon(horizon));
    }
    if horizon == 0.0 {
        return Ok(0.0);
    }
    let fine = trapezoid_pv(&incentive, &rate, horizon, PV_STEPS);
    let coarse = trapezoid_pv(&incentive, &rate, horizon, PV_STEPS / 2);
    Ok(fine + (fine - coarse) / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DraViolationKind {
    BelowMinimum,
    AbovePool,
    PoolRecursion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraViolation {
    pub epoch: usize,
    pub kind: DraViolationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraReport {
    pub violations: Vec<DraViolation>,
    pub lifetime_rewards: Amount,
    pub lifetime_staking_rewards: Amount,
    /// Lifetime rewards equal lifetime staking rewards.
    pub conserved: bool,
    pub pass: bool,
}

/// Checks per-epoch budget bounds, the reward-pool recursion and lifetime
/// conservation. `pool` holds the reward pool available for distribution
/// in each epoch (after that epoch's accrual).
pub fn dra_feasibility(
    rewards: &[Amount],
    staking: &[Amount],
    pool: &[Amount],
    r_min: Amount,
) -> DraReport {
    let tol = crate::amount::TOLERANCE;
    let mut violations = Vec::new();
    let mut earned = Amount::ZERO;
    let mut paid = Amount::ZERO;
    for (e, ((r, sr), rp)) in rewards.iter().zip(staking).zip(pool).enumerate() {
        earned += *sr;
        if !rp.approx_eq(earned - paid, tol) {
            violations.push(DraViolation {
                epoch: e,
                kind: DraViolationKind::PoolRecursion,
            });
        }
        if (*r - *rp).to_f64() > tol {
            violations.push(DraViolation {
                epoch: e,
                kind: DraViolationKind::AbovePool,
            });
        }
        let floor = r_min.min(*rp);
        if (floor - *r).to_f64() > tol {
            violations.push(DraViolation {
                epoch: e,
                kind: DraViolationKind::BelowMinimum,
            });
        }
        paid += *r;
    }
    let lifetime_staking_rewards: Amount = staking.iter().sum();
    let conserved = paid.approx_eq(lifetime_staking_rewards, tol);
    DraReport {
        pass: violations.is_empty() && conserved,
        violations,
        lifetime_rewards: paid,
        lifetime_staking_rewards,
        conserved,
    }
}
