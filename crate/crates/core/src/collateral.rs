//! Dynamic collateralisation: rates, loan requotes, the global borrow
//! ceiling and asset qualification.

use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::risk::{detect_wash_trades, log_returns, realized_volatility};
use crate::state::{PriceBook, ProtocolParams, ReserveState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CollateralError {
    #[error("asset `{0}` is not admissible: target weight is zero")]
    NotAdmissible(String),
    #[error("invalid weight {weight} for asset `{asset}`")]
    InvalidWeight { asset: String, weight: f64 },
}

pub type Result<T> = std::result::Result<T, CollateralError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollateralQuote {
    pub asset: String,
    pub rho: f64,
    pub delta_rho: f64,
    pub multiplier: f64,
}

impl CollateralQuote {
    /// Rate actually charged once the global multiplier is applied.
    pub fn effective_rho(&self) -> f64 {
        self.rho * self.multiplier
    }
}

/// Surcharge `η(exp((χ + b·sign(dev))·|dev|) − 1)` with `dev = (w − w*)/w*`.
pub fn rate_surcharge(weight: f64, target: f64, eta: f64, chi: f64, b: f64) -> f64 {
    let dev = (weight - target) / target;
    let sign = if dev > 0.0 {
        1.0
    } else if dev < 0.0 {
        -1.0
    } else {
        0.0
    };
    eta * (((chi + b * sign) * dev.abs()).exp() - 1.0)
}

/// Quote for `asset` given its current basket weight and target weight,
/// both over the collateral basket.
pub fn collateral_rate(
    asset: &str,
    weight: f64,
    target: f64,
    params: &ProtocolParams,
) -> Result<CollateralQuote> {
    if !(0.0..=1.0 + 1e-12).contains(&weight) {
        return Err(CollateralError::InvalidWeight {
            asset: asset.to_owned(),
            weight,
        });
    }
    if target <= 0.0 || target.is_nan() {
        return Err(CollateralError::NotAdmissible(asset.to_owned()));
    }
    let delta_rho = rate_surcharge(weight, target, params.eta_for(asset), params.chi, params.b);
    Ok(CollateralQuote {
        asset: asset.to_owned(),
        rho: params.rho_min + delta_rho,
        delta_rho,
        multiplier: 1.0,
    })
}

/// Loan a reserve supports at rate `rho`: `S·P/ρ`.
pub fn implied_loan(size: Amount, price: f64, rho: f64) -> Amount {
    size.mul_f64(price)
        .mul_div(Amount::ONE, Amount::from_f64(rho))
        .unwrap_or(Amount::ZERO)
}

/// Signed change `S·P/ρ − L` for a reserve under `quote` (multiplier
/// included).
pub fn loan_requote(reserve: &ReserveState, quote: &CollateralQuote, price: f64) -> Amount {
    implied_loan(reserve.size, price, quote.effective_rho()) - reserve.loan
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BorrowCeiling {
    pub ceiling: Amount,
    /// `1 − L/TotalStaked`; `None` without direct stake.
    pub w_nst: Option<f64>,
    pub satisfied: bool,
}

/// `TotalStaked·(1 − w*_NST)` together with the realised NST weight.
pub fn borrow_ceiling(
    total_direct_stake: Amount,
    total_loan: Amount,
    params: &ProtocolParams,
) -> BorrowCeiling {
    if !total_direct_stake.is_positive() {
        return BorrowCeiling {
            ceiling: Amount::ZERO,
            w_nst: None,
            satisfied: total_loan.is_zero(),
        };
    }
    let ceiling = total_direct_stake.mul_f64(1.0 - params.w_nst_target);
    let w_nst = 1.0 - total_loan.ratio(total_direct_stake).unwrap_or(0.0);
    BorrowCeiling {
        ceiling,
        w_nst: Some(w_nst),
        satisfied: w_nst >= params.w_nst_target - 1e-12,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Multiplier {
    Scale(f64),
    /// Zero ceiling with collateral outstanding: every loan goes to zero.
    CurtailAll,
}

impl Multiplier {
    pub fn value(self) -> Option<f64> {
        match self {
            Multiplier::Scale(m) => Some(m),
            Multiplier::CurtailAll => None,
        }
    }
}

/// `Σ S·P/ρ ÷ 𝒯`, before clamping.
pub fn multiplier_ratio(implied: &[f64], ceiling: f64) -> Option<f64> {
    let total: f64 = implied.iter().sum();
    if ceiling > 0.0 {
        Some(total / ceiling)
    } else {
        None
    }
}

/// `m = max(1, Σ S·P/ρ ÷ 𝒯)`.
pub fn global_multiplier(implied: &[f64], ceiling: f64) -> Multiplier {
    let total: f64 = implied.iter().sum();
    match multiplier_ratio(implied, ceiling) {
        Some(ratio) => Multiplier::Scale(ratio.max(1.0)),
        None if total > 0.0 => Multiplier::CurtailAll,
        None => Multiplier::Scale(1.0),
    }
}

/// Three-asset product/sum form: `Σ_h S_h ρ_j ρ_k P_h / (ρ_1 ρ_2 ρ_3 𝒯)`
/// with `{j, k}` the two assets other than `h`. Unclamped.
pub fn three_asset_closed_form(
    size: [f64; 3],
    price: [f64; 3],
    rho: [f64; 3],
    ceiling: f64,
) -> f64 {
    let numerator: f64 = (0..3)
        .map(|h| {
            let (j, k) = ((h + 1) % 3, (h + 2) % 3);
            size[h] * rho[j] * rho[k] * price[h]
        })
        .sum();
    numerator / (rho[0] * rho[1] * rho[2] * ceiling)
}

/// Applies the ceiling to fixed-point implied loans. When it binds each
/// loan becomes `implied·𝒯/Σ implied`, so the total never exceeds `𝒯`.
pub fn scaled_loans(implied: &[Amount], ceiling: Amount) -> (Multiplier, Vec<Amount>) {
    let total: Amount = implied.iter().sum();
    if !total.is_positive() {
        return (Multiplier::Scale(1.0), implied.to_vec());
    }
    if !ceiling.is_positive() {
        return (Multiplier::CurtailAll, vec![Amount::ZERO; implied.len()]);
    }
    if total <= ceiling {
        return (Multiplier::Scale(1.0), implied.to_vec());
    }
    let m = total.ratio(ceiling).unwrap_or(1.0).max(1.0);
    let loans = implied
        .iter()
        .map(|l| l.mul_div(ceiling, total).unwrap_or(Amount::ZERO))
        .collect();
    (Multiplier::Scale(m), loans)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QualificationRule {
    /// Non-wash traded volume over the lookback must reach this floor.
    MinLiquidity(f64),
    /// Realised volatility of log returns must not exceed this cap.
    MaxVolatility(f64),
}

impl QualificationRule {
    pub fn name(&self) -> &'static str {
        match self {
            QualificationRule::MinLiquidity(_) => "min_liquidity",
            QualificationRule::MaxVolatility(_) => "max_volatility",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qualification {
    pub admissible: bool,
    pub failed: Vec<String>,
}

/// Evaluates every rule over the `lookback` epochs ending at `epoch`.
pub fn qualify_asset(
    asset: &str,
    book: &PriceBook,
    rules: &[QualificationRule],
    epoch: u64,
    lookback: usize,
    wash_tol: f64,
    wash_window: u64,
) -> Qualification {
    let mut failed = Vec::new();
    let Some(history) = book.reference_history(asset, epoch, lookback + 1) else {
        return Qualification {
            admissible: false,
            failed: vec!["insufficient history".into()],
        };
    };
    for rule in rules {
        let ok = match rule {
            QualificationRule::MinLiquidity(floor) => {
                let first = (epoch + 1).saturating_sub(lookback as u64);
                let volume: f64 = (first..=epoch)
                    .map(|e| {
                        let tape = book.tape(asset, e);
                        let flagged = detect_wash_trades(tape, wash_tol, wash_window);
                        let washed: f64 = flagged
                            .iter()
                            .map(|p| tape[p.first].volume.abs() + tape[p.second].volume.abs())
                            .sum();
                        tape.iter().map(|t| t.volume.abs()).sum::<f64>() - washed
                    })
                    .sum();
                volume > 0.0 && volume >= *floor
            }
            QualificationRule::MaxVolatility(cap) => realized_volatility(&log_returns(&history))
                .map(|s| s <= *cap)
                .unwrap_or(false),
        };
        if !ok {
            failed.push(rule.name().to_owned());
        }
    }
    Qualification {
        admissible: failed.is_empty(),
        failed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StakeRatio {
    pub ratio: f64,
    pub pass: bool,
}

/// `V_MA / (V_MA + V_NST) < T`; vacuous pass when both are zero.
pub fn stake_ratio_check(v_ma: Amount, v_nst: Amount, t_ratio: f64) -> StakeRatio {
    let total = v_ma + v_nst;
    match v_ma.ratio(total) {
        Some(ratio) => StakeRatio {
            ratio,
            pass: ratio < t_ratio,
        },
        None => StakeRatio {
            ratio: 0.0,
            pass: true,
        },
    }
}
