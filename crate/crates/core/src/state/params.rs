use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::amount::Amount;

/// Every tunable constant of the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    /// Minimum collateralisation rate.
    pub rho_min: f64,
    /// Default risk scaling for the collateral surcharge.
    pub eta: f64,
    /// Per-asset overrides of `eta`.
    pub eta_by_asset: BTreeMap<String, f64>,
    pub chi: f64,
    pub b: f64,
    /// Minimum reward fraction.
    pub zeta: f64,
    /// Deviation gain of the reward budget.
    pub theta: f64,
    /// Deviation exponent of the reward budget; must be odd.
    pub c: u32,
    /// Tenure sigmoid steepness.
    pub k: f64,
    /// Tenure sigmoid shape.
    pub nu: f64,
    /// Tenure sigmoid midpoint, in epochs.
    pub e_mid: f64,
    /// Share of a reserve's reward weight that does not depend on tenure.
    pub lock_min_fraction: f64,
    pub upsilon: f64,
    pub psi: f64,
    pub q1: f64,
    pub q2: f64,
    pub b_lower: f64,
    pub target_eff_init: f64,
    pub w_floor: f64,
    pub g_factor: f64,
    pub kappa_w: f64,
    pub w_nst_target: f64,
    pub t_ratio: f64,
    pub varpi: f64,
    pub m_win: usize,
    pub n_win: usize,
    pub unstake_epochs: u64,
    pub r_min: Amount,
    /// Staking reward rate per epoch on delegated NST.
    pub srr: f64,
    /// Last epoch that accrues staking rewards; `None` accrues forever.
    pub accrual_epochs: Option<u64>,
    /// Positive loan adjustments are applied only on epochs divisible by this.
    pub extension_interval: u64,
    pub liveness_factor: f64,
    pub sigma_ceiling: f64,
    pub es_limit: f64,
    pub ci: f64,
    /// Epochs of price history used by risk estimates.
    pub risk_lookback: usize,
    pub retarget_interval: u64,
    /// Minimum non-wash traded volume over the lookback for qualification.
    pub min_volume: f64,
    pub wash_price_tol: f64,
    pub wash_window: u64,
    /// Default credit replenishment rate.
    pub gamma: f64,
    pub gamma_by_asset: BTreeMap<String, f64>,
    pub round_len: u64,
    /// Budget increment of the first credit round.
    pub credit_budget_initial: Amount,
    /// Geometric decay of the budget increment between rounds.
    pub credit_budget_decay: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            rho_min: 1.25,
            eta: 0.5,
            eta_by_asset: BTreeMap::new(),
            chi: 2.0,
            b: 2.0,
            zeta: 0.2,
            theta: 1.0,
            c: 1,
            k: 0.1,
            nu: 1.0,
            e_mid: 30.0,
            lock_min_fraction: 0.5,
            upsilon: 0.01,
            psi: 0.01,
            q1: 2.0,
            q2: 2.0,
            b_lower: 0.001,
            target_eff_init: 0.5,
            w_floor: 1.0,
            g_factor: 1.0,
            kappa_w: 1.0,
            w_nst_target: 0.75,
            t_ratio: 0.25,
            varpi: 0.05,
            m_win: 3,
            n_win: 10,
            unstake_epochs: 7,
            r_min: Amount::ZERO,
            srr: 0.01,
            accrual_epochs: None,
            extension_interval: 1,
            liveness_factor: 1.0,
            sigma_ceiling: 0.5,
            es_limit: 0.1,
            ci: 0.95,
            risk_lookback: 30,
            retarget_interval: 10,
            min_volume: 0.0,
            wash_price_tol: 1e-6,
            wash_window: 1,
            gamma: 0.05,
            gamma_by_asset: BTreeMap::new(),
            round_len: 10,
            credit_budget_initial: Amount::from_int(1000),
            credit_budget_decay: 0.9,
        }
    }
}

/// One failed parameter invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamViolation {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ParamViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "params.{}: {}", self.field, self.message)
    }
}

impl ProtocolParams {
    pub fn eta_for(&self, asset: &str) -> f64 {
        self.eta_by_asset.get(asset).copied().unwrap_or(self.eta)
    }

    pub fn gamma_for(&self, asset: &str) -> f64 {
        self.gamma_by_asset
            .get(asset)
            .copied()
            .unwrap_or(self.gamma)
    }

    /// Checks every invariant and returns all violations at once.
    pub fn validate(&self) -> Result<(), Vec<ParamViolation>> {
        let mut out = Vec::new();
        let mut check = |ok: bool, field: &str, message: &str| {
            if !ok {
                out.push(ParamViolation {
                    field: field.to_owned(),
                    message: message.to_owned(),
                });
            }
        };
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        let pos = |x: f64| x > 0.0 && x.is_finite();
        let nonneg = |x: f64| x >= 0.0 && x.is_finite();

        check(
            self.rho_min >= 1.0 && self.rho_min.is_finite(),
            "rho_min",
            "rho_min must be at least 1",
        );
        check(nonneg(self.eta), "eta", "eta must be non-negative");
        for (asset, eta) in &self.eta_by_asset {
            check(
                nonneg(*eta),
                &format!("eta_by_asset.{asset}"),
                "eta must be non-negative",
            );
        }
        check(nonneg(self.b), "b", "b must be non-negative");
        check(
            self.chi >= self.b && self.chi.is_finite(),
            "chi",
            "chi must be at least b",
        );
        check(
            self.zeta > 0.0 && self.zeta <= 1.0,
            "zeta",
            "zeta must lie in (0, 1]",
        );
        check(nonneg(self.theta), "theta", "theta must be non-negative");
        check(
            self.c % 2 == 1,
            "c",
            "c must be odd: it is the exponent on the efficiency deviation in the reward budget",
        );
        check(self.k.is_finite(), "k", "k must be finite");
        check(pos(self.nu), "nu", "nu must be positive");
        check(self.e_mid.is_finite(), "e_mid", "e_mid must be finite");
        check(
            unit(self.lock_min_fraction),
            "lock_min_fraction",
            "lock_min_fraction must lie in [0, 1]",
        );
        check(pos(self.upsilon), "upsilon", "upsilon must be positive");
        check(pos(self.psi), "psi", "psi must be positive");
        check(pos(self.q1), "q1", "q1 must be positive");
        check(pos(self.q2), "q2", "q2 must be positive");
        check(
            nonneg(self.b_lower),
            "b_lower",
            "b_lower must be non-negative",
        );
        check(
            unit(self.target_eff_init),
            "target_eff_init",
            "target_eff_init must lie in [0, 1]",
        );
        check(pos(self.w_floor), "w_floor", "w_floor must be positive");
        check(pos(self.g_factor), "g_factor", "g_factor must be positive");
        check(pos(self.kappa_w), "kappa_w", "kappa_w must be positive");
        check(
            open_unit(self.w_nst_target),
            "w_nst_target",
            "w_nst_target must lie in (0, 1)",
        );
        check(
            open_unit(self.t_ratio),
            "t_ratio",
            "t_ratio must lie in (0, 1)",
        );
        check(unit(self.varpi), "varpi", "varpi must lie in [0, 1]");
        check(self.m_win >= 1, "m_win", "m_win must be at least 1");
        check(
            self.n_win > self.m_win,
            "n_win",
            "n_win must be greater than m_win",
        );
        check(
            !self.r_min.is_negative(),
            "r_min",
            "r_min must be non-negative",
        );
        check(nonneg(self.srr), "srr", "srr must be non-negative");
        check(
            self.extension_interval >= 1,
            "extension_interval",
            "extension_interval must be at least 1",
        );
        check(
            nonneg(self.liveness_factor),
            "liveness_factor",
            "liveness_factor must be non-negative",
        );
        check(
            pos(self.sigma_ceiling),
            "sigma_ceiling",
            "sigma_ceiling must be positive",
        );
        check(
            nonneg(self.es_limit),
            "es_limit",
            "es_limit must be non-negative",
        );
        check(open_unit(self.ci), "ci", "ci must lie in (0, 1)");
        check(
            self.risk_lookback >= 2,
            "risk_lookback",
            "risk_lookback must be at least 2",
        );
        check(
            self.retarget_interval >= 1,
            "retarget_interval",
            "retarget_interval must be at least 1",
        );
        check(
            nonneg(self.min_volume),
            "min_volume",
            "min_volume must be non-negative",
        );
        check(
            nonneg(self.wash_price_tol),
            "wash_price_tol",
            "wash_price_tol must be non-negative",
        );
        check(unit(self.gamma), "gamma", "gamma must lie in [0, 1]");
        for (asset, gamma) in &self.gamma_by_asset {
            check(
                unit(*gamma),
                &format!("gamma_by_asset.{asset}"),
                "gamma must lie in [0, 1]",
            );
        }
        check(
            self.round_len >= 1,
            "round_len",
            "round_len must be at least 1",
        );
        check(
            !self.credit_budget_initial.is_negative(),
            "credit_budget_initial",
            "credit_budget_initial must be non-negative",
        );
        check(
            unit(self.credit_budget_decay),
            "credit_budget_decay",
            "credit_budget_decay must lie in [0, 1]",
        );
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fields(p: &ProtocolParams) -> Vec<String> {
        p.validate()
            .unwrap_err()
            .into_iter()
            .map(|v| v.field)
            .collect()
    }

    #[test]
    fn defaults_are_valid() {
        ProtocolParams::default().validate().unwrap();
    }

    #[test]
    fn even_exponent_rejected() {
        let p = ProtocolParams {
            c: 2,
            ..Default::default()
        };
        let err = p.validate().unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].field, "c");
        assert!(err[0].to_string().contains("c must be odd"));
    }

    #[test]
    fn window_order_and_chi() {
        let p = ProtocolParams {
            n_win: 3,
            m_win: 3,
            chi: 1.0,
            b: 2.0,
            ..Default::default()
        };
        assert_eq!(fields(&p), vec!["chi", "n_win"]);
        let p = ProtocolParams {
            zeta: 0.0,
            rho_min: 0.9,
            ..Default::default()
        };
        assert_eq!(fields(&p), vec!["rho_min", "zeta"]);
    }

    #[test]
    fn overrides_fall_back_to_defaults() {
        let mut p = ProtocolParams::default();
        p.eta_by_asset.insert("A".into(), 2.0);
        assert_eq!(p.eta_for("A"), 2.0);
        assert_eq!(p.eta_for("B"), 0.5);
        assert_eq!(p.gamma_for("A"), 0.05);
    }
}
