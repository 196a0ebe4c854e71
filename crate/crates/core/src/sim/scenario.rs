use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::risk::MetricsConfig;
use crate::state::{ParamViolation, ProtocolParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSpec {
    pub symbol: String,
    #[serde(default)]
    pub is_nst: bool,
    /// Starting price in the external reference numéraire.
    pub initial_price: f64,
    /// Per-epoch volatility of log price.
    #[serde(default)]
    pub vol: f64,
    /// Per-epoch drift of log price.
    #[serde(default)]
    pub drift: f64,
    #[serde(default = "default_spread")]
    pub spread: f64,
    /// Baseline share of deposited liquidity in use.
    #[serde(default = "default_utilisation")]
    pub utilisation: f64,
    #[serde(default = "default_trades")]
    pub trades_per_epoch: usize,
    /// Chance per epoch of a round-trip wash pair on the tape.
    #[serde(default)]
    pub wash_probability: f64,
}

fn default_spread() -> f64 {
    0.002
}

fn default_utilisation() -> f64 {
    0.4
}

fn default_trades() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidatorSpec {
    pub id: String,
    pub direct_stake: Amount,
    pub min_stake: Amount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSpec {
    pub count: usize,
    /// Capital per agent, in NST, drawn uniformly from this range.
    pub endowment_min: Amount,
    pub endowment_max: Amount,
    /// Lock lengths on offer, in epochs.
    pub lock_menu: Vec<u64>,
    /// Continuous discount rate applied to incentive streams.
    pub discount_rate: f64,
    /// Chance per epoch that an idle agent deposits.
    pub entry_probability: f64,
    /// Expected share of the credit cap spent per epoch.
    pub service_use_rate: f64,
}

impl Default for AgentSpec {
    fn default() -> Self {
        AgentSpec {
            count: 5,
            endowment_min: Amount::from_int(100),
            endowment_max: Amount::from_int(1000),
            lock_menu: vec![10, 30, 90],
            discount_rate: 0.01,
            entry_probability: 0.3,
            service_use_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandSpec {
    /// Epoch at which utilisation jumps by `step_size`.
    pub step_epoch: Option<u64>,
    pub step_size: f64,
    /// Standard deviation of per-epoch utilisation noise.
    pub noise: f64,
}

impl Default for DemandSpec {
    fn default() -> Self {
        DemandSpec {
            step_epoch: None,
            step_size: 0.0,
            noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventSpec {
    /// Chance per epoch that a given validator is slashed.
    pub slash_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub epochs: u64,
    #[serde(default)]
    pub params: ProtocolParams,
    #[serde(default)]
    pub metrics: MetricsConfig,
    pub assets: Vec<AssetSpec>,
    pub validators: Vec<ValidatorSpec>,
    #[serde(default)]
    pub agents: AgentSpec,
    #[serde(default)]
    pub demand: DemandSpec,
    #[serde(default)]
    pub events: EventSpec,
}

impl Scenario {
    pub fn nst(&self) -> Option<&AssetSpec> {
        self.assets.iter().find(|a| a.is_nst)
    }

    /// Parameter invariants plus scenario-level consistency checks.
    pub fn validate(&self) -> Result<(), Vec<ParamViolation>> {
        let mut out = match self.params.validate() {
            Ok(()) => Vec::new(),
            Err(v) => v,
        };
        let mut push = |ok: bool, field: String, message: &str| {
            if !ok {
                out.push(ParamViolation {
                    field,
                    message: message.to_owned(),
                });
            }
        };
        push(
            self.schema_version == SCHEMA_VERSION,
            "schema_version".into(),
            "unsupported schema version",
        );
        let nst = self.assets.iter().filter(|a| a.is_nst).count();
        push(
            nst == 1,
            "assets".into(),
            "exactly one asset must have is_nst = true",
        );
        for (i, a) in self.assets.iter().enumerate() {
            let f = |name: &str| format!("assets[{i}].{name}");
            push(
                !a.symbol.is_empty(),
                f("symbol"),
                "symbol must not be empty",
            );
            push(
                self.assets.iter().filter(|b| b.symbol == a.symbol).count() == 1,
                f("symbol"),
                "duplicate symbol",
            );
            push(
                a.initial_price > 0.0 && a.initial_price.is_finite(),
                f("initial_price"),
                "price must be positive",
            );
            push(
                a.vol >= 0.0 && a.vol.is_finite(),
                f("vol"),
                "vol must be non-negative",
            );
            push(a.drift.is_finite(), f("drift"), "drift must be finite");
            push(a.spread >= 0.0, f("spread"), "spread must be non-negative");
            push(
                (0.0..=1.0).contains(&a.utilisation),
                f("utilisation"),
                "utilisation must lie in [0, 1]",
            );
            push(
                (0.0..=1.0).contains(&a.wash_probability),
                f("wash_probability"),
                "wash_probability must lie in [0, 1]",
            );
        }
        push(
            !self.validators.is_empty(),
            "validators".into(),
            "at least one validator is required",
        );
        for (i, v) in self.validators.iter().enumerate() {
            push(
                !v.direct_stake.is_negative() && !v.min_stake.is_negative(),
                format!("validators[{i}]"),
                "stakes must be non-negative",
            );
            push(
                self.validators.iter().filter(|w| w.id == v.id).count() == 1,
                format!("validators[{i}].id"),
                "duplicate validator id",
            );
        }
        let ag = &self.agents;
        push(
            !ag.endowment_min.is_negative() && ag.endowment_min <= ag.endowment_max,
            "agents.endowment_min".into(),
            "endowment range must be non-negative and ordered",
        );
        push(
            !ag.lock_menu.is_empty() && ag.lock_menu.iter().all(|l| *l > 0),
            "agents.lock_menu".into(),
            "lock menu must hold positive lengths",
        );
        push(
            ag.discount_rate >= 0.0,
            "agents.discount_rate".into(),
            "discount rate must be non-negative",
        );
        push(
            (0.0..=1.0).contains(&ag.entry_probability),
            "agents.entry_probability".into(),
            "entry probability must lie in [0, 1]",
        );
        push(
            ag.service_use_rate >= 0.0,
            "agents.service_use_rate".into(),
            "service use rate must be non-negative",
        );
        push(
            self.demand.noise >= 0.0,
            "demand.noise".into(),
            "noise must be non-negative",
        );
        push(
            (0.0..=1.0).contains(&self.events.slash_probability),
            "events.slash_probability".into(),
            "slash probability must lie in [0, 1]",
        );
        let wsum = self.metrics.w_value + self.metrics.w_variance;
        push(
            (wsum - 1.0).abs() <= 1e-9,
            "metrics.w_value".into(),
            "w_value + w_variance must equal 1",
        );
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}
