//! Seeded scenario simulation: price processes, LP agents and demand,
//! driving the engine epoch by epoch and recording the trace.

mod agents;
mod export;
mod market;
mod scenario;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::staking::Validator;
use crate::state::{
    advance_epoch_with, AssetId, Consumption, EngineError, EpochInputs, EpochLedger, GenesisError,
    ParamViolation, PriceBook,
};

pub use agents::{
    agent_step, choose_lock, pick_validator, pool_weights, split_capital, tenure_factor, Agent,
};
pub use export::{summarize, trace_table, Summary, Table, TableError, TableTotals};
pub use market::gen_prices;
pub use scenario::{
    AgentSpec, AssetSpec, DemandSpec, EventSpec, Scenario, ValidatorSpec, SCHEMA_VERSION,
};

use market::{stream, STREAM_AGENTS, STREAM_EVENTS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {}", join(.0))]
    Invalid(Vec<ParamViolation>),
    #[error(transparent)]
    Genesis(#[from] GenesisError),
    #[error("engine aborted at epoch {epoch}: {source}")]
    Engine {
        epoch: u64,
        #[source]
        source: EngineError,
    },
    #[error("invariant violated at epoch {epoch}: {}", .violations.join("; "))]
    Invariant { epoch: u64, violations: Vec<String> },
}

fn join(v: &[ParamViolation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Genesis plus one ledger per simulated epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub name: String,
    pub seed: u64,
    pub params: crate::state::ProtocolParams,
    pub ledgers: Vec<EpochLedger>,
}

impl Trace {
    pub fn collateral_assets(&self) -> Vec<String> {
        self.ledgers
            .first()
            .map(|l| l.collateral_assets().map(str::to_owned).collect())
            .unwrap_or_default()
    }
}

pub fn run(scenario: &Scenario) -> Result<Trace, SimError> {
    scenario.validate().map_err(SimError::Invalid)?;
    let market = gen_prices(scenario);
    run_with_market(scenario, &market)
}

/// Runs `scenario` against a prepared market. Every epoch's ledger is
/// checked against the ledger invariants before the next one starts.
pub fn run_with_market(scenario: &Scenario, market: &PriceBook) -> Result<Trace, SimError> {
    let params = &scenario.params;
    let assets = scenario
        .assets
        .iter()
        .map(|a| AssetId::new(a.symbol.clone(), a.is_nst))
        .collect();
    let validators = scenario
        .validators
        .iter()
        .map(|v| Validator::new(v.id.clone(), v.direct_stake, v.min_stake))
        .collect();
    let genesis = EpochLedger::genesis(assets, validators, params)?;

    let spec = &scenario.agents;
    let mut agent_rng = stream(scenario.seed, STREAM_AGENTS);
    let mut event_rng = stream(scenario.seed, STREAM_EVENTS);
    let width = spec.count.to_string().len();
    let mut agents: BTreeMap<String, Agent> = (0..spec.count)
        .map(|i| {
            let id = format!("lp{i:0width$}");
            let raw = agent_rng.random_range(spec.endowment_min.raw()..=spec.endowment_max.raw());
            let max_lock = spec.lock_menu[agent_rng.random_range(0..spec.lock_menu.len())];
            let agent = Agent {
                id: id.clone(),
                capital: Amount::from_raw(raw),
                max_lock,
                discount_rate: spec.discount_rate,
            };
            (id, agent)
        })
        .collect();

    let mut ledgers = vec![genesis];
    for e in 1..=scenario.epochs {
        let prev = ledgers.last().expect("genesis present");
        let mut inputs = EpochInputs::default();

        for agent in agents.values_mut() {
            let idle = !prev.reserves.iter().any(|r| r.owner == agent.id);
            let enters = agent_rng.random_bool(spec.entry_probability);
            if idle && enters {
                let deposits = agent_step(agent, prev, params, market, &spec.lock_menu);
                let committed: Amount = deposits
                    .iter()
                    .map(|d| {
                        d.size
                            .mul_f64(market.price(&d.asset, prev.epoch).unwrap_or(0.0))
                    })
                    .sum();
                agent.capital = agent.capital.saturating_sub_floor(committed);
                inputs.deposits.extend(deposits);
            }
        }
        for account in prev.credits.accounts.values() {
            let draw: f64 = agent_rng.random_range(0.0..2.0);
            if account.cap.is_positive() {
                inputs.consumption.push(Consumption {
                    owner: account.address.clone(),
                    service: "transactions".into(),
                    amount: account.cap.mul_f64(spec.service_use_rate * draw),
                });
            }
        }
        for v in prev.validators.values() {
            let hit = event_rng.random_bool(scenario.events.slash_probability);
            if hit && v.active {
                inputs.slashes.push(v.id.clone());
            }
        }

        let next = advance_epoch_with(prev, params, market, &inputs)
            .map_err(|source| SimError::Engine { epoch: e, source })?;
        next.check_invariants(params)
            .map_err(|violations| SimError::Invariant {
                epoch: e,
                violations,
            })?;
        for w in &next.events.withdrawals {
            if let Some(agent) = agents.get_mut(&w.owner) {
                agent.capital += w.size.mul_f64(market.price(&w.asset, e).unwrap_or(0.0));
            }
        }
        ledgers.push(next);
    }
    Ok(Trace {
        name: scenario.name.clone(),
        seed: scenario.seed,
        params: params.clone(),
        ledgers,
    })
}

/// A randomised but valid scenario: up to 200 epochs, 6 assets and 20
/// agents. Used for property tests over the whole engine.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = stream(seed, 0);
    let n_assets = rng.random_range(2..=6usize);
    let mut assets: Vec<AssetSpec> = (0..n_assets)
        .map(|i| AssetSpec {
            symbol: if i == 0 {
                "NST".into()
            } else {
                format!("LP{i}")
            },
            is_nst: i == 0,
            initial_price: rng.random_range(0.2..20.0),
            vol: rng.random_range(0.0..0.08),
            drift: rng.random_range(-0.005..0.005),
            spread: rng.random_range(0.0..0.01),
            utilisation: rng.random_range(0.0..1.0),
            trades_per_epoch: rng.random_range(0..6),
            wash_probability: rng.random_range(0.0..0.3),
        })
        .collect();
    assets[0].trades_per_epoch = 0;
    let validators = (0..rng.random_range(1..=4usize))
        .map(|i| {
            let min = rng.random_range(0..2_000i64);
            ValidatorSpec {
                id: format!("v{i}"),
                direct_stake: Amount::from_int(min + rng.random_range(0..50_000i64)),
                min_stake: Amount::from_int(min),
            }
        })
        .collect();
    let m_win = rng.random_range(1..=5usize);
    let b = rng.random_range(0.0..3.0);
    let params = crate::state::ProtocolParams {
        rho_min: rng.random_range(1.0..2.0),
        eta: rng.random_range(0.0..2.0),
        chi: b + if rng.random_bool(0.5) {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        },
        b,
        zeta: rng.random_range(0.05..1.0),
        theta: rng.random_range(0.0..4.0),
        c: [1, 3, 5][rng.random_range(0..3usize)],
        k: rng.random_range(0.01..1.0),
        nu: rng.random_range(0.1..3.0),
        e_mid: rng.random_range(0.0..100.0),
        lock_min_fraction: rng.random_range(0.0..1.0),
        upsilon: rng.random_range(0.001..0.1),
        psi: rng.random_range(0.001..0.1),
        q1: rng.random_range(0.5..5.0),
        q2: rng.random_range(0.5..5.0),
        b_lower: rng.random_range(0.0..0.05),
        target_eff_init: rng.random_range(0.0..1.0),
        g_factor: rng.random_range(0.1..3.0),
        kappa_w: rng.random_range(0.2..4.0),
        w_nst_target: rng.random_range(0.3..0.95),
        varpi: rng.random_range(0.0..0.5),
        m_win,
        n_win: m_win + rng.random_range(1..=10usize),
        unstake_epochs: rng.random_range(0..10),
        r_min: Amount::from_f64(rng.random_range(0.0..5.0)),
        srr: rng.random_range(0.0..0.05),
        accrual_epochs: rng.random_bool(0.3).then(|| rng.random_range(5..150)),
        extension_interval: rng.random_range(1..=3),
        liveness_factor: rng.random_range(0.2..2.0),
        sigma_ceiling: rng.random_range(0.01..0.2),
        es_limit: rng.random_range(0.01..0.2),
        risk_lookback: rng.random_range(10..=30),
        retarget_interval: rng.random_range(1..=20),
        round_len: rng.random_range(1..=20),
        credit_budget_initial: Amount::from_int(rng.random_range(0..5_000)),
        credit_budget_decay: rng.random_range(0.5..1.0),
        gamma: rng.random_range(0.0..0.2),
        ..Default::default()
    };
    let agents = AgentSpec {
        count: rng.random_range(1..=20),
        endowment_min: Amount::from_int(10),
        endowment_max: Amount::from_int(rng.random_range(10..20_000)),
        lock_menu: vec![
            rng.random_range(1..10),
            rng.random_range(10..60),
            rng.random_range(60..200),
        ],
        discount_rate: rng.random_range(0.0..0.05),
        entry_probability: rng.random_range(0.05..1.0),
        service_use_rate: rng.random_range(0.0..0.5),
    };
    Scenario {
        schema_version: SCHEMA_VERSION,
        name: format!("random-{seed}"),
        seed,
        epochs: rng.random_range(1..=200),
        params,
        metrics: Default::default(),
        assets,
        validators,
        agents,
        demand: DemandSpec {
            step_epoch: rng.random_bool(0.5).then(|| rng.random_range(0..100)),
            step_size: rng.random_range(-0.5..0.5),
            noise: rng.random_range(0.0..0.2),
        },
        events: EventSpec {
            slash_probability: rng.random_range(0.0..0.05),
        },
    }
}
