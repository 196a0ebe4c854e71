use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Trace;
use crate::amount::Amount;
use crate::credits::RoundSummary;
use crate::rewards::{dra_feasibility, DraReport};
use crate::risk::{objective_metrics, MetricsConfig, ObjectiveReport};
use crate::staking::{liveness_probability_check, LivenessReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TableError {
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}, column `{column}`: cannot parse `{value}`")]
    BadValue {
        line: u64,
        column: String,
        value: String,
    },
    #[error("json: {0}")]
    Json(String),
}

/// Per-epoch time series. Row 0 is genesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn trace_table(trace: &Trace) -> Table {
    let pools = trace.collateral_assets();
    let mut columns = vec!["epoch".to_string()];
    for key in ["S", "L", "rho", "E", "DR", "I"] {
        columns.extend(pools.iter().map(|a| format!("{key}_{a}")));
    }
    columns.extend(
        [
            "E_m",
            "E_n",
            "E_target",
            "R",
            "RP",
            "SR",
            "w_NST",
            "m",
            "credit_budget",
            "wash_flags",
        ]
        .map(String::from),
    );
    let p = &trace.params;
    let rows = trace
        .ledgers
        .iter()
        .map(|l| {
            let mut row = vec![l.epoch.to_string()];
            row.extend(pools.iter().map(|a| l.pool_size(a).to_string()));
            row.extend(pools.iter().map(|a| l.pool_loan(a).to_string()));
            row.extend(
                pools
                    .iter()
                    .map(|a| opt(l.quotes.get(a).map(|q| q.effective_rho()))),
            );
            row.extend(pools.iter().map(|a| opt(l.metrics.pool_efficiency.get(a))));
            row.extend(pools.iter().map(|a| {
                l.plan
                    .pool(a)
                    .map_or(Amount::ZERO, |x| x.distributable)
                    .to_string()
            }));
            row.extend(
                pools
                    .iter()
                    .map(|a| opt(l.plan.pool(a).map(|x| x.interest_rate))),
            );
            row.push(opt(l.efficiency.cda_ma(p.m_win)));
            row.push(opt(l.efficiency.cda_ma(p.n_win)));
            row.push(l.controller.target.to_string());
            row.push(l.plan.budget.to_string());
            row.push(l.reward_pool.to_string());
            row.push(l.staking_rewards.to_string());
            row.push(opt(l.metrics.w_nst));
            row.push(l.multiplier.to_string());
            row.push(l.credits.budget.to_string());
            row.push(l.events.wash_flags.values().sum::<usize>().to_string());
            row
        })
        .collect();
    Table { columns, rows }
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("write to memory");
        for row in &self.rows {
            w.write_record(row).expect("write to memory");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Table, TableError> {
        let csv_err = |e: csv::Error| TableError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        };
        let mut r = csv::ReaderBuilder::new()
            .flexible(true)
            .from_reader(text.as_bytes());
        let columns: Vec<String> = r
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != columns.len() {
                return Err(TableError::Ragged {
                    line,
                    expected: columns.len(),
                    found: rec.len(),
                });
            }
            rows.push(rec.iter().map(str::to_owned).collect());
        }
        Ok(Table { columns, rows })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serialises")
    }

    pub fn from_json(text: &str) -> Result<Table, TableError> {
        let t: Table = serde_json::from_str(text).map_err(|e| TableError::Json(e.to_string()))?;
        for (i, row) in t.rows.iter().enumerate() {
            if row.len() != t.columns.len() {
                return Err(TableError::Ragged {
                    line: i as u64 + 1,
                    expected: t.columns.len(),
                    found: row.len(),
                });
            }
        }
        Ok(t)
    }

    fn index(&self, column: &str) -> Result<usize, TableError> {
        self.columns
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| TableError::MissingColumn(column.to_owned()))
    }

    /// Parsed values of `column`; empty cells become `None`. Line numbers in
    /// errors count the header as line 1.
    pub fn column<T: FromStr>(&self, column: &str) -> Result<Vec<Option<T>>, TableError> {
        let i = self.index(column)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(n, row)| {
                let cell = row[i].trim();
                if cell.is_empty() {
                    return Ok(None);
                }
                cell.parse().map(Some).map_err(|_| TableError::BadValue {
                    line: n as u64 + 2,
                    column: column.to_owned(),
                    value: cell.to_owned(),
                })
            })
            .collect()
    }

    pub fn pools(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter_map(|c| c.strip_prefix("DR_").map(str::to_owned))
            .collect()
    }

    pub fn totals(&self) -> Result<TableTotals, TableError> {
        let sum = |c: &str| -> Result<Amount, TableError> {
            Ok(self.column::<Amount>(c)?.into_iter().flatten().sum())
        };
        let last = |c: &str| -> Result<Option<Amount>, TableError> {
            Ok(self.column::<Amount>(c)?.into_iter().last().flatten())
        };
        let mut distributed = BTreeMap::new();
        for pool in self.pools() {
            distributed.insert(pool.clone(), sum(&format!("DR_{pool}"))?);
        }
        let efficiency: Vec<f64> = self.column::<f64>("E_m")?.into_iter().flatten().collect();
        Ok(TableTotals {
            epochs: self.rows.len().saturating_sub(1),
            rewards: sum("R")?,
            distributed_total: distributed.values().sum(),
            distributed,
            staking_rewards: sum("SR")?,
            final_reward_pool: last("RP")?.unwrap_or_default(),
            final_target: self.column::<f64>("E_target")?.into_iter().last().flatten(),
            final_credit_budget: last("credit_budget")?.unwrap_or_default(),
            mean_efficiency: (!efficiency.is_empty())
                .then(|| efficiency.iter().sum::<f64>() / efficiency.len() as f64),
            wash_flags: self
                .column::<usize>("wash_flags")?
                .into_iter()
                .flatten()
                .sum(),
        })
    }
}

/// Aggregates recoverable from an exported table alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableTotals {
    pub epochs: usize,
    pub rewards: Amount,
    pub distributed: BTreeMap<String, Amount>,
    pub distributed_total: Amount,
    pub staking_rewards: Amount,
    pub final_reward_pool: Amount,
    pub final_target: Option<f64>,
    pub final_credit_budget: Amount,
    pub mean_efficiency: Option<f64>,
    pub wash_flags: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub totals: TableTotals,
    /// Gross interest moved from low-weight to high-weight pools.
    pub interest_paid: Amount,
    pub slash_events: usize,
    pub ejections: usize,
    pub curtail_all_epochs: usize,
    /// Share of epochs where the NST weight met its floor.
    pub ceiling_held: f64,
    pub stake_ratio_held: f64,
    pub objective: Option<ObjectiveReport>,
    pub objective_error: Option<String>,
    pub dra: DraReport,
    pub liveness: LivenessReport,
    pub credit_rounds: Vec<RoundSummary>,
}

pub fn summarize(trace: &Trace, metrics: &MetricsConfig) -> Summary {
    let p = &trace.params;
    let body = trace.ledgers.get(1..).unwrap_or_default();
    let n = body.len().max(1) as f64;
    let totals = trace_table(trace).totals().expect("own table parses");
    let (objective, objective_error) = match objective_metrics(&trace.ledgers, metrics) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let col = |f: fn(&crate::state::EpochLedger) -> Amount| body.iter().map(f).collect::<Vec<_>>();
    Summary {
        name: trace.name.clone(),
        seed: trace.seed,
        totals,
        interest_paid: body
            .iter()
            .flat_map(|l| &l.plan.pools)
            .map(|p| p.interest_payable.max(Amount::ZERO))
            .sum(),
        slash_events: body.iter().map(|l| l.events.slashes.len()).sum(),
        ejections: body.iter().map(|l| l.events.ejections.len()).sum(),
        curtail_all_epochs: body.iter().filter(|l| l.events.curtail_all).count(),
        ceiling_held: body
            .iter()
            .filter(|l| l.metrics.w_nst.is_none_or(|w| w >= p.w_nst_target - 1e-9))
            .count() as f64
            / n,
        stake_ratio_held: body.iter().filter(|l| l.metrics.stake_ratio_ok).count() as f64 / n,
        objective,
        objective_error,
        dra: dra_feasibility(
            &col(|l| l.plan.budget),
            &col(|l| l.staking_rewards),
            &col(|l| l.pool_before_distribution),
            p.r_min,
        ),
        liveness: liveness_probability_check(&trace.ledgers, metrics.lambda),
        credit_rounds: trace
            .ledgers
            .last()
            .map(|l| l.credits.history.clone())
            .unwrap_or_default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run, tests::small_scenario};

    #[test]
    fn csv_round_trip_preserves_totals() {
        let trace = run(&small_scenario(11)).unwrap();
        let table = trace_table(&trace);
        assert_eq!(table.rows.len(), trace.ledgers.len());
        let back = Table::from_csv(&table.to_csv()).unwrap();
        assert_eq!(back, table);
        assert_eq!(Table::from_json(&table.to_json()).unwrap(), table);
        let totals = back.totals().unwrap();
        let direct: Amount = trace.ledgers.iter().map(|l| l.plan.budget).sum();
        assert_eq!(totals.rewards, direct);
    }

    #[test]
    fn bad_cell_reports_line() {
        let text = "epoch,R\n0,1\n1,abc\n";
        let t = Table::from_csv(text).unwrap();
        let err = t.column::<Amount>("R").unwrap_err();
        assert_eq!(
            err,
            TableError::BadValue {
                line: 3,
                column: "R".into(),
                value: "abc".into()
            }
        );
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = Table::from_csv("a,b\n1,2\n3\n").unwrap_err();
        assert!(matches!(err, TableError::Ragged { line: 3, .. }), "{err:?}");
    }
}
