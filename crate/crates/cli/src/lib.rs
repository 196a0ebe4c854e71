//! Command implementations behind the `poel` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use poel_core::sim::{run, summarize, trace_table, Scenario, SimError, Summary, Table, TableError};
use poel_core::state::ParamViolation;

pub const TRACE_CSV: &str = "trace.csv";
pub const TRACE_JSON: &str = "trace.json";
pub const SUMMARY: &str = "summary.json";
pub const RESOLVED: &str = "scenario.toml";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ParamViolation>),
    #[error(transparent)]
    Engine(SimError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Table {
        path: PathBuf,
        #[source]
        source: TableError,
    },
    #[error("{path}: {message}")]
    Trace { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::Invalid(_) => 1,
            CliError::Engine(_) => 2,
            CliError::Io { .. } | CliError::Table { .. } | CliError::Trace { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub epochs: Option<u64>,
    pub format: Format,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    parse_scenario(&read(path)?, path)
}

pub fn to_toml(scenario: &Scenario) -> String {
    toml::to_string(scenario).expect("scenario serialises to toml")
}

/// Parses and validates; returns the scenario if every invariant holds.
pub fn cmd_validate(path: &Path) -> Result<Scenario, CliError> {
    let scenario = load_scenario(path)?;
    scenario.validate().map_err(CliError::Invalid)?;
    Ok(scenario)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: PathBuf,
    pub summary: PathBuf,
    pub rows: usize,
}

pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let mut scenario = load_scenario(&cfg.config)?;
    if let Some(seed) = cfg.seed {
        scenario.seed = seed;
    }
    if let Some(epochs) = cfg.epochs {
        scenario.epochs = epochs;
    }
    scenario.validate().map_err(CliError::Invalid)?;
    let trace = run(&scenario).map_err(CliError::Engine)?;
    let table = trace_table(&trace);
    let summary = summarize(&trace, &scenario.metrics);

    fs::create_dir_all(&cfg.out).map_err(|source| CliError::Io {
        path: cfg.out.clone(),
        source,
    })?;
    let (name, body) = match cfg.format {
        Format::Csv => (TRACE_CSV, table.to_csv()),
        Format::Json => (TRACE_JSON, table.to_json()),
    };
    let trace_path = cfg.out.join(name);
    let summary_path = cfg.out.join(SUMMARY);
    write(&trace_path, &body)?;
    write(
        &summary_path,
        &serde_json::to_string_pretty(&summary).expect("summary serialises"),
    )?;
    write(&cfg.out.join(RESOLVED), &to_toml(&scenario))?;
    Ok(RunOutput {
        trace: trace_path,
        summary: summary_path,
        rows: table.rows.len(),
    })
}

/// Loads the trace table from `dir`, preferring CSV.
pub fn load_table(dir: &Path) -> Result<Table, CliError> {
    let csv = dir.join(TRACE_CSV);
    let json = dir.join(TRACE_JSON);
    let (path, parsed) = if csv.exists() {
        let text = read(&csv)?;
        let t = Table::from_csv(&text);
        (csv, t)
    } else if json.exists() {
        let text = read(&json)?;
        let t = Table::from_json(&text);
        (json, t)
    } else {
        return Err(CliError::Trace {
            path: dir.to_owned(),
            message: format!("no {TRACE_CSV} or {TRACE_JSON} found"),
        });
    };
    parsed.map_err(|source| CliError::Table { path, source })
}

pub fn load_summary(dir: &Path) -> Result<Summary, CliError> {
    let path = dir.join(SUMMARY);
    let text = read(&path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Trace {
        path,
        message: e.to_string(),
    })
}

/// Human-readable report. Table-derived figures are recomputed from the
/// trace file and must agree with the stored summary.
pub fn cmd_report(dir: &Path) -> Result<String, CliError> {
    let table = load_table(dir)?;
    let summary = load_summary(dir)?;
    let totals = table.totals().map_err(|source| CliError::Table {
        path: dir.to_owned(),
        source,
    })?;
    if totals != summary.totals {
        return Err(CliError::Trace {
            path: dir.join(SUMMARY),
            message: "summary totals do not match the trace table".into(),
        });
    }
    let targets: Vec<(u64, f64)> = {
        let epochs = table.column::<u64>("epoch");
        let values = table.column::<f64>("E_target");
        match (epochs, values) {
            (Ok(e), Ok(v)) => e
                .into_iter()
                .zip(v)
                .filter_map(|(e, v)| Some((e?, v?)))
                .collect(),
            (Err(source), _) | (_, Err(source)) => {
                return Err(CliError::Table {
                    path: dir.to_owned(),
                    source,
                })
            }
        }
    };

    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "scenario {} (seed {})", summary.name, summary.seed);
    let _ = writeln!(w, "epochs                {}", totals.epochs);
    let _ = writeln!(w, "rewards R             {}", totals.rewards);
    let _ = writeln!(w, "distributed DR        {}", totals.distributed_total);
    for (pool, dr) in &totals.distributed {
        let _ = writeln!(w, "  {pool:<19} {dr}");
    }
    let _ = writeln!(w, "staking rewards SR    {}", totals.staking_rewards);
    let _ = writeln!(w, "final reward pool     {}", totals.final_reward_pool);
    let _ = writeln!(w, "interest paid         {}", summary.interest_paid);
    let _ = writeln!(w, "credit budget         {}", totals.final_credit_budget);
    let _ = writeln!(
        w,
        "mean efficiency (m)   {}",
        fmt_opt(totals.mean_efficiency)
    );
    let _ = writeln!(w, "wash flags            {}", totals.wash_flags);
    let _ = writeln!(w, "slash events          {}", summary.slash_events);
    let _ = writeln!(w, "ejections             {}", summary.ejections);
    let _ = writeln!(w, "NST floor held        {:.4}", summary.ceiling_held);
    let _ = writeln!(w, "stake ratio held      {:.4}", summary.stake_ratio_held);
    match &summary.objective {
        Some(o) => {
            let _ = writeln!(w, "objective             {}", o.objective);
            let _ = writeln!(w, "  transaction value   {}", o.total_value);
            let _ = writeln!(w, "  basket variance     {}", o.total_variance);
            let _ = writeln!(
                w,
                "  ES constraint       {}/{} epochs (alpha {}) {}",
                o.chance.holding_epochs,
                o.chance.evaluated_epochs,
                o.chance.alpha,
                verdict(o.chance.pass)
            );
            let _ = writeln!(
                w,
                "  cVaR                {} (limit {}) {}",
                fmt_opt(o.cvar),
                o.cvar_limit,
                o.cvar_pass.map_or("-", verdict)
            );
            let _ = writeln!(
                w,
                "  incentive budget    {} <= {} {}",
                o.incentives,
                o.budget,
                verdict(o.budget_pass)
            );
        }
        None => {
            let _ = writeln!(
                w,
                "objective             unavailable: {}",
                summary.objective_error.as_deref().unwrap_or("unknown")
            );
        }
    }
    let l = &summary.liveness;
    let _ = writeln!(
        w,
        "ejection frequency    {}/{} (lambda {}) {}",
        l.ejection_epochs,
        l.epochs,
        l.lambda,
        verdict(l.pass)
    );
    let _ = writeln!(
        w,
        "reward bounds         {} violations, lifetime R {} vs SR {}",
        summary.dra.violations.len(),
        summary.dra.lifetime_rewards,
        summary.dra.lifetime_staking_rewards
    );
    let _ = writeln!(w, "credit rounds         {}", summary.credit_rounds.len());
    let _ = writeln!(w, "controller target path:");
    let mut last = None;
    for (e, t) in targets {
        if last != Some(t) {
            let _ = writeln!(w, "  epoch {e:>5}  {t}");
            last = Some(t);
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| x.to_string())
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "ok"
    } else {
        "FAIL"
    }
}
