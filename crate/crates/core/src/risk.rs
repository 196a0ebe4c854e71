//! Risk analytics: volatility, portfolio variance, historical expected
//! shortfall, liquidity risk, wash-trade detection, the off-chain
//! target-weight optimiser and the ex-post objective evaluator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::state::{EpochLedger, ProtocolParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RiskError {
    #[error("need at least {required} samples, got {got}")]
    InsufficientSamples { required: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid correlation matrix: {0}")]
    InvalidCorrelation(String),
    #[error("zero trading volume over the window: liquidity risk is unbounded")]
    InfiniteViscosity,
    #[error("confidence level {0} outside (0, 1)")]
    InvalidConfidence(f64),
    #[error("target-weight problem is infeasible: {0}")]
    Infeasible(String),
    #[error("objective weights must sum to 1, got {0}")]
    ObjectiveWeights(f64),
    #[error("empty trace")]
    EmptyTrace,
}

pub type Result<T> = std::result::Result<T, RiskError>;

/// Symmetric correlation matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(DMatrix<f64>);

impl CorrelationMatrix {
    const TOL: f64 = 1e-9;

    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(RiskError::InvalidCorrelation(format!(
                "not square ({}x{})",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let n = matrix.nrows();
        for i in 0..n {
            if (matrix[(i, i)] - 1.0).abs() > Self::TOL {
                return Err(RiskError::InvalidCorrelation(format!(
                    "diagonal entry {i} is {}",
                    matrix[(i, i)]
                )));
            }
            for j in 0..n {
                let v = matrix[(i, j)];
                if !v.is_finite() || v.abs() > 1.0 + Self::TOL {
                    return Err(RiskError::InvalidCorrelation(format!(
                        "entry ({i},{j}) = {v} outside [-1, 1]"
                    )));
                }
                if (v - matrix[(j, i)]).abs() > Self::TOL {
                    return Err(RiskError::InvalidCorrelation(format!(
                        "asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(CorrelationMatrix(matrix))
    }

    pub fn identity(n: usize) -> Self {
        CorrelationMatrix(DMatrix::identity(n, n))
    }

    /// Two-asset matrix with off-diagonal `rho`.
    pub fn pair(rho: f64) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]))
    }

    /// Sample correlation of aligned return series. Series with zero
    /// variance are treated as uncorrelated with everything else.
    pub fn from_returns(series: &[Vec<f64>]) -> Result<Self> {
        let n = series.len();
        let len = series.first().map_or(0, Vec::len);
        if series.iter().any(|s| s.len() != len) {
            return Err(RiskError::DimensionMismatch(
                "return series of unequal length".into(),
            ));
        }
        if len < 2 {
            return Err(RiskError::InsufficientSamples {
                required: 2,
                got: len,
            });
        }
        let means: Vec<f64> = series.iter().map(|s| mean(s)).collect();
        let mut m = DMatrix::identity(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let (mut cov, mut vi, mut vj) = (0.0, 0.0, 0.0);
                for t in 0..len {
                    let a = series[i][t] - means[i];
                    let b = series[j][t] - means[j];
                    cov += a * b;
                    vi += a * a;
                    vj += b * b;
                }
                let rho = if vi > 0.0 && vj > 0.0 {
                    (cov / (vi.sqrt() * vj.sqrt())).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
                m[(i, j)] = rho;
                m[(j, i)] = rho;
            }
        }
        Ok(CorrelationMatrix(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Aligned per-asset returns over a lookback window plus their correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnWindow {
    pub returns: Vec<Vec<f64>>,
    pub correlation: CorrelationMatrix,
}

impl ReturnWindow {
    /// Log returns of each price path. All paths must share a length ≥ 3.
    pub fn from_prices(paths: &[&[f64]]) -> Result<Self> {
        let returns: Vec<Vec<f64>> = paths.iter().map(|p| log_returns(p)).collect();
        let correlation = CorrelationMatrix::from_returns(&returns)?;
        Ok(ReturnWindow {
            returns,
            correlation,
        })
    }

    pub fn volatilities(&self) -> Result<Vec<f64>> {
        self.returns
            .iter()
            .map(|r| realized_volatility(r))
            .collect()
    }

    /// Sample rows: one return vector across assets per timestep.
    pub fn samples(&self) -> Vec<Vec<f64>> {
        let len = self.returns.first().map_or(0, Vec::len);
        (0..len)
            .map(|t| self.returns.iter().map(|r| r[t]).collect())
            .collect()
    }
}

pub fn log_returns(prices: &[f64]) -> Vec<f64> {
    prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the `N - 1` denominator.
pub fn realized_volatility(returns: &[f64]) -> Result<f64> {
    if returns.len() < 2 {
        return Err(RiskError::InsufficientSamples {
            required: 2,
            got: returns.len(),
        });
    }
    let mu = mean(returns);
    let ss: f64 = returns.iter().map(|r| (r - mu).powi(2)).sum();
    Ok((ss / (returns.len() - 1) as f64).sqrt())
}

/// `Σ_b Σ_j w_b w_j ρ_bj σ_b σ_j`.
pub fn portfolio_variance(
    weights: &[f64],
    vols: &[f64],
    correlation: &CorrelationMatrix,
) -> Result<f64> {
    let n = weights.len();
    if vols.len() != n || correlation.dim() != n {
        return Err(RiskError::DimensionMismatch(format!(
            "{} weights, {} vols, {}x{} correlation",
            n,
            vols.len(),
            correlation.dim(),
            correlation.dim()
        )));
    }
    let mut total = 0.0;
    for b in 0..n {
        for j in 0..n {
            total += weights[b] * weights[j] * correlation.get(b, j) * vols[b] * vols[j];
        }
    }
    Ok(total)
}

fn check_confidence(ci: f64) -> Result<()> {
    if ci > 0.0 && ci < 1.0 {
        Ok(())
    } else {
        Err(RiskError::InvalidConfidence(ci))
    }
}

/// Smallest sample size with at least one observation in the `1 - ci` tail.
pub fn min_tail_samples(ci: f64) -> usize {
    ((1.0 / (1.0 - ci)) - 1e-9).ceil().max(1.0) as usize
}

/// Number of worst observations that make up the `1 - ci` tail.
pub fn tail_count(n: usize, ci: f64) -> usize {
    (((1.0 - ci) * n as f64) - 1e-9).ceil().max(1.0) as usize
}

fn sorted_tail(returns: &[f64], ci: f64) -> Result<Vec<f64>> {
    check_confidence(ci)?;
    let required = min_tail_samples(ci);
    if returns.len() < required {
        return Err(RiskError::InsufficientSamples {
            required,
            got: returns.len(),
        });
    }
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.truncate(tail_count(returns.len(), ci));
    Ok(sorted)
}

/// Historical value at risk: the loss at the boundary of the tail.
pub fn historical_var(returns: &[f64], ci: f64) -> Result<f64> {
    let tail = sorted_tail(returns, ci)?;
    Ok(-tail[tail.len() - 1])
}

/// Historical expected shortfall, reported as a positive loss.
pub fn expected_shortfall(returns: &[f64], ci: f64) -> Result<f64> {
    let tail = sorted_tail(returns, ci)?;
    Ok(-mean(&tail))
}

/// Spread cost plus a linear market-impact term: `Sp/2 + coeff·Q/V`.
pub fn liquidity_risk(spread: f64, volume: f64, order_size: f64, impact_coeff: f64) -> Result<f64> {
    if volume <= 0.0 {
        return Err(RiskError::InfiniteViscosity);
    }
    Ok(spread / 2.0 + impact_coeff * order_size / volume)
}

/// One print on an asset's trade tape. Positive volume is a buy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub timestep: u64,
    pub volume: f64,
    pub price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WashPair {
    pub first: usize,
    pub second: usize,
}

const WASH_VOLUME_TOL: f64 = 1e-12;

/// Flags adjacent opposite-sign trades of equal size at (nearly) the same
/// price within `window` timesteps of each other. A flagged trade is not
/// reused in a second pair.
pub fn detect_wash_trades(tape: &[Trade], price_tol: f64, window: u64) -> Vec<WashPair> {
    let mut flagged = Vec::new();
    let mut i = 0;
    while i + 1 < tape.len() {
        let (a, b) = (&tape[i], &tape[i + 1]);
        let opposite = a.volume * b.volume < 0.0;
        let same_size = (a.volume.abs() - b.volume.abs()).abs() <= WASH_VOLUME_TOL;
        let close_price = (a.price - b.price).abs() <= price_tol;
        let close_time = b.timestep.saturating_sub(a.timestep) <= window;
        if opposite && same_size && close_price && close_time && a.volume != 0.0 {
            flagged.push(WashPair {
                first: i,
                second: i + 1,
            });
            i += 2;
        } else {
            i += 1;
        }
    }
    flagged
}

/// Inputs of the minimum-variance target-weight problem.
#[derive(Debug, Clone)]
pub struct TargetProblem {
    pub vols: Vec<f64>,
    pub correlation: CorrelationMatrix,
    pub nst_index: usize,
    /// Assets failing qualification are pinned to zero weight.
    pub admissible: Vec<bool>,
    /// Joint return samples (rows = timesteps) for the ES constraint.
    pub samples: Vec<Vec<f64>>,
    pub w_nst_floor: f64,
    pub sigma_ceiling: f64,
    pub es_limit: f64,
    pub ci: f64,
}

impl TargetProblem {
    pub fn new(
        vols: Vec<f64>,
        correlation: CorrelationMatrix,
        nst_index: usize,
        params: &ProtocolParams,
    ) -> Self {
        let n = vols.len();
        TargetProblem {
            vols,
            correlation,
            nst_index,
            admissible: vec![true; n],
            samples: Vec::new(),
            w_nst_floor: params.w_nst_target,
            sigma_ceiling: params.sigma_ceiling,
            es_limit: params.es_limit,
            ci: params.ci,
        }
    }

    pub fn with_samples(mut self, samples: Vec<Vec<f64>>) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_admissible(mut self, admissible: Vec<bool>) -> Self {
        self.admissible = admissible;
        self
    }

    /// Indices that may carry weight: NST plus qualified assets under the
    /// volatility ceiling.
    pub fn free_assets(&self) -> Vec<usize> {
        (0..self.vols.len())
            .filter(|&i| {
                i == self.nst_index || (self.admissible[i] && self.vols[i] <= self.sigma_ceiling)
            })
            .collect()
    }

    pub fn variance(&self, w: &[f64]) -> f64 {
        portfolio_variance(w, &self.vols, &self.correlation).unwrap_or(f64::INFINITY)
    }

    /// Historical ES of the weighted portfolio, when samples allow it.
    pub fn portfolio_es(&self, w: &[f64]) -> Option<f64> {
        if self.samples.is_empty() {
            return None;
        }
        let rp: Vec<f64> = self
            .samples
            .iter()
            .map(|row| row.iter().zip(w).map(|(r, wi)| r * wi).sum())
            .collect();
        expected_shortfall(&rp, self.ci).ok()
    }

    fn es_subgradient(&self, w: &[f64]) -> Option<(f64, Vec<f64>)> {
        if self.samples.is_empty() {
            return None;
        }
        let mut rp: Vec<(f64, usize)> = self
            .samples
            .iter()
            .enumerate()
            .map(|(t, row)| (row.iter().zip(w).map(|(r, wi)| r * wi).sum(), t))
            .collect();
        if rp.len() < min_tail_samples(self.ci) {
            return None;
        }
        rp.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = tail_count(rp.len(), self.ci);
        let es = -rp[..k].iter().map(|(r, _)| r).sum::<f64>() / k as f64;
        let mut g = vec![0.0; w.len()];
        for &(_, t) in &rp[..k] {
            for (gi, r) in g.iter_mut().zip(&self.samples[t]) {
                *gi -= r / k as f64;
            }
        }
        Some((es, g))
    }
}

/// Solver output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetWeights {
    pub weights: Vec<f64>,
    pub achieved_variance: f64,
    pub es_achieved: Option<f64>,
    pub iterations: usize,
}

const SOLVER_MAX_ITERS: usize = 10_000;
const SOLVER_TOL: f64 = 1e-8;

/// Projects `v` onto `{x ≥ 0, Σx = total}` (sort-based simplex projection).
fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cumulative += ui;
        let t = (cumulative - total) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

struct FeasibleSet {
    free: Vec<usize>,
    lower: Vec<f64>,
    n: usize,
}

impl FeasibleSet {
    fn project(&self, w: &[f64]) -> Vec<f64> {
        let shifted: Vec<f64> = self
            .free
            .iter()
            .zip(&self.lower)
            .map(|(&i, lb)| w[i] - lb)
            .collect();
        let slack = 1.0 - self.lower.iter().sum::<f64>();
        let projected = project_simplex(&shifted, slack.max(0.0));
        let mut out = vec![0.0; self.n];
        for ((&i, lb), p) in self.free.iter().zip(&self.lower).zip(projected) {
            out[i] = lb + p;
        }
        out
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Minimum-variance target weights with the NST floor, the volatility
/// filter and (when return samples are supplied) the ES ceiling.
///
/// Deterministic projected gradient descent over the floored simplex,
/// seeded at the NST-floor corner. When the ES ceiling binds, a penalised
/// descent is followed by a bisection toward the minimum-ES point so the
/// returned weights satisfy the ceiling exactly.
pub fn target_weights(problem: &TargetProblem) -> Result<TargetWeights> {
    let n = problem.vols.len();
    if problem.correlation.dim() != n || problem.admissible.len() != n || problem.nst_index >= n {
        return Err(RiskError::DimensionMismatch(format!(
            "{n} vols, {}x{} correlation, {} admissibility flags, NST index {}",
            problem.correlation.dim(),
            problem.correlation.dim(),
            problem.admissible.len(),
            problem.nst_index
        )));
    }
    if problem.samples.iter().any(|row| row.len() != n) {
        return Err(RiskError::DimensionMismatch(
            "return samples do not match the asset count".into(),
        ));
    }
    if problem.vols.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(RiskError::DimensionMismatch(
            "volatilities must be finite and ≥ 0".into(),
        ));
    }
    if problem.w_nst_floor > 1.0 + 1e-12 || problem.w_nst_floor < 0.0 {
        return Err(RiskError::Infeasible(format!(
            "NST floor {} outside [0, 1]",
            problem.w_nst_floor
        )));
    }
    let free = problem.free_assets();
    let lower: Vec<f64> = free
        .iter()
        .map(|&i| {
            if i == problem.nst_index {
                problem.w_nst_floor.min(1.0)
            } else {
                0.0
            }
        })
        .collect();
    let set = FeasibleSet { free, lower, n };

    let others: Vec<usize> = set
        .free
        .iter()
        .copied()
        .filter(|&i| i != problem.nst_index)
        .collect();
    let mut w = vec![0.0; n];
    w[problem.nst_index] = problem.w_nst_floor.min(1.0);
    if others.is_empty() {
        w[problem.nst_index] = 1.0;
    } else {
        let share = (1.0 - w[problem.nst_index]) / others.len() as f64;
        for &i in &others {
            w[i] = share;
        }
    }

    let cov = DMatrix::from_fn(n, n, |i, j| {
        problem.correlation.get(i, j) * problem.vols[i] * problem.vols[j]
    });
    // Lipschitz bound for the gradient 2Σw via the largest absolute row sum.
    let lipschitz = 2.0
        * (0..n)
            .map(|i| (0..n).map(|j| cov[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max);
    let step = if lipschitz > 0.0 {
        1.0 / lipschitz
    } else {
        1.0
    };

    let mut iterations = 0;
    let descend = |start: Vec<f64>, penalty: f64, iterations: &mut usize| -> Vec<f64> {
        let mut w = start;
        for _ in 0..SOLVER_MAX_ITERS {
            *iterations += 1;
            let x = DVector::from_column_slice(&w);
            let mut grad: Vec<f64> = (&cov * x * 2.0).iter().copied().collect();
            if penalty > 0.0 {
                if let Some((es, g)) = problem.es_subgradient(&w) {
                    let excess = es - problem.es_limit;
                    if excess > 0.0 {
                        for (gi, ge) in grad.iter_mut().zip(g) {
                            *gi += 2.0 * penalty * excess * ge;
                        }
                    }
                }
            }
            let eff_step = step / (1.0 + penalty * step.min(1.0));
            let trial: Vec<f64> = w
                .iter()
                .zip(&grad)
                .map(|(wi, gi)| wi - eff_step * gi)
                .collect();
            let next = set.project(&trial);
            let moved = dist(&next, &w);
            w = next;
            if moved < SOLVER_TOL {
                break;
            }
        }
        w
    };

    w = set.project(&w);
    w = descend(w, 0.0, &mut iterations);

    let es_binds = matches!(problem.portfolio_es(&w), Some(es) if es > problem.es_limit);
    if es_binds {
        let anchor = min_es_point(problem, &set)?;
        let mut penalised = w.clone();
        for penalty in [1e2, 1e3, 1e4] {
            penalised = descend(penalised, penalty, &mut iterations);
        }
        let start = if problem
            .portfolio_es(&penalised)
            .is_some_and(|es| es <= problem.es_limit)
        {
            penalised
        } else {
            bisect_to_es_limit(problem, &penalised, &anchor)
        };
        w = start;
    }

    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        let fix = 1.0 - total;
        let k = set
            .free
            .iter()
            .copied()
            .max_by(|&a, &b| w[a].total_cmp(&w[b]))
            .unwrap_or(problem.nst_index);
        w[k] += fix;
    }

    Ok(TargetWeights {
        achieved_variance: problem.variance(&w),
        es_achieved: problem.portfolio_es(&w),
        weights: w,
        iterations,
    })
}

fn min_es_point(problem: &TargetProblem, set: &FeasibleSet) -> Result<Vec<f64>> {
    let n = problem.vols.len();
    let mut w = set.project(&vec![1.0 / n as f64; n]);
    let mut best = w.clone();
    let mut best_es = problem.portfolio_es(&w).unwrap_or(f64::INFINITY);
    for t in 1..=4000 {
        let Some((es, g)) = problem.es_subgradient(&w) else {
            break;
        };
        if es < best_es {
            best_es = es;
            best = w.clone();
        }
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let step = 0.1 / (t as f64).sqrt() / norm;
        let trial: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect();
        w = set.project(&trial);
    }
    if best_es > problem.es_limit {
        return Err(RiskError::Infeasible(format!(
            "lowest attainable expected shortfall {best_es:.6} exceeds limit {}",
            problem.es_limit
        )));
    }
    Ok(best)
}

fn bisect_to_es_limit(problem: &TargetProblem, from: &[f64], feasible: &[f64]) -> Vec<f64> {
    let point = |t: f64| -> Vec<f64> {
        from.iter()
            .zip(feasible)
            .map(|(a, b)| a + t * (b - a))
            .collect()
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if problem
            .portfolio_es(&point(mid))
            .is_some_and(|es| es <= problem.es_limit)
        {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    point(hi)
}

/// Scenario-level settings of the ex-post objective evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Weight on transactional value.
    pub w_value: f64,
    /// Weight on basket variance.
    pub w_variance: f64,
    /// Required probability that aggregate pool risk stays under `kappa_limit`.
    pub alpha: f64,
    pub kappa_limit: f64,
    pub cvar_beta: f64,
    pub cvar_limit: f64,
    /// Liveness threshold on the ejection frequency.
    pub lambda: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            w_value: 0.5,
            w_variance: 0.5,
            alpha: 0.95,
            kappa_limit: 0.5,
            cvar_beta: 0.99,
            cvar_limit: 0.25,
            lambda: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChanceConstraintReport {
    pub evaluated_epochs: usize,
    pub holding_epochs: usize,
    pub frequency: Option<f64>,
    pub alpha: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub epochs: usize,
    pub total_value: f64,
    pub total_variance: f64,
    pub objective: f64,
    pub chance: ChanceConstraintReport,
    pub cvar: Option<f64>,
    pub cvar_limit: f64,
    pub cvar_pass: Option<bool>,
    pub incentives: Amount,
    pub budget: Amount,
    pub budget_pass: bool,
}

/// Evaluates the protocol objective and its constraints on a recorded trace.
///
/// Per-pool ES (stored on each ledger) stands in for the pool risk κ; the
/// chance constraint is the empirical frequency of `Σ κ ≤ kappa_limit`. The
/// budget is the lifetime staking reward earned over the trace.
pub fn objective_metrics(trace: &[EpochLedger], config: &MetricsConfig) -> Result<ObjectiveReport> {
    let wsum = config.w_value + config.w_variance;
    if (wsum - 1.0).abs() > 1e-9 {
        return Err(RiskError::ObjectiveWeights(wsum));
    }
    if trace.is_empty() {
        return Err(RiskError::EmptyTrace);
    }
    let total_value: f64 = trace.iter().map(|l| l.metrics.transaction_value).sum();
    let total_variance: f64 = trace.iter().map(|l| l.metrics.basket_variance).sum();

    let mut evaluated = 0;
    let mut holding = 0;
    for ledger in trace {
        if ledger.metrics.pool_risk.is_empty() {
            continue;
        }
        evaluated += 1;
        let aggregate: f64 = ledger.metrics.pool_risk.values().sum();
        if aggregate <= config.kappa_limit {
            holding += 1;
        }
    }
    let frequency = (evaluated > 0).then(|| holding as f64 / evaluated as f64);
    let chance = ChanceConstraintReport {
        evaluated_epochs: evaluated,
        holding_epochs: holding,
        frequency,
        alpha: config.alpha,
        pass: frequency.is_none_or(|f| f >= config.alpha),
    };

    let returns: Vec<f64> = trace
        .iter()
        .filter_map(|l| l.metrics.collateral_return)
        .collect();
    let cvar = expected_shortfall(&returns, config.cvar_beta).ok();

    let incentives: Amount = trace.iter().map(|l| l.plan.budget).sum();
    let budget: Amount = trace.iter().map(|l| l.staking_rewards).sum();

    Ok(ObjectiveReport {
        epochs: trace.len(),
        total_value,
        total_variance,
        objective: config.w_value * total_value - config.w_variance * total_variance,
        chance,
        cvar,
        cvar_limit: config.cvar_limit,
        cvar_pass: cvar.map(|c| c <= config.cvar_limit),
        incentives,
        budget,
        budget_pass: incentives <= budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn volatility_examples() {
        assert_relative_eq!(
            realized_volatility(&[0.01, -0.01]).unwrap(),
            0.02f64.sqrt() / 10.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            realized_volatility(&[0.01, -0.01]).unwrap(),
            0.0141421356,
            epsilon = 1e-9
        );
        assert_eq!(realized_volatility(&[0.03; 5]).unwrap(), 0.0);
        assert_relative_eq!(
            realized_volatility(&[0.02, 0.0, -0.02]).unwrap(),
            0.02,
            epsilon = 1e-15
        );
        assert!(matches!(
            realized_volatility(&[0.1]),
            Err(RiskError::InsufficientSamples {
                required: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn portfolio_variance_examples() {
        let uncorrelated = CorrelationMatrix::pair(0.0).unwrap();
        assert_relative_eq!(
            portfolio_variance(&[0.5, 0.5], &[0.2, 0.2], &uncorrelated).unwrap(),
            0.02,
            epsilon = 1e-15
        );
        let perfect = CorrelationMatrix::pair(1.0).unwrap();
        assert_relative_eq!(
            portfolio_variance(&[0.5, 0.5], &[0.2, 0.2], &perfect).unwrap(),
            0.04,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            portfolio_variance(&[1.0], &[0.3], &CorrelationMatrix::identity(1)).unwrap(),
            0.09,
            epsilon = 1e-15
        );
        assert!(matches!(
            portfolio_variance(&[1.0, 0.0], &[0.3], &CorrelationMatrix::identity(2)),
            Err(RiskError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn correlation_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(CorrelationMatrix::new(bad).is_err());
        assert!(CorrelationMatrix::pair(1.5).is_err());
        assert!(CorrelationMatrix::new(DMatrix::from_row_slice(1, 1, &[0.9])).is_err());
    }

    #[test]
    fn expected_shortfall_examples() {
        assert_relative_eq!(
            expected_shortfall(&[-0.10, -0.05, 0.00, 0.02], 0.75).unwrap(),
            0.10,
            epsilon = 1e-15
        );
        assert!(expected_shortfall(&[0.0, 0.01, 0.02, 0.03], 0.75).unwrap() <= 0.0);
        assert_relative_eq!(
            expected_shortfall(&[-0.2, -0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.75).unwrap(),
            0.15,
            epsilon = 1e-15
        );
        assert!(matches!(
            expected_shortfall(&[-0.1, 0.0, 0.1], 0.75),
            Err(RiskError::InsufficientSamples {
                required: 4,
                got: 3
            })
        ));
        assert!(matches!(
            expected_shortfall(&[0.0; 10], 1.0),
            Err(RiskError::InvalidConfidence(_))
        ));
    }

    #[test]
    fn liquidity_risk_examples() {
        assert_relative_eq!(liquidity_risk(0.02, 10_000.0, 0.0, 1.0).unwrap(), 0.01);
        assert_relative_eq!(liquidity_risk(0.02, 10_000.0, 100.0, 1.0).unwrap(), 0.02);
        let impact = |v| liquidity_risk(0.0, v, 100.0, 1.0).unwrap();
        assert_relative_eq!(impact(20_000.0), impact(10_000.0) / 2.0);
        assert_eq!(
            liquidity_risk(0.02, 0.0, 1.0, 1.0),
            Err(RiskError::InfiniteViscosity)
        );
    }

    fn trade(t: u64, v: f64, p: f64) -> Trade {
        Trade {
            timestep: t,
            volume: v,
            price: p,
        }
    }

    #[test]
    fn wash_detector_examples() {
        let canonical = [trade(0, 10.0, 100.0), trade(1, -10.0, 100.0)];
        assert_eq!(
            detect_wash_trades(&canonical, 0.0, 1),
            vec![WashPair {
                first: 0,
                second: 1
            }]
        );
        let mismatch = [trade(0, 10.0, 100.0), trade(1, -5.0, 100.0)];
        assert!(detect_wash_trades(&mismatch, 0.5, 1).is_empty());
        let moved = [trade(0, 10.0, 100.0), trade(1, -10.0, 103.0)];
        assert!(detect_wash_trades(&moved, 0.5, 1).is_empty());
        let same_side = [trade(0, 10.0, 100.0), trade(1, 10.0, 100.0)];
        assert!(detect_wash_trades(&same_side, 0.5, 1).is_empty());
        let far_apart = [trade(0, 10.0, 100.0), trade(9, -10.0, 100.0)];
        assert!(detect_wash_trades(&far_apart, 0.5, 1).is_empty());
    }

    fn two_asset_problem(floor: f64) -> TargetProblem {
        TargetProblem {
            vols: vec![0.3, 0.1],
            correlation: CorrelationMatrix::pair(0.0).unwrap(),
            nst_index: 0,
            admissible: vec![true, true],
            samples: Vec::new(),
            w_nst_floor: floor,
            sigma_ceiling: 0.5,
            es_limit: f64::INFINITY,
            ci: 0.95,
        }
    }

    #[test]
    fn target_weights_single_nst() {
        let p = TargetProblem {
            vols: vec![0.3],
            correlation: CorrelationMatrix::identity(1),
            nst_index: 0,
            admissible: vec![true],
            samples: Vec::new(),
            w_nst_floor: 0.75,
            sigma_ceiling: 0.5,
            es_limit: 0.1,
            ci: 0.95,
        };
        let tw = target_weights(&p).unwrap();
        assert_eq!(tw.weights, vec![1.0]);
    }

    #[test]
    fn target_weights_floor_binds() {
        // Unconstrained minimum puts 0.01/(0.09+0.01) = 0.1 on NST.
        let free = target_weights(&two_asset_problem(0.0)).unwrap();
        assert!((free.weights[0] - 0.1).abs() < 1e-6, "{:?}", free.weights);
        let tw = target_weights(&two_asset_problem(0.5)).unwrap();
        assert!((tw.weights[0] - 0.5).abs() < 1e-9, "{:?}", tw.weights);
        assert!((tw.weights[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn target_weights_volatility_filter() {
        let mut p = two_asset_problem(0.2);
        p.vols = vec![0.3, 0.9];
        let tw = target_weights(&p).unwrap();
        assert_eq!(tw.weights, vec![1.0, 0.0]);
    }

    #[test]
    fn target_weights_infeasible_floor() {
        let p = two_asset_problem(1.5);
        assert!(matches!(target_weights(&p), Err(RiskError::Infeasible(_))));
    }

    #[test]
    fn target_weights_enforces_es_ceiling() {
        // Asset 1 has low variance but a fat left tail in the samples.
        let mut samples = vec![vec![0.01, 0.001]; 19];
        samples.push(vec![-0.02, -0.30]);
        let mut p = two_asset_problem(0.0);
        p.samples = samples;
        p.ci = 0.95;
        p.es_limit = 0.1;
        let tw = target_weights(&p).unwrap();
        let es = tw.es_achieved.unwrap();
        assert!(es <= 0.1 + 1e-12, "es {es}");
        assert!((tw.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        p.es_limit = -1.0;
        assert!(matches!(target_weights(&p), Err(RiskError::Infeasible(_))));
    }

    proptest! {
        #[test]
        fn es_dominates_var(xs in proptest::collection::vec(-1.0f64..1.0, 20..80), ci in 0.5f64..0.95) {
            let es = expected_shortfall(&xs, ci).unwrap();
            let var = historical_var(&xs, ci).unwrap();
            prop_assert!(es >= var - 1e-12);
        }

        #[test]
        fn identity_correlation_variance(ws in proptest::collection::vec(0.0f64..1.0, 1..6), seed in 0.01f64..1.0) {
            let vols: Vec<f64> = (0..ws.len()).map(|i| seed * (i + 1) as f64 / 3.0).collect();
            let expected: f64 = ws.iter().zip(&vols).map(|(w, s)| w * w * s * s).sum();
            let got = portfolio_variance(&ws, &vols, &CorrelationMatrix::identity(ws.len())).unwrap();
            prop_assert!((got - expected).abs() < 1e-12);
        }

        #[test]
        fn wash_pattern_always_flagged(
            v in 0.001f64..1e6,
            p in 0.01f64..1e4,
            gap in 0u64..5,
            noise in proptest::collection::vec((1.0f64..2.0, 10.0f64..20.0), 0..5),
        ) {
            // Unrelated same-side trades around the canonical pair.
            let mut tape: Vec<Trade> = noise.iter().enumerate().map(|(i, (vol, px))| trade(i as u64, *vol, *px)).collect();
            let base = tape.len() as u64;
            tape.push(trade(base, v, p));
            tape.push(trade(base + gap, -v, p));
            let flags = detect_wash_trades(&tape, 1e-9, 5);
            let expected = WashPair { first: tape.len() - 2, second: tape.len() - 1 };
            prop_assert!(flags.contains(&expected));
        }
    }
}
