//! Acceptance criteria 1-9. Runs as a plain binary (no libtest harness) so
//! each criterion prints exactly one status line.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use poel_core::collateral::{
    global_multiplier, multiplier_ratio, scaled_loans, three_asset_closed_form, Multiplier,
};
use poel_core::credits::{budget_increment, CreditState};
use poel_core::rewards::{
    controller_update, tenure_incentive, window_derivatives, ControllerDecision, ControllerState,
};
use poel_core::risk::{
    detect_wash_trades, expected_shortfall, target_weights, CorrelationMatrix, TargetProblem, Trade,
};
use poel_core::sim::{random_scenario, run, summarize, trace_table, AgentSpec, Scenario};
use poel_core::staking::slash;
use poel_core::state::{ProtocolParams, ReserveState};
use poel_core::Amount;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn c1_tenure_curve() -> Check {
    let start = Instant::now();
    let (lo, hi) = (100.0, 1000.0);
    let i = |t: f64| tenure_incentive(t, lo, hi, 1.0, 365.0, 0.01);
    let curve: Vec<f64> = (0..=730).map(|t| i(t as f64)).collect();
    for (t, w) in curve.windows(2).enumerate() {
        // Past the midpoint the curve reaches the cap in double precision;
        // from there it may only stay flat at exactly `hi`.
        ensure(w[1] > w[0] || (w[1] == hi && w[0] == hi), || {
            format!("not increasing at t={t}: {} -> {}", w[0], w[1])
        })?;
    }
    let (i0, i365, i730) = (curve[0], curve[365], curve[730]);
    ensure((120.0..=127.0).contains(&i0), || format!("I(0) = {i0}"))?;
    ensure((990.0..=997.0).contains(&i365), || {
        format!("I(365) = {i365}")
    })?;
    ensure(i730 >= 999.9, || format!("I(730) = {i730}"))?;
    within(start.elapsed(), 1.0)?;
    Ok(format!("I(0)={i0:.2} I(365)={i365:.2} I(730)={i730:.4}"))
}

fn c2_multiplier() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let size: [f64; 3] = std::array::from_fn(|_| rng.random_range(1.0..10_000.0));
        let price: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.01..50.0));
        let rho: [f64; 3] = std::array::from_fn(|_| rng.random_range(1.0..4.0));
        let implied: Vec<f64> = (0..3).map(|h| size[h] * price[h] / rho[h]).collect();
        let total: f64 = implied.iter().sum();
        let ceiling = total / rng.random_range(0.1..10.0);

        let closed = three_asset_closed_form(size, price, rho, ceiling);
        let general = multiplier_ratio(&implied, ceiling).ok_or("no ratio")?;
        let err = (closed - general).abs();
        worst = worst.max(err);
        ensure(err <= 1e-9, || {
            format!("case {case}: {general} vs closed form {closed}")
        })?;
        ensure(
            global_multiplier(&implied, ceiling) == Multiplier::Scale(general.max(1.0)),
            || format!("case {case}: clamp"),
        )?;

        let loans: Vec<Amount> = implied.iter().map(|x| Amount::from_f64(*x)).collect();
        let cap = Amount::from_f64(ceiling);
        let (_, scaled) = scaled_loans(&loans, cap);
        let after: Amount = scaled.iter().sum();
        ensure(after.to_f64() <= cap.to_f64() + 1e-12, || {
            format!("case {case}: {after} > {cap}")
        })?;
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("1000 cases, max |m - closed form| = {worst:.2e}"))
}

fn c3_conservation() -> Check {
    let start = Instant::now();
    let tol = Amount::from_f64(1e-12);
    let mut epochs = 0usize;
    for seed in 0..100 {
        let s = random_scenario(seed);
        ensure(
            s.epochs <= 200 && s.assets.len() <= 6 && s.agents.count <= 20,
            || format!("seed {seed}: scenario out of bounds"),
        )?;
        let trace = run(&s).map_err(|e| format!("seed {seed}: {e}"))?;
        let (mut sum_r, mut sum_sr) = (Amount::ZERO, Amount::ZERO);
        for l in &trace.ledgers {
            let e = l.epoch;
            let dr = l.plan.total_distributable();
            let ok_dr = dr == l.plan.budget || (l.plan.pools.is_empty() && l.plan.budget.is_zero());
            ensure(ok_dr, || {
                format!("seed {seed} epoch {e}: sum DR {dr} != R {}", l.plan.budget)
            })?;
            let ip = l.plan.total_interest();
            ensure(ip.abs() <= tol, || {
                format!("seed {seed} epoch {e}: sum IP = {ip}")
            })?;
            ensure(!l.reward_pool.is_negative(), || {
                format!("seed {seed} epoch {e}: RP < 0")
            })?;
            sum_r += l.plan.budget;
            sum_sr += l.staking_rewards;
            ensure(sum_r <= sum_sr, || {
                format!("seed {seed} epoch {e}: sum R {sum_r} > sum SR {sum_sr}")
            })?;
            for (a, q) in &l.quotes {
                let rho = q.effective_rho();
                ensure(rho >= 1.0, || {
                    format!("seed {seed} epoch {e}: rho[{a}] = {rho}")
                })?;
            }
            let effs = l
                .metrics
                .efficiency
                .into_iter()
                .chain(l.metrics.pool_efficiency.values().copied());
            for x in effs {
                ensure((0.0..=1.0).contains(&x), || {
                    format!("seed {seed} epoch {e}: E = {x}")
                })?;
            }
            epochs += 1;
        }
    }
    within(start.elapsed(), 60.0)?;
    Ok(format!("100 scenarios, {epochs} epochs checked"))
}

fn derivs(series: &[f64], w: usize) -> poel_core::rewards::WindowDerivatives {
    window_derivatives(series, w)
        .unwrap()
        .expect("enough history")
}

fn c4_controller() -> Check {
    let p = ProtocolParams {
        upsilon: 0.01,
        psi: 0.01,
        q1: 3.0,
        q2: 3.0,
        b_lower: 1e-3,
        m_win: 3,
        n_win: 6,
        ..Default::default()
    };

    // Rising, accelerating series: every decision is a full Υ step down.
    let rising: Vec<f64> = (0..40).map(|t| 0.1 + 0.0004 * (t * t) as f64).collect();
    let mut state = ControllerState::new(0.8);
    let mut decisions = 0;
    for end in p.n_win + 2..=rising.len() {
        let h = &rising[..end];
        let (s, l) = (derivs(h, p.m_win), derivs(h, p.n_win));
        ensure(
            s.first.abs() >= p.b_lower && l.first.abs() >= p.b_lower,
            || "series below bound".into(),
        )?;
        ensure(s.second > 0.0 && l.second > 0.0, || {
            "second derivatives not positive".into()
        })?;
        let before = state.target;
        let up = controller_update(state, Some(s), Some(l), &p);
        ensure(
            up.decision == ControllerDecision::Decrease(p.upsilon),
            || format!("{:?}", up.decision),
        )?;
        ensure(
            (before - up.state.target - p.upsilon).abs() <= 1e-12,
            || format!("step {} != {}", before - up.state.target, p.upsilon),
        )?;
        state = up.state;
        decisions += 1;
    }

    // Nearly flat series: accumulators collect the exact derivative sums.
    let flat: Vec<f64> = (0..30)
        .map(|t| 0.5 + 1e-6 * t as f64 + 1e-8 * (t * t) as f64)
        .collect();
    let mut state = ControllerState::new(0.6);
    let mut sums = [0.0f64; 4];
    for end in p.n_win + 2..=flat.len() {
        let h = &flat[..end];
        let (s, l) = (derivs(h, p.m_win), derivs(h, p.n_win));
        let up = controller_update(state, Some(s), Some(l), &p);
        ensure(up.decision == ControllerDecision::Accumulate, || {
            format!("{:?}", up.decision)
        })?;
        ensure(up.state.target == 0.6, || "target moved below bound".into())?;
        sums[0] += s.first;
        sums[1] += l.first;
        sums[2] += s.second;
        sums[3] += l.second;
        let got = [
            up.state.d1_short,
            up.state.d1_long,
            up.state.d2_short,
            up.state.d2_long,
        ];
        for (g, want) in got.iter().zip(sums) {
            ensure((g - want).abs() <= 1e-15, || {
                format!("accumulator {g} vs {want}")
            })?;
        }
        state = up.state;
    }

    // Damped branch: rising trend whose accumulated curvature is negative
    // and disagrees between windows.
    let rising_concave: Vec<f64> = (0..20)
        .map(|t| 0.2 + 0.02 * t as f64 - 0.0004 * (t * t) as f64)
        .collect();
    let h = &rising_concave[..];
    let (s, l) = (derivs(h, p.m_win), derivs(h, p.n_win));
    let mut damped = 0;
    for (acc_s, acc_l) in [(-0.003, -0.0005), (-0.4, -0.1), (-2.0, -0.05)] {
        let state = ControllerState {
            d2_short: acc_s,
            d2_long: acc_l,
            ..ControllerState::new(0.7)
        };
        let up = controller_update(state, Some(s), Some(l), &p);
        let diff = (s.second.max(acc_s) - l.second.max(acc_l)).abs();
        let want = p.upsilon / (p.q1 * diff).max(1.0);
        let ControllerDecision::Decrease(step) = up.decision else {
            return Err(format!("expected a damped decrease, got {:?}", up.decision));
        };
        ensure((step - want).abs() <= 1e-12, || {
            format!("damped step {step} vs {want}")
        })?;
        ensure((0.7 - up.state.target - want).abs() <= 1e-12, || {
            "target moved by the wrong step".into()
        })?;
        damped += 1;
    }
    Ok(format!(
        "{decisions} full steps, accumulation exact, {damped} damped steps"
    ))
}

struct Case {
    problem: TargetProblem,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let vols: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..0.08)).collect();
    let (a, b, c) = (
        rng.random_range(-0.6..0.9),
        rng.random_range(-0.6..0.9),
        rng.random_range(-0.6..0.9),
    );
    let mut corr = DMatrix::from_row_slice(3, 3, &[1.0, a, b, a, 1.0, c, b, c, 1.0]);
    // Keep it positive definite.
    while corr.clone().cholesky().is_none() {
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    corr[(i, j)] *= 0.8;
                }
            }
        }
    }
    let chol = corr.clone().cholesky().unwrap().l();
    let samples: Vec<Vec<f64>> = (0..250)
        .map(|_| {
            let z = DVector::from_fn(3, |_, _| StandardNormal.sample(rng));
            let x = &chol * z;
            (0..3).map(|i| x[i] * vols[i]).collect()
        })
        .collect();
    let mut params = ProtocolParams {
        // On the 0.01 lattice, so the grid can reach the floor itself.
        w_nst_target: rng.random_range(20..80) as f64 / 100.0,
        sigma_ceiling: 1.0,
        es_limit: 1.0,
        ..Default::default()
    };
    if rng.random_bool(0.3) {
        // Filter out the more volatile collateral asset.
        params.sigma_ceiling = (vols[1].min(vols[2]) + vols[1].max(vols[2])) / 2.0;
    }
    let mut problem = TargetProblem::new(vols, CorrelationMatrix::new(corr).unwrap(), 0, &params)
        .with_samples(samples);
    if rng.random_bool(0.5) {
        // ES ceiling somewhere between the grid's best achievable ES and the
        // unconstrained optimum's ES, so it sometimes binds.
        let free = grid_oracle(&problem).map(|w| problem.portfolio_es(&w).unwrap());
        let floor = grid_points(&problem)
            .filter_map(|w| problem.portfolio_es(&w))
            .fold(f64::INFINITY, f64::min);
        if let Some(es_free) = free {
            problem.es_limit =
                floor + rng.random_range(0.3..1.0) * (es_free - floor).max(0.0) + 1e-4;
        }
    }
    Case { problem }
}

fn grid_points(p: &TargetProblem) -> impl Iterator<Item = [f64; 3]> + '_ {
    let free = p.free_assets();
    (0..=100).flat_map(move |i| {
        let free = free.clone();
        (0..=100 - i).filter_map(move |j| {
            let w = [
                (100 - i - j) as f64 / 100.0,
                i as f64 / 100.0,
                j as f64 / 100.0,
            ];
            let ok =
                w[0] >= p.w_nst_floor - 1e-12 && (0..3).all(|k| w[k] == 0.0 || free.contains(&k));
            ok.then_some(w)
        })
    })
}

/// Minimum-variance point of the 0.01 simplex grid satisfying every
/// constraint.
fn grid_oracle(p: &TargetProblem) -> Option<[f64; 3]> {
    grid_points(p)
        .filter(|w| p.portfolio_es(w).is_none_or(|es| es <= p.es_limit))
        .map(|w| (p.variance(&w), w))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, w)| w)
}

fn c5_target_weights() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut binding = 0;
    let mut solver_time = Duration::ZERO;
    for case in 0..50 {
        let Case { problem } = random_case(&mut rng);
        let oracle = grid_oracle(&problem).ok_or_else(|| format!("case {case}: grid empty"))?;
        let solve = Instant::now();
        let got = target_weights(&problem).map_err(|e| format!("case {case}: {e}"))?;
        solver_time += solve.elapsed();
        let w = &got.weights;
        for k in 0..3 {
            let d = (w[k] - oracle[k]).abs();
            worst = worst.max(d);
            ensure(d <= 0.02, || {
                format!("case {case}: weights {w:?} vs grid {oracle:?}")
            })?;
        }
        ensure(w[0] >= problem.w_nst_floor, || {
            format!("case {case}: NST weight {} below floor", w[0])
        })?;
        for k in 1..3 {
            ensure(
                problem.vols[k] <= problem.sigma_ceiling || w[k] == 0.0,
                || format!("case {case}: filtered asset {k} has weight {}", w[k]),
            )?;
        }
        let returns: Vec<f64> = problem
            .samples
            .iter()
            .map(|r| r.iter().zip(w).map(|(x, wi)| x * wi).sum())
            .collect();
        let es = expected_shortfall(&returns, problem.ci).map_err(|e| e.to_string())?;
        ensure(es <= problem.es_limit, || {
            format!("case {case}: ES {es} > {}", problem.es_limit)
        })?;
        if problem.es_limit < 1.0 {
            binding += 1;
        }
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "50 cases ({binding} with ES ceiling), max deviation from grid {worst:.4}, solver {:.2}s",
        solver_time.as_secs_f64()
    ))
}

fn reserve(id: u64, asset: &str, size: Amount, loan: Amount) -> ReserveState {
    ReserveState {
        id,
        owner: format!("lp{id}"),
        asset: asset.into(),
        validator: "v".into(),
        size,
        loan,
        lock_start: 0,
        lock_len: 0,
    }
}

fn c6_slashing() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.random_range(1..=6);
        let mut prices = BTreeMap::new();
        let mut reserves = Vec::new();
        for i in 0..n {
            let asset = format!("A{}", i % 3);
            let price = *prices
                .entry(asset.clone())
                .or_insert_with(|| rng.random_range(0.05..40.0));
            let size = Amount::from_f64(rng.random_range(1.0..50_000.0));
            // Loans stay below collateral value, so slashing is covered.
            let loan = size.mul_f64(price / rng.random_range(1.0..3.0));
            reserves.push(reserve(i, &asset, size, loan));
        }
        let varpi = rng.random_range(0.0..=1.0);
        let out = slash(&reserves, &prices, varpi).map_err(|e| e.to_string())?;
        let loan: Amount = reserves.iter().map(|r| r.loan).sum();
        let expected = loan.to_f64() * varpi;
        ensure(out.shortfall.is_zero(), || {
            format!("case {case}: shortfall {}", out.shortfall)
        })?;
        let err = (out.value_removed - out.slashed).abs().to_f64();
        let rel = (out.slashed.to_f64() - expected).abs() / expected.max(1.0);
        worst = worst.max(err);
        ensure(err <= 1e-9, || {
            format!(
                "case {case}: removed {} vs L*varpi {}",
                out.value_removed, out.slashed
            )
        })?;
        ensure(rel <= 1e-12, || {
            format!("case {case}: L*varpi {} vs {expected}", out.slashed)
        })?;
    }
    Ok(format!("1000 cases, max |removed - L*varpi| = {worst:.2e}"))
}

fn c7_wash() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tol = 1e-6;
    let window = 1;
    let (mut planted, mut decoys) = (0, 0);
    for case in 0..500 {
        let mut tape = Vec::new();
        let mut t = 0u64;
        let mut wash_at = Vec::new();
        let mut decoy_at = Vec::new();
        for _ in 0..rng.random_range(5..40) {
            let price = rng.random_range(0.5..2.0);
            match rng.random_range(0..4) {
                0 => {
                    let v = rng.random_range(0.1..100.0);
                    let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    wash_at.push(tape.len());
                    tape.push(Trade {
                        timestep: t,
                        volume: s * v,
                        price,
                    });
                    tape.push(Trade {
                        timestep: t + 1,
                        volume: -s * v,
                        price,
                    });
                    planted += 1;
                }
                1 => {
                    let v = rng.random_range(0.1..100.0);
                    let (v2, p2) = if rng.random_bool(0.5) {
                        (v * (1.0 + rng.random_range(1e-6..0.5)), price)
                    } else {
                        let shift = rng.random_range(2.0 * tol..0.1);
                        (
                            v,
                            if rng.random_bool(0.5) {
                                price + shift
                            } else {
                                price - shift
                            },
                        )
                    };
                    decoy_at.push(tape.len());
                    tape.push(Trade {
                        timestep: t,
                        volume: v,
                        price,
                    });
                    tape.push(Trade {
                        timestep: t + 1,
                        volume: -v2,
                        price: p2,
                    });
                    decoys += 1;
                }
                _ => {
                    // Same-side filler so it never pairs with a neighbour.
                    tape.push(Trade {
                        timestep: t,
                        volume: 0.0,
                        price,
                    });
                }
            }
            t += 10;
        }
        let flagged = detect_wash_trades(&tape, tol, window);
        for i in &wash_at {
            ensure(
                flagged.iter().any(|p| p.first == *i && p.second == i + 1),
                || format!("case {case}: missed planted pair at {i}"),
            )?;
        }
        for p in &flagged {
            ensure(!decoy_at.contains(&p.first), || {
                format!("case {case}: decoy at {} flagged", p.first)
            })?;
            ensure(wash_at.contains(&p.first), || {
                format!("case {case}: unexpected flag at {}", p.first)
            })?;
        }
    }
    Ok(format!(
        "{planted} planted pairs found, {decoys} decoys rejected"
    ))
}

fn c8_determinism() -> Check {
    let mut checked = 0;
    for seed in [1u64, 17, 123] {
        let s = random_scenario(seed);
        let export = |s: &Scenario| -> Result<(String, String), String> {
            let t = run(s).map_err(|e| e.to_string())?;
            let summary =
                serde_json::to_string(&summarize(&t, &s.metrics)).map_err(|e| e.to_string())?;
            Ok((trace_table(&t).to_csv(), summary))
        };
        let (a, b) = (export(&s)?, export(&s)?);
        ensure(a.0.as_bytes() == b.0.as_bytes(), || {
            format!("seed {seed}: trace differs")
        })?;
        ensure(a.1.as_bytes() == b.1.as_bytes(), || {
            format!("seed {seed}: summary differs")
        })?;
        checked += a.0.len();
    }
    Ok(format!(
        "3 scenarios, {checked} bytes of trace identical across reruns"
    ))
}

fn amt(x: i64) -> Amount {
    Amount::from_int(x)
}

fn c9_credits() -> Check {
    // Hand schedule: increments 1000, 500, 250, 125, 62.5; caps of 75 and
    // 225 issued every round.
    let holdings: BTreeMap<String, BTreeMap<String, Amount>> = [
        (
            "alice".to_string(),
            BTreeMap::from([("A".to_string(), amt(1))]),
        ),
        (
            "bob".to_string(),
            BTreeMap::from([("A".to_string(), amt(3))]),
        ),
    ]
    .into();
    let caps = BTreeMap::from([("A".to_string(), amt(300))]);
    let inc = |r| budget_increment(r, amt(1000), 0.5);
    let mut state = CreditState::genesis(0, inc(1), caps.clone(), &holdings);
    let hand = ["1000", "1200", "1150", "975", "737.5"].map(|s| s.parse::<Amount>().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for round in 1..=5u64 {
        ensure(state.budget == hand[round as usize - 1], || {
            format!(
                "round {round}: budget {} vs hand {}",
                state.budget,
                hand[round as usize - 1]
            )
        })?;
        ensure(
            state.accounts["alice"].cap == amt(75) && state.accounts["bob"].cap == amt(225),
            || format!("round {round}: caps"),
        )?;
        for _ in 0..8 {
            let who = if rng.random_bool(0.5) { "alice" } else { "bob" };
            let bal = state.accounts[who].balance;
            let spend = bal.mul_f64(rng.random_range(0.0..0.6));
            state
                .consume(who, "fees", spend)
                .map_err(|e| e.to_string())?;
            for a in state.accounts.values() {
                ensure(a.cap - a.consumed() == a.balance, || {
                    format!("round {round}: {} drifted", a.address)
                })?;
            }
        }
        let summary = state.rollover(round * 10, inc(round + 1), caps.clone(), &holdings);
        ensure(summary.expired + summary.consumed == summary.issued, || {
            format!("round {round}: expired + consumed != cap")
        })?;
    }

    // Every round of every simulated trace.
    let mut rounds = 0;
    for seed in 0..20 {
        let mut s = random_scenario(seed);
        s.agents = AgentSpec {
            service_use_rate: 0.4,
            ..s.agents
        };
        let trace = run(&s).map_err(|e| format!("seed {seed}: {e}"))?;
        for l in &trace.ledgers {
            for a in l.credits.accounts.values() {
                ensure(a.cap - a.consumed() == a.balance, || {
                    format!(
                        "seed {seed} epoch {}: account {} drifted",
                        l.epoch, a.address
                    )
                })?;
            }
        }
        for r in &trace.ledgers.last().unwrap().credits.history {
            ensure(r.expired + r.consumed == r.issued, || {
                format!("seed {seed} round {}", r.round)
            })?;
            rounds += 1;
        }
    }
    Ok(format!(
        "5-round hand schedule matches; {rounds} simulated rounds balanced"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("tenure curve reproduction", c1_tenure_curve),
        ("multiplier equivalence", c2_multiplier),
        ("conservation suite", c3_conservation),
        ("controller behaviour", c4_controller),
        ("target weights vs grid oracle", c5_target_weights),
        ("slashing conservation", c6_slashing),
        ("wash detector", c7_wash),
        ("determinism", c8_determinism),
        ("credits round-trip", c9_credits),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name} ({detail}; {secs:.2}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({why}; {secs:.2}s)", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
