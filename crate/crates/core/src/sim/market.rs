use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};

use super::Scenario;
use crate::risk::Trade;
use crate::state::PriceBook;

// Independent generator streams per concern, so adding draws to one never
// shifts another.
pub(crate) const STREAM_PRICES: u64 = 1;
pub(crate) const STREAM_TAPES: u64 = 2;
pub(crate) const STREAM_DEMAND: u64 = 3;
pub(crate) const STREAM_AGENTS: u64 = 4;
pub(crate) const STREAM_EVENTS: u64 = 5;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Timesteps per epoch on the trade tape.
const TICKS: u64 = 1000;

/// Geometric Brownian paths in the reference numéraire, re-expressed in
/// NST, plus synthetic tapes and utilisation series. Covers epochs
/// `0..=scenario.epochs`.
pub fn gen_prices(scenario: &Scenario) -> PriceBook {
    let n = scenario.epochs as usize + 1;
    let nst = scenario.nst().map(|a| a.symbol.clone()).unwrap_or_default();
    let mut book = PriceBook::new(nst.clone());

    let mut rng = stream(scenario.seed, STREAM_PRICES);
    for asset in &scenario.assets {
        let mut path = Vec::with_capacity(n);
        let mut p = asset.initial_price;
        path.push(p);
        for _ in 1..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            p *= (asset.drift - 0.5 * asset.vol * asset.vol + asset.vol * z).exp();
            path.push(p);
        }
        book.reference.insert(asset.symbol.clone(), path);
    }
    let nst_path = book
        .reference
        .get(&nst)
        .cloned()
        .unwrap_or_else(|| vec![1.0; n]);
    for asset in scenario.assets.iter().filter(|a| !a.is_nst) {
        let path = book.reference[&asset.symbol]
            .iter()
            .zip(&nst_path)
            .map(|(p, q)| p / q)
            .collect();
        book.prices.insert(asset.symbol.clone(), path);
        book.spreads.insert(asset.symbol.clone(), asset.spread);
    }

    let mut rng = stream(scenario.seed, STREAM_TAPES);
    let size = LogNormal::new(0.0, 1.0).expect("valid lognormal");
    for asset in scenario.assets.iter().filter(|a| !a.is_nst) {
        let prices = &book.prices[&asset.symbol];
        let mut tapes = Vec::with_capacity(n);
        for (e, &mid) in prices.iter().enumerate() {
            let base = e as u64 * TICKS;
            let mut tape = Vec::with_capacity(asset.trades_per_epoch + 2);
            for i in 0..asset.trades_per_epoch {
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let skew: f64 = rng.random_range(-0.5..0.5);
                tape.push(Trade {
                    timestep: base + 10 * i as u64,
                    volume: side * size.sample(&mut rng),
                    price: mid * (1.0 + skew * asset.spread),
                });
            }
            if asset.wash_probability > 0.0 && rng.random_bool(asset.wash_probability) {
                let v = size.sample(&mut rng);
                let t = base + 10 * asset.trades_per_epoch as u64 + 5;
                tape.push(Trade {
                    timestep: t,
                    volume: v,
                    price: mid,
                });
                tape.push(Trade {
                    timestep: t + 1,
                    volume: -v,
                    price: mid,
                });
            }
            tapes.push(tape);
        }
        book.tapes.insert(asset.symbol.clone(), tapes);
    }

    let mut rng = stream(scenario.seed, STREAM_DEMAND);
    let demand = &scenario.demand;
    for asset in scenario.assets.iter().filter(|a| !a.is_nst) {
        let series = (0..n as u64)
            .map(|e| {
                let step = match demand.step_epoch {
                    Some(s) if e >= s => demand.step_size,
                    _ => 0.0,
                };
                let z: f64 = StandardNormal.sample(&mut rng);
                (asset.utilisation + step + demand.noise * z).clamp(0.0, 1.0)
            })
            .collect();
        book.utilisation.insert(asset.symbol.clone(), series);
    }
    book
}
