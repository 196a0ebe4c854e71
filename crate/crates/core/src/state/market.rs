use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::risk::Trade;

/// Market data consumed by the engine, indexed by epoch.
///
/// `prices` are in NST; the NST itself is always priced at 1 and needs no
/// entry. `reference` holds optional external-numéraire paths (including
/// the NST's own) used for risk estimates on the NST.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceBook {
    pub nst: String,
    pub prices: BTreeMap<String, Vec<f64>>,
    pub reference: BTreeMap<String, Vec<f64>>,
    /// Per asset, per epoch trade tape.
    pub tapes: BTreeMap<String, Vec<Vec<Trade>>>,
    pub spreads: BTreeMap<String, f64>,
    /// Per asset, per epoch share of deposited liquidity in use.
    pub utilisation: BTreeMap<String, Vec<f64>>,
}

impl PriceBook {
    pub fn new(nst: impl Into<String>) -> Self {
        PriceBook {
            nst: nst.into(),
            ..Default::default()
        }
    }

    pub fn is_nst(&self, asset: &str) -> bool {
        asset == self.nst
    }

    /// Price in NST at `epoch`; `None` when missing or not positive.
    pub fn price(&self, asset: &str, epoch: u64) -> Option<f64> {
        if self.is_nst(asset) {
            return Some(1.0);
        }
        self.prices
            .get(asset)
            .and_then(|p| p.get(epoch as usize))
            .copied()
            .filter(|p| *p > 0.0 && p.is_finite())
    }

    /// Price path up to and including `epoch` (at most `len` points).
    pub fn history(&self, asset: &str, epoch: u64, len: usize) -> Option<Vec<f64>> {
        let end = epoch as usize + 1;
        let start = end.checked_sub(len)?;
        if self.is_nst(asset) {
            return Some(vec![1.0; len]);
        }
        self.prices
            .get(asset)
            .and_then(|p| p.get(start..end))
            .map(<[f64]>::to_vec)
    }

    /// External-numéraire path, falling back to the NST-numéraire one.
    pub fn reference_history(&self, asset: &str, epoch: u64, len: usize) -> Option<Vec<f64>> {
        let end = epoch as usize + 1;
        let start = end.checked_sub(len)?;
        match self.reference.get(asset) {
            Some(p) => p.get(start..end).map(<[f64]>::to_vec),
            None => self.history(asset, epoch, len),
        }
    }

    pub fn tape(&self, asset: &str, epoch: u64) -> &[Trade] {
        self.tapes
            .get(asset)
            .and_then(|t| t.get(epoch as usize))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn spread(&self, asset: &str) -> f64 {
        self.spreads.get(asset).copied().unwrap_or(0.0)
    }

    pub fn utilisation(&self, asset: &str, epoch: u64) -> f64 {
        self.utilisation
            .get(asset)
            .and_then(|u| u.get(epoch as usize))
            .copied()
            .unwrap_or(0.0)
            .clamp(0.0, 1.0)
    }

    /// Number of epochs with a price for every listed non-NST asset.
    pub fn len(&self) -> usize {
        self.prices.values().map(Vec::len).min().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
