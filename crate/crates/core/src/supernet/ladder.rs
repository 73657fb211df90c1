use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local_pruner::quantize_units;

/// Candidate sparsities for one sublayer, centred on its current optimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityLadder {
    pub center: f64,
    pub interval: f64,
    /// `center + (e − (E−1)/2)·interval`, clamped to `[0, 1]`.
    pub nominal: Vec<f64>,
    /// Nominal points rounded to whole units.
    pub realized: Vec<f64>,
    pub pruned_units: Vec<usize>,
    pub total_units: usize,
}

impl SparsityLadder {
    pub fn len(&self) -> usize {
        self.nominal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nominal.is_empty()
    }

    pub fn center_index(&self) -> usize {
        (self.len() - 1) / 2
    }
}

pub fn generate_ladder(
    center: f64,
    interval: f64,
    count: usize,
    total_units: usize,
) -> Result<SparsityLadder> {
    if !(interval > 0.0) {
        return Err(Error::Config(format!("ladder interval must be positive, got {interval}")));
    }
    if count == 0 || count % 2 == 0 {
        return Err(Error::Config(format!("ladder size must be odd, got {count}")));
    }
    if total_units == 0 {
        return Err(Error::Config("ladder needs at least one unit".into()));
    }
    if !(0.0..=1.0).contains(&center) {
        return Err(Error::Config(format!("ladder center {center} outside [0, 1]")));
    }
    let half = (count - 1) as f64 / 2.0;
    let nominal: Vec<f64> = (0..count)
        .map(|e| (center + (e as f64 - half) * interval).clamp(0.0, 1.0))
        .collect();
    let pruned_units: Vec<usize> = nominal.iter().map(|&s| quantize_units(s, total_units)).collect();
    let realized = pruned_units
        .iter()
        .map(|&u| u as f64 / total_units as f64)
        .collect();
    Ok(SparsityLadder {
        center,
        interval,
        nominal,
        realized,
        pruned_units,
        total_units,
    })
}

/// Interval used at each of `iterations` rounds: `initial / 2^(t−1)`.
pub fn interval_schedule(initial: f64, iterations: usize) -> Vec<f64> {
    (0..iterations).map(|t| initial / f64::powi(2.0, t as i32)).collect()
}
