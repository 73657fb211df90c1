use crate::calibration::ActivationStats;
use crate::error::{Error, Result};
use crate::local_pruner::grouping::UnitGrouping;
use crate::local_pruner::state::{build_hessian_state, prune_unit_step, unit_saliency};
use crate::tensor::Matrix;

/// Weights captured when the cumulative pruned-unit count reaches a target.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    /// Sparsity the caller asked for.
    pub requested: f64,
    /// `pruned_units / n_units`.
    pub realized_sparsity: f64,
    pub pruned_units: usize,
    pub retained_units: Vec<usize>,
    /// Full-height weights; rows of pruned channels are zero.
    pub weights: Matrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneTrajectory {
    /// Units in the order they were removed.
    pub order: Vec<usize>,
    /// One snapshot per requested sparsity, in request order.
    pub snapshots: Vec<Snapshot>,
}

/// Unit count reached for a requested sparsity.
pub fn quantize_units(sparsity: f64, n_units: usize) -> usize {
    ((sparsity.clamp(0.0, 1.0) * n_units as f64).round() as usize).min(n_units)
}

/// Greedy progressive pruning: remove the lowest-saliency unit (ties to the
/// lowest index), rescore, repeat, snapshotting at each requested sparsity.
pub fn prune_progressive(
    w: &Matrix<f64>,
    stats: &ActivationStats,
    grouping: &UnitGrouping,
    snapshot_sparsities: &[f64],
    lambda_frac: f64,
) -> Result<PruneTrajectory> {
    if grouping.d_in() != w.rows() || stats.d_in() != w.rows() {
        return Err(Error::Shape(format!(
            "grouping covers {} channels, weight has {}, statistics {}",
            grouping.d_in(),
            w.rows(),
            stats.d_in()
        )));
    }
    if let Some(bad) = snapshot_sparsities.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Input(format!("snapshot sparsity {bad} outside [0, 1]")));
    }
    let n = grouping.n_units;
    let targets: Vec<usize> = snapshot_sparsities
        .iter()
        .map(|&s| quantize_units(s, n))
        .collect();
    let deepest = targets.iter().copied().max().unwrap_or(0);

    let mut snapshots: Vec<Option<Snapshot>> = vec![None; targets.len()];
    let mut retained: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(deepest);
    let take = |k: usize, cur: &Matrix<f64>, retained: &[usize], out: &mut Vec<Option<Snapshot>>| {
        for (i, &t) in targets.iter().enumerate() {
            if t == k {
                out[i] = Some(Snapshot {
                    requested: snapshot_sparsities[i],
                    realized_sparsity: k as f64 / n as f64,
                    pruned_units: k,
                    retained_units: retained.to_vec(),
                    weights: cur.clone(),
                });
            }
        }
    };

    let mut cur = w.clone();
    take(0, &cur, &retained, &mut snapshots);
    if deepest > 0 {
        let mut state = build_hessian_state(w, &stats.h, lambda_frac)?;
        for k in 1..=deepest {
            let scores = unit_saliency(&state, &cur, grouping)?;
            let mut best: Option<(usize, f64)> = None;
            for (u, s) in scores.iter().enumerate() {
                if let Some(s) = *s {
                    if best.is_none_or(|(_, b)| s < b) {
                        best = Some((u, s));
                    }
                }
            }
            let (unit, _) = best.expect("an active unit remains while k <= n");
            prune_unit_step(&mut state, &mut cur, grouping, unit)?;
            order.push(unit);
            retained.retain(|&u| u != unit);
            take(k, &cur, &retained, &mut snapshots);
        }
    }
    Ok(PruneTrajectory {
        order,
        snapshots: snapshots.into_iter().map(|s| s.expect("every target reached")).collect(),
    })
}

/// `‖X W − X Ŵ‖²_F` expressed through `H = XᵀX`.
pub fn reconstruction_error(h: &Matrix<f64>, w: &Matrix<f64>, w_hat: &Matrix<f64>) -> Result<f64> {
    let mut delta = w.clone();
    delta.axpy(-1.0, w_hat)?;
    let hd = h.matmul(&delta)?;
    Ok(delta
        .as_slice()
        .iter()
        .zip(hd.as_slice())
        .map(|(a, b)| a * b)
        .sum())
}
