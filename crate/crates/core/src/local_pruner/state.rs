use crate::error::{Error, Result};
use crate::local_pruner::grouping::UnitGrouping;
use crate::tensor::{spd_inverse, Matrix};

/// Smallest admissible `[H⁻¹]_pp` when removing channel `p`.
pub const MIN_PIVOT: f64 = 1e-12;

/// Second-order state of one module across a progressive pruning run.
#[derive(Clone, Debug)]
pub struct HessianState {
    /// Damped inverse; rows and columns of pruned channels are zero.
    pub inv_h: Matrix<f64>,
    /// `(H + λI)·W` of the unpruned weights; rows of pruned channels are zero.
    pub grad: Matrix<f64>,
    pub active: Vec<bool>,
    pub lambda: f64,
}

impl HessianState {
    pub fn d_in(&self) -> usize {
        self.active.len()
    }

    pub fn active_channels(&self) -> Vec<usize> {
        (0..self.d_in()).filter(|&i| self.active[i]).collect()
    }
}

/// `λ = λ_frac · mean(diag H)`, floored at `1e-8 · (1 + tr H)`.
pub fn damping(h: &Matrix<f64>, lambda_frac: f64) -> f64 {
    let n = h.rows();
    let trace: f64 = (0..n).map(|i| h[(i, i)]).sum();
    let mean = if n == 0 { 0.0 } else { trace / n as f64 };
    (lambda_frac * mean).max(1e-8 * (1.0 + trace))
}

pub fn build_hessian_state(w: &Matrix<f64>, h: &Matrix<f64>, lambda_frac: f64) -> Result<HessianState> {
    let n = h.rows();
    if h.cols() != n || w.rows() != n {
        return Err(Error::Shape(format!(
            "hessian {:?} does not match weight {:?}",
            h.shape(),
            w.shape()
        )));
    }
    if !(lambda_frac >= 0.0) {
        return Err(Error::Config("lambda_frac must be non-negative".into()));
    }
    let scale = h.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            if (h[(i, j)] - h[(j, i)]).abs() > 1e-9 * scale.max(1e-300) {
                return Err(Error::Input(format!("hessian not symmetric at ({i}, {j})")));
            }
        }
    }
    let lambda = damping(h, lambda_frac);
    let mut damped = h.clone();
    for i in 0..n {
        damped[(i, i)] += lambda;
    }
    let inv_h = spd_inverse(&damped).ok_or_else(|| {
        Error::Numeric(format!("damped hessian (λ = {lambda:e}) is not positive definite"))
    })?;
    let grad = damped.matmul(w)?;
    Ok(HessianState {
        inv_h,
        grad,
        active: vec![true; n],
        lambda,
    })
}

/// `|G_p·W_pᵀ| + ‖W_p‖² / (2 [H⁻¹]_pp)` for active channel `p`.
pub fn channel_saliency(state: &HessianState, w: &Matrix<f64>, p: usize) -> Result<f64> {
    if !state.active[p] {
        return Err(Error::Input(format!("channel {p} already pruned")));
    }
    let d = state.inv_h[(p, p)];
    if !(d > 0.0) {
        return Err(Error::Numeric(format!(
            "non-positive inverse hessian diagonal {d:e} at channel {p}"
        )));
    }
    let wp = w.row(p);
    let first: f64 = state.grad.row(p).iter().zip(wp).map(|(g, w)| g * w).sum();
    let norm: f64 = wp.iter().map(|v| v * v).sum();
    Ok(first.abs() + norm / (2.0 * d))
}

/// Mean channel saliency of every active unit, `None` for pruned units.
pub fn unit_saliency(
    state: &HessianState,
    w: &Matrix<f64>,
    grouping: &UnitGrouping,
) -> Result<Vec<Option<f64>>> {
    (0..grouping.n_units)
        .map(|u| {
            let chans = grouping.channels(u);
            if !state.active[chans.start] {
                return Ok(None);
            }
            let mut total = 0.0;
            for p in chans.clone() {
                total += channel_saliency(state, w, p)?;
            }
            Ok(Some(total / chans.len() as f64))
        })
        .collect()
}

/// Remove every channel of `unit`, then compensate the surviving rows once.
///
/// Each channel is zeroed in `W`, `G` and `H⁻¹` after the rank-1 downdate.
/// The compensation sets the active rows to `H⁻¹_A·G_A`. Because `G` was
/// formed from the unpruned weights, this equals
/// `W_A + H⁻¹_A·(G − (H + λI)·W)_A`, the current weights moved along the
/// second-order step for the reconstruction residual.
pub fn prune_unit_step(
    state: &mut HessianState,
    w: &mut Matrix<f64>,
    grouping: &UnitGrouping,
    unit: usize,
) -> Result<()> {
    let chans = grouping.channels(unit);
    if unit >= grouping.n_units || !state.active[chans.start] {
        return Err(Error::Input(format!("unit {unit} is not active")));
    }
    let n = state.d_in();
    for p in chans {
        let pivot = state.inv_h[(p, p)];
        if !(pivot >= MIN_PIVOT) {
            return Err(Error::Numeric(format!(
                "inverse hessian pivot {pivot:e} at channel {p} below {MIN_PIVOT:e}"
            )));
        }
        let col: Vec<f64> = (0..n).map(|i| state.inv_h[(i, p)]).collect();
        for i in 0..n {
            let ci = col[i] / pivot;
            if ci == 0.0 {
                continue;
            }
            let row = state.inv_h.row_mut(i);
            for (v, &cj) in row.iter_mut().zip(&col) {
                *v -= ci * cj;
            }
        }
        for i in 0..n {
            state.inv_h[(i, p)] = 0.0;
            state.inv_h[(p, i)] = 0.0;
        }
        state.grad.row_mut(p).fill(0.0);
        w.row_mut(p).fill(0.0);
        state.active[p] = false;
    }
    *w = state.inv_h.matmul(&state.grad)?;
    Ok(())
}
