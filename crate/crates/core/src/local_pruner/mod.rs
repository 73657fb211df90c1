//! Progressive second-order pruning of one linear module's input channels.
//!
//! Channels are scored by `|G_p·W_pᵀ| + ‖W_p‖² / (2[H⁻¹]_pp)` with
//! `G = (H + λI)·W` fixed at construction. Removing channel `p` applies the
//! rank-1 downdate `H⁻¹ ← H⁻¹ − H⁻¹_{:,p} H⁻¹_{p,:} / [H⁻¹]_pp`, which keeps
//! the maintained matrix equal to the inverse of the damped active block.

mod grouping;
mod progressive;
mod state;

pub use grouping::{GroupKind, UnitGrouping};
pub use progressive::{
    prune_progressive, quantize_units, reconstruction_error, PruneTrajectory, Snapshot,
};
pub use state::{
    build_hessian_state, channel_saliency, damping, prune_unit_step, unit_saliency, HessianState,
    MIN_PIVOT,
};
