use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    /// One attention head, `head_dim` contiguous channels.
    Head,
    /// A block of contiguous FFN neurons.
    FfnGroup,
}

/// Partition of a module's input channels into equally sized prunable units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitGrouping {
    pub kind: GroupKind,
    pub group_size: usize,
    pub n_units: usize,
}

impl UnitGrouping {
    pub fn new(kind: GroupKind, group_size: usize, d_in: usize) -> Result<Self> {
        if group_size == 0 || d_in % group_size != 0 {
            return Err(Error::Config(format!(
                "group size {group_size} does not partition {d_in} channels"
            )));
        }
        Ok(Self {
            kind,
            group_size,
            n_units: d_in / group_size,
        })
    }

    pub fn heads(n_heads: usize, head_dim: usize) -> Self {
        Self {
            kind: GroupKind::Head,
            group_size: head_dim,
            n_units: n_heads,
        }
    }

    pub fn d_in(&self) -> usize {
        self.group_size * self.n_units
    }

    pub fn channels(&self, unit: usize) -> Range<usize> {
        unit * self.group_size..(unit + 1) * self.group_size
    }

    /// Channel indices covered by `units`, in order.
    pub fn channels_of(&self, units: &[usize]) -> Vec<usize> {
        units.iter().flat_map(|&u| self.channels(u)).collect()
    }
}
