//! Per-sublayer ladders of pruned structures, built layer by layer with an
//! accumulated activation stream and persisted to disk.

mod build;
mod ladder;
mod mix;
mod store;

pub use build::{build_supernet, sublayer_grouping, BuildOutcome, BuildReport, SupernetConfig};
pub use ladder::{generate_ladder, interval_schedule, SparsityLadder};
pub use mix::{expected_mix, mixing_weights, ErrorAccum, Mix};
pub use store::{
    gc_iteration, iteration_dir, BlobTensor, StoreEntry, StoreManifest, StoreWriter, StructureKey,
    SupernetStore, BLOB_MAGIC, HEADER_LEN, STORE_FORMAT_VERSION,
};
