//! Ingestion, id remapping, splitting, sampling and sequence construction.

mod interactions;
mod libfm;
mod sampling;
mod sequence;
mod split;

pub use interactions::{
    load_interactions, parse_interactions, IdMap, Interaction, InteractionTable, Separator, UirtOptions,
};
pub use libfm::{load_libfm, parse_libfm, SparseRow};
pub use sampling::{sample_negatives, NegativeSampler};
pub use sequence::{build_sequences, left_padded, SequenceDataset, SequenceInstance};
pub use split::{parse_split, split, Split, SplitSpec};
