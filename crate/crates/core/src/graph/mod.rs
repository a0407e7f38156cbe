//! The continuous-time interaction stream: storage, ingestion, splits and
//! temporal neighborhoods.

mod io;
mod split;
mod store;
mod synth;

pub use io::{load_interactions, read_binary, read_jodie_csv, save_binary, write_binary, write_jodie_csv, GraphFormat};
pub use split::{chronological_split, split_bounds, Split, SplitSpec};
pub use store::{GraphError, Interaction, NodeId, Partition, RawEvent, TemporalGraph};
pub use synth::{generate_synthetic, SyntheticConfig};

/// Default number of most recent interactions a neighborhood query returns.
pub const DEFAULT_NEIGHBOR_LIMIT: usize = 10;
