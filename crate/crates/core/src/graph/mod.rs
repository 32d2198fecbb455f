//! User–item graphs built from timestamped action logs.

pub mod bipartite;
pub mod io;
pub mod normalize;
pub mod records;
pub mod sequence;

pub use bipartite::{augment_adjacency, build_graph, BipartiteGraph};
pub use normalize::{normalize_adjacency, NormalizedAdjacency};
pub use records::{kept_count, truncate_by_time, truncate_earliest, ActionRecord};
pub use sequence::{sequences_from_actions, FeatureSequence};
