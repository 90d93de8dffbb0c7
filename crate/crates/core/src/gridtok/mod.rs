//! Synthetic token grids drawn from a class-conditional Potts lattice.
//!
//! The joint over an `H x W` grid of tokens is
//! `p(x | c) ∝ exp(Σ_cells field[c][x_i] + Σ_adjacent coupling[c][x_a][x_b])`,
//! where adjacent pairs are (left, right) and (top, bottom). Small grids have
//! exact conditionals by enumeration; grids with a narrow row have exact raster
//! conditionals through a frontier transfer recursion.

mod dataset;
mod oracle;
mod potts;
mod shard;
mod spec;

pub use dataset::{draw_grids, load_spec, make_dataset, Dataset, DatasetMeta};
pub use oracle::{exact_conditional, local_conditional, ExactJoint, FrontierChain};
pub use potts::{sample_grid, GridSampler, SamplerMode};
pub use shard::{read_shard, read_shard_unchecked, write_shard, DatasetShard};
pub use spec::{fnv1a64, GridSpec, TokenGrid, ORACLE_BITS_LIMIT};
