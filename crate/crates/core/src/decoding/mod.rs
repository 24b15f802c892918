//! Test-time structure recovery.

mod cle;
mod generate;

pub use cle::{chu_liu_edmonds, greedy_heads, is_single_root_tree, tree_score};
pub use generate::{generate_graph, oracle_decode, parse_only, GeneratedOutput, OracleOutput};
