//! Small reference networks used by tests, examples and the simulation suite.

use crate::graph::Topology;

/// Four metered zones: `0 -> 1 -> 2 -> 3` with a branch `1 -> 4`.
/// Sensor ids equal their downstream zone.
pub fn four_zone() -> Topology {
    Topology::from_parents(&[0, 1, 2, 1]).expect("valid tree")
}

/// Six zones: `0 -> 1 -> 2 -> 3 -> 6`, `1 -> 4`, `2 -> 5`.
pub fn six_zone() -> Topology {
    Topology::from_parents(&[0, 1, 2, 1, 2, 3]).expect("valid tree")
}
