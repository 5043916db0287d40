#![allow(dead_code)]

use leakgraph::graph::candidate_fault_edges;
use leakgraph::{FaultStructure, Topology};
use proptest::prelude::*;

/// Parent list for a random tree on `1..=max_zones` zones: zone `i` hangs
/// below some node in `0..i`.
pub fn parents(max_zones: usize) -> impl Strategy<Value = Vec<usize>> {
    (1..=max_zones).prop_flat_map(|n| (0..n).map(|i| 0..=i).collect::<Vec<_>>())
}

pub fn tree(max_zones: usize) -> impl Strategy<Value = Topology> {
    parents(max_zones).prop_map(|p| Topology::from_parents(&p).unwrap())
}

/// Random topology paired with a random subset of its candidate unknowns.
pub fn tree_and_faults(max_zones: usize) -> impl Strategy<Value = (Topology, FaultStructure)> {
    tree(max_zones).prop_flat_map(|t| {
        let n = candidate_fault_edges(&t).len();
        (Just(t), proptest::collection::vec(any::<bool>(), n))
    })
    .prop_map(|(t, mask)| {
        let keep: Vec<usize> = mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        let f = candidate_fault_edges(&t).select(&keep);
        (t, f)
    })
}

pub fn four_zone() -> Topology {
    Topology::from_parents(&[0, 1, 2, 1]).unwrap()
}

pub fn six_zone() -> Topology {
    Topology::from_parents(&[0, 1, 2, 1, 2, 3]).unwrap()
}
