//! Directed-tree detectability test for fault structures.
//!
//! Removing the residual edges splits the fault graph into isolated zones,
//! components made only of sensor faults, and the component holding the
//! reference node (which carries every leak). All unknowns are solvable iff
//! every component is a directed tree; sensor-only components always are,
//! so only the reference component needs the edge count check.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::graph::{components_with_work, Component, FaultKind, FaultStructure, NodeId, Topology};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentPartition {
    /// Zones touched by no fault edge.
    pub unconnected: Vec<NodeId>,
    /// Components without the reference node; they only hold sensor faults.
    pub sensor_only: Vec<Component>,
    /// Component of the reference node, possibly just the reference itself.
    pub ps_component: Component,
}

impl ComponentPartition {
    pub fn component_count(&self) -> usize {
        self.unconnected.len() + self.sensor_only.len() + 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DetectabilityVerdict {
    pub detectable: bool,
    pub failing_component: Option<Component>,
    pub culprit_nodes: Option<Vec<NodeId>>,
}

pub fn classify_components(topology: &Topology, faults: &FaultStructure) -> Result<ComponentPartition> {
    classify_with_work(topology, faults, &mut 0)
}

fn classify_with_work(
    topology: &Topology,
    faults: &FaultStructure,
    work: &mut usize,
) -> Result<ComponentPartition> {
    let n = topology.node_count();
    if let Some(e) = faults.edges().iter().find(|e| !topology.contains(e.tail) || !topology.contains(e.head)) {
        return Err(Error::Structural(format!("fault '{}' has an endpoint outside the topology", e.label)));
    }
    let graph = faults.fault_graph(n);
    let mut unconnected = Vec::new();
    let mut sensor_only = Vec::new();
    let mut ps = None;
    for comp in components_with_work(&graph, work) {
        *work += 1;
        if comp.contains(NodeId::REFERENCE) {
            ps = Some(comp);
        } else if comp.edges.is_empty() {
            unconnected.push(comp.nodes[0]);
        } else {
            debug_assert!(comp
                .edges
                .iter()
                .all(|&e| faults.edges()[e].kind == FaultKind::SensorFault));
            sensor_only.push(comp);
        }
    }
    Ok(ComponentPartition {
        unconnected,
        sensor_only,
        ps_component: ps.expect("reference node belongs to some component"),
    })
}

pub fn is_detectable(topology: &Topology, faults: &FaultStructure) -> Result<DetectabilityVerdict> {
    is_detectable_with_work(topology, faults).map(|(v, _)| v)
}

/// Same as [`is_detectable`], also returning the number of elementary node
/// and edge visits performed.
pub fn is_detectable_with_work(
    topology: &Topology,
    faults: &FaultStructure,
) -> Result<(DetectabilityVerdict, usize)> {
    let mut work = 0;
    let partition = classify_with_work(topology, faults, &mut work)?;
    for comp in &partition.sensor_only {
        // Sensor faults reverse edges of the residual tree, so they form a forest.
        if !comp.has_tree_count() {
            return Err(Error::Internal(format!(
                "sensor-only fault component {:?} is not a directed tree",
                comp.nodes
            )));
        }
    }
    let ps = partition.ps_component;
    let verdict = if ps.has_tree_count() {
        DetectabilityVerdict {
            detectable: true,
            failing_component: None,
            culprit_nodes: None,
        }
    } else {
        DetectabilityVerdict {
            detectable: false,
            failing_component: Some(ps),
            culprit_nodes: None,
        }
    };
    Ok((verdict, work))
}

/// What can still be solved in an undetectable structure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnosis {
    /// Sensor-only components; always solvable on their own.
    pub detectable_components: Vec<Component>,
    /// Smallest set of zones whose own faults must be dropped to make the
    /// structure detectable (ties broken by lowest node ids).
    pub culprits: Vec<NodeId>,
    /// Every culprit set of the same, minimal size.
    pub alternatives: Vec<Vec<NodeId>>,
    /// The structure left after dropping the culprits' faults.
    pub remaining: FaultStructure,
}

/// Finds the zones responsible for undetectability by exhaustive removal of
/// the faults attached to reference-component zones, smallest sets first.
pub fn diagnose_undetectability(topology: &Topology, faults: &FaultStructure) -> Result<Diagnosis> {
    let verdict = is_detectable(topology, faults)?;
    if verdict.detectable {
        return Err(Error::Contract("diagnosis requested for a detectable structure".into()));
    }
    let partition = classify_components(topology, faults)?;
    let owners: Vec<NodeId> = partition
        .ps_component
        .edges
        .iter()
        .map(|&e| faults.edges()[e].node)
        .sorted()
        .dedup()
        .collect();

    for size in 1..=owners.len() {
        let mut found: Vec<(Vec<NodeId>, FaultStructure)> = Vec::new();
        for subset in owners.iter().copied().combinations(size) {
            let keep: Vec<usize> = (0..faults.len())
                .filter(|&i| !subset.contains(&faults.edges()[i].node))
                .collect();
            let remaining = faults.select(&keep);
            if is_detectable(topology, &remaining)?.detectable {
                found.push((subset, remaining));
            }
        }
        if let Some((culprits, remaining)) = found.first().cloned() {
            return Ok(Diagnosis {
                detectable_components: partition.sensor_only,
                culprits,
                alternatives: found.into_iter().map(|(s, _)| s).collect(),
                remaining,
            });
        }
    }
    Err(Error::Internal("removing every zone's faults left the structure undetectable".into()))
}
