//! Residual and fault graphs of a tree-structured flow-sensor network.
//!
//! Nodes are consumption zones plus one reference node, which absorbs both
//! the network source and the consumption sink. Every sensor is a residual
//! edge from its upstream node to its downstream node. Unknown faults are
//! extra edges: a leak runs from its zone to the reference node, a sensor
//! fault runs against its sensor's residual edge.
//!
//! Node ids are dense indices `0..n` with the reference node at `0`; the
//! labels read from the topology file are kept for reporting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const REFERENCE: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0
    }

    pub fn is_reference(self) -> bool {
        self == Self::REFERENCE
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A flow sensor, i.e. a residual edge `tail -> head`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sensor {
    pub id: String,
    pub tail: NodeId,
    pub head: NodeId,
}

/// Known residual graph: a directed tree rooted at the reference node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    labels: Vec<String>,
    zones: Vec<Vec<String>>,
    sensors: Vec<Sensor>,
    incoming: Vec<Option<usize>>,
}

/// On-disk topology description.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub reference: String,
    pub nodes: Vec<String>,
    pub sensors: Vec<SensorEntry>,
    /// Constituent zones of merged nodes; omitted when every node is a single zone.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub zones: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorEntry {
    pub id: String,
    pub from: String,
    pub to: String,
}

impl Topology {
    /// Validates a topology description and normalizes node ids.
    pub fn from_file(file: &TopologyFile) -> Result<Self> {
        if file.reference.is_empty() {
            return Err(Error::Structural("reference label is empty".into()));
        }
        let mut labels = vec![file.reference.clone()];
        let mut index: HashMap<&str, usize> = HashMap::new();
        index.insert(file.reference.as_str(), 0);
        for label in &file.nodes {
            if label == &file.reference {
                continue;
            }
            if index.insert(label.as_str(), labels.len()).is_some() {
                return Err(Error::Structural(format!("duplicate node label '{label}'")));
            }
            labels.push(label.clone());
        }

        let mut sensors = Vec::with_capacity(file.sensors.len());
        let mut seen_ids = HashSet::new();
        for s in &file.sensors {
            if !seen_ids.insert(s.id.as_str()) {
                return Err(Error::Structural(format!("duplicate sensor id '{}'", s.id)));
            }
            let lookup = |label: &str| {
                index.get(label).copied().map(NodeId).ok_or_else(|| {
                    Error::Structural(format!("sensor '{}' references unknown node '{label}'", s.id))
                })
            };
            sensors.push(Sensor {
                id: s.id.clone(),
                tail: lookup(&s.from)?,
                head: lookup(&s.to)?,
            });
        }

        let mut zones: Vec<Vec<String>> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| if i == 0 { Vec::new() } else { vec![l.clone()] })
            .collect();
        for (label, members) in &file.zones {
            let i = *index.get(label.as_str()).ok_or_else(|| {
                Error::Structural(format!("zone list for unknown node '{label}'"))
            })?;
            zones[i] = members.clone();
        }
        Self::build(labels, zones, sensors)
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let file: TopologyFile =
            serde_json::from_str(json).map_err(|e| Error::parse(format!("topology line {}", e.line()), e))?;
        Self::from_file(&file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let file: TopologyFile = serde_json::from_str(&text).map_err(|e| {
            Error::parse(format!("{}:{}:{}", path.display(), e.line(), e.column()), e)
        })?;
        Self::from_file(&file)
    }

    /// Tree with nodes `0..=parents.len()` where node `i + 1` is fed by
    /// `parents[i]`. Labels and sensor ids are the decimal node indices.
    pub fn from_parents(parents: &[usize]) -> Result<Self> {
        let n = parents.len() + 1;
        let file = TopologyFile {
            reference: "0".into(),
            nodes: (1..n).map(|i| i.to_string()).collect(),
            sensors: parents
                .iter()
                .enumerate()
                .map(|(i, p)| SensorEntry {
                    id: (i + 1).to_string(),
                    from: p.to_string(),
                    to: (i + 1).to_string(),
                })
                .collect(),
            zones: BTreeMap::new(),
        };
        Self::from_file(&file)
    }

    fn build(labels: Vec<String>, zones: Vec<Vec<String>>, sensors: Vec<Sensor>) -> Result<Self> {
        let n = labels.len();
        let mut incoming: Vec<Option<usize>> = vec![None; n];
        for (k, s) in sensors.iter().enumerate() {
            if s.tail == s.head {
                return Err(Error::Structural(format!("sensor '{}' is a self-loop", s.id)));
            }
            if s.head.is_reference() {
                return Err(Error::Structural(format!(
                    "sensor '{}' flows into the reference node '{}'",
                    s.id, labels[0]
                )));
            }
            if let Some(prev) = incoming[s.head.0] {
                return Err(Error::Structural(format!(
                    "node '{}' has more than one incoming sensor ('{}', '{}')",
                    labels[s.head.0], sensors[prev].id, s.id
                )));
            }
            incoming[s.head.0] = Some(k);
        }

        // Every non-reference node has exactly one parent now; walking parent
        // pointers either reaches the reference or closes a cycle.
        let mut state = vec![0u8; n]; // 0 unvisited, 1 on current walk, 2 reaches reference
        state[0] = 2;
        for start in 1..n {
            if state[start] == 2 {
                continue;
            }
            let mut walk: Vec<usize> = Vec::new();
            let mut cur = start;
            loop {
                match state[cur] {
                    2 => break,
                    1 => {
                        let pos = walk.iter().position(|&v| v == cur).unwrap_or(0);
                        let mut cycle: Vec<&str> = walk[pos..].iter().rev().map(|&v| labels[v].as_str()).collect();
                        cycle.push(cycle[0]);
                        return Err(Error::Structural(format!(
                            "sensor graph contains a cycle: {}",
                            cycle.join(" -> ")
                        )));
                    }
                    _ => {}
                }
                let Some(k) = incoming[cur] else {
                    return Err(Error::Structural(format!(
                        "node '{}' has no incoming sensor (network is not connected to '{}')",
                        labels[cur], labels[0]
                    )));
                };
                state[cur] = 1;
                walk.push(cur);
                cur = sensors[k].tail.0;
            }
            for v in walk {
                state[v] = 2;
            }
        }
        debug_assert_eq!(sensors.len(), n - 1);

        Ok(Self {
            labels,
            zones,
            sensors,
            incoming,
        })
    }

    pub fn to_file(&self) -> TopologyFile {
        let zones = (0..self.node_count())
            .filter(|&i| {
                let trivial: &[String] = if i == 0 { &[] } else { std::slice::from_ref(&self.labels[i]) };
                self.zones[i].as_slice() != trivial
            })
            .map(|i| (self.labels[i].clone(), self.zones[i].clone()))
            .collect();
        TopologyFile {
            reference: self.labels[0].clone(),
            nodes: self.labels[1..].to_vec(),
            sensors: self
                .sensors
                .iter()
                .map(|s| SensorEntry {
                    id: s.id.clone(),
                    from: self.labels[s.tail.0].clone(),
                    to: self.labels[s.head.0].clone(),
                })
                .collect(),
            zones,
        }
    }

    /// SHA-256 of the normalized topology, hex encoded.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(&self.to_file()).expect("topology serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count()).map(NodeId)
    }

    pub fn zone_nodes(&self) -> impl Iterator<Item = NodeId> {
        (1..self.node_count()).map(NodeId)
    }

    pub fn reference(&self) -> NodeId {
        NodeId::REFERENCE
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn label(&self, node: NodeId) -> &str {
        &self.labels[node.0]
    }

    pub fn node_by_label(&self, label: &str) -> Option<NodeId> {
        self.labels.iter().position(|l| l == label).map(NodeId)
    }

    /// Original zones fused into `node`. Empty for an unmerged reference.
    pub fn zones(&self, node: NodeId) -> &[String] {
        &self.zones[node.0]
    }

    pub fn sensor_index(&self, id: &str) -> Option<usize> {
        self.sensors.iter().position(|s| s.id == id)
    }

    pub fn incoming_sensor(&self, node: NodeId) -> Option<&Sensor> {
        self.incoming.get(node.0).copied().flatten().map(|k| &self.sensors[k])
    }

    pub fn incoming_sensor_index(&self, node: NodeId) -> Option<usize> {
        self.incoming.get(node.0).copied().flatten()
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.incoming_sensor(node).map(|s| s.tail)
    }

    /// Zone fed directly from the reference node.
    pub fn is_reference_adjacent(&self, node: NodeId) -> bool {
        self.parent(node) == Some(NodeId::REFERENCE)
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.0 < self.node_count()
    }

    pub fn residual_graph(&self) -> Digraph {
        Digraph::new(
            self.node_count(),
            self.sensors.iter().map(|s| (s.tail.0, s.head.0)).collect(),
        )
    }

    /// Resolves a fault label such as `L3`, `D2` or `LF1`.
    pub fn parse_fault_label(&self, label: &str) -> Result<FaultEdge> {
        if let Some(rest) = label.strip_prefix("LF") {
            if let Some(node) = self.node_by_label(rest) {
                if self.is_reference_adjacent(node) {
                    return FaultEdge::new(self, FaultKind::MergedAnomaly, node);
                }
            }
        }
        let (kind, rest) = if let Some(rest) = label.strip_prefix('L') {
            (FaultKind::Leak, rest)
        } else if let Some(rest) = label.strip_prefix('D') {
            (FaultKind::SensorFault, rest)
        } else {
            return Err(Error::Structural(format!("unrecognized fault label '{label}'")));
        };
        let node = self
            .node_by_label(rest)
            .ok_or_else(|| Error::Structural(format!("fault label '{label}' names unknown node")))?;
        FaultEdge::new(self, kind, node)
    }
}

/// Plain directed multigraph over nodes `0..node_count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Digraph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
}

impl Digraph {
    pub fn new(node_count: usize, edges: Vec<(usize, usize)>) -> Self {
        assert!(
            edges.iter().all(|&(t, h)| t < node_count && h < node_count),
            "edge endpoint out of range"
        );
        Self { node_count, edges }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Induced subgraph on a component, with nodes relabeled in component order.
    pub fn subgraph(&self, component: &Component) -> Digraph {
        let local: HashMap<usize, usize> = component
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.0, i))
            .collect();
        let edges = component
            .edges
            .iter()
            .map(|&e| {
                let (t, h) = self.edges[e];
                (local[&t], local[&h])
            })
            .collect();
        Digraph::new(component.nodes.len(), edges)
    }

    /// Undirected adjacency in compressed form: (offsets, (neighbor, edge)).
    pub(crate) fn undirected_adjacency(&self) -> (Vec<usize>, Vec<(usize, usize)>) {
        let mut degree = vec![0usize; self.node_count + 1];
        for &(t, h) in &self.edges {
            degree[t + 1] += 1;
            degree[h + 1] += 1;
        }
        for i in 0..self.node_count {
            degree[i + 1] += degree[i];
        }
        let offsets = degree.clone();
        let mut fill = degree;
        let mut adj = vec![(0, 0); 2 * self.edges.len()];
        for (e, &(t, h)) in self.edges.iter().enumerate() {
            adj[fill[t]] = (h, e);
            fill[t] += 1;
            adj[fill[h]] = (t, e);
            fill[h] += 1;
        }
        (offsets, adj)
    }
}

/// A weakly connected component: sorted nodes and the indices of its edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<usize>,
}

impl Component {
    pub fn contains(&self, node: NodeId) -> bool {
        self.nodes.binary_search(&node).is_ok()
    }

    /// Edge count equals node count minus one.
    ///
    /// For a connected component this is exactly the directed-tree test.
    pub fn has_tree_count(&self) -> bool {
        self.edges.len() + 1 == self.nodes.len()
    }
}

/// Partition of the graph into weakly connected components, ordered by
/// smallest node id.
pub fn weakly_connected_components(graph: &Digraph) -> Vec<Component> {
    components_with_work(graph, &mut 0)
}

pub(crate) fn components_with_work(graph: &Digraph, work: &mut usize) -> Vec<Component> {
    let n = graph.node_count;
    let (offsets, adj) = graph.undirected_adjacency();
    let mut seen = vec![false; n];
    let mut edge_seen = vec![false; graph.edges.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        *work += 1;
        if seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        while let Some(v) = stack.pop() {
            *work += 1;
            nodes.push(NodeId(v));
            for &(w, e) in &adj[offsets[v]..offsets[v + 1]] {
                *work += 1;
                if !edge_seen[e] {
                    edge_seen[e] = true;
                    edges.push(e);
                }
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        nodes.sort_unstable();
        edges.sort_unstable();
        out.push(Component { nodes, edges });
    }
    out
}

/// Whether a weakly connected graph is a directed tree (polytree).
pub fn is_directed_tree(graph: &Digraph) -> Result<bool> {
    if graph.node_count == 0 {
        return Err(Error::Contract("directed-tree test on an empty graph".into()));
    }
    let components = weakly_connected_components(graph);
    if components.len() != 1 {
        return Err(Error::Contract(format!(
            "directed-tree test needs a weakly connected graph, got {} components",
            components.len()
        )));
    }
    Ok(graph.edges.len() + 1 == graph.node_count)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Leak,
    SensorFault,
    #[serde(rename = "anomaly")]
    MergedAnomaly,
}

impl FaultKind {
    pub fn label_prefix(self) -> &'static str {
        match self {
            FaultKind::Leak => "L",
            FaultKind::SensorFault => "D",
            FaultKind::MergedAnomaly => "LF",
        }
    }

    /// Whether estimates of this kind must be non-negative.
    pub fn is_sign_constrained(self) -> bool {
        self == FaultKind::Leak
    }
}

/// An unknown fault attached to a zone node.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FaultEdge {
    pub kind: FaultKind,
    pub node: NodeId,
    pub tail: NodeId,
    pub head: NodeId,
    pub label: String,
}

impl FaultEdge {
    pub fn new(topology: &Topology, kind: FaultKind, node: NodeId) -> Result<Self> {
        if !topology.contains(node) {
            return Err(Error::Structural(format!("fault node {node} is not in the topology")));
        }
        if node.is_reference() {
            return Err(Error::Structural("faults cannot sit on the reference node".into()));
        }
        let head = match kind {
            FaultKind::Leak => NodeId::REFERENCE,
            FaultKind::SensorFault => topology
                .parent(node)
                .ok_or_else(|| Error::Internal(format!("zone {node} has no incoming sensor")))?,
            FaultKind::MergedAnomaly => {
                if !topology.is_reference_adjacent(node) {
                    return Err(Error::Structural(format!(
                        "merged anomaly at '{}' but it is not fed by the reference node",
                        topology.label(node)
                    )));
                }
                NodeId::REFERENCE
            }
        };
        Ok(Self {
            kind,
            node,
            tail: node,
            head,
            label: format!("{}{}", kind.label_prefix(), topology.label(node)),
        })
    }
}

/// A hypothesized set of simultaneously active faults.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaultStructure {
    edges: Vec<FaultEdge>,
}

impl FaultStructure {
    pub fn empty() -> Self {
        Self { edges: Vec::new() }
    }

    pub fn new(topology: &Topology, edges: Vec<FaultEdge>) -> Result<Self> {
        let mut by_node: HashMap<NodeId, Vec<FaultKind>> = HashMap::new();
        let mut labels = HashSet::new();
        for e in &edges {
            let expected = FaultEdge::new(topology, e.kind, e.node)?;
            if expected != *e {
                return Err(Error::Structural(format!(
                    "fault edge '{}' does not match the topology",
                    e.label
                )));
            }
            if !labels.insert(e.label.as_str()) {
                return Err(Error::Structural(format!("duplicate fault '{}'", e.label)));
            }
            let kinds = by_node.entry(e.node).or_default();
            if kinds.contains(&e.kind) {
                return Err(Error::Structural(format!("duplicate fault '{}'", e.label)));
            }
            kinds.push(e.kind);
            if kinds.len() > 1 && kinds.contains(&FaultKind::MergedAnomaly) {
                return Err(Error::Structural(format!(
                    "merged anomaly at '{}' cannot coexist with another fault at that node",
                    topology.label(e.node)
                )));
            }
        }
        Ok(Self { edges })
    }

    pub fn from_labels<S: AsRef<str>>(topology: &Topology, labels: &[S]) -> Result<Self> {
        let edges = labels
            .iter()
            .map(|l| topology.parse_fault_label(l.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(topology, edges)
    }

    pub fn edges(&self) -> &[FaultEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.edges.iter().map(|e| e.label.as_str()).collect()
    }

    pub fn contains(&self, edge: &FaultEdge) -> bool {
        self.edges.contains(edge)
    }

    pub fn position(&self, edge: &FaultEdge) -> Option<usize> {
        self.edges.iter().position(|e| e == edge)
    }

    pub fn fault_graph(&self, node_count: usize) -> Digraph {
        Digraph::new(
            node_count,
            self.edges.iter().map(|e| (e.tail.0, e.head.0)).collect(),
        )
    }

    /// Sub-structure keeping the edges at the given positions.
    pub fn select(&self, positions: &[usize]) -> Self {
        Self {
            edges: positions.iter().map(|&i| self.edges[i].clone()).collect(),
        }
    }
}

/// Residual and fault edges over the same node set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CombinedGraph {
    pub node_count: usize,
    pub residual_edges: Vec<(usize, usize)>,
    pub fault_edges: Vec<(usize, usize)>,
    pub residual_labels: Vec<String>,
    pub fault_labels: Vec<String>,
}

impl CombinedGraph {
    pub fn residual_graph(&self) -> Digraph {
        Digraph::new(self.node_count, self.residual_edges.clone())
    }

    pub fn fault_graph(&self) -> Digraph {
        Digraph::new(self.node_count, self.fault_edges.clone())
    }

    /// Union graph with fault edges first, then residual edges.
    pub fn union(&self) -> Digraph {
        let mut edges = self.fault_edges.clone();
        edges.extend_from_slice(&self.residual_edges);
        Digraph::new(self.node_count, edges)
    }
}

pub fn build_combined_graph(topology: &Topology, faults: &FaultStructure) -> Result<CombinedGraph> {
    // Revalidate: structures may have been built against another topology.
    let faults = FaultStructure::new(topology, faults.edges.clone())?;
    Ok(CombinedGraph {
        node_count: topology.node_count(),
        residual_edges: topology.sensors.iter().map(|s| (s.tail.0, s.head.0)).collect(),
        fault_edges: faults.edges.iter().map(|e| (e.tail.0, e.head.0)).collect(),
        residual_labels: topology.sensors.iter().map(|s| s.id.clone()).collect(),
        fault_labels: faults.edges.iter().map(|e| e.label.clone()).collect(),
    })
}

/// Node-by-edge incidence matrix: `+1` where the edge leaves the node,
/// `-1` where it enters.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidenceMatrix<T> {
    matrix: DenseMatrix<T>,
}

impl<T: Scalar> IncidenceMatrix<T> {
    pub fn matrix(&self) -> &DenseMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DenseMatrix<T> {
        self.matrix
    }

    pub fn rank(&self) -> usize {
        self.matrix.rank()
    }
}

pub fn incidence_matrix<T: Scalar>(graph: &Digraph) -> Result<IncidenceMatrix<T>> {
    if graph.node_count == 0 {
        return Err(Error::Structural("incidence matrix of a graph with no nodes".into()));
    }
    let mut m = DenseMatrix::zeros(graph.node_count, graph.edges.len());
    for (j, &(t, h)) in graph.edges.iter().enumerate() {
        if t == h {
            return Err(Error::Structural(format!("edge {j} is a self-loop")));
        }
        m[(t, j)] = T::one();
        m[(h, j)] = -T::one();
    }
    Ok(IncidenceMatrix { matrix: m })
}

/// Nodal balance `A x_F = B x_R`, one row per node.
///
/// `A` is the incidence of the fault edges and `B` the negated incidence of
/// the residual edges, so each row reads "fault outflow = residual inflow -
/// residual outflow".
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem<T> {
    pub a: DenseMatrix<T>,
    pub b: DenseMatrix<T>,
    pub fault_labels: Vec<String>,
    pub sensor_ids: Vec<String>,
}

impl<T: Scalar> LinearSystem<T> {
    /// `B x_R` for a residual vector ordered like the topology's sensors.
    pub fn rhs(&self, residuals: &[T]) -> Vec<T> {
        self.b.mul_vec(residuals)
    }

    /// `A` without the reference-node row.
    pub fn reduced_a(&self) -> DenseMatrix<T> {
        self.a.without_row(NodeId::REFERENCE.0)
    }

    /// `B` without the reference-node row.
    pub fn reduced_b(&self) -> DenseMatrix<T> {
        self.b.without_row(NodeId::REFERENCE.0)
    }
}

pub fn nodal_system<T: Scalar>(topology: &Topology, faults: &FaultStructure) -> Result<LinearSystem<T>> {
    let combined = build_combined_graph(topology, faults)?;
    let a = incidence_matrix(&combined.fault_graph())?.into_matrix();
    let b = incidence_matrix(&combined.residual_graph())?.into_matrix().neg();
    Ok(LinearSystem {
        a,
        b,
        fault_labels: combined.fault_labels,
        sensor_ids: combined.residual_labels,
    })
}

/// Contracts a sensor's residual edge, fusing its two endpoints.
///
/// The fused node keeps the upstream node's position and records the union
/// of both zone lists. Contracting into the reference node folds the zone
/// into the reference.
pub fn merge_nodes(topology: &Topology, sensor_id: &str) -> Result<Topology> {
    let k = topology
        .sensor_index(sensor_id)
        .ok_or_else(|| Error::Structural(format!("unknown sensor '{sensor_id}'")))?;
    if topology.node_count() == 2 {
        return Err(Error::NoEstimation(format!(
            "merging sensor '{sensor_id}' leaves a single node"
        )));
    }
    let Sensor { tail, head, .. } = topology.sensors[k].clone();
    let remap = |v: NodeId| -> NodeId {
        let v = if v == head { tail } else { v };
        if v.0 > head.0 {
            NodeId(v.0 - 1)
        } else {
            v
        }
    };

    let mut labels = Vec::with_capacity(topology.node_count() - 1);
    let mut zones = Vec::with_capacity(topology.node_count() - 1);
    for v in topology.nodes() {
        if v == head {
            continue;
        }
        if v == tail {
            let mut merged = topology.zones[tail.0].clone();
            merged.extend(topology.zones[head.0].iter().cloned());
            labels.push(if tail.is_reference() {
                topology.labels[0].clone()
            } else {
                merged.join("+")
            });
            zones.push(merged);
        } else {
            labels.push(topology.labels[v.0].clone());
            zones.push(topology.zones[v.0].clone());
        }
    }
    let sensors = topology
        .sensors
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .map(|(_, s)| Sensor {
            id: s.id.clone(),
            tail: remap(s.tail),
            head: remap(s.head),
        })
        .collect();
    Topology::build(labels, zones, sensors)
}

/// Every fault the topology can host: one leak and one sensor fault per
/// zone, except zones fed by the reference node, whose leak and sensor fault
/// collapse into a single merged anomaly.
///
/// Order: leak-type unknowns by node, then sensor faults by node.
pub fn candidate_fault_edges(topology: &Topology) -> FaultStructure {
    let mut edges = Vec::with_capacity(2 * topology.node_count());
    for v in topology.zone_nodes() {
        let kind = if topology.is_reference_adjacent(v) {
            FaultKind::MergedAnomaly
        } else {
            FaultKind::Leak
        };
        edges.push(FaultEdge::new(topology, kind, v).expect("zone node"));
    }
    for v in topology.zone_nodes() {
        if !topology.is_reference_adjacent(v) {
            edges.push(FaultEdge::new(topology, FaultKind::SensorFault, v).expect("zone node"));
        }
    }
    FaultStructure { edges }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample_networks::{four_zone as fig1, six_zone as fig6};

    #[test]
    fn four_zone_combined_graph_shape() {
        let t = fig1();
        let all = candidate_fault_edges(&t);
        let g = build_combined_graph(&t, &all).unwrap();
        assert_eq!(g.residual_edges.len(), 4);
        assert_eq!(g.fault_edges.len(), 7);
        assert_eq!(g.fault_labels, ["LF1", "L2", "L3", "L4", "D2", "D3", "D4"]);
    }

    #[test]
    fn empty_structure_gives_residual_graph() {
        let t = fig1();
        let g = build_combined_graph(&t, &FaultStructure::empty()).unwrap();
        assert_eq!(g.union(), t.residual_graph());
    }

    #[test]
    fn six_zone_combined_graph_shape() {
        let t = fig6();
        let f = FaultStructure::from_labels(&t, &["L3", "L5", "D3", "D4", "D5"]).unwrap();
        let g = build_combined_graph(&t, &f).unwrap();
        assert_eq!(g.residual_edges.len(), 6);
        assert_eq!(g.fault_edges, vec![(3, 0), (5, 0), (3, 2), (4, 1), (5, 2)]);
    }

    #[test]
    fn foreign_fault_edge_rejected() {
        let t = fig1();
        let bogus = FaultEdge {
            kind: FaultKind::Leak,
            node: NodeId(9),
            tail: NodeId(9),
            head: NodeId(0),
            label: "L9".into(),
        };
        assert!(matches!(
            build_combined_graph(&t, &FaultStructure { edges: vec![bogus] }),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn duplicate_fault_rejected() {
        let t = fig1();
        assert!(FaultStructure::from_labels(&t, &["L3", "L3"]).is_err());
        // anomaly cannot be paired with a leak at the same zone
        assert!(FaultStructure::from_labels(&t, &["LF1", "L1"]).is_err());
        // anomaly only exists next to the reference node
        assert!(FaultStructure::from_labels(&t, &["LF2"]).is_err());
    }

    #[test]
    fn single_edge_incidence() {
        let g = Digraph::new(2, vec![(0, 1)]);
        let m = incidence_matrix::<i64ish::Q>(&g).unwrap();
        assert_eq!(m.matrix().column(0), vec![i64ish::q(1), i64ish::q(-1)]);
    }

    #[test]
    fn edgeless_incidence_shape() {
        let g = Digraph::new(3, vec![]);
        let m = incidence_matrix::<f64>(&g).unwrap();
        assert_eq!((m.matrix().rows(), m.matrix().cols()), (3, 0));
        assert!(incidence_matrix::<f64>(&Digraph::new(0, vec![])).is_err());
    }

    #[test]
    fn full_candidate_incidence_rank() {
        let t = fig1();
        let g = build_combined_graph(&t, &candidate_fault_edges(&t)).unwrap();
        let m = incidence_matrix::<i64ish::Q>(&g.union()).unwrap();
        assert_eq!((m.matrix().rows(), m.matrix().cols()), (5, 11));
        assert_eq!(m.rank(), 4);
    }

    #[test]
    fn nodal_rows_four_zone() {
        let t = fig1();
        let f = FaultStructure::from_labels(&t, &["LF1", "L2", "L3", "L4"]).unwrap();
        let sys = nodal_system::<f64>(&t, &f).unwrap();
        // node 3: L3 = E3
        assert_eq!(sys.a.row(3), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(sys.b.row(3), &[0.0, 0.0, 1.0, 0.0]);

        let f = FaultStructure::from_labels(&t, &["LF1", "D2", "L3", "L4"]).unwrap();
        let sys = nodal_system::<f64>(&t, &f).unwrap();
        // node 2: D2 = E2 - E3
        assert_eq!(sys.a.row(2), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(sys.b.row(2), &[0.0, 1.0, -1.0, 0.0]);
    }

    #[test]
    fn nodal_empty_structure_is_conservation() {
        let t = fig1();
        let sys = nodal_system::<f64>(&t, &FaultStructure::empty()).unwrap();
        assert_eq!((sys.a.rows(), sys.a.cols()), (5, 0));
        // pure conservation: columns of B sum to zero
        for c in 0..sys.b.cols() {
            assert_eq!(sys.b.column(c).iter().sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn components_of_six_zone_faults() {
        let t = fig6();
        let f = FaultStructure::from_labels(&t, &["L3", "L5", "D3", "D4", "D5"]).unwrap();
        let comps = weakly_connected_components(&f.fault_graph(t.node_count()));
        let sets: Vec<Vec<usize>> = comps.iter().map(|c| c.nodes.iter().map(|n| n.0).collect()).collect();
        assert_eq!(sets, vec![vec![0, 2, 3, 5], vec![1, 4], vec![6]]);
    }

    #[test]
    fn edgeless_components_are_singletons() {
        let comps = weakly_connected_components(&Digraph::new(4, vec![]));
        assert_eq!(comps.len(), 4);
        assert!(comps.iter().all(|c| c.nodes.len() == 1 && c.edges.is_empty()));
    }

    #[test]
    fn full_candidate_set_is_one_component() {
        let t = fig1();
        let g = candidate_fault_edges(&t).fault_graph(t.node_count());
        let comps = weakly_connected_components(&g);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].nodes.len(), 5);
    }

    #[test]
    fn directed_tree_examples() {
        assert!(is_directed_tree(&Digraph::new(3, vec![(2, 0), (2, 1)])).unwrap());
        assert!(is_directed_tree(&Digraph::new(1, vec![])).unwrap());
        // reference component of the six-zone structure, relabeled 0,2,3,5 -> 0,1,2,3
        let ps = Digraph::new(4, vec![(2, 0), (3, 0), (2, 1), (3, 1)]);
        assert!(!is_directed_tree(&ps).unwrap());
        assert!(matches!(
            is_directed_tree(&Digraph::new(2, vec![])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn merge_sensor_two() {
        let t = fig1();
        let m = merge_nodes(&t, "2").unwrap();
        assert_eq!(m.node_count(), 4);
        let fused = m.node_by_label("1+2").unwrap();
        assert_eq!(m.zones(fused), ["1", "2"]);
        let edges: Vec<(String, &str, &str)> = m
            .sensors()
            .iter()
            .map(|s| (s.id.clone(), m.label(s.tail), m.label(s.head)))
            .collect();
        assert_eq!(
            edges,
            vec![
                ("1".to_string(), "0", "1+2"),
                ("3".to_string(), "1+2", "3"),
                ("4".to_string(), "1+2", "4")
            ]
        );
    }

    #[test]
    fn merge_leaf_sensor() {
        let t = fig1();
        let m = merge_nodes(&t, "3").unwrap();
        let fused = m.node_by_label("2+3").unwrap();
        assert_eq!(m.zones(fused), ["2", "3"]);
        assert_eq!(m.parent(fused), m.node_by_label("1"));
        assert_eq!(m.sensors().len(), m.node_count() - 1);
    }

    #[test]
    fn merge_everything_fails() {
        let mut t = fig1();
        loop {
            let id = t.sensors()[0].id.clone();
            match merge_nodes(&t, &id) {
                Ok(next) => t = next,
                Err(e) => {
                    assert!(matches!(e, Error::NoEstimation(_)));
                    break;
                }
            }
        }
        assert_eq!(t.node_count(), 2);
    }

    #[test]
    fn candidates_counts() {
        assert_eq!(candidate_fault_edges(&fig1()).len(), 7);
        assert_eq!(candidate_fault_edges(&Topology::from_parents(&[0]).unwrap()).labels(), ["LF1"]);
        assert_eq!(candidate_fault_edges(&fig6()).len(), 11);
    }

    #[test]
    fn loader_rejects_cycle() {
        let json = r#"{"reference":"0","nodes":["1","2","3"],
            "sensors":[{"id":"a","from":"0","to":"1"},{"id":"b","from":"3","to":"2"},{"id":"c","from":"2","to":"3"}]}"#;
        let err = Topology::from_json_str(json).unwrap_err().to_string();
        assert!(err.contains("cycle"), "{err}");
        assert!(err.contains("2 -> 3 -> 2") || err.contains("3 -> 2 -> 3"), "{err}");
    }

    #[test]
    fn loader_rejects_bad_shapes() {
        let dup = r#"{"reference":"0","nodes":["1"],"sensors":[{"id":"a","from":"0","to":"1"},{"id":"a","from":"0","to":"1"}]}"#;
        assert!(Topology::from_json_str(dup).is_err());
        let orphan = r#"{"reference":"0","nodes":["1","2"],"sensors":[{"id":"a","from":"0","to":"1"}]}"#;
        assert!(Topology::from_json_str(orphan).is_err());
        let into_ref = r#"{"reference":"0","nodes":["1"],"sensors":[{"id":"a","from":"1","to":"0"}]}"#;
        assert!(Topology::from_json_str(into_ref).is_err());
    }

    #[test]
    fn reference_may_be_listed_in_nodes() {
        let json = r#"{"reference":"src","nodes":["src","a"],"sensors":[{"id":"s","from":"src","to":"a"}]}"#;
        let t = Topology::from_json_str(json).unwrap();
        assert_eq!(t.node_count(), 2);
        assert_eq!(t.label(NodeId(0)), "src");
    }

    mod i64ish {
        pub type Q = num_rational::Ratio<i64>;
        pub fn q(v: i64) -> Q {
            Q::from_integer(v)
        }
    }
}
