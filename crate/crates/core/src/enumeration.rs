//! Offline enumeration of every detectable fault structure of maximal size.
//!
//! A structure with `|V| - 1` unknowns whose fault graph is a directed tree
//! gives a square, nonsingular reduced system. The catalog keeps each such
//! structure together with the inverse of its reduced fault matrix, so that
//! online estimation is a handful of matrix-vector products per structure.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detectability::is_detectable;
use crate::error::{Error, Result};
use crate::graph::{candidate_fault_edges, nodal_system, FaultEdge, FaultStructure, Topology, TopologyFile};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

pub const DEFAULT_SUBSET_CAP: u128 = 10_000_000;

const CATALOG_FORMAT: u32 = 1;

#[derive(Clone, Debug, Default)]
pub struct Constraints {
    /// Faults every structure must contain (a priori detected).
    pub forced: Vec<FaultEdge>,
    /// Faults no structure may contain.
    pub excluded: Vec<FaultEdge>,
}

impl Constraints {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_labels<S: AsRef<str>>(topology: &Topology, forced: &[S], excluded: &[S]) -> Result<Self> {
        let parse = |ls: &[S]| {
            ls.iter()
                .map(|l| topology.parse_fault_label(l.as_ref()))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            forced: parse(forced)?,
            excluded: parse(excluded)?,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.forced.is_empty() && self.excluded.is_empty()
    }

    fn labels(edges: &[FaultEdge]) -> Vec<String> {
        edges.iter().map(|e| e.label.clone()).sorted().collect()
    }
}

/// One detectable structure with its precomputed solver.
#[derive(Clone, Debug)]
pub struct CatalogEntry<T> {
    pub structure: FaultStructure,
    /// Positions of the structure's edges in the candidate list, ascending.
    pub candidate_indices: Vec<usize>,
    /// Inverse of the reduced fault matrix (reference row dropped).
    pub inverse: DenseMatrix<T>,
}

#[derive(Clone, Debug)]
pub struct DetectableCatalog<T> {
    pub fingerprint: String,
    pub candidates: FaultStructure,
    pub entries: Vec<CatalogEntry<T>>,
    pub detectable: usize,
    pub undetectable: usize,
    pub forced: Vec<String>,
    pub excluded: Vec<String>,
    /// Reduced residual matrix shared by every entry.
    pub reduced_b: DenseMatrix<T>,
}

impl<T: Scalar> DetectableCatalog<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keeps entries compatible with extra constraints, recounting.
    pub fn filter(&self, constraints: &Constraints) -> Self {
        let keep = |s: &FaultStructure| {
            constraints.forced.iter().all(|e| s.contains(e)) && !constraints.excluded.iter().any(|e| s.contains(e))
        };
        let entries: Vec<_> = self.entries.iter().filter(|e| keep(&e.structure)).cloned().collect();
        let mut forced = self.forced.clone();
        forced.extend(Constraints::labels(&constraints.forced));
        let mut excluded = self.excluded.clone();
        excluded.extend(Constraints::labels(&constraints.excluded));
        Self {
            fingerprint: self.fingerprint.clone(),
            candidates: self.candidates.clone(),
            detectable: entries.len(),
            undetectable: 0,
            entries,
            forced: forced.into_iter().sorted().dedup().collect(),
            excluded: excluded.into_iter().sorted().dedup().collect(),
            reduced_b: self.reduced_b.clone(),
        }
    }

    fn to_file(&self, topology: &Topology) -> CatalogFile {
        CatalogFile {
            format: CATALOG_FORMAT,
            fingerprint: self.fingerprint.clone(),
            topology: topology.to_file(),
            candidates: self.candidates.labels().into_iter().map(String::from).collect(),
            forced: self.forced.clone(),
            excluded: self.excluded.clone(),
            detectable: self.detectable,
            undetectable: self.undetectable,
            structures: self.entries.iter().map(|e| e.candidate_indices.clone()).collect(),
        }
    }

    /// Deterministic JSON form of the catalog.
    pub fn to_json(&self, topology: &Topology) -> String {
        serde_json::to_string_pretty(&self.to_file(topology)).expect("catalog serializes")
    }

    pub fn from_json(topology: &Topology, json: &str) -> Result<Self> {
        let file: CatalogFile =
            serde_json::from_str(json).map_err(|e| Error::parse(format!("catalog line {}", e.line()), e))?;
        if file.format != CATALOG_FORMAT {
            return Err(Error::Validation(format!("unsupported catalog format {}", file.format)));
        }
        let expected = topology.fingerprint();
        if file.fingerprint != expected {
            return Err(Error::StaleCache {
                expected,
                found: file.fingerprint,
            });
        }
        let candidates = candidate_fault_edges(topology);
        if file.candidates != candidates.labels() {
            return Err(Error::Validation("catalog candidate list does not match topology".into()));
        }
        let reduced_b = nodal_system::<T>(topology, &FaultStructure::empty())?.reduced_b();
        let mut entries = Vec::with_capacity(file.structures.len());
        for indices in file.structures {
            if indices.iter().any(|&i| i >= candidates.len()) {
                return Err(Error::Validation("catalog structure index out of range".into()));
            }
            let structure = candidates.select(&indices);
            if !is_detectable(topology, &structure)?.detectable {
                return Err(Error::Validation(format!(
                    "catalog entry {:?} is not detectable",
                    structure.labels()
                )));
            }
            entries.push(build_entry(topology, structure, indices)?);
        }
        Ok(Self {
            fingerprint: file.fingerprint,
            candidates,
            entries,
            detectable: file.detectable,
            undetectable: file.undetectable,
            forced: file.forced,
            excluded: file.excluded,
            reduced_b,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    format: u32,
    fingerprint: String,
    topology: TopologyFile,
    candidates: Vec<String>,
    forced: Vec<String>,
    excluded: Vec<String>,
    detectable: usize,
    undetectable: usize,
    structures: Vec<Vec<usize>>,
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

pub fn enumerate_detectable<T: Scalar>(
    topology: &Topology,
    constraints: &Constraints,
) -> Result<DetectableCatalog<T>> {
    enumerate_detectable_capped(topology, constraints, DEFAULT_SUBSET_CAP)
}

pub fn enumerate_detectable_capped<T: Scalar>(
    topology: &Topology,
    constraints: &Constraints,
    cap: u128,
) -> Result<DetectableCatalog<T>> {
    let candidates = candidate_fault_edges(topology);
    let size = topology.node_count() - 1;
    let total = binomial(candidates.len(), size);
    if total > cap {
        return Err(Error::CombinatorialCap { count: total, cap });
    }

    let position = |e: &FaultEdge| {
        candidates
            .position(e)
            .ok_or_else(|| Error::Contract(format!("'{}' is not a candidate fault of this topology", e.label)))
    };
    let forced: Vec<usize> = constraints.forced.iter().map(position).collect::<Result<_>>()?;
    let excluded: Vec<usize> = constraints.excluded.iter().map(position).collect::<Result<_>>()?;
    let forced_set: HashSet<usize> = forced.iter().copied().collect();
    let excluded_set: HashSet<usize> = excluded.iter().copied().collect();
    if let Some(&i) = forced_set.intersection(&excluded_set).next() {
        return Err(Error::Contract(format!(
            "'{}' is both forced and excluded",
            candidates.edges()[i].label
        )));
    }
    if forced_set.len() > size {
        return Err(Error::Infeasible(format!(
            "{} forced faults but structures hold only {size}",
            forced_set.len()
        )));
    }

    let free: Vec<usize> = (0..candidates.len())
        .filter(|i| !forced_set.contains(i) && !excluded_set.contains(i))
        .collect();
    let mut subsets: Vec<Vec<usize>> = free
        .iter()
        .copied()
        .combinations(size - forced_set.len())
        .map(|mut s| {
            s.extend(forced_set.iter().copied());
            s.sort_unstable();
            s
        })
        .collect();
    subsets.sort();

    let mut entries = Vec::new();
    let mut undetectable = 0;
    for indices in subsets {
        let structure = candidates.select(&indices);
        if is_detectable(topology, &structure)?.detectable {
            entries.push(build_entry(topology, structure, indices)?);
        } else {
            undetectable += 1;
        }
    }
    let reduced_b = nodal_system::<T>(topology, &FaultStructure::empty())?.reduced_b();
    Ok(DetectableCatalog {
        fingerprint: topology.fingerprint(),
        detectable: entries.len(),
        undetectable,
        candidates,
        entries,
        forced: Constraints::labels(&constraints.forced),
        excluded: Constraints::labels(&constraints.excluded),
        reduced_b,
    })
}

fn build_entry<T: Scalar>(
    topology: &Topology,
    structure: FaultStructure,
    candidate_indices: Vec<usize>,
) -> Result<CatalogEntry<T>> {
    let reduced_a = nodal_system::<T>(topology, &structure)?.reduced_a();
    let inverse = reduced_a.inverse().ok_or_else(|| {
        Error::Internal(format!(
            "detectable structure {:?} has a singular reduced system",
            structure.labels()
        ))
    })?;
    Ok(CatalogEntry {
        structure,
        candidate_indices,
        inverse,
    })
}

/// Cache file for a topology and constraint set.
pub fn cache_path(dir: &Path, topology: &Topology, constraints: &Constraints) -> PathBuf {
    let fp = topology.fingerprint();
    if constraints.is_empty() {
        return dir.join(format!("catalog-{fp}.json"));
    }
    let key = format!(
        "forced={};excluded={}",
        Constraints::labels(&constraints.forced).join(","),
        Constraints::labels(&constraints.excluded).join(",")
    );
    let digest: String = Sha256::digest(key.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect();
    dir.join(format!("catalog-{fp}-{digest}.json"))
}

/// Loads a cached catalog or enumerates and writes it. The flag reports a
/// cache hit.
pub fn load_or_enumerate<T: Scalar>(
    dir: &Path,
    topology: &Topology,
    constraints: &Constraints,
) -> Result<(DetectableCatalog<T>, bool)> {
    let path = cache_path(dir, topology, constraints);
    if path.exists() {
        let text = fs::read_to_string(&path)?;
        return Ok((DetectableCatalog::from_json(topology, &text)?, true));
    }
    let catalog = enumerate_detectable(topology, constraints)?;
    fs::create_dir_all(dir)?;
    fs::write(&path, catalog.to_json(topology))?;
    Ok((catalog, false))
}
