//! Online fault estimation over a catalog of detectable structures.
//!
//! For each window every catalog structure is solved exactly, solutions with
//! a negative leak are discarded, and the valid solutions of smallest ℓ1 norm
//! are kept together with a per-unknown min/max envelope. Sensors that carry
//! no information are contracted out of the topology first; the leak found
//! at a fused node bounds the leaks of all its zones.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::detectability::is_detectable;
use crate::enumeration::{enumerate_detectable, load_or_enumerate, Constraints, DetectableCatalog};
use crate::error::{Error, Result};
use crate::graph::{candidate_fault_edges, merge_nodes, nodal_system, FaultKind, FaultStructure, Topology};
use crate::qp::{solve_sign_constrained_lasso, QpOptions};
use crate::residuals::ResidualVector;
use crate::scalar::Real;

/// Numerical tolerances of the estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Leak positivity slack, relative to `max(1, ‖x_R‖∞)`.
    pub positivity: f64,
    /// Relative slack when grouping ℓ1 norms as equal.
    pub tie: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            positivity: 1e-9,
            tie: 1e-6,
        }
    }
}

impl Tolerances {
    fn positivity_slack<T: Real>(&self, residuals: &[T]) -> T {
        let sup = residuals.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        T::of_f64(self.positivity) * sup.max(T::one())
    }
}

/// Fault values estimated for one structure.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureSolution<T> {
    pub structure: FaultStructure,
    /// Estimates aligned with `structure.edges()`.
    pub values: Vec<T>,
    pub l1_norm: T,
    pub valid: bool,
    /// Position in the catalog the structure came from, if any.
    pub catalog_index: Option<usize>,
}

impl<T: Real> StructureSolution<T> {
    fn assemble(structure: FaultStructure, values: Vec<T>, slack: T, catalog_index: Option<usize>) -> Self {
        let l1_norm = values.iter().fold(T::zero(), |s, v| s + v.abs());
        let valid = structure
            .edges()
            .iter()
            .zip(&values)
            .all(|(e, &v)| !e.kind.is_sign_constrained() || v >= -slack);
        Self {
            structure,
            values,
            l1_norm,
            valid,
            catalog_index,
        }
    }

    pub fn value(&self, label: &str) -> Option<T> {
        self.structure
            .edges()
            .iter()
            .position(|e| e.label == label)
            .map(|i| self.values[i])
    }

    pub fn labeled_values(&self) -> impl Iterator<Item = (&str, T)> {
        self.structure.edges().iter().map(|e| e.label.as_str()).zip(self.values.iter().copied())
    }
}

/// Exact solve of a square detectable structure, or least squares when the
/// structure has fewer unknowns than independent equations.
pub fn solve_structure<T: Real>(
    topology: &Topology,
    structure: &FaultStructure,
    residuals: &ResidualVector<T>,
) -> Result<StructureSolution<T>> {
    solve_structure_with(topology, structure, residuals, &Tolerances::default())
}

pub fn solve_structure_with<T: Real>(
    topology: &Topology,
    structure: &FaultStructure,
    residuals: &ResidualVector<T>,
    tolerances: &Tolerances,
) -> Result<StructureSolution<T>> {
    solve_structure_series(topology, structure, std::slice::from_ref(residuals), tolerances)
}

/// Ordinary least squares over a stack of residual vectors.
pub fn solve_structure_series<T: Real>(
    topology: &Topology,
    structure: &FaultStructure,
    series: &[ResidualVector<T>],
    tolerances: &Tolerances,
) -> Result<StructureSolution<T>> {
    if series.is_empty() {
        return Err(Error::EmptyWindow("no residual vectors to solve".into()));
    }
    let size = topology.node_count() - 1;
    if structure.len() > size {
        return Err(Error::Contract(format!(
            "structure has {} unknowns, at most {size} are solvable",
            structure.len()
        )));
    }
    let system = nodal_system::<T>(topology, structure)?;
    let a = system.reduced_a();
    let b = system.reduced_b();
    let vectors = series.iter().map(|r| r.ordered_for(topology)).collect::<Result<Vec<_>>>()?;

    let values = if structure.len() == size && series.len() == 1 {
        let rhs = b.mul_vec(&vectors[0]);
        a.solve(&rhs).ok_or_else(|| {
            Error::Internal(format!("reduced system of {:?} is singular", structure.labels()))
        })?
    } else {
        if !is_detectable(topology, structure)?.detectable {
            return Err(Error::Contract(format!(
                "structure {:?} is not detectable",
                structure.labels()
            )));
        }
        // Stacked normal equations: (k AᵀA) x = Aᵀ Σ b_k.
        let mut sum = vec![T::zero(); b.rows()];
        for v in &vectors {
            for (s, r) in sum.iter_mut().zip(b.mul_vec(v)) {
                *s = *s + r;
            }
        }
        let k = T::of_f64(vectors.len() as f64);
        let mean: Vec<T> = sum.into_iter().map(|s| s / k).collect();
        a.least_squares(&mean).ok_or_else(|| {
            Error::Internal(format!("normal equations of {:?} are singular", structure.labels()))
        })?
    };
    let slack = vectors
        .iter()
        .map(|v| tolerances.positivity_slack(v))
        .fold(T::zero(), |m, s| m.max(s));
    Ok(StructureSolution::assemble(structure.clone(), values, slack, None))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Envelope<T> {
    pub min: T,
    pub max: T,
}

impl<T: Real> Envelope<T> {
    pub fn contains(&self, v: T, slack: T) -> bool {
        v >= self.min - slack && v <= self.max + slack
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ReportFlags {
    /// Zones whose estimates come from a fused node.
    pub propagated: BTreeSet<String>,
    /// Sensor faults detected before estimation (uninformative sensors).
    pub forced_faults: Vec<String>,
    pub no_valid_solution: bool,
}

/// Description of an unknown in the topology a window was solved on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UnknownInfo {
    pub label: String,
    pub kind: FaultKind,
    pub node: String,
    pub zones: Vec<String>,
}

/// Result for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimationReport<T> {
    pub window: String,
    pub minimal_solutions: Vec<StructureSolution<T>>,
    pub best_l1: Option<T>,
    /// Per-unknown range over the minimal solutions; absent unknowns count as 0.
    pub envelope: BTreeMap<String, Envelope<T>>,
    pub unknowns: Vec<UnknownInfo>,
    pub flags: ReportFlags,
    /// Number of catalog structures solved, and how many were valid.
    pub solved: usize,
    pub valid: usize,
}

impl<T: Real> EstimationReport<T> {
    pub fn to_json(&self) -> serde_json::Value {
        let f = |v: T| v.to_f64_lossy();
        let solutions: Vec<serde_json::Value> = self
            .minimal_solutions
            .iter()
            .map(|s| {
                let values: BTreeMap<&str, f64> = s.labeled_values().map(|(l, v)| (l, f(v))).collect();
                serde_json::json!({
                    "structure": s.structure.labels(),
                    "values": values,
                    "l1_norm": f(s.l1_norm),
                    "valid": s.valid,
                    "catalog_index": s.catalog_index,
                })
            })
            .collect();
        let envelope: BTreeMap<&str, serde_json::Value> = self
            .envelope
            .iter()
            .map(|(k, e)| (k.as_str(), serde_json::json!({ "min": f(e.min), "max": f(e.max) })))
            .collect();
        serde_json::json!({
            "window": self.window,
            "minimal_solutions": solutions,
            "best_l1": self.best_l1.map(f),
            "envelope": envelope,
            "unknowns": self.unknowns,
            "flags": self.flags,
            "solved": self.solved,
            "valid": self.valid,
        })
    }

    /// Leak-type envelope (leak or merged anomaly) covering `zone`.
    pub fn leak_envelope(&self, zone: &str) -> Option<Envelope<T>> {
        self.zone_envelope(zone, |k| k != FaultKind::SensorFault)
    }

    pub fn fault_envelope(&self, zone: &str) -> Option<Envelope<T>> {
        self.zone_envelope(zone, |k| k == FaultKind::SensorFault)
    }

    fn zone_envelope(&self, zone: &str, kind: impl Fn(FaultKind) -> bool) -> Option<Envelope<T>> {
        self.unknowns
            .iter()
            .find(|u| kind(u.kind) && u.zones.iter().any(|z| z == zone))
            .and_then(|u| self.envelope.get(&u.label).copied())
    }
}

fn unknown_infos(topology: &Topology) -> Vec<UnknownInfo> {
    candidate_fault_edges(topology)
        .edges()
        .iter()
        .map(|e| UnknownInfo {
            label: e.label.clone(),
            kind: e.kind,
            node: topology.label(e.node).to_string(),
            zones: topology.zones(e.node).to_vec(),
        })
        .collect()
}

/// Solves every catalog structure and keeps the valid ℓ1-minimal ones.
pub fn estimate_faults<T: Real>(
    topology: &Topology,
    catalog: &DetectableCatalog<T>,
    residuals: &ResidualVector<T>,
    tolerances: &Tolerances,
) -> Result<EstimationReport<T>> {
    let fingerprint = topology.fingerprint();
    if catalog.fingerprint != fingerprint {
        return Err(Error::StaleCache {
            expected: fingerprint,
            found: catalog.fingerprint.clone(),
        });
    }
    let x_r = residuals.ordered_for(topology)?;
    let rhs = catalog.reduced_b.mul_vec(&x_r);
    let slack = tolerances.positivity_slack(&x_r);

    let mut valid = Vec::new();
    for (idx, entry) in catalog.entries.iter().enumerate() {
        let values = entry.inverse.mul_vec(&rhs);
        let sol = StructureSolution::assemble(entry.structure.clone(), values, slack, Some(idx));
        if sol.valid {
            valid.push(sol);
        }
    }
    let best = valid.iter().map(|s| s.l1_norm).fold(None, |m: Option<T>, v| {
        Some(m.map_or(v, |m| m.min(v)))
    });

    let unknowns = unknown_infos(topology);
    let mut report = EstimationReport {
        window: residuals.window.clone(),
        minimal_solutions: Vec::new(),
        best_l1: best,
        envelope: BTreeMap::new(),
        unknowns,
        flags: ReportFlags::default(),
        solved: catalog.entries.len(),
        valid: valid.len(),
    };
    let Some(best) = best else {
        report.flags.no_valid_solution = true;
        return Ok(report);
    };
    let limit = best * (T::one() + T::of_f64(tolerances.tie));
    report.minimal_solutions = valid.into_iter().filter(|s| s.l1_norm <= limit).collect();

    for u in &report.unknowns {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for s in &report.minimal_solutions {
            let v = s.value(&u.label).unwrap_or(T::zero());
            lo = lo.min(v);
            hi = hi.max(v);
        }
        report.envelope.insert(u.label.clone(), Envelope { min: lo, max: hi });
    }
    Ok(report)
}

/// Topology with uninformative sensors contracted away.
#[derive(Clone, Debug, PartialEq)]
pub struct Propagation {
    pub topology: Topology,
    /// Faults of the removed sensors, known before estimation.
    pub forced_faults: Vec<String>,
    /// Fused node label to its constituent zones, for fused nodes only.
    pub provenance: BTreeMap<String, Vec<String>>,
    /// Zones whose estimates are upper bounds shared with other zones.
    pub propagated_zones: BTreeSet<String>,
}

pub fn propagate_uninformative(topology: &Topology, uninformative: &BTreeSet<String>) -> Result<Propagation> {
    let mut forced = Vec::new();
    for id in uninformative {
        let k = topology
            .sensor_index(id)
            .ok_or_else(|| Error::Validation(format!("unknown sensor '{id}'")))?;
        forced.push(format!("D{}", topology.label(topology.sensors()[k].head)));
    }
    if !uninformative.is_empty() && uninformative.len() == topology.sensors().len() {
        return Err(Error::NoEstimation("every sensor is uninformative".into()));
    }
    let mut merged = topology.clone();
    for id in uninformative {
        merged = merge_nodes(&merged, id)?;
    }
    let mut provenance = BTreeMap::new();
    let mut propagated = BTreeSet::new();
    for v in merged.nodes() {
        let zones = merged.zones(v);
        let original = topology.node_by_label(merged.label(v)).map(|o| topology.zones(o));
        if original != Some(zones) {
            provenance.insert(merged.label(v).to_string(), zones.to_vec());
            propagated.extend(zones.iter().cloned());
        }
    }
    Ok(Propagation {
        topology: merged,
        forced_faults: forced,
        provenance,
        propagated_zones: propagated,
    })
}

/// Catalogs per topology fingerprint, enumerated lazily.
pub struct CatalogStore<T> {
    dir: Option<PathBuf>,
    catalogs: HashMap<String, DetectableCatalog<T>>,
    /// Time spent enumerating or loading catalogs.
    pub offline: Duration,
    pub cache_hits: usize,
}

impl<T: Real> CatalogStore<T> {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self {
            dir,
            catalogs: HashMap::new(),
            offline: Duration::ZERO,
            cache_hits: 0,
        }
    }

    pub fn insert(&mut self, catalog: DetectableCatalog<T>) {
        self.catalogs.insert(catalog.fingerprint.clone(), catalog);
    }

    pub fn get(&mut self, topology: &Topology) -> Result<&DetectableCatalog<T>> {
        let fp = topology.fingerprint();
        if !self.catalogs.contains_key(&fp) {
            let start = Instant::now();
            let catalog = match &self.dir {
                Some(dir) => {
                    let (c, hit) = load_or_enumerate(dir, topology, &Constraints::none())?;
                    self.cache_hits += usize::from(hit);
                    c
                }
                None => enumerate_detectable(topology, &Constraints::none())?,
            };
            self.offline += start.elapsed();
            self.catalogs.insert(fp.clone(), catalog);
        }
        Ok(&self.catalogs[&fp])
    }
}

/// Window-by-window estimator with missing-sensor handling.
pub struct Estimator<T> {
    topology: Topology,
    store: CatalogStore<T>,
    pub tolerances: Tolerances,
    /// Time spent in per-window estimation.
    pub online: Duration,
}

impl<T: Real> Estimator<T> {
    pub fn new(topology: Topology, store: CatalogStore<T>, tolerances: Tolerances) -> Result<Self> {
        let mut est = Self {
            topology,
            store,
            tolerances,
            online: Duration::ZERO,
        };
        est.store.get(&est.topology)?;
        Ok(est)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn store(&self) -> &CatalogStore<T> {
        &self.store
    }

    pub fn estimate(&mut self, residuals: &ResidualVector<T>) -> Result<EstimationReport<T>> {
        if residuals.uninformative.is_empty() {
            let catalog = self.store.get(&self.topology)?;
            let start = Instant::now();
            let report = estimate_faults(&self.topology, catalog, residuals, &self.tolerances);
            self.online += start.elapsed();
            return report;
        }
        let prop = propagate_uninformative(&self.topology, &residuals.uninformative)?;
        let kept: Vec<usize> = residuals
            .sensor_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| !residuals.uninformative.contains(*id))
            .map(|(i, _)| i)
            .collect();
        let reduced = ResidualVector {
            window: residuals.window.clone(),
            sensor_ids: kept.iter().map(|&i| residuals.sensor_ids[i].clone()).collect(),
            values: kept.iter().map(|&i| residuals.values[i]).collect(),
            uninformative: BTreeSet::new(),
        };
        let catalog = self.store.get(&prop.topology)?;
        let start = Instant::now();
        let mut report = estimate_faults(&prop.topology, catalog, &reduced, &self.tolerances)?;
        self.online += start.elapsed();
        report.flags.propagated = prop.propagated_zones;
        report.flags.forced_faults = prop.forced_faults;
        Ok(report)
    }
}

/// QP-Lasso estimate over the full candidate set.
#[derive(Clone, Debug, PartialEq)]
pub struct LassoEstimate<T> {
    pub solution: StructureSolution<T>,
    pub objective: T,
    pub kkt_residual: T,
    pub sweeps: usize,
}

/// Minimizes `‖A x − B x_R‖² + λ‖x‖₁` over every candidate unknown, with
/// leaks constrained non-negative.
pub fn qp_lasso<T: Real>(
    topology: &Topology,
    residuals: &ResidualVector<T>,
    lambda: T,
    options: QpOptions,
) -> Result<LassoEstimate<T>> {
    let candidates = candidate_fault_edges(topology);
    let system = nodal_system::<T>(topology, &candidates)?;
    let x_r = residuals.ordered_for(topology)?;
    let rhs = system.rhs(&x_r);
    let nonneg: Vec<bool> = candidates.edges().iter().map(|e| e.kind.is_sign_constrained()).collect();
    let qp = solve_sign_constrained_lasso(&system.a, &rhs, &nonneg, lambda, options)?;
    let slack = Tolerances::default().positivity_slack(&x_r);
    Ok(LassoEstimate {
        solution: StructureSolution::assemble(candidates, qp.x, slack, None),
        objective: qp.objective,
        kkt_residual: qp.kkt_residual,
        sweeps: qp.sweeps,
    })
}
