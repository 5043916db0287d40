//! Synthetic sensor data with injected leaks and sensor faults.
//!
//! True flows are summed bottom-up over the tree: the flow through a sensor
//! is the consumption plus leaks of every zone downstream of it. A sensor
//! reading adds the sensor's own fault and Gaussian noise; the prediction is
//! the consumption-only flow, optionally perturbed by model error.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, Topology, TopologyFile};
use crate::residuals::{format_timestamp, parse_timestamp, Quality, SensorSample};

/// Flow profile: a constant or a sequence repeated cyclically per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Constant(f64),
    Series(Vec<f64>),
}

impl Profile {
    pub fn at(&self, step: usize) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Series(v) => v[step % v.len()],
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            Profile::Constant(v) => std::slice::from_ref(v),
            Profile::Series(v) => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectedKind {
    Leak,
    SensorFault,
    /// The sensor into the node reports a constant value.
    Stuck,
    /// The sensor into the node reports nothing.
    Missing,
}

/// A fault active on the half-open interval `[start, end)` in days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectedFault {
    pub kind: InjectedKind,
    pub node: String,
    #[serde(default)]
    pub value: f64,
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub end: Option<f64>,
}

impl InjectedFault {
    fn active(&self, day: f64) -> bool {
        day >= self.start && self.end.is_none_or(|e| day < e)
    }
}

/// Topology given inline or as a path relative to the scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologyRef {
    Path(String),
    Inline(TopologyFile),
}

/// Scenario file contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub topology: TopologyRef,
    #[serde(default)]
    pub consumption: BTreeMap<String, Profile>,
    #[serde(default)]
    pub faults: Vec<InjectedFault>,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub prediction_error_std: f64,
    pub cadence_minutes: u32,
    pub days: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub topology: Topology,
    /// Consumption per zone node; zones absent from the file consume nothing.
    pub consumption: BTreeMap<String, Profile>,
    pub faults: Vec<InjectedFault>,
    pub noise_std: f64,
    pub prediction_error_std: f64,
    pub cadence_minutes: u32,
    pub days: u32,
    pub start: NaiveDateTime,
}

fn default_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
}

impl Scenario {
    /// Scenario with constant consumption and no faults.
    pub fn new(topology: Topology, cadence_minutes: u32, days: u32) -> Self {
        Self {
            topology,
            consumption: BTreeMap::new(),
            faults: Vec::new(),
            noise_std: 0.0,
            prediction_error_std: 0.0,
            cadence_minutes,
            days,
            start: default_start(),
        }
    }

    pub fn with_consumption(mut self, zone: &str, profile: Profile) -> Self {
        self.consumption.insert(zone.to_string(), profile);
        self
    }

    pub fn with_fault(mut self, kind: InjectedKind, node: &str, value: f64) -> Self {
        self.faults.push(InjectedFault {
            kind,
            node: node.to_string(),
            value,
            start: 0.0,
            end: None,
        });
        self
    }

    pub fn from_file(file: ScenarioFile, base_dir: &Path) -> Result<Self> {
        let topology = match &file.topology {
            TopologyRef::Inline(t) => Topology::from_file(t)?,
            TopologyRef::Path(p) => Topology::load(base_dir.join(p))?,
        };
        let start = match &file.start {
            Some(s) => parse_timestamp(s)
                .ok_or_else(|| Error::parse("scenario.start", format!("invalid timestamp '{s}'")))?,
            None => default_start(),
        };
        let scenario = Self {
            topology,
            consumption: file.consumption,
            faults: file.faults,
            noise_std: file.noise_std,
            prediction_error_std: file.prediction_error_std,
            cadence_minutes: file.cadence_minutes,
            days: file.days,
            start,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let file: ScenarioFile = serde_json::from_str(&text).map_err(|e| {
            Error::parse(
                format!("{}:{}:{}", path.display(), e.line(), e.column()),
                e.to_string(),
            )
        })?;
        Self::from_file(file, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            topology: TopologyRef::Inline(self.topology.to_file()),
            consumption: self.consumption.clone(),
            faults: self.faults.clone(),
            noise_std: self.noise_std,
            prediction_error_std: self.prediction_error_std,
            cadence_minutes: self.cadence_minutes,
            days: self.days,
            start: Some(format_timestamp(&self.start)),
        }
    }

    pub fn steps(&self) -> usize {
        (self.days as usize * 1440) / self.cadence_minutes.max(1) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.cadence_minutes == 0 || !(self.days * 1440).is_multiple_of(self.cadence_minutes) {
            return Err(Error::Validation(format!(
                "cadence of {} minutes does not divide {} days",
                self.cadence_minutes, self.days
            )));
        }
        if self.days == 0 {
            return Err(Error::Validation("scenario must span at least one day".into()));
        }
        for (name, std) in [("noise_std", self.noise_std), ("prediction_error_std", self.prediction_error_std)] {
            if !(std.is_finite() && std >= 0.0) {
                return Err(Error::Validation(format!("{name} must be finite and non-negative")));
            }
        }
        for (zone, profile) in &self.consumption {
            match self.topology.node_by_label(zone) {
                Some(v) if !v.is_reference() => {}
                _ => return Err(Error::Validation(format!("consumption for unknown zone '{zone}'"))),
            }
            if profile.values().is_empty() {
                return Err(Error::Validation(format!("empty consumption profile for '{zone}'")));
            }
            if profile.values().iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Validation(format!("negative consumption in zone '{zone}'")));
            }
        }
        for f in &self.faults {
            match self.topology.node_by_label(&f.node) {
                Some(v) if !v.is_reference() => {}
                _ => return Err(Error::Validation(format!("fault on unknown zone '{}'", f.node))),
            }
            if !f.value.is_finite() {
                return Err(Error::Validation(format!("non-finite fault value at '{}'", f.node)));
            }
            if f.kind == InjectedKind::Leak && f.value < 0.0 {
                return Err(Error::Validation(format!("negative leak at '{}'", f.node)));
            }
            if f.end.is_some_and(|e| e <= f.start) {
                return Err(Error::Validation(format!("empty fault interval at '{}'", f.node)));
            }
        }
        Ok(())
    }
}

/// Per-step values of one injected fault.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultTrace {
    pub kind: InjectedKind,
    pub node: String,
    /// Sensor whose reading is affected, for sensor-side faults.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensor: Option<String>,
    /// Name of the matching estimator unknown, when there is one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unknown: Option<String>,
    /// Value per step; zero while inactive.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub timestamps: Vec<String>,
    pub faults: Vec<FaultTrace>,
}

impl GroundTruth {
    /// Estimator unknowns with their mean value over `steps`. Leaks and
    /// sensor faults at zones fed by the reference share one unknown and add.
    pub fn mean_unknowns(&self, steps: std::ops::Range<usize>) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        let n = steps.len().max(1) as f64;
        for f in &self.faults {
            if let Some(u) = &f.unknown {
                let mean = f.values[steps.clone()].iter().sum::<f64>() / n;
                *out.entry(u.clone()).or_insert(0.0) += mean;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub samples: Vec<SensorSample>,
    pub ground_truth: GroundTruth,
}

fn unknown_name(topology: &Topology, kind: InjectedKind, node: NodeId) -> Option<String> {
    let label = topology.label(node);
    match kind {
        InjectedKind::Leak | InjectedKind::SensorFault if topology.is_reference_adjacent(node) => {
            Some(format!("LF{label}"))
        }
        InjectedKind::Leak => Some(format!("L{label}")),
        InjectedKind::SensorFault => Some(format!("D{label}")),
        InjectedKind::Stuck | InjectedKind::Missing => None,
    }
}

/// Nodes in an order where every node comes after all of its descendants.
fn bottom_up_order(topology: &Topology) -> Vec<NodeId> {
    let n = topology.node_count();
    let mut children: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for s in topology.sensors() {
        children[s.tail.0].push(s.head);
    }
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![NodeId::REFERENCE];
    while let Some(v) = stack.pop() {
        order.push(v);
        stack.extend(children[v.0].iter().copied());
    }
    order.reverse();
    order
}

pub fn simulate_scenario(scenario: &Scenario, seed: u64) -> Result<Simulation> {
    scenario.validate()?;
    let topo = &scenario.topology;
    let n = topo.node_count();
    let steps = scenario.steps();
    let order = bottom_up_order(topo);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, scenario.noise_std).map_err(|e| Error::Validation(e.to_string()))?;
    let model_error =
        Normal::new(0.0, scenario.prediction_error_std).map_err(|e| Error::Validation(e.to_string()))?;

    let fault_nodes: Vec<NodeId> = scenario
        .faults
        .iter()
        .map(|f| topo.node_by_label(&f.node).expect("validated"))
        .collect();
    let consumption: Vec<Option<&Profile>> = topo
        .nodes()
        .map(|v| scenario.consumption.get(topo.label(v)))
        .collect();

    let mut traces: Vec<FaultTrace> = scenario
        .faults
        .iter()
        .zip(&fault_nodes)
        .map(|(f, &v)| FaultTrace {
            kind: f.kind,
            node: f.node.clone(),
            sensor: match f.kind {
                InjectedKind::Leak => None,
                _ => topo.incoming_sensor(v).map(|s| s.id.clone()),
            },
            unknown: unknown_name(topo, f.kind, v),
            values: Vec::with_capacity(steps),
        })
        .collect();

    let mut samples = Vec::with_capacity(steps * topo.sensors().len());
    let mut timestamps = Vec::with_capacity(steps);
    let mut true_flow = vec![0.0; n];
    let mut model_flow = vec![0.0; n];
    for step in 0..steps {
        let minutes = step as i64 * scenario.cadence_minutes as i64;
        let ts = scenario.start + Duration::minutes(minutes);
        let day = minutes as f64 / 1440.0;
        timestamps.push(format_timestamp(&ts));

        let mut leak = vec![0.0; n];
        let mut offset = vec![0.0; n];
        let mut stuck: Vec<Option<f64>> = vec![None; n];
        let mut missing = vec![false; n];
        for ((f, &v), trace) in scenario.faults.iter().zip(&fault_nodes).zip(&mut traces) {
            let on = f.active(day);
            trace.values.push(if on { f.value } else { 0.0 });
            if !on {
                continue;
            }
            match f.kind {
                InjectedKind::Leak => leak[v.0] += f.value,
                InjectedKind::SensorFault => offset[v.0] += f.value,
                InjectedKind::Stuck => stuck[v.0] = Some(f.value),
                InjectedKind::Missing => missing[v.0] = true,
            }
        }

        for &v in &order {
            let c = consumption[v.0].map_or(0.0, |p| p.at(step));
            true_flow[v.0] = c + leak[v.0];
            model_flow[v.0] = c;
        }
        for &v in &order {
            if let Some(p) = topo.parent(v) {
                true_flow[p.0] += true_flow[v.0];
                model_flow[p.0] += model_flow[v.0];
            }
        }

        for s in topo.sensors() {
            let h = s.head.0;
            // draws happen unconditionally so that the stream does not
            // depend on which faults are active
            let e_meas = if scenario.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let e_pred = if scenario.prediction_error_std > 0.0 {
                model_error.sample(&mut rng)
            } else {
                0.0
            };
            let (measured, quality) = if missing[h] {
                (f64::NAN, Quality::Missing)
            } else if let Some(value) = stuck[h] {
                (value, Quality::Ok)
            } else {
                (true_flow[h] + offset[h] + e_meas, Quality::Ok)
            };
            samples.push(SensorSample {
                sensor_id: s.id.clone(),
                timestamp: ts,
                measured,
                predicted: model_flow[h] + e_pred,
                quality,
            });
        }
    }

    Ok(Simulation {
        samples,
        ground_truth: GroundTruth {
            seed,
            timestamps,
            faults: traces,
        },
    })
}

/// Outcome class of a simulated fault structure under the estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioClass {
    /// Detectable, and its solution has the smallest ℓ1 norm.
    DetectableMinimal,
    /// Detectable, but another valid solution has a smaller ℓ1 norm.
    DetectableNotMinimal,
    Undetectable,
}

#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub name: String,
    pub class: ScenarioClass,
    pub scenario: Scenario,
}

type FaultSpec = (InjectedKind, &'static str, f64);

/// Thirteen noise-free cases on the four-zone network covering the three
/// outcome classes. Consumption is constant, faults last the whole day.
pub fn scenario_suite() -> Vec<SuiteCase> {
    use InjectedKind::{Leak, SensorFault};
    use ScenarioClass::*;
    let cases: [(&str, ScenarioClass, &[FaultSpec]); 13] = [
        ("single-leak", DetectableMinimal, &[(Leak, "3", 2.0)]),
        ("single-sensor-fault", DetectableMinimal, &[(SensorFault, "2", 3.0)]),
        ("two-leaks", DetectableMinimal, &[(Leak, "2", 1.0), (Leak, "4", 2.0)]),
        ("leak-and-fault", DetectableMinimal, &[(Leak, "3", 1.0), (SensorFault, "4", 0.5)]),
        ("head-zone-leak", DetectableMinimal, &[(Leak, "1", 1.5)]),
        ("tied-faults", DetectableMinimal, &[(SensorFault, "2", 1.0), (SensorFault, "3", 1.0)]),
        ("leak-and-fault-same-zone", DetectableMinimal, &[(Leak, "3", 1.0), (SensorFault, "3", 2.0)]),
        ("leak-and-negative-fault", DetectableMinimal, &[(Leak, "4", 2.0), (SensorFault, "2", -1.0)]),
        ("masked-by-leak-pair", DetectableNotMinimal, &[(Leak, "2", 1.0), (SensorFault, "3", 0.5)]),
        ("cancelling-pair", DetectableNotMinimal, &[(Leak, "3", 1.0), (SensorFault, "3", -1.0)]),
        ("head-offset", DetectableNotMinimal, &[(SensorFault, "1", -1.0), (Leak, "2", 1.0)]),
        (
            "cycle-through-zone-3",
            Undetectable,
            &[(Leak, "2", 1.0), (Leak, "3", 1.0), (SensorFault, "3", 1.0)],
        ),
        (
            "two-branch-overload",
            Undetectable,
            &[(Leak, "2", 1.0), (SensorFault, "2", 1.0), (Leak, "4", 1.0), (SensorFault, "4", 1.0)],
        ),
    ];
    let topology = crate::sample_networks::four_zone();
    cases
        .iter()
        .map(|(name, class, faults)| {
            let mut scenario = Scenario::new(topology.clone(), 60, 1);
            for zone in ["1", "2", "3", "4"] {
                scenario = scenario.with_consumption(zone, Profile::Constant(1.0));
            }
            for &(kind, node, value) in faults.iter() {
                scenario = scenario.with_fault(kind, node, value);
            }
            SuiteCase {
                name: name.to_string(),
                class: *class,
                scenario,
            }
        })
        .collect()
}
