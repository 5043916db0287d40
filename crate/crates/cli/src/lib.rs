//! Command-line front end: argument model, subcommand dispatch and artifact
//! writers (report JSON, per-zone plot CSVs, flat estimate CSV, manifest).

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use leakgraph::detectability::{diagnose_undetectability, is_detectable};
use leakgraph::enumeration::{enumerate_detectable, load_or_enumerate, Constraints};
use leakgraph::estimation::{propagate_uninformative, qp_lasso, CatalogStore, EstimationReport, Estimator, Tolerances};
use leakgraph::qp::QpOptions;
use leakgraph::residuals::{load_samples, residual_series, write_samples, ResidualVector, WindowSpec};
use leakgraph::simulator::{simulate_scenario, Scenario};
use leakgraph::{Error, FaultStructure, NodeId, Result, Topology};

/// Exit status of a `detect` run on an undetectable structure.
pub const EXIT_UNDETECTABLE: i32 = 2;
pub const EXIT_ERROR: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "leakgraph", version, about = "Leak and sensor-fault detectability and estimation on tree networks")]
pub struct Cli {
    /// Topology JSON file.
    #[arg(long, global = true)]
    pub topology: Option<PathBuf>,
    /// Output directory for reports and manifests.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Directory for cached catalogs.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// RNG seed for simulation.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check whether a fault structure is solvable.
    Detect {
        /// Comma-separated fault labels, e.g. L3,D2,LF1.
        #[arg(long, value_delimiter = ',', required = true)]
        faults: Vec<String>,
    },
    /// Enumerate all detectable structures of maximal size.
    Enumerate {
        #[arg(long, value_delimiter = ',')]
        force: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
    },
    /// Estimate faults window by window from sensor data.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        /// Positivity slack on leak estimates.
        #[arg(long, default_value_t = 1e-9)]
        eps_pos: f64,
        /// Relative tolerance for ℓ1 ties.
        #[arg(long, default_value_t = 1e-6)]
        eps_tie: f64,
    },
    /// Generate synthetic sensor data from a scenario file.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Regularized least-squares baseline estimate.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.05)]
        lambda: f64,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Sensor CSV: timestamp,sensor_id,measured,predicted,quality.
    #[arg(long)]
    pub data: PathBuf,
    /// Window length: daily, hourly, <n>min or all.
    #[arg(long, default_value = "daily")]
    pub window: String,
}

/// Outcome of a run: exit code and the JSON summary printed on stdout.
#[derive(Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub summary: Value,
}

fn require_topology(cli: &Cli) -> Result<Topology> {
    let path = cli
        .topology
        .as_ref()
        .ok_or_else(|| Error::Validation("--topology is required for this subcommand".into()))?;
    Topology::load(path)
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::Validation("--out is required for this subcommand".into()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn node_labels(topology: &Topology, nodes: &[NodeId]) -> Vec<String> {
    nodes.iter().map(|&v| topology.label(v).to_string()).collect()
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

struct Manifest {
    subcommand: &'static str,
    inputs: Value,
    fingerprint: Option<String>,
    timings: Value,
    outputs: Vec<String>,
    extra: Value,
}

impl Manifest {
    fn write(self, dir: &Path) -> Result<()> {
        let value = json!({
            "tool": "leakgraph",
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": self.subcommand,
            "inputs": self.inputs,
            "topology_fingerprint": self.fingerprint,
            "timings_ms": self.timings,
            "outputs": self.outputs,
            "results": self.extra,
        });
        write_json(&dir.join("manifest.json"), &value)
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Detect { faults } => detect(cli, faults),
        Command::Enumerate { force, exclude } => enumerate(cli, force, exclude),
        Command::Estimate { data, eps_pos, eps_tie } => estimate(
            cli,
            data,
            Tolerances {
                positivity: *eps_pos,
                tie: *eps_tie,
            },
        ),
        Command::Simulate { scenario } => simulate(cli, scenario),
        Command::Baseline { data, lambda } => baseline(cli, data, *lambda),
    }
}

fn detect(cli: &Cli, labels: &[String]) -> Result<Outcome> {
    let topology = require_topology(cli)?;
    let faults = FaultStructure::from_labels(&topology, labels)?;
    let verdict = is_detectable(&topology, &faults)?;
    let mut summary = json!({
        "structure": faults.labels(),
        "detectable": verdict.detectable,
    });
    if !verdict.detectable {
        let failing = verdict.failing_component.expect("undetectable verdict names a component");
        let diagnosis = diagnose_undetectability(&topology, &faults)?;
        summary["failing_component"] = json!(node_labels(&topology, &failing.nodes));
        summary["diagnosis"] = json!({
            "culprits": node_labels(&topology, &diagnosis.culprits),
            "alternatives": diagnosis
                .alternatives
                .iter()
                .map(|a| node_labels(&topology, a))
                .collect::<Vec<_>>(),
            "remaining": diagnosis.remaining.labels(),
            "detectable_components": diagnosis
                .detectable_components
                .iter()
                .map(|c| node_labels(&topology, &c.nodes))
                .collect::<Vec<_>>(),
        });
    }
    if let Some(out) = &cli.out {
        ensure_dir(out)?;
        write_json(&out.join("detect.json"), &summary)?;
    }
    Ok(Outcome {
        exit_code: if verdict.detectable { 0 } else { EXIT_UNDETECTABLE },
        summary,
    })
}

fn enumerate(cli: &Cli, force: &[String], exclude: &[String]) -> Result<Outcome> {
    let topology = require_topology(cli)?;
    let constraints = Constraints::from_labels(&topology, force, exclude)?;
    let start = Instant::now();
    let (catalog, hit) = match &cli.cache_dir {
        Some(dir) => load_or_enumerate::<f64>(dir, &topology, &constraints)?,
        None => (enumerate_detectable::<f64>(&topology, &constraints)?, false),
    };
    let elapsed = start.elapsed();
    let summary = json!({
        "candidates": catalog.candidates.labels(),
        "detectable": catalog.detectable,
        "undetectable": catalog.undetectable,
        "cache_hit": hit,
        "structures": catalog.entries.iter().map(|e| e.structure.labels()).collect::<Vec<_>>(),
    });
    if let Some(out) = &cli.out {
        ensure_dir(out)?;
        write_json(&out.join("catalog.json"), &summary)?;
        Manifest {
            subcommand: "enumerate",
            inputs: json!({ "topology": cli.topology, "force": force, "exclude": exclude }),
            fingerprint: Some(topology.fingerprint()),
            timings: json!({ "offline": ms(elapsed), "online": 0.0 }),
            outputs: vec!["catalog.json".into()],
            extra: json!({
                "detectable": catalog.detectable,
                "undetectable": catalog.undetectable,
                "cache_hit": hit,
            }),
        }
        .write(out)?;
    }
    Ok(Outcome { exit_code: 0, summary })
}

fn load_series(topology: &Topology, data: &DataArgs) -> Result<(WindowSpec, Vec<ResidualVector<f64>>)> {
    let spec: WindowSpec = data.window.parse()?;
    let samples = load_samples(&data.data)?;
    let ids: Vec<String> = topology.sensors().iter().map(|s| s.id.clone()).collect();
    Ok((spec, residual_series(&samples, &ids, spec)?))
}

fn estimate(cli: &Cli, data: &DataArgs, tolerances: Tolerances) -> Result<Outcome> {
    let topology = require_topology(cli)?;
    let out = require_out(cli)?;
    let (spec, series) = load_series(&topology, data)?;
    let mut estimator = Estimator::new(topology.clone(), CatalogStore::new(cli.cache_dir.clone()), tolerances)?;
    let reports = series.iter().map(|r| estimator.estimate(r)).collect::<Result<Vec<_>>>()?;

    ensure_dir(out)?;
    let report_json = Value::Array(reports.iter().map(EstimationReport::to_json).collect());
    write_json(&out.join("report.json"), &report_json)?;
    let mut outputs = vec!["report.json".to_string()];
    for path in emit_plot_data(&topology, &reports, &out.join("plots"))? {
        outputs.push(relative(out, &path));
    }
    write_flat_csv(&out.join("estimates.csv"), &reports)?;
    outputs.push("estimates.csv".into());

    let propagated = reports.iter().filter(|r| !r.flags.propagated.is_empty()).count();
    let no_solution = reports.iter().filter(|r| r.flags.no_valid_solution).count();
    let online = ms(estimator.online);
    Manifest {
        subcommand: "estimate",
        inputs: json!({ "topology": cli.topology, "data": data.data, "window": spec.to_string() }),
        fingerprint: Some(topology.fingerprint()),
        timings: json!({
            "offline": ms(estimator.store().offline),
            "online": online,
            "online_per_window": if reports.is_empty() { 0.0 } else { online / reports.len() as f64 },
        }),
        outputs,
        extra: json!({
            "windows": reports.len(),
            "propagated_windows": propagated,
            "no_valid_solution_windows": no_solution,
            "catalog_cache_hits": estimator.store().cache_hits,
            "tolerances": { "eps_pos": tolerances.positivity, "eps_tie": tolerances.tie },
        }),
    }
    .write(out)?;
    Ok(Outcome {
        exit_code: 0,
        summary: json!({ "windows": reports.len(), "propagated_windows": propagated }),
    })
}

fn relative(base: &Path, path: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).display().to_string()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row of a zone's plot CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotRow {
    pub window: String,
    pub leak: Option<(f64, f64)>,
    pub fault: Option<(f64, f64)>,
    pub propagated: bool,
}

pub fn plot_rows(reports: &[EstimationReport<f64>], zone: &str) -> Vec<PlotRow> {
    reports
        .iter()
        .map(|r| PlotRow {
            window: r.window.clone(),
            leak: r.leak_envelope(zone).map(|e| (e.min, e.max)),
            fault: r.fault_envelope(zone).map(|e| (e.min, e.max)),
            propagated: r.flags.propagated.contains(zone),
        })
        .collect()
}

/// Writes `zone-<label>.csv` for every zone of `topology` into `dir`.
pub fn emit_plot_data(topology: &Topology, reports: &[EstimationReport<f64>], dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::EmptyWindow("no windows to export".into()));
    }
    ensure_dir(dir)?;
    let zones: BTreeSet<&str> = topology
        .zone_nodes()
        .flat_map(|v| topology.zones(v).iter().map(String::as_str))
        .collect();
    let mut paths = Vec::new();
    for zone in zones {
        let path = dir.join(format!("zone-{zone}.csv"));
        let mut w = std::io::BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "window,leak_min,leak_max,fault_min,fault_max,propagated")?;
        for row in plot_rows(reports, zone) {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                row.window,
                cell(row.leak.map(|e| e.0)),
                cell(row.leak.map(|e| e.1)),
                cell(row.fault.map(|e| e.0)),
                cell(row.fault.map(|e| e.1)),
                row.propagated
            )?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

fn write_flat_csv(path: &Path, reports: &[EstimationReport<f64>]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "window,unknown,node,min,max,no_valid_solution")?;
    for r in reports {
        for u in &r.unknowns {
            let e = r.envelope.get(&u.label);
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.window,
                u.label,
                u.node,
                cell(e.map(|e| e.min)),
                cell(e.map(|e| e.max)),
                r.flags.no_valid_solution
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn simulate(cli: &Cli, scenario_path: &Path) -> Result<Outcome> {
    let out = require_out(cli)?;
    let scenario = Scenario::load(scenario_path)?;
    let start = Instant::now();
    let sim = simulate_scenario(&scenario, cli.seed)?;
    let elapsed = start.elapsed();

    ensure_dir(out)?;
    write_samples(fs::File::create(out.join("samples.csv"))?, &sim.samples)?;
    let truth = serde_json::to_value(&sim.ground_truth).map_err(|e| Error::Internal(e.to_string()))?;
    write_json(&out.join("ground_truth.json"), &truth)?;
    let topo = serde_json::to_value(scenario.topology.to_file()).map_err(|e| Error::Internal(e.to_string()))?;
    write_json(&out.join("topology.json"), &topo)?;
    Manifest {
        subcommand: "simulate",
        inputs: json!({ "scenario": scenario_path, "seed": cli.seed }),
        fingerprint: Some(scenario.topology.fingerprint()),
        timings: json!({ "offline": 0.0, "online": ms(elapsed) }),
        outputs: vec!["samples.csv".into(), "ground_truth.json".into(), "topology.json".into()],
        extra: json!({ "samples": sim.samples.len(), "steps": scenario.steps() }),
    }
    .write(out)?;
    Ok(Outcome {
        exit_code: 0,
        summary: json!({ "samples": sim.samples.len() }),
    })
}

fn baseline(cli: &Cli, data: &DataArgs, lambda: f64) -> Result<Outcome> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Validation(format!("lambda must be non-negative, got {lambda}")));
    }
    let topology = require_topology(cli)?;
    let out = require_out(cli)?;
    let (spec, series) = load_series(&topology, data)?;
    let start = Instant::now();
    let mut windows = Vec::with_capacity(series.len());
    for r in &series {
        let prop = propagate_uninformative(&topology, &r.uninformative)?;
        let kept: Vec<usize> = (0..r.sensor_ids.len())
            .filter(|&i| !r.uninformative.contains(&r.sensor_ids[i]))
            .collect();
        let reduced = ResidualVector {
            window: r.window.clone(),
            sensor_ids: kept.iter().map(|&i| r.sensor_ids[i].clone()).collect(),
            values: kept.iter().map(|&i| r.values[i]).collect(),
            uninformative: BTreeSet::new(),
        };
        let est = qp_lasso(&prop.topology, &reduced, lambda, QpOptions::default())?;
        let values: serde_json::Map<String, Value> = est
            .solution
            .labeled_values()
            .map(|(l, v)| (l.to_string(), json!(v)))
            .collect();
        windows.push(json!({
            "window": r.window,
            "values": values,
            "objective": est.objective,
            "kkt_residual": est.kkt_residual,
            "sweeps": est.sweeps,
            "propagated": prop.propagated_zones,
        }));
    }
    let elapsed = start.elapsed();
    ensure_dir(out)?;
    write_json(&out.join("baseline.json"), &Value::Array(windows))?;
    Manifest {
        subcommand: "baseline",
        inputs: json!({ "topology": cli.topology, "data": data.data, "window": spec.to_string(), "lambda": lambda }),
        fingerprint: Some(topology.fingerprint()),
        timings: json!({ "offline": 0.0, "online": ms(elapsed) }),
        outputs: vec!["baseline.json".into()],
        extra: json!({ "windows": series.len() }),
    }
    .write(out)?;
    Ok(Outcome {
        exit_code: 0,
        summary: json!({ "windows": series.len() }),
    })
}

/// Single-line, machine-parsable rendering of an error.
pub fn error_line(err: &Error) -> String {
    let msg = err.to_string().replace('\n', " ");
    format!("error[{}]: {}", err.category(), msg)
}
