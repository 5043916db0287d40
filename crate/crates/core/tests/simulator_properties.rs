mod common;

use leakgraph::enumeration::{enumerate_detectable, Constraints};
use leakgraph::estimation::{estimate_faults, solve_structure, Tolerances};
use leakgraph::residuals::{compute_residuals, write_samples};
use leakgraph::simulator::{simulate_scenario, InjectedKind, Profile, Scenario, Simulation};
use leakgraph::{FaultKind, Topology};
use proptest::prelude::*;

use common::tree;

fn sensor_ids(t: &Topology) -> Vec<String> {
    t.sensors().iter().map(|s| s.id.clone()).collect()
}

fn base_scenario(t: &Topology, consumption: &[f64]) -> Scenario {
    let mut s = Scenario::new(t.clone(), 240, 1);
    for (v, c) in t.zone_nodes().zip(consumption) {
        s = s.with_consumption(t.label(v), Profile::Series(vec![*c, c * 1.5, c * 0.5]));
    }
    s
}

fn tree_with_consumption() -> impl Strategy<Value = (Topology, Vec<f64>)> {
    tree(7).prop_flat_map(|t| {
        let n = t.node_count() - 1;
        (Just(t), proptest::collection::vec(0.0..5.0f64, n))
    })
}

/// Measured value of `sensor` at step `k`.
fn reading(sim: &Simulation, t: &Topology, sensor: usize, k: usize) -> f64 {
    sim.samples[k * t.sensors().len() + sensor].measured
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn flows_balance_at_every_node(
        (t, c) in tree_with_consumption(),
        leaks in proptest::collection::vec(0.0..3.0f64, 7),
    ) {
        let mut s = base_scenario(&t, &c);
        for (v, l) in t.zone_nodes().zip(&leaks) {
            s = s.with_fault(InjectedKind::Leak, t.label(v), *l);
        }
        let sim = simulate_scenario(&s, 1).unwrap();
        for k in 0..s.steps() {
            for v in t.zone_nodes() {
                let into = t.incoming_sensor_index(v).unwrap();
                let out: f64 = t
                    .sensors()
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.tail == v)
                    .map(|(i, _)| reading(&sim, &t, i, k))
                    .sum();
                let local = s.consumption[t.label(v)].at(k) + leaks[v.0 - 1];
                let gap = reading(&sim, &t, into, k) - out - local;
                prop_assert!(gap.abs() < 1e-9, "node {} step {}: {}", v.0, k, gap);
            }
        }
    }

    #[test]
    fn sensor_faults_stay_local((t, c) in tree_with_consumption(), pick in any::<prop::sample::Index>(), d in -3.0..3.0f64) {
        let s = base_scenario(&t, &c);
        let v = t.zone_nodes().nth(pick.index(t.node_count() - 1)).unwrap();
        let faulty = s.clone().with_fault(InjectedKind::SensorFault, t.label(v), d);
        let a = simulate_scenario(&s, 5).unwrap();
        let b = simulate_scenario(&faulty, 5).unwrap();
        let hit = t.incoming_sensor_index(v).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            let shift = y.measured - x.measured;
            if x.sensor_id == t.sensors()[hit].id {
                prop_assert!((shift - d).abs() < 1e-12);
            } else {
                prop_assert_eq!(shift, 0.0);
            }
            prop_assert_eq!(x.predicted, y.predicted);
        }
    }

    #[test]
    fn output_is_reproducible((t, c) in tree_with_consumption(), seed in any::<u64>()) {
        let mut s = base_scenario(&t, &c);
        s.noise_std = 0.2;
        s.prediction_error_std = 0.1;
        let bytes = |sim: &Simulation| {
            let mut buf = Vec::new();
            write_samples(&mut buf, &sim.samples).unwrap();
            buf.extend(serde_json::to_vec(&sim.ground_truth).unwrap());
            buf
        };
        prop_assert_eq!(bytes(&simulate_scenario(&s, seed).unwrap()), bytes(&simulate_scenario(&s, seed).unwrap()));
    }

    /// Noise-free data from a detectable structure: solving that structure
    /// returns the injected values, and when the truth is ℓ1-minimal it is
    /// among the estimator's minimal solutions.
    #[test]
    fn noise_free_recovery(
        t in tree(5),
        pick in any::<prop::sample::Index>(),
        keep in proptest::collection::vec(any::<bool>(), 6),
        raw in proptest::collection::vec(0.25..3.0f64, 6),
        signs in proptest::collection::vec(any::<bool>(), 6),
    ) {
        let cat = enumerate_detectable::<f64>(&t, &Constraints::none()).unwrap();
        let entry = &cat.entries[pick.index(cat.entries.len())];
        let mut s = base_scenario(&t, &vec![1.0; t.node_count() - 1]);
        let mut chosen = Vec::new();
        for (i, e) in entry.structure.edges().iter().enumerate() {
            if !keep[i] {
                continue;
            }
            let signed = if signs[i] { raw[i] } else { -raw[i] };
            let (kind, value) = match e.kind {
                FaultKind::Leak => (InjectedKind::Leak, raw[i]),
                FaultKind::SensorFault => (InjectedKind::SensorFault, signed),
                FaultKind::MergedAnomaly if signed >= 0.0 => (InjectedKind::Leak, signed),
                FaultKind::MergedAnomaly => (InjectedKind::SensorFault, signed),
            };
            s = s.with_fault(kind, t.label(e.node), value);
            chosen.push((e.label.clone(), value));
        }
        let sim = simulate_scenario(&s, 0).unwrap();
        let r = compute_residuals::<f64>(&sim.samples, &sensor_ids(&t), "all").unwrap();
        let truth = sim.ground_truth.mean_unknowns(0..s.steps());

        let sol = solve_structure(&t, &entry.structure, &r).unwrap();
        for (label, v) in sol.labeled_values() {
            let want = truth.get(label).copied().unwrap_or(0.0);
            prop_assert!((v - want).abs() < 1e-9, "{}: {} vs {}", label, v, want);
        }

        let rep = estimate_faults(&t, &cat, &r, &Tolerances::default()).unwrap();
        let truth_l1: f64 = truth.values().map(|v| v.abs()).sum();
        let best = rep.best_l1.unwrap();
        prop_assert!(best <= truth_l1 + 1e-9);
        if truth_l1 <= best * (1.0 + 1e-6) {
            let found = rep.minimal_solutions.iter().any(|m| {
                m.labeled_values().all(|(l, v)| (v - truth.get(l).copied().unwrap_or(0.0)).abs() < 1e-9)
                    && truth.keys().all(|k| m.value(k).is_some() || truth[k] == 0.0)
            });
            prop_assert!(found, "truth {:?} missing from minimal set", chosen);
        }
    }
}
