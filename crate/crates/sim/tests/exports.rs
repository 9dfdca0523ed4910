mod common;

use std::collections::BTreeSet;

use lifeline_core::NodeId;
use lifeline_sim::metrics::flatten;
use lifeline_sim::setups::{build_setup, SetupId, WARM_UP_MS};
use lifeline_sim::{export_metrics, export_topology, run, Format, METRICS_SCHEMA};
use serde_json::Value;

#[test]
fn hundred_random_runs_match_the_schema() {
    let schema: Value = serde_json::from_str(METRICS_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    for seed in 0..100 {
        let s = common::random_scenario(seed);
        let m = run(&s, seed).unwrap();
        let doc: Value = serde_json::from_str(&export_metrics(&m, Format::Json)).unwrap();
        let errors: Vec<String> = validator
            .iter_errors(&doc)
            .map(|e| format!("{} at {}", e, e.instance_path()))
            .collect();
        assert!(errors.is_empty(), "seed {seed}: {errors:#?}");
    }
}

#[test]
fn csv_carries_every_json_leaf() {
    for seed in [3, 17] {
        let m = run(&common::random_scenario(seed), seed).unwrap();
        let json: Value = serde_json::from_str(&export_metrics(&m, Format::Json)).unwrap();
        let csv_text = export_metrics(&m, Format::Csv);
        let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
        assert_eq!(reader.headers().unwrap(), vec!["metric", "value"]);
        let rows: Vec<(String, String)> = reader
            .records()
            .map(|r| {
                let r = r.unwrap();
                (r[0].to_string(), r[1].to_string())
            })
            .collect();
        assert_eq!(rows, flatten(&json));
        let delivered = rows.iter().find(|(k, _)| k == "counters.delivered").unwrap();
        assert_eq!(delivered.1, m.counters.delivered.to_string());
    }
}

#[test]
fn converged_chain_dot_matches_adjacency() {
    let s = build_setup(SetupId::C, 10, None);
    let m = run(&s, 9).unwrap();
    let dot = export_topology(&m.snapshots, WARM_UP_MS - 1).unwrap();
    let drawn: BTreeSet<(NodeId, NodeId)> = dot
        .lines()
        .filter_map(|l| l.trim().strip_suffix(';'))
        .filter_map(|l| {
            let (a, rest) = l.split_once(" -- ")?;
            let b = rest.split(" [").next()?;
            Some((a.trim_matches('"').parse().ok()?, b.trim_matches('"').parse().ok()?))
        })
        .map(|(a, b): (NodeId, NodeId)| (a.min(b), a.max(b)))
        .collect();
    let links: BTreeSet<(NodeId, NodeId)> = s.links.iter().map(|l| (l.a.min(l.b), l.a.max(l.b))).collect();
    assert_eq!(drawn, links, "{dot}");
    assert_eq!(dot.matches("[label=").count(), s.nodes.len());
    // The middle routers relay for the chain.
    assert!(dot.contains("[style=bold]"));
}

#[test]
fn dead_nodes_are_dashed() {
    let m = run(&lifeline_sim::setups::battery_scenario(
        lifeline_sim::setups::Usage::Screen,
        Default::default(),
    ), 1)
    .unwrap();
    let dot = export_topology(&m.snapshots, m.end_time_ms).unwrap();
    assert!(dot.contains("style=dashed"), "{dot}");
}
