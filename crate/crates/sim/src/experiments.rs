//! Experiments that need more than one scenario run.

use lifeline_core::power::{EnergyModel, Profile};
use lifeline_core::Millis;
use serde::Serialize;

use crate::engine::run;
use crate::scenario::NodeKind;
use crate::setups::{battery_scenario, Usage};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatteryResult {
    pub usage: String,
    /// Time of the first phone death, if one died within the run.
    pub lifetime_h: Option<f64>,
    /// What the energy model alone predicts for one full charge.
    pub predicted_h: f64,
}

pub fn usage_profile(usage: Usage) -> Profile {
    match usage {
        Usage::Idle => Profile::IDLE,
        Usage::Screen => Profile::SCREEN,
        Usage::Every(s) => Profile::forwarding(s as f64),
    }
}

/// Runs the battery rig under `usage` and reports the first phone death.
pub fn run_battery_experiment(usage: Usage, energy: EnergyModel, seed: u64) -> BatteryResult {
    let scenario = battery_scenario(usage, energy);
    let metrics = run(&scenario, seed).expect("built-in scenario is valid");
    let death: Option<Millis> = metrics
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Phone.as_str())
        .filter_map(|n| n.death_time_ms)
        .min();
    BatteryResult {
        usage: usage.to_string(),
        lifetime_h: death.map(|t| t as f64 / 3_600_000.0),
        predicted_h: energy.lifetime_hours(&usage_profile(usage), 1.0),
    }
}
