//! Browser bindings: three experiments that each return CSV text.

use wasm_bindgen::prelude::*;

use bondsim::engine::SimTime;
use bondsim::harness::report::{render_batch_csv, render_comparison_csv, render_trials_csv};
use bondsim::harness::scenario::FailoverConfig;
use bondsim::harness::{compare, parse_scenario, run, run_failover_batch, Mode, Scenario};
use bondsim::routing::DetectionMode;

fn batch_csv(s: &Scenario) -> Result<String, String> {
    let b = run_failover_batch(s).map_err(|e| e.to_string())?;
    Ok(format!("{}{}", render_batch_csv(&b), render_trials_csv(&b)))
}

/// One bond member cut per trial across all 16 cells, probes only.
pub fn single_link_failover(poll_interval_ms: u32, trials_per_cell: u32, seed: u64) -> Result<String, String> {
    let mut s = Scenario {
        name: "web-failover1".into(),
        seed,
        services: Vec::new(),
        ..Scenario::default()
    };
    s.mii.poll_interval_ms = poll_interval_ms.max(1) as u64;
    s.failover.trials_per_cell = trials_per_cell.clamp(1, 20);
    batch_csv(&s)
}

/// Both r4-r1 links cut per trial; recovery comes from routing alone.
pub fn dual_link_failover(hello_s: u32, dead_s: u32, carrier: bool, trials: u32, seed: u64) -> Result<String, String> {
    let mut s = Scenario {
        name: "web-failover2".into(),
        seed,
        services: Vec::new(),
        failover: FailoverConfig {
            trials: trials.clamp(1, 50),
            ..FailoverConfig::dual_link_default()
        },
        ..Scenario::default()
    };
    s.routing.hello_interval = SimTime::from_secs(hello_s as u64);
    s.routing.dead_interval = SimTime::from_secs(dead_s as u64);
    s.routing.detection_mode = if carrier {
        DetectionMode::CarrierTriggered
    } else {
        DetectionMode::DeadInterval
    };
    s.routing.validate().map_err(|e| e.to_string())?;
    batch_csv(&s)
}

/// Runs a scenario (TOML, empty for defaults) bonded and single-link.
pub fn compare_modes(scenario_toml: &str, seed: u64) -> Result<String, String> {
    let mut s = if scenario_toml.trim().is_empty() {
        Scenario::default()
    } else {
        parse_scenario(scenario_toml).map_err(|e| e.to_string())?
    };
    s.seed = seed;
    let bonded = run(&Scenario {
        mode: Mode::Bonded,
        ..s.clone()
    })
    .map_err(|e| e.to_string())?;
    let single = run(&Scenario {
        mode: Mode::SingleLink,
        ..s
    })
    .map_err(|e| e.to_string())?;
    let c = compare(&bonded, &single).map_err(|e| e.to_string())?;
    Ok(render_comparison_csv(&c))
}

#[wasm_bindgen(js_name = singleLinkFailover)]
pub fn single_link_failover_js(poll_interval_ms: u32, trials_per_cell: u32, seed: u64) -> Result<String, JsError> {
    single_link_failover(poll_interval_ms, trials_per_cell, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = dualLinkFailover)]
pub fn dual_link_failover_js(hello_s: u32, dead_s: u32, carrier: bool, trials: u32, seed: u64) -> Result<String, JsError> {
    dual_link_failover(hello_s, dead_s, carrier, trials, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = compareModes)]
pub fn compare_modes_js(scenario_toml: &str, seed: u64) -> Result<String, JsError> {
    compare_modes(scenario_toml, seed).map_err(|e| JsError::new(&e))
}
