//! Checked-in files: the default scenario and the golden trace.

use pansim::scenario_file::{parse_scenario, render_scenario, Scenario};
use pansim::trace_csv::{read_trace, trace_to_string, HEADER};
use pansim_core::sim;

const DEFAULT: &str = include_str!("../../../default.scenario");
const TINY: &str = include_str!("data/tiny.scenario");
const GOLDEN: &str = include_str!("data/tiny_trace.csv");

#[test]
fn default_scenario_file_is_the_built_in_default() {
    assert_eq!(DEFAULT, render_scenario(&Scenario::default()));
    assert_eq!(parse_scenario(DEFAULT).unwrap(), Scenario::default());
}

#[test]
fn default_scenario_annotates_origins() {
    for word in ["measured", "calibrated", "chosen"] {
        assert!(DEFAULT.contains(&format!("# {word}")), "{word}");
    }
}

#[test]
fn golden_trace_is_reproduced_byte_for_byte() {
    let s = parse_scenario(TINY).unwrap();
    let first = trace_to_string(&sim::run(s.sim.clone()).unwrap().trace);
    let second = trace_to_string(&sim::run(s.sim).unwrap().trace);
    assert_eq!(first, second);
    assert_eq!(first, GOLDEN);
}

#[test]
fn golden_trace_shape() {
    assert!(GOLDEN.starts_with(&HEADER.join(",")));
    assert!(!GOLDEN.contains('\r'));
    let rows = read_trace(GOLDEN.as_bytes()).unwrap();
    assert!(rows.windows(2).all(|w| w[0].time <= w[1].time));
    assert_eq!(trace_to_string(&rows), GOLDEN);
}
