//! Proximity identification on simulated streams at the calibrated noise levels.

use beaconpark_core::filter::FilterConfig;
use beaconpark_core::pathloss::PathLossModel;
use beaconpark_core::proximity::{raw_baseline, run_identification, BeaconLayout, DEFAULT_ROUND_MS};
use beaconpark_core::simulator::{generate_layout_streams, indoor_proximity_grid, run_proximity_experiment, Scenario};

/// Shadowing sigma matched to the raw accuracy anchors (see `tune-noise`).
const INDOOR_SIGMA: f64 = 5.5;
const OUTDOOR_SIGMA: f64 = 2.0;

#[test]
fn two_metre_spacing_near_row_is_always_b() {
    let layout = BeaconLayout::three_in_a_row(2.0, 0.5).unwrap();
    let scenario = Scenario::new(PathLossModel::INDOOR, INDOOR_SIGMA, 116.0, 21);
    let streams = generate_layout_streams(&scenario, &layout).unwrap();
    let tally = run_identification(
        &layout,
        &streams,
        &scenario.model,
        &FilterConfig::default().with_seed(21),
        DEFAULT_ROUND_MS,
    )
    .unwrap();
    let b1 = "B1".parse().unwrap();
    assert_eq!(tally.total, 116);
    assert_eq!(tally.counts[&b1], 116);
}

#[test]
fn outdoor_rows() {
    let scenario = Scenario::new(PathLossModel::OUTDOOR, OUTDOOR_SIGMA, 300.0, 31);
    let pairs: Vec<_> = [0.5, 1.0, 1.5, 2.0, 2.5].iter().map(|&y| (2.7, y)).collect();
    let cells = run_proximity_experiment(&scenario, &pairs, &FilterConfig::default().with_seed(31), 1).unwrap();
    for c in &cells[..4] {
        assert_eq!(c.filtered.accuracy(), 1.0, "Y = {}", c.y);
    }
    assert!(cells[4].filtered.accuracy() < cells[3].filtered.accuracy());
}

#[test]
fn heavy_noise_far_row_raw_accuracy_near_zero() {
    let layout = BeaconLayout::three_in_a_row(1.0, 2.5).unwrap();
    let scenario = Scenario::new(PathLossModel::INDOOR, 15.0, 300.0, 41);
    let streams = generate_layout_streams(&scenario, &layout).unwrap();
    let tally = raw_baseline(&layout, &streams, &scenario.model, DEFAULT_ROUND_MS).unwrap();
    assert!(tally.accuracy() < 0.1, "raw accuracy {}", tally.accuracy());
}

#[test]
fn filter_beats_raw_for_wide_spacing() {
    let scenario = Scenario::new(PathLossModel::INDOOR, INDOOR_SIGMA, 300.0, 51);
    let pairs: Vec<_> = indoor_proximity_grid().into_iter().filter(|&(x, _)| x >= 2.0).collect();
    let cells = run_proximity_experiment(&scenario, &pairs, &FilterConfig::default().with_seed(51), 1).unwrap();
    let raw: u64 = cells.iter().map(|c| c.raw.correct()).sum();
    let filtered: u64 = cells.iter().map(|c| c.filtered.correct()).sum();
    assert!(filtered >= raw, "filtered {filtered} raw {raw}");
}
