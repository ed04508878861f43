//! Seeded synthetic RSSI generator standing in for the physical testbed, and
//! drivers for the path-loss, distance-estimation and proximity experiments.
//!
//! Every random stream is derived from the scenario's master seed through
//! [`child_seed`], keyed by what the stream is for (beacon, grid cell,
//! repetition). Re-running a scenario reproduces every output exactly.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eddystone::SpotId;
use crate::filter::{FilterConfig, FilterError, ParticleFilter};
use crate::pathloss::{average_rssi, CalibrationDataset, CalibrationPoint, ModelError, PathLossModel, RssiSample};
use crate::proximity::{
    raw_baseline, run_identification, BeaconLayout, PredictionTally, ProximityError, DEFAULT_ROUND_MS,
};
use crate::seed::child_seed;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Proximity(#[from] ProximityError),
    #[error("scenario JSON")]
    Json(#[from] serde_json::Error),
    #[error("CSV output")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_interval() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub model: PathLossModel,
    pub noise_sigma_db: f64,
    /// Template layout; proximity experiments build one layout per grid cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<BeaconLayout>,
    #[serde(default = "default_interval")]
    pub tx_interval_ms: u64,
    pub duration_s: f64,
    #[serde(default)]
    pub drop_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn new(model: PathLossModel, noise_sigma_db: f64, duration_s: f64, seed: u64) -> Self {
        Scenario {
            model,
            noise_sigma_db,
            layout: None,
            tx_interval_ms: default_interval(),
            duration_s,
            drop_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.model.validate()?;
        let bad = |m: String| Err(SimError::Scenario(m));
        if !(self.noise_sigma_db >= 0.0 && self.noise_sigma_db.is_finite()) {
            return bad(format!("noise_sigma_db must be >= 0, got {}", self.noise_sigma_db));
        }
        if self.tx_interval_ms == 0 {
            return bad("tx_interval_ms must be positive".into());
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return bad(format!("drop_rate must lie in [0, 1), got {}", self.drop_rate));
        }
        if let Some(layout) = &self.layout {
            layout.validate()?;
        }
        Ok(())
    }

    fn with_seed(&self, seed: u64) -> Scenario {
        Scenario {
            seed,
            ..self.clone()
        }
    }

    /// Advertisements sent over the scenario duration.
    pub fn advertisement_count(&self) -> u64 {
        (self.duration_s * 1000.0 / self.tx_interval_ms as f64).floor() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PathLoss,
    DistanceEstimation,
    ProximityIdentification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Distances(Vec<f64>),
    /// `(X, Y)`: beacon spacing and listener distance from the center beacon.
    Pairs(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub grid: Grid,
    #[serde(default = "one")]
    pub repetitions: u32,
}

fn one() -> u32 {
    1
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let empty = match &self.grid {
            Grid::Distances(d) => d.is_empty(),
            Grid::Pairs(p) => p.is_empty(),
        };
        if empty {
            return Err(SimError::Scenario("experiment grid is empty".into()));
        }
        if self.repetitions == 0 {
            return Err(SimError::Scenario("repetitions must be >= 1".into()));
        }
        Ok(())
    }
}

/// On-disk scenario: the scenario fields plus the experiment to run and the
/// filter parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(flatten)]
    pub scenario: Scenario,
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub filter: FilterConfig,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        file.scenario.validate()?;
        file.experiment.validate()?;
        file.filter.validate()?;
        Ok(file)
    }
}

fn spot_key(spot: SpotId) -> u64 {
    ((spot.lot() as u64) << 40) | spot.number()
}

/// One beacon's advertisements as heard at `true_distance`: one sample per
/// transmit interval minus Bernoulli drops, with Gaussian shadowing in dB.
pub fn generate_stream(
    scenario: &Scenario,
    beacon: SpotId,
    true_distance: f64,
) -> Result<Vec<RssiSample>, SimError> {
    let mean = scenario.model.predict_rssi(true_distance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(scenario.seed, &[spot_key(beacon)]));
    let sigma = scenario.noise_sigma_db;
    let mut out = Vec::with_capacity(scenario.advertisement_count() as usize);
    for k in 0..scenario.advertisement_count() {
        // Both draws happen for every slot so that streams with different
        // noise levels or drop rates share the same underlying variates.
        let drop_u: f64 = rng.random();
        let z: f64 = rng.sample(StandardNormal);
        if drop_u < scenario.drop_rate {
            continue;
        }
        out.push(RssiSample {
            timestamp_ms: k * scenario.tx_interval_ms,
            beacon,
            rssi: mean + sigma * z,
        });
    }
    Ok(out)
}

/// Streams for every beacon of `layout`, at the layout's true distances.
pub fn generate_layout_streams(
    scenario: &Scenario,
    layout: &BeaconLayout,
) -> Result<BTreeMap<SpotId, Vec<RssiSample>>, SimError> {
    layout.validate()?;
    layout
        .spots()
        .map(|spot| {
            let d = layout.true_distance(spot).expect("spot from layout");
            Ok((spot, generate_stream(scenario, spot, d)?))
        })
        .collect()
}

/// Simulated calibration capture: a single beacon sampled at each distance.
pub fn generate_calibration(scenario: &Scenario, distances: &[f64]) -> Result<CalibrationDataset, SimError> {
    let beacon = SpotId::new('A', 1).expect("valid spot id");
    let points = distances
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let s = scenario.with_seed(child_seed(scenario.seed, &[i as u64]));
            let samples = generate_stream(&s, beacon, d)?.into_iter().map(|x| x.rssi).collect();
            Ok(CalibrationPoint { distance: d, samples })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(CalibrationDataset::new(points)?)
}

/// The distances used in the calibration capture: 0.2 m to 4.0 m in 0.2 m steps.
pub fn calibration_distances() -> Vec<f64> {
    (1..=20).map(|i| i as f64 * 0.2).collect()
}

/// Distance-estimation locations: 0.5 m to 4.0 m in 0.5 m steps.
pub fn distance_grid() -> Vec<f64> {
    (1..=8).map(|i| i as f64 * 0.5).collect()
}

/// Particle counts swept in the distance experiment: 200 to 2000 by 200.
pub fn particle_sweep() -> Vec<usize> {
    (1..=10).map(|i| i * 200).collect()
}

/// Indoor proximity grid: X in {1.0 .. 3.0}, Y in {0.5 .. 2.5}, 0.5 m steps.
pub fn indoor_proximity_grid() -> Vec<(f64, f64)> {
    let xs = [1.0, 1.5, 2.0, 2.5, 3.0];
    let ys = [0.5, 1.0, 1.5, 2.0, 2.5];
    xs.iter().flat_map(|&x| ys.iter().map(move |&y| (x, y))).collect()
}

/// Outdoor grid: fixed 2.7 m spot width.
pub fn outdoor_proximity_grid() -> Vec<(f64, f64)> {
    [0.5, 1.0, 1.5, 2.0, 2.5].iter().map(|&y| (2.7, y)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceRow {
    pub distance: f64,
    /// Mean over repetitions of |distance from the capture's average RSSI - true|.
    pub raw_error: f64,
    /// Mean over repetitions of |final filter mean - true|.
    pub filtered_error: f64,
    /// Mean squared error of the final filter mean.
    pub mse: f64,
    /// Standard deviation of the final filter mean across repetitions.
    pub std: f64,
    /// Per-sample errors of single-reading distance estimates, all repetitions.
    #[serde(skip)]
    pub raw_step_errors: Vec<f64>,
    /// Per-update errors of the filter mean, all repetitions.
    #[serde(skip)]
    pub filtered_step_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceReport {
    pub particles: usize,
    pub rows: Vec<DistanceRow>,
}

impl DistanceReport {
    pub fn raw_step_errors(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.raw_step_errors.iter().copied()).collect()
    }

    pub fn filtered_step_errors(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.filtered_step_errors.iter().copied()).collect()
    }
}

/// Linear-interpolated percentile (`q` in `[0, 1]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn run_distance_experiment(
    scenario: &Scenario,
    distances: &[f64],
    config: &FilterConfig,
    repetitions: u32,
) -> Result<DistanceReport, SimError> {
    scenario.validate()?;
    config.validate()?;
    if repetitions == 0 {
        return Err(SimError::Scenario("repetitions must be >= 1".into()));
    }
    if let Some(&d) = distances.iter().find(|&&d| !(d > 0.0 && d <= config.state_max)) {
        return Err(SimError::Scenario(format!(
            "distance {d} outside (0, {}]",
            config.state_max
        )));
    }
    let beacon = SpotId::new('B', 1).expect("valid spot id");
    let model = scenario.model;

    let rows = distances
        .par_iter()
        .enumerate()
        .map(|(i, &d)| {
            let mut raw_errors = Vec::new();
            let mut finals = Vec::new();
            let mut raw_steps = Vec::new();
            let mut filtered_steps = Vec::new();
            for r in 0..repetitions as u64 {
                let s = scenario.with_seed(child_seed(scenario.seed, &[i as u64, r]));
                let stream = generate_stream(&s, beacon, d)?;
                if stream.is_empty() {
                    return Err(SimError::Scenario("every advertisement was dropped".into()));
                }
                let rssi: Vec<f64> = stream.iter().map(|x| x.rssi).collect();
                raw_errors.push((model.estimate_distance(average_rssi(&rssi)?) - d).abs());

                let cfg = config.with_seed(child_seed(config.seed, &[i as u64, r]));
                let mut filter = ParticleFilter::new(cfg)?;
                for &x in &rssi {
                    let z = model.estimate_distance(x);
                    raw_steps.push((z - d).abs());
                    filter.update(z)?;
                    filtered_steps.push((filter.estimate().mean - d).abs());
                }
                finals.push(filter.estimate().mean);
            }
            let reps = finals.len() as f64;
            let mean_final = finals.iter().sum::<f64>() / reps;
            Ok(DistanceRow {
                distance: d,
                raw_error: raw_errors.iter().sum::<f64>() / reps,
                filtered_error: finals.iter().map(|f| (f - d).abs()).sum::<f64>() / reps,
                mse: finals.iter().map(|f| (f - d).powi(2)).sum::<f64>() / reps,
                std: (finals.iter().map(|f| (f - mean_final).powi(2)).sum::<f64>() / reps).sqrt(),
                raw_step_errors: raw_steps,
                filtered_step_errors: filtered_steps,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;

    Ok(DistanceReport {
        particles: config.particle_count,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProximityCell {
    pub x: f64,
    pub y: f64,
    pub raw: PredictionTally,
    pub filtered: PredictionTally,
}

/// Runs raw and filtered identification for every `(X, Y)` cell on a
/// three-beacon row, summing tallies over repetitions.
pub fn run_proximity_experiment(
    scenario: &Scenario,
    pairs: &[(f64, f64)],
    config: &FilterConfig,
    repetitions: u32,
) -> Result<Vec<ProximityCell>, SimError> {
    scenario.validate()?;
    config.validate()?;
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            if !(x > 0.0 && y > 0.0) {
                return Err(SimError::Scenario(format!("cell ({x}, {y}) needs X > 0 and Y > 0")));
            }
            let layout = BeaconLayout::three_in_a_row(x, y)?;
            let mut raw = PredictionTally::new(&layout);
            let mut filtered = PredictionTally::new(&layout);
            for r in 0..repetitions.max(1) as u64 {
                let s = scenario.with_seed(child_seed(scenario.seed, &[i as u64, r]));
                let streams = generate_layout_streams(&s, &layout)?;
                let cfg = config.with_seed(child_seed(config.seed, &[i as u64, r]));
                let round = s.tx_interval_ms.max(DEFAULT_ROUND_MS);
                filtered.merge(&run_identification(&layout, &streams, &s.model, &cfg, round)?);
                raw.merge(&raw_baseline(&layout, &streams, &s.model, round)?);
            }
            Ok(ProximityCell { x, y, raw, filtered })
        })
        .collect()
}

/// Raw-data identification accuracy for one cell, averaged over `repetitions`.
pub fn raw_accuracy(scenario: &Scenario, x: f64, y: f64, repetitions: u32) -> Result<f64, SimError> {
    let layout = BeaconLayout::three_in_a_row(x, y)?;
    let mut tally = PredictionTally::new(&layout);
    for r in 0..repetitions.max(1) as u64 {
        let s = scenario.with_seed(child_seed(scenario.seed, &[r]));
        let streams = generate_layout_streams(&s, &layout)?;
        tally.merge(&raw_baseline(&layout, &streams, &s.model, s.tx_interval_ms.max(DEFAULT_ROUND_MS))?);
    }
    Ok(tally.accuracy())
}

/// Shadowing noise sweep step and range, dB.
pub const NOISE_SWEEP: (f64, f64, f64) = (0.25, 15.0, 0.25);

/// Picks the shadowing sigma whose simulated raw accuracy at cell `(x, y)`
/// is closest to `target` (a fraction). Ties go to the smaller sigma.
pub fn calibrate_noise(
    scenario: &Scenario,
    x: f64,
    y: f64,
    target: f64,
    repetitions: u32,
) -> Result<f64, SimError> {
    let (start, stop, step) = NOISE_SWEEP;
    let steps = ((stop - start) / step).round() as usize;
    let mut best = (f64::INFINITY, start);
    for k in 0..=steps {
        let sigma = start + k as f64 * step;
        let s = Scenario {
            noise_sigma_db: sigma,
            ..scenario.clone()
        };
        let gap = (raw_accuracy(&s, x, y, repetitions)? - target).abs();
        if gap < best.0 {
            best = (gap, sigma);
        }
    }
    Ok(best.1)
}

/// Distance table CSV: `particles,distance_m,error_m,mse,std_m`.
pub fn write_distance_csv<W: Write>(writer: W, reports: &[DistanceReport]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["particles", "distance_m", "error_m", "mse", "std_m"])?;
    for report in reports {
        for row in &report.rows {
            w.write_record([
                report.particles.to_string(),
                format!("{}", row.distance),
                format!("{:.3}", row.filtered_error),
                format!("{:.3}", row.mse),
                format!("{:.3}", row.std),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Proximity tally CSV: `X_m,Y_m,mode,count_A,count_B,count_C,accuracy_pct`.
pub fn write_proximity_csv<W: Write>(writer: W, cells: &[ProximityCell]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["X_m", "Y_m", "mode", "count_A", "count_B", "count_C", "accuracy_pct"])?;
    for cell in cells {
        for (mode, tally) in [("raw", &cell.raw), ("filtered", &cell.filtered)] {
            let mut record = vec![format!("{}", cell.x), format!("{}", cell.y), mode.to_string()];
            record.extend(tally.counts.values().map(|c| c.to_string()));
            record.push(format!("{:.1}", tally.accuracy_pct()));
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}
