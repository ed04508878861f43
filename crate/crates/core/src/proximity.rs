//! Multi-beacon spot identification: one particle filter per beacon, and a
//! per-round vote for the beacon with the smallest estimated distance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eddystone::SpotId;
use crate::filter::{DistanceEstimate, FilterConfig, FilterError, ParticleFilter};
use crate::pathloss::{average_rssi, PathLossModel, RssiSample};

/// Prediction cadence, matching the beacons' one-second advertising interval.
pub const DEFAULT_ROUND_MS: u64 = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProximityError {
    #[error("no distance estimates to compare")]
    NoEstimates,
    #[error("no RSSI samples in any stream")]
    EmptyStreams,
    #[error("beacon {0} is not part of the layout")]
    UnknownBeacon(SpotId),
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Beacons placed along a row, and a listener somewhere in front of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeaconLayout {
    /// `(spot, position along the row in meters)`, strictly increasing positions.
    pub beacons: Vec<(SpotId, f64)>,
    /// `(x along the row, y perpendicular)` in meters.
    pub listener_offset: (f64, f64),
}

impl BeaconLayout {
    /// Three beacons `A1 B1 C1` spaced `x` apart, listener `y` in front of B1.
    pub fn three_in_a_row(x: f64, y: f64) -> Result<Self, ProximityError> {
        let id = |c| SpotId::new(c, 1).expect("valid spot id");
        let layout = BeaconLayout {
            beacons: vec![(id('A'), -x), (id('B'), 0.0), (id('C'), x)],
            listener_offset: (0.0, y),
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), ProximityError> {
        if self.beacons.is_empty() {
            return Err(ProximityError::Layout("no beacons".into()));
        }
        if self.beacons.windows(2).any(|w| w[0].1.partial_cmp(&w[1].1) != Some(std::cmp::Ordering::Less)) {
            return Err(ProximityError::Layout(
                "beacon positions must be strictly increasing".into(),
            ));
        }
        let (x, y) = self.listener_offset;
        if !(y >= 0.0 && x.is_finite() && y.is_finite()) {
            return Err(ProximityError::Layout(format!("bad listener offset ({x}, {y})")));
        }
        Ok(())
    }

    /// Straight-line distance from the listener to a beacon.
    pub fn true_distance(&self, spot: SpotId) -> Option<f64> {
        let (x, y) = self.listener_offset;
        self.beacons
            .iter()
            .find(|(id, _)| *id == spot)
            .map(|(_, pos)| (pos - x).hypot(y))
    }

    /// The beacon nearest to the listener (ties go to the smaller spot id).
    pub fn ground_truth(&self) -> SpotId {
        let (x, _) = self.listener_offset;
        self.beacons
            .iter()
            .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()).then(a.0.cmp(&b.0)))
            .map(|(id, _)| *id)
            .expect("validated layout has beacons")
    }

    pub fn spots(&self) -> impl Iterator<Item = SpotId> + '_ {
        self.beacons.iter().map(|(id, _)| *id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTally {
    pub counts: BTreeMap<SpotId, u64>,
    pub total: u64,
    pub truth: SpotId,
}

impl PredictionTally {
    pub fn new(layout: &BeaconLayout) -> Self {
        PredictionTally {
            counts: layout.spots().map(|s| (s, 0)).collect(),
            total: 0,
            truth: layout.ground_truth(),
        }
    }

    pub fn record(&mut self, spot: SpotId) {
        *self.counts.entry(spot).or_default() += 1;
        self.total += 1;
    }

    /// Adds another tally's counts (same ground truth assumed).
    pub fn merge(&mut self, other: &PredictionTally) {
        for (spot, n) in &other.counts {
            *self.counts.entry(*spot).or_default() += n;
        }
        self.total += other.total;
    }

    pub fn correct(&self) -> u64 {
        self.counts.get(&self.truth).copied().unwrap_or(0)
    }

    /// Fraction of rounds naming the true beacon; 0 when nothing was tallied.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct() as f64 / self.total as f64
        }
    }

    /// Accuracy as a percentage rounded to one decimal.
    pub fn accuracy_pct(&self) -> f64 {
        (self.accuracy() * 1000.0).round() / 10.0
    }
}

/// Picks the spot with the smallest estimated mean distance.
pub fn predict_spot(estimates: &BTreeMap<SpotId, DistanceEstimate>) -> Result<SpotId, ProximityError> {
    nearest(estimates.iter().map(|(s, e)| (*s, e.mean)))
}

fn nearest(means: impl Iterator<Item = (SpotId, f64)>) -> Result<SpotId, ProximityError> {
    // Strict comparison over ascending ids keeps the smallest id on ties.
    let mut best: Option<(SpotId, f64)> = None;
    for (spot, mean) in means {
        match best {
            Some((b, m)) if mean > m || (mean == m && spot > b) => {}
            _ => best = Some((spot, mean)),
        }
    }
    best.map(|(s, _)| s).ok_or(ProximityError::NoEstimates)
}

/// Splits streams into fixed-cadence rounds. Yields, for each round, the
/// samples of each beacon that fall inside it.
fn rounds(
    layout: &BeaconLayout,
    streams: &BTreeMap<SpotId, Vec<RssiSample>>,
    round_ms: u64,
) -> Result<Vec<BTreeMap<SpotId, Vec<f64>>>, ProximityError> {
    layout.validate()?;
    for spot in streams.keys() {
        if layout.true_distance(*spot).is_none() {
            return Err(ProximityError::UnknownBeacon(*spot));
        }
    }
    let all = streams.values().flatten();
    let (Some(start), Some(end)) = (
        all.clone().map(|s| s.timestamp_ms).min(),
        all.map(|s| s.timestamp_ms).max(),
    ) else {
        return Err(ProximityError::EmptyStreams);
    };
    let round_ms = round_ms.max(1);
    let count = ((end - start) / round_ms + 1) as usize;
    let mut out = vec![BTreeMap::new(); count];
    for (spot, samples) in streams {
        for s in samples {
            let r = ((s.timestamp_ms - start) / round_ms) as usize;
            out[r].entry(*spot).or_insert_with(Vec::new).push(s.rssi);
        }
    }
    Ok(out)
}

/// Filtered identification: every round, each beacon's filter absorbs the
/// round's samples (beacons without samples keep their state) and the
/// nearest beacon among those heard so far gets one vote.
pub fn run_identification(
    layout: &BeaconLayout,
    streams: &BTreeMap<SpotId, Vec<RssiSample>>,
    model: &PathLossModel,
    config: &FilterConfig,
    round_ms: u64,
) -> Result<PredictionTally, ProximityError> {
    let rounds = rounds(layout, streams, round_ms)?;
    // All beacons share the configured seed: identical initial particle sets
    // keep the comparison between beacons free of initialization noise.
    let mut filters = BTreeMap::new();
    for spot in layout.spots() {
        filters.insert(spot, (ParticleFilter::new(*config)?, false));
    }
    let mut tally = PredictionTally::new(layout);
    for round in rounds {
        for (spot, samples) in round {
            let (filter, heard) = filters.get_mut(&spot).expect("checked against layout");
            for rssi in samples {
                filter.update(model.estimate_distance(rssi))?;
            }
            *heard = true;
        }
        let heard = filters
            .iter()
            .filter(|(_, (_, h))| *h)
            .map(|(s, (f, _))| (*s, f.estimate().mean));
        if let Ok(spot) = nearest(heard) {
            tally.record(spot);
        }
    }
    Ok(tally)
}

/// Unfiltered baseline: each round, distances come from the average RSSI of
/// the samples received in that round.
pub fn raw_baseline(
    layout: &BeaconLayout,
    streams: &BTreeMap<SpotId, Vec<RssiSample>>,
    model: &PathLossModel,
    round_ms: u64,
) -> Result<PredictionTally, ProximityError> {
    let rounds = rounds(layout, streams, round_ms)?;
    let mut last: BTreeMap<SpotId, f64> = BTreeMap::new();
    let mut tally = PredictionTally::new(layout);
    for round in rounds {
        for (spot, samples) in round {
            let avg = average_rssi(&samples).expect("rounds only hold non-empty windows");
            last.insert(spot, model.estimate_distance(avg));
        }
        if let Ok(spot) = nearest(last.iter().map(|(s, d)| (*s, *d))) {
            tally.record(spot);
        }
    }
    Ok(tally)
}
