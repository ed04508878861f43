//! Log-distance path-loss model: `RSSI = C - 10 n log10(d / d0)` with `d0 = 1 m`.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::eddystone::SpotId;

/// Reference distance in meters.
pub const REFERENCE_DISTANCE: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("no RSSI samples to average")]
    EmptySamples,
    #[error("distance must be positive, got {0}")]
    Distance(f64),
    #[error("path-loss exponent must be positive and finite, got {0}")]
    Exponent(f64),
    #[error("reference RSSI must be finite, got {0}")]
    Reference(f64),
    #[error("rank-deficient calibration data: need at least 2 distinct distances")]
    RankDeficient,
    #[error("calibration point at {0} m has no samples")]
    EmptyPoint(f64),
    #[error("non-finite RSSI sample {0}")]
    Rssi(f64),
    #[error("malformed calibration CSV: {0}")]
    Csv(String),
}

/// One received advertisement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RssiSample {
    pub timestamp_ms: u64,
    pub beacon: SpotId,
    pub rssi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    pub n: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(default = "reference_distance")]
    pub d0: f64,
}

fn reference_distance() -> f64 {
    REFERENCE_DISTANCE
}

impl PathLossModel {
    /// Indoor parking garage fit.
    pub const INDOOR: PathLossModel = PathLossModel {
        n: 2.424,
        c: -65.24,
        d0: REFERENCE_DISTANCE,
    };

    /// Outdoor parking lot fit.
    pub const OUTDOOR: PathLossModel = PathLossModel {
        n: 2.049,
        c: -88.78,
        d0: REFERENCE_DISTANCE,
    };

    pub fn new(n: f64, c: f64) -> Result<Self, ModelError> {
        let model = PathLossModel {
            n,
            c,
            d0: REFERENCE_DISTANCE,
        };
        model.validate()?;
        Ok(model)
    }

    /// Uncalibrated model built from a beacon's advertised power, taken as the
    /// RSSI at 1 m, with the free-space exponent. Only meant for lots that have
    /// not been calibrated yet; the advertised value can be far off in practice.
    pub fn from_advertised_power(tx_power: i8) -> Self {
        log::warn!(
            "no calibration available, falling back to advertised power {tx_power} dBm with n=2"
        );
        PathLossModel {
            n: 2.0,
            c: tx_power as f64,
            d0: REFERENCE_DISTANCE,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.n.is_finite() && self.n > 0.0) {
            return Err(ModelError::Exponent(self.n));
        }
        if !self.c.is_finite() {
            return Err(ModelError::Reference(self.c));
        }
        if self.d0 != REFERENCE_DISTANCE {
            return Err(ModelError::Distance(self.d0));
        }
        Ok(())
    }

    /// Noise-free RSSI expected at distance `d` (meters).
    pub fn predict_rssi(&self, d: f64) -> Result<f64, ModelError> {
        if !(d > 0.0 && d.is_finite()) {
            return Err(ModelError::Distance(d));
        }
        Ok(self.c - 10.0 * self.n * (d / self.d0).log10())
    }

    /// Inverse of [`predict_rssi`](Self::predict_rssi). No range clamping.
    pub fn estimate_distance(&self, rssi: f64) -> f64 {
        self.d0 * 10f64.powf((self.c - rssi) / (10.0 * self.n))
    }
}

/// Arithmetic mean of raw RSSI readings.
pub fn average_rssi(samples: &[f64]) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptySamples);
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPoint {
    pub distance: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationDataset {
    points: Vec<CalibrationPoint>,
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    distance_m: f64,
    rssi_dbm: f64,
}

impl CalibrationDataset {
    pub fn new(points: Vec<CalibrationPoint>) -> Result<Self, ModelError> {
        for p in &points {
            if !(p.distance > 0.0 && p.distance.is_finite()) {
                return Err(ModelError::Distance(p.distance));
            }
            if p.samples.is_empty() {
                return Err(ModelError::EmptyPoint(p.distance));
            }
            if let Some(&bad) = p.samples.iter().find(|s| !s.is_finite()) {
                return Err(ModelError::Rssi(bad));
            }
        }
        let mut distinct: Vec<f64> = points.iter().map(|p| p.distance).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(ModelError::RankDeficient);
        }
        Ok(CalibrationDataset { points })
    }

    /// Groups `(distance, rssi)` pairs by distance, in ascending distance order.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, ModelError> {
        let mut grouped: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for (d, rssi) in pairs {
            if !(d > 0.0 && d.is_finite()) {
                return Err(ModelError::Distance(d));
            }
            grouped.entry(d.to_bits()).or_default().push(rssi);
        }
        let points = grouped
            .into_iter()
            .map(|(bits, samples)| CalibrationPoint {
                distance: f64::from_bits(bits),
                samples,
            })
            .collect();
        CalibrationDataset::new(points)
    }

    /// Reads the `distance_m,rssi_dbm` calibration CSV.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, ModelError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| ModelError::Csv(e.to_string()))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["distance_m", "rssi_dbm"] {
            return Err(ModelError::Csv(format!(
                "expected header distance_m,rssi_dbm, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut pairs = Vec::new();
        for row in rdr.deserialize::<CsvRow>() {
            let row = row.map_err(|e| ModelError::Csv(e.to_string()))?;
            pairs.push((row.distance_m, row.rssi_dbm));
        }
        let data = Self::from_pairs(pairs)?;
        if !data.has_equal_counts() {
            log::warn!("calibration distances have unequal sample counts");
        }
        Ok(data)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), ModelError> {
        let mut w = csv::Writer::from_writer(writer);
        for p in &self.points {
            for &rssi in &p.samples {
                w.serialize(CsvRow {
                    distance_m: p.distance,
                    rssi_dbm: rssi,
                })
                .map_err(|e| ModelError::Csv(e.to_string()))?;
            }
        }
        w.flush().map_err(|e| ModelError::Csv(e.to_string()))
    }

    pub fn points(&self) -> &[CalibrationPoint] {
        &self.points
    }

    pub fn has_equal_counts(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[0].samples.len() == w[1].samples.len())
    }
}

/// Least-squares fit with 95% confidence intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    #[serde(flatten)]
    pub model: PathLossModel,
    #[serde(with = "interval")]
    pub n_ci95: (f64, f64),
    #[serde(rename = "C_ci95", with = "interval")]
    pub c_ci95: (f64, f64),
    pub residual_std: f64,
}

/// Confidence bounds are infinite when the fit has no residual degrees of
/// freedom; JSON carries those as `null`.
mod interval {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &(f64, f64), s: S) -> Result<S::Ok, S::Error> {
        let f = |x: f64| x.is_finite().then_some(x);
        [f(v.0), f(v.1)].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(f64, f64), D::Error> {
        let [lo, hi] = <[Option<f64>; 2]>::deserialize(d)?;
        Ok((lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY)))
    }
}

/// Fits `y = C - 10 n x` by ordinary least squares on `x = log10(d)` and
/// `y = mean RSSI at d`, one observation per calibration point.
pub fn fit_model(data: &CalibrationDataset) -> Result<FitResult, ModelError> {
    let obs: Vec<(f64, f64)> = data
        .points
        .iter()
        .map(|p| Ok(((p.distance / REFERENCE_DISTANCE).log10(), average_rssi(&p.samples)?)))
        .collect::<Result<_, ModelError>>()?;
    let m = obs.len() as f64;
    let x_mean = obs.iter().map(|o| o.0).sum::<f64>() / m;
    let y_mean = obs.iter().map(|o| o.1).sum::<f64>() / m;
    let sxx: f64 = obs.iter().map(|o| (o.0 - x_mean).powi(2)).sum();
    if sxx.is_nan() || sxx <= 0.0 {
        return Err(ModelError::RankDeficient);
    }
    let sxy: f64 = obs.iter().map(|o| (o.0 - x_mean) * (o.1 - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let sse: f64 = obs
        .iter()
        .map(|o| (o.1 - intercept - slope * o.0).powi(2))
        .sum();

    let n = -slope / 10.0;
    let c = intercept;
    let model = PathLossModel::new(n, c).or_else(|e| match e {
        // a non-positive exponent is still a valid fit result to report
        ModelError::Exponent(_) if n.is_finite() => Ok(PathLossModel {
            n,
            c,
            d0: REFERENCE_DISTANCE,
        }),
        e => Err(e),
    })?;

    let dof = obs.len() - 2;
    let (n_half, c_half) = if dof == 0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        let s2 = sse / dof as f64;
        let t = StudentsT::new(0.0, 1.0, dof as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        let se_slope = (s2 / sxx).sqrt();
        let se_intercept = (s2 * (1.0 / m + x_mean * x_mean / sxx)).sqrt();
        (t * se_slope / 10.0, t * se_intercept)
    };

    Ok(FitResult {
        model,
        n_ci95: (n - n_half, n + n_half),
        c_ci95: (c - c_half, c + c_half),
        residual_std: (sse / m).sqrt(),
    })
}
