//! Proximity detection for beacon-equipped parking spots.
//!
//! - [`eddystone`]: advertisement frame codec and spot identifiers
//! - [`pathloss`]: log-distance path-loss model and its calibration fit
//! - [`filter`]: one-dimensional particle filter over distance
//! - [`proximity`]: nearest-spot identification from several beacons
//! - [`simulator`]: seeded RSSI generation and experiment drivers
//! - [`parking`]: lot state machine, billing, journal and line protocol

pub mod eddystone;
pub mod filter;
pub mod parking;
pub mod pathloss;
pub mod proximity;
pub mod seed;
pub mod simulator;

pub use eddystone::{decode_frame, encode_frame, BeaconFrame, CodecError, Instance, Namespace, SpotId};
pub use filter::{DistanceEstimate, FilterConfig, FilterError, FilterState, ParticleFilter, StdForm};
pub use parking::{
    AdminAlert, Event, Lot, LotConfig, ParkingError, ParkingService, PaymentGateway, Session, SpotState,
    StubGateway, UserProfile,
};
pub use pathloss::{fit_model, CalibrationDataset, FitResult, ModelError, PathLossModel, RssiSample};
pub use proximity::{BeaconLayout, PredictionTally};
pub use simulator::{Scenario, ScenarioFile, SimError};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
