//! Parking lot occupancy and billing.
//!
//! [`Lot`] is the pure state machine: every transition is an [`Event`]
//! applied through [`Lot::apply`], which is also how the journal is
//! replayed. [`ParkingService`] turns commands into events, talks to the
//! payment gateway, and journals what happened.
//!
//! Spot states and the only transitions between them:
//!
//! ```text
//! Available --register--> Occupied --unregister/expire (paid)--> Available
//!                                  --unregister/expire (unpaid)--> Illegal --settle--> Available
//! ```

mod journal;
pub mod protocol;
pub mod server;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eddystone::{decode_url, BeaconFrame, CodecError, Instance, Namespace, SpotId};

pub use journal::{Journal, JournalEntry};

/// Seconds since the Unix epoch.
pub type Timestamp = u64;

#[derive(Debug, Error)]
pub enum ParkingError {
    #[error("unknown spot {0}")]
    UnknownSpot(SpotId),
    #[error("spot {0} is taken")]
    Taken(SpotId),
    #[error("card refused")]
    CardRefused,
    #[error("spot {0} has no active registration")]
    NotRegistered(SpotId),
    #[error("charge of {} cents failed for spot {spot}", session.cost_cents.unwrap_or(0))]
    ChargeFailed { spot: SpotId, session: Session },
    #[error("spot {0} is not illegally occupied")]
    NotIllegal(SpotId),
    #[error("unregistered beacon")]
    UnknownBeacon,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("invalid lot configuration: {0}")]
    Config(String),
    #[error("journal: {0}")]
    Journal(String),
    #[error("inconsistent event {0:?}")]
    Replay(Box<Event>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub vehicle_plate: String,
    /// Opaque payment token handed to the gateway.
    pub card_token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: u64,
    pub user_id: String,
    pub vehicle_plate: String,
    pub start: Timestamp,
    pub end: Option<Timestamp>,
    pub max_minutes: Option<u32>,
    pub cost_cents: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "session", rename_all = "snake_case")]
pub enum SpotState {
    Available,
    Occupied(Session),
    /// Closed but unpaid; the cost stays frozen at the closing amount.
    Illegal(Session),
}

impl SpotState {
    pub fn name(&self) -> &'static str {
        match self {
            SpotState::Available => "AVAILABLE",
            SpotState::Occupied(_) => "OCCUPIED",
            SpotState::Illegal(_) => "ILLEGAL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spot {
    pub id: SpotId,
    pub namespace: Namespace,
    pub instance: Instance,
    pub url: String,
    pub rate_cents_per_hour: u64,
    pub state: SpotState,
}

/// One spot entry of the lot configuration file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpotConfig {
    pub id: SpotId,
    pub namespace: Namespace,
    /// Defaults to the spot id's own instance encoding.
    #[serde(default)]
    pub instance: Option<Instance>,
    pub url: String,
    pub rate_cents_per_hour: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotConfig {
    pub spots: Vec<SpotConfig>,
}

impl LotConfig {
    pub fn from_json(text: &str) -> Result<Self, ParkingError> {
        serde_json::from_str(text).map_err(|e| ParkingError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ParkingError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ParkingError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// A lot of `count` spots in lot `letter`, all sharing one namespace.
    pub fn uniform(letter: char, count: u64, rate_cents_per_hour: u64) -> Self {
        let spots = (1..=count)
            .map(|n| {
                let id = SpotId::new(letter, n).expect("valid spot id");
                SpotConfig {
                    id,
                    namespace: Namespace(*b"beaconpark"),
                    instance: None,
                    url: format!("https://pk.io/{id}"),
                    rate_cents_per_hour,
                }
            })
            .collect();
        LotConfig { spots }
    }
}

/// Outbound notifications for the lot administrator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "alert", rename_all = "snake_case")]
pub enum AdminAlert {
    ChargeFailed { spot: SpotId, session_id: u64, cost_cents: u64 },
    Overstay { spot: SpotId, session_id: u64 },
}

/// State transitions, as journaled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    ProfileSaved {
        profile: UserProfile,
    },
    Registered {
        spot: SpotId,
        session: Session,
    },
    Closed {
        spot: SpotId,
        end: Timestamp,
        cost_cents: u64,
        paid: bool,
        expired: bool,
    },
    Settled {
        spot: SpotId,
    },
}

/// Minutes billed for a stay: every started minute counts.
pub fn billed_minutes(start: Timestamp, end: Timestamp) -> u64 {
    end.saturating_sub(start).div_ceil(60)
}

/// `ceil(rate * minutes / 60)` cents.
pub fn cost_cents(rate_cents_per_hour: u64, minutes: u64) -> u64 {
    ((rate_cents_per_hour as u128 * minutes as u128).div_ceil(60)) as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lot {
    spots: BTreeMap<SpotId, Spot>,
    users: BTreeMap<String, UserProfile>,
    next_session: u64,
    alerts: Vec<AdminAlert>,
}

/// One row of a spot listing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpotView {
    pub id: SpotId,
    pub state: &'static str,
    pub rate_cents_per_hour: u64,
    /// The listing caller holds the session on this spot.
    pub mine: bool,
}

impl Lot {
    pub fn from_config(config: &LotConfig) -> Result<Self, ParkingError> {
        let mut spots = BTreeMap::new();
        let mut beacons = std::collections::BTreeSet::new();
        let mut urls = std::collections::BTreeSet::new();
        for s in &config.spots {
            if s.url.is_empty() {
                return Err(ParkingError::Config(format!("spot {} has an empty url", s.id)));
            }
            let instance = s.instance.unwrap_or_else(|| s.id.to_instance());
            if !beacons.insert((s.namespace, instance)) {
                return Err(ParkingError::Config(format!("duplicate beacon uid for {}", s.id)));
            }
            if !urls.insert(s.url.clone()) {
                return Err(ParkingError::Config(format!("duplicate url {}", s.url)));
            }
            let spot = Spot {
                id: s.id,
                namespace: s.namespace,
                instance,
                url: s.url.clone(),
                rate_cents_per_hour: s.rate_cents_per_hour,
                state: SpotState::Available,
            };
            if spots.insert(s.id, spot).is_some() {
                return Err(ParkingError::Config(format!("duplicate spot {}", s.id)));
            }
        }
        Ok(Lot {
            spots,
            users: BTreeMap::new(),
            next_session: 1,
            alerts: Vec::new(),
        })
    }

    pub fn spot(&self, id: SpotId) -> Result<&Spot, ParkingError> {
        self.spots.get(&id).ok_or(ParkingError::UnknownSpot(id))
    }

    pub fn spots(&self) -> impl Iterator<Item = &Spot> {
        self.spots.values()
    }

    pub fn user(&self, user_id: &str) -> Option<&UserProfile> {
        self.users.get(user_id)
    }

    pub fn alerts(&self) -> &[AdminAlert] {
        &self.alerts
    }

    pub fn next_session_id(&self) -> u64 {
        self.next_session
    }

    /// `(available, occupied, illegal)` counts.
    pub fn census(&self) -> (usize, usize, usize) {
        self.spots.values().fold((0, 0, 0), |(a, o, i), s| match s.state {
            SpotState::Available => (a + 1, o, i),
            SpotState::Occupied(_) => (a, o + 1, i),
            SpotState::Illegal(_) => (a, o, i + 1),
        })
    }

    /// Listing ordered by spot id; `caller` marks spots held by that user.
    pub fn list_spots(&self, caller: Option<&str>) -> Vec<SpotView> {
        self.spots
            .values()
            .map(|s| SpotView {
                id: s.id,
                state: s.state.name(),
                rate_cents_per_hour: s.rate_cents_per_hour,
                mine: matches!((&s.state, caller), (SpotState::Occupied(sess), Some(u)) if sess.user_id == u),
            })
            .collect()
    }

    /// Maps a UID or URL frame to the spot it belongs to.
    pub fn resolve_beacon(&self, frame: &BeaconFrame) -> Result<(SpotId, String), ParkingError> {
        let hit = match frame {
            BeaconFrame::Uid {
                namespace,
                instance,
                ..
            } => self
                .spots
                .values()
                .find(|s| s.namespace == *namespace && s.instance == *instance),
            BeaconFrame::Url {
                scheme_prefix,
                encoded_body,
                ..
            } => {
                let url = decode_url(*scheme_prefix, encoded_body)?;
                self.spots.values().find(|s| s.url == url)
            }
            BeaconFrame::Tlm { .. } => None,
        };
        hit.map(|s| (s.id, s.url.clone()))
            .ok_or(ParkingError::UnknownBeacon)
    }

    /// Applies one event. Rejects events that do not fit the current state,
    /// leaving the lot unchanged.
    pub fn apply(&mut self, event: &Event) -> Result<(), ParkingError> {
        let reject = || ParkingError::Replay(Box::new(event.clone()));
        match event {
            Event::ProfileSaved { profile } => {
                self.users.insert(profile.user_id.clone(), profile.clone());
            }
            Event::Registered { spot, session } => {
                let s = self.spots.get_mut(spot).ok_or_else(reject)?;
                if s.state != SpotState::Available || session.end.is_some() || session.cost_cents.is_some() {
                    return Err(reject());
                }
                s.state = SpotState::Occupied(session.clone());
                self.next_session = self.next_session.max(session.id + 1);
            }
            Event::Closed {
                spot,
                end,
                cost_cents,
                paid,
                expired,
            } => {
                let s = self.spots.get_mut(spot).ok_or_else(reject)?;
                let SpotState::Occupied(session) = &s.state else {
                    return Err(reject());
                };
                if *end < session.start {
                    return Err(reject());
                }
                let mut session = session.clone();
                session.end = Some(*end);
                session.cost_cents = Some(*cost_cents);
                if *expired {
                    self.alerts.push(AdminAlert::Overstay {
                        spot: *spot,
                        session_id: session.id,
                    });
                }
                s.state = if *paid {
                    SpotState::Available
                } else {
                    self.alerts.push(AdminAlert::ChargeFailed {
                        spot: *spot,
                        session_id: session.id,
                        cost_cents: *cost_cents,
                    });
                    SpotState::Illegal(session)
                };
            }
            Event::Settled { spot } => {
                let s = self.spots.get_mut(spot).ok_or_else(reject)?;
                if !matches!(s.state, SpotState::Illegal(_)) {
                    return Err(reject());
                }
                s.state = SpotState::Available;
            }
        }
        Ok(())
    }
}

/// Card validation and charging.
pub trait PaymentGateway: Send {
    fn validate(&mut self, card_token: &str) -> bool;
    fn charge(&mut self, card_token: &str, cents: u64) -> bool;
}

/// Deterministic stand-in for a card processor.
///
/// `DECLINE` is refused at validation; `NOFUNDS` validates but every charge
/// fails. Any other token succeeds.
#[derive(Debug, Clone, Default)]
pub struct StubGateway {
    pub charged: Vec<(String, u64)>,
}

impl StubGateway {
    pub const DECLINE: &'static str = "DECLINE";
    pub const NOFUNDS: &'static str = "NOFUNDS";
}

impl PaymentGateway for StubGateway {
    fn validate(&mut self, card_token: &str) -> bool {
        card_token != Self::DECLINE
    }

    fn charge(&mut self, card_token: &str, cents: u64) -> bool {
        if card_token == Self::DECLINE || card_token == Self::NOFUNDS {
            return false;
        }
        self.charged.push((card_token.to_string(), cents));
        true
    }
}

/// The lot plus its payment gateway and optional journal. Commands are
/// processed one at a time through `&mut self`.
pub struct ParkingService<G: PaymentGateway = StubGateway> {
    lot: Lot,
    gateway: G,
    journal: Option<Journal>,
}

impl<G: PaymentGateway> ParkingService<G> {
    pub fn new(lot: Lot, gateway: G) -> Self {
        ParkingService {
            lot,
            gateway,
            journal: None,
        }
    }

    /// Opens a journaled service: loads the snapshot next to `journal_path`
    /// if there is one, otherwise starts from `config`, then replays the journal.
    pub fn open(config: &LotConfig, journal_path: &Path, gateway: G) -> Result<Self, ParkingError> {
        let (journal, lot) = Journal::open(journal_path, || Lot::from_config(config))?;
        Ok(ParkingService {
            lot,
            gateway,
            journal: Some(journal),
        })
    }

    pub fn lot(&self) -> &Lot {
        &self.lot
    }

    pub fn gateway(&self) -> &G {
        &self.gateway
    }

    /// Turns per-append disk syncing of the journal on or off.
    pub fn set_journal_sync(&mut self, sync: bool) {
        if let Some(j) = &mut self.journal {
            j.set_sync(sync);
        }
    }

    /// Writes a snapshot and truncates the journal.
    pub fn compact(&mut self) -> Result<(), ParkingError> {
        match &mut self.journal {
            Some(j) => j.compact(&self.lot),
            None => Ok(()),
        }
    }

    fn commit(&mut self, event: Event) -> Result<(), ParkingError> {
        self.lot.apply(&event)?;
        if let Some(j) = &mut self.journal {
            j.append(&event)?;
        }
        Ok(())
    }

    pub fn list_spots(&self, caller: Option<&str>) -> Vec<SpotView> {
        self.lot.list_spots(caller)
    }

    pub fn register(
        &mut self,
        spot: SpotId,
        user: UserProfile,
        now: Timestamp,
        max_minutes: Option<u32>,
    ) -> Result<Session, ParkingError> {
        if !matches!(self.lot.spot(spot)?.state, SpotState::Available) {
            return Err(ParkingError::Taken(spot));
        }
        if !self.gateway.validate(&user.card_token) {
            return Err(ParkingError::CardRefused);
        }
        let session = Session {
            id: self.lot.next_session,
            user_id: user.user_id.clone(),
            vehicle_plate: user.vehicle_plate.clone(),
            start: now,
            end: None,
            max_minutes,
            cost_cents: None,
        };
        if self.lot.user(&user.user_id) != Some(&user) {
            self.commit(Event::ProfileSaved { profile: user })?;
        }
        self.commit(Event::Registered {
            spot,
            session: session.clone(),
        })?;
        Ok(session)
    }

    fn close(&mut self, spot: SpotId, end: Timestamp, expired: bool) -> Result<Session, ParkingError> {
        let (session, rate) = match &self.lot.spot(spot)?.state {
            SpotState::Occupied(s) => (s.clone(), self.lot.spot(spot)?.rate_cents_per_hour),
            _ => return Err(ParkingError::NotRegistered(spot)),
        };
        let end = end.max(session.start);
        let cost = cost_cents(rate, billed_minutes(session.start, end));
        let token = self
            .lot
            .user(&session.user_id)
            .map(|u| u.card_token.clone())
            .unwrap_or_default();
        let paid = self.gateway.charge(&token, cost);
        if !paid {
            log::warn!("charge of {cost} cents failed for spot {spot}; marking illegal");
        }
        self.commit(Event::Closed {
            spot,
            end,
            cost_cents: cost,
            paid,
            expired,
        })?;
        let closed = Session {
            end: Some(end),
            cost_cents: Some(cost),
            ..session
        };
        if paid {
            Ok(closed)
        } else {
            Err(ParkingError::ChargeFailed {
                spot,
                session: closed,
            })
        }
    }

    /// Ends the session on `spot` and charges it.
    pub fn unregister(&mut self, spot: SpotId, now: Timestamp) -> Result<Session, ParkingError> {
        self.close(spot, now, false)
    }

    /// Force-closes every session past its maximum time, billed up to the limit.
    pub fn expire_overstays(&mut self, now: Timestamp) -> Result<Vec<SpotId>, ParkingError> {
        let due: Vec<(SpotId, Timestamp)> = self
            .lot
            .spots()
            .filter_map(|s| match &s.state {
                SpotState::Occupied(sess) => {
                    let limit = sess.start + 60 * sess.max_minutes? as u64;
                    (now > limit).then_some((s.id, limit))
                }
                _ => None,
            })
            .collect();
        for &(spot, limit) in &due {
            match self.close(spot, limit, true) {
                Ok(_) | Err(ParkingError::ChargeFailed { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(due.into_iter().map(|(s, _)| s).collect())
    }

    /// Admin action clearing an illegally occupied spot.
    pub fn settle(&mut self, spot: SpotId) -> Result<(), ParkingError> {
        if !matches!(self.lot.spot(spot)?.state, SpotState::Illegal(_)) {
            return Err(ParkingError::NotIllegal(spot));
        }
        self.commit(Event::Settled { spot })
    }

    pub fn resolve_beacon(&self, frame: &BeaconFrame) -> Result<(SpotId, String), ParkingError> {
        self.lot.resolve_beacon(frame)
    }
}
