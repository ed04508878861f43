//! Text line protocol. One command per line; every reply starts with `OK`
//! or `ERR <code>`.
//!
//! ```text
//! LIST [user_id]                                    OK A1:AVAILABLE:200;A2:OCCUPIED:200
//! STATUS <spot>                                     OK <state> <rate>
//! REGISTER <spot> <user> <plate> <card> [max_min]   OK <session_id> | ERR TAKEN | ERR CARD
//! UNREGISTER <spot>                                 OK <cost_cents> | ERR NOTREG | ERR CHARGE
//! RESOLVE <hex-frame>                               OK <spot> <url> | ERR UNKNOWN
//! SETTLE <spot>                                     OK | ERR NOTILLEGAL
//! TICK <seconds>                                    OK <now>  (simulated clock only)
//! ```
//!
//! With `LIST <user_id>`, spots held by that user are reported as `MINE`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use super::{ParkingError, ParkingService, PaymentGateway, Timestamp, UserProfile};
use crate::eddystone::{decode_frame, SpotId};

/// Source of the current time for billing.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;

    /// Moves a simulated clock forward. Wall clocks refuse.
    fn advance(&self, _secs: u64) -> Option<Timestamp> {
        None
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

#[derive(Debug, Default)]
pub struct SimulatedClock(AtomicU64);

impl SimulatedClock {
    pub fn new(start: Timestamp) -> Self {
        SimulatedClock(AtomicU64::new(start))
    }
}

impl Clock for SimulatedClock {
    fn now(&self) -> Timestamp {
        self.0.load(Ordering::SeqCst)
    }

    fn advance(&self, secs: u64) -> Option<Timestamp> {
        Some(self.0.fetch_add(secs, Ordering::SeqCst) + secs)
    }
}

fn err(code: &str) -> String {
    format!("ERR {code}")
}

fn parse_spot(token: Option<&str>) -> Result<SpotId, String> {
    token
        .ok_or_else(|| err("SYNTAX missing spot"))?
        .parse()
        .map_err(|_| err("BADSPOT"))
}

fn map_error(e: ParkingError) -> String {
    match e {
        ParkingError::UnknownSpot(_) => err("BADSPOT"),
        ParkingError::Taken(_) => err("TAKEN"),
        ParkingError::CardRefused => err("CARD"),
        ParkingError::NotRegistered(_) => err("NOTREG"),
        ParkingError::ChargeFailed { .. } => err("CHARGE"),
        ParkingError::NotIllegal(_) => err("NOTILLEGAL"),
        ParkingError::UnknownBeacon => err("UNKNOWN"),
        ParkingError::Codec(_) => err("BADFRAME"),
        other => {
            log::error!("{other}");
            err("INTERNAL")
        }
    }
}

/// Handles one command line. Overdue sessions are expired first so every
/// command sees the lot as of `clock.now()`.
pub fn handle_line<G: PaymentGateway>(
    service: &mut ParkingService<G>,
    clock: &dyn Clock,
    line: &str,
) -> String {
    match dispatch(service, clock, line) {
        Ok(reply) | Err(reply) => reply,
    }
}

fn dispatch<G: PaymentGateway>(
    service: &mut ParkingService<G>,
    clock: &dyn Clock,
    line: &str,
) -> Result<String, String> {
    let mut words = line.split_whitespace();
    let Some(cmd) = words.next() else {
        return Err(err("SYNTAX empty command"));
    };
    let cmd = cmd.to_ascii_uppercase();

    if cmd == "TICK" {
        let secs: u64 = words
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("SYNTAX TICK <seconds>"))?;
        clock.advance(secs).ok_or_else(|| err("NOCLOCK"))?;
    }
    let now = clock.now();
    service.expire_overstays(now).map_err(map_error)?;

    let reply = match cmd.as_str() {
        "TICK" => format!("OK {now}"),
        "LIST" => {
            let caller = words.next();
            let entries: Vec<String> = service
                .list_spots(caller)
                .into_iter()
                .map(|v| {
                    let state = if v.mine { "MINE" } else { v.state };
                    format!("{}:{}:{}", v.id, state, v.rate_cents_per_hour)
                })
                .collect();
            format!("OK {}", entries.join(";"))
        }
        "STATUS" => {
            let spot = parse_spot(words.next())?;
            let s = service.lot().spot(spot).map_err(map_error)?;
            format!("OK {} {}", s.state.name(), s.rate_cents_per_hour)
        }
        "REGISTER" => {
            let spot = parse_spot(words.next())?;
            let mut field = || words.next().ok_or_else(|| err("SYNTAX REGISTER <spot> <user> <plate> <card> [max_minutes]"));
            let user = UserProfile {
                user_id: field()?.to_string(),
                vehicle_plate: field()?.to_string(),
                card_token: field()?.to_string(),
            };
            let max_minutes = match words.next() {
                Some(m) => Some(m.parse().map_err(|_| err("SYNTAX max_minutes"))?),
                None => None,
            };
            let session = service
                .register(spot, user, now, max_minutes)
                .map_err(map_error)?;
            format!("OK {}", session.id)
        }
        "UNREGISTER" => {
            let spot = parse_spot(words.next())?;
            let session = service.unregister(spot, now).map_err(map_error)?;
            format!("OK {}", session.cost_cents.unwrap_or(0))
        }
        "RESOLVE" => {
            let bytes = words
                .next()
                .and_then(|h| hex::decode(h).ok())
                .ok_or_else(|| err("BADFRAME"))?;
            let frame = decode_frame(&bytes).map_err(|_| err("BADFRAME"))?;
            let (spot, url) = service.resolve_beacon(&frame).map_err(map_error)?;
            format!("OK {spot} {url}")
        }
        "SETTLE" => {
            let spot = parse_spot(words.next())?;
            service.settle(spot).map_err(map_error)?;
            "OK".to_string()
        }
        _ => return Err(err("SYNTAX unknown command")),
    };
    if words.next().is_some() {
        log::debug!("ignoring trailing words in {line:?}");
    }
    Ok(reply)
}
