//! Eddystone service-data codec (UID, URL and TLM frames) and the spot
//! identifier convention carried in UID instance ids.
//!
//! Layouts (service-data payload, after the 0xFEAA service UUID):
//!
//! ```text
//! UID  0x00 | tx i8 | namespace[10] | instance[6]            (18 bytes, +2 RFU accepted)
//! URL  0x10 | tx i8 | scheme u8     | body[..=17]
//! TLM  0x20 | 0x00  | vbatt u16     | temp 8.8 i16 | adv_cnt u32 | sec_cnt u32
//! ```
//!
//! All multi-byte integers are big-endian.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FRAME_TYPE_UID: u8 = 0x00;
pub const FRAME_TYPE_URL: u8 = 0x10;
pub const FRAME_TYPE_TLM: u8 = 0x20;
pub const FRAME_TYPE_EID: u8 = 0x30;

pub const MAX_URL_BODY: usize = 17;

const UID_LEN: usize = 18;
const UID_LEN_WITH_RFU: usize = 20;
const TLM_LEN: usize = 14;
const TLM_VERSION_PLAIN: u8 = 0x00;

const URL_SCHEMES: [&str; 4] = ["http://www.", "https://www.", "http://", "https://"];

const URL_EXPANSIONS: [&str; 14] = [
    ".com/", ".org/", ".edu/", ".net/", ".info/", ".biz/", ".gov/", ".com", ".org", ".edu",
    ".net", ".info", ".biz", ".gov",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("truncated frame: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("unknown frame type 0x{0:02x}")]
    UnknownFrameType(u8),
    #[error("unknown frame type 0x30 (EID frames are not supported)")]
    UnsupportedEid,
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("unsupported TLM version 0x{0:02x}")]
    TlmVersion(u8),
    #[error("non-zero reserved bytes in UID frame")]
    ReservedBytes,
    #[error("URL scheme code 0x{0:02x} out of range")]
    UrlScheme(u8),
    #[error("URL has no recognized scheme: {0}")]
    UnrecognizedScheme(String),
    #[error("encoded URL body is {0} bytes (max 17)")]
    UrlTooLong(usize),
    #[error("byte 0x{0:02x} cannot appear in an encoded URL")]
    UrlByte(u8),
    #[error("frame is not a UID frame")]
    NotUid,
    #[error("invalid spot id: {0}")]
    SpotId(String),
}

/// 10-byte UID namespace.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Namespace(pub [u8; 10]);

/// 6-byte UID instance.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Instance(pub [u8; 6]);

impl fmt::Debug for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Namespace({})", hex::encode(self.0))
    }
}

impl fmt::Debug for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Instance({})", hex::encode(self.0))
    }
}

macro_rules! hex_id {
    ($ty:ident, $len:expr) => {
        impl FromStr for $ty {
            type Err = CodecError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let mut out = [0u8; $len];
                hex::decode_to_slice(s, &mut out)
                    .map_err(|e| CodecError::SpotId(format!("{}: {e}", stringify!($ty))))?;
                Ok($ty(out))
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.0))
            }
        }

        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_string())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_id!(Namespace, 10);
hex_id!(Instance, 6);

/// Beacon temperature in signed 8.8 fixed point degrees Celsius.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Temperature(pub i16);

impl Temperature {
    /// Value the TLM format reserves for "not supported".
    pub const UNSUPPORTED: Temperature = Temperature(i16::MIN);

    pub fn from_celsius(c: f64) -> Self {
        Temperature((c * 256.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
    }

    pub fn celsius(self) -> f64 {
        self.0 as f64 / 256.0
    }
}

impl fmt::Debug for Temperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}C", self.celsius())
    }
}

/// A decoded Eddystone frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BeaconFrame {
    Uid {
        namespace: Namespace,
        instance: Instance,
        tx_power_at_0m: i8,
    },
    Url {
        scheme_prefix: u8,
        encoded_body: Vec<u8>,
        tx_power_at_0m: i8,
    },
    Tlm {
        battery_mv: u16,
        temperature: Temperature,
        adv_count: u32,
        uptime_decis: u32,
    },
}

impl BeaconFrame {
    /// Builds a URL frame from a plain-text URL.
    pub fn url(url: &str, tx_power_at_0m: i8) -> Result<Self, CodecError> {
        let (scheme_prefix, encoded_body) = encode_url(url)?;
        Ok(BeaconFrame::Url {
            scheme_prefix,
            encoded_body,
            tx_power_at_0m,
        })
    }

    pub fn frame_type(&self) -> u8 {
        match self {
            BeaconFrame::Uid { .. } => FRAME_TYPE_UID,
            BeaconFrame::Url { .. } => FRAME_TYPE_URL,
            BeaconFrame::Tlm { .. } => FRAME_TYPE_TLM,
        }
    }

    /// Advertised RSSI at 0 m, when the frame carries one.
    pub fn tx_power(&self) -> Option<i8> {
        match *self {
            BeaconFrame::Uid { tx_power_at_0m, .. } | BeaconFrame::Url { tx_power_at_0m, .. } => {
                Some(tx_power_at_0m)
            }
            BeaconFrame::Tlm { .. } => None,
        }
    }

    /// Expanded URL text of a URL frame.
    pub fn url_text(&self) -> Option<Result<String, CodecError>> {
        match self {
            BeaconFrame::Url {
                scheme_prefix,
                encoded_body,
                ..
            } => Some(decode_url(*scheme_prefix, encoded_body)),
            _ => None,
        }
    }
}

pub fn encode_frame(frame: &BeaconFrame) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(UID_LEN);
    out.push(frame.frame_type());
    match frame {
        BeaconFrame::Uid {
            namespace,
            instance,
            tx_power_at_0m,
        } => {
            out.push(*tx_power_at_0m as u8);
            out.extend_from_slice(&namespace.0);
            out.extend_from_slice(&instance.0);
        }
        BeaconFrame::Url {
            scheme_prefix,
            encoded_body,
            tx_power_at_0m,
        } => {
            if *scheme_prefix as usize >= URL_SCHEMES.len() {
                return Err(CodecError::UrlScheme(*scheme_prefix));
            }
            if encoded_body.len() > MAX_URL_BODY {
                return Err(CodecError::UrlTooLong(encoded_body.len()));
            }
            if let Some(&b) = encoded_body.iter().find(|&&b| !is_url_byte(b)) {
                return Err(CodecError::UrlByte(b));
            }
            out.push(*tx_power_at_0m as u8);
            out.push(*scheme_prefix);
            out.extend_from_slice(encoded_body);
        }
        BeaconFrame::Tlm {
            battery_mv,
            temperature,
            adv_count,
            uptime_decis,
        } => {
            out.push(TLM_VERSION_PLAIN);
            out.extend_from_slice(&battery_mv.to_be_bytes());
            out.extend_from_slice(&temperature.0.to_be_bytes());
            out.extend_from_slice(&adv_count.to_be_bytes());
            out.extend_from_slice(&uptime_decis.to_be_bytes());
        }
    }
    Ok(out)
}

/// Strict decoder: the whole input must be exactly one frame.
pub fn decode_frame(bytes: &[u8]) -> Result<BeaconFrame, CodecError> {
    let Some(&frame_type) = bytes.first() else {
        return Err(CodecError::Truncated { needed: 1, got: 0 });
    };
    match frame_type {
        FRAME_TYPE_UID => {
            need(bytes, UID_LEN)?;
            match bytes.len() {
                UID_LEN => {}
                UID_LEN_WITH_RFU => {
                    if bytes[UID_LEN..] != [0, 0] {
                        return Err(CodecError::ReservedBytes);
                    }
                }
                n if n < UID_LEN_WITH_RFU => {
                    return Err(CodecError::Truncated {
                        needed: UID_LEN_WITH_RFU,
                        got: n,
                    })
                }
                n => return Err(CodecError::TrailingBytes(n - UID_LEN_WITH_RFU)),
            }
            let mut namespace = [0u8; 10];
            let mut instance = [0u8; 6];
            namespace.copy_from_slice(&bytes[2..12]);
            instance.copy_from_slice(&bytes[12..18]);
            Ok(BeaconFrame::Uid {
                namespace: Namespace(namespace),
                instance: Instance(instance),
                tx_power_at_0m: bytes[1] as i8,
            })
        }
        FRAME_TYPE_URL => {
            need(bytes, 3)?;
            let scheme_prefix = bytes[2];
            if scheme_prefix as usize >= URL_SCHEMES.len() {
                return Err(CodecError::UrlScheme(scheme_prefix));
            }
            let body = &bytes[3..];
            if body.len() > MAX_URL_BODY {
                return Err(CodecError::TrailingBytes(body.len() - MAX_URL_BODY));
            }
            if let Some(&b) = body.iter().find(|&&b| !is_url_byte(b)) {
                return Err(CodecError::UrlByte(b));
            }
            Ok(BeaconFrame::Url {
                scheme_prefix,
                encoded_body: body.to_vec(),
                tx_power_at_0m: bytes[1] as i8,
            })
        }
        FRAME_TYPE_TLM => {
            need(bytes, TLM_LEN)?;
            if bytes[1] != TLM_VERSION_PLAIN {
                return Err(CodecError::TlmVersion(bytes[1]));
            }
            if bytes.len() > TLM_LEN {
                return Err(CodecError::TrailingBytes(bytes.len() - TLM_LEN));
            }
            let be16 = |i: usize| [bytes[i], bytes[i + 1]];
            let be32 = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
            Ok(BeaconFrame::Tlm {
                battery_mv: u16::from_be_bytes(be16(2)),
                temperature: Temperature(i16::from_be_bytes(be16(4))),
                adv_count: u32::from_be_bytes(be32(6)),
                uptime_decis: u32::from_be_bytes(be32(10)),
            })
        }
        FRAME_TYPE_EID => Err(CodecError::UnsupportedEid),
        other => Err(CodecError::UnknownFrameType(other)),
    }
}

fn need(bytes: &[u8], n: usize) -> Result<(), CodecError> {
    if bytes.len() < n {
        Err(CodecError::Truncated {
            needed: n,
            got: bytes.len(),
        })
    } else {
        Ok(())
    }
}

/// Bytes allowed in an encoded URL body: expansion codes and printable ASCII.
fn is_url_byte(b: u8) -> bool {
    (b as usize) < URL_EXPANSIONS.len() || (0x21..=0x7e).contains(&b)
}

/// Compresses a URL into a scheme code and an expansion-coded body.
///
/// Expansions are applied greedily left to right, preferring the longest
/// match at each position (so ".com/" wins over ".com").
pub fn encode_url(url: &str) -> Result<(u8, Vec<u8>), CodecError> {
    let (prefix, rest) = URL_SCHEMES
        .iter()
        .enumerate()
        .filter(|(_, s)| url.starts_with(*s))
        .max_by_key(|(_, s)| s.len())
        .map(|(i, s)| (i as u8, &url[s.len()..]))
        .ok_or_else(|| CodecError::UnrecognizedScheme(url.to_string()))?;

    let mut body = Vec::with_capacity(rest.len());
    let mut tail = rest;
    while !tail.is_empty() {
        let hit = URL_EXPANSIONS
            .iter()
            .enumerate()
            .filter(|(_, e)| tail.starts_with(*e))
            .max_by_key(|(_, e)| e.len());
        match hit {
            Some((code, e)) => {
                body.push(code as u8);
                tail = &tail[e.len()..];
            }
            None => {
                let b = tail.as_bytes()[0];
                if !(0x21..=0x7e).contains(&b) {
                    return Err(CodecError::UrlByte(b));
                }
                body.push(b);
                tail = &tail[1..];
            }
        }
    }
    if body.len() > MAX_URL_BODY {
        return Err(CodecError::UrlTooLong(body.len()));
    }
    Ok((prefix, body))
}

pub fn decode_url(scheme_prefix: u8, body: &[u8]) -> Result<String, CodecError> {
    let scheme = URL_SCHEMES
        .get(scheme_prefix as usize)
        .ok_or(CodecError::UrlScheme(scheme_prefix))?;
    let mut out = String::from(*scheme);
    for &b in body {
        match URL_EXPANSIONS.get(b as usize) {
            Some(e) => out.push_str(e),
            None if (0x21..=0x7e).contains(&b) => out.push(b as char),
            None => return Err(CodecError::UrlByte(b)),
        }
    }
    Ok(out)
}

/// Parking spot identifier: a lot letter followed by a spot number, e.g. `A3`.
///
/// Ordering is by lot letter, then numerically by spot number.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpotId {
    lot: char,
    number: u64,
}

impl SpotId {
    /// Largest number that fits the 40-bit instance field.
    pub const MAX_NUMBER: u64 = (1 << 40) - 1;

    pub fn new(lot: char, number: u64) -> Result<Self, CodecError> {
        if !lot.is_ascii_uppercase() {
            return Err(CodecError::SpotId(format!("lot {lot:?} is not an uppercase letter")));
        }
        if number == 0 || number > Self::MAX_NUMBER {
            return Err(CodecError::SpotId(format!("spot number {number} out of range")));
        }
        Ok(SpotId { lot, number })
    }

    pub fn lot(&self) -> char {
        self.lot
    }

    pub fn number(&self) -> u64 {
        self.number
    }

    /// Instance bytes: ASCII lot letter, then the number as 40-bit big-endian.
    pub fn to_instance(&self) -> Instance {
        let mut out = [0u8; 6];
        out[0] = self.lot as u8;
        out[1..].copy_from_slice(&self.number.to_be_bytes()[3..]);
        Instance(out)
    }

    pub fn from_instance(instance: &Instance) -> Result<Self, CodecError> {
        let b = instance.0;
        let mut num = [0u8; 8];
        num[3..].copy_from_slice(&b[1..]);
        SpotId::new(b[0] as char, u64::from_be_bytes(num))
    }
}

pub fn spot_id_from_uid(frame: &BeaconFrame) -> Result<SpotId, CodecError> {
    match frame {
        BeaconFrame::Uid { instance, .. } => SpotId::from_instance(instance),
        _ => Err(CodecError::NotUid),
    }
}

impl fmt::Display for SpotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.lot, self.number)
    }
}

impl fmt::Debug for SpotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpotId({self})")
    }
}

impl FromStr for SpotId {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        let lot = chars
            .next()
            .ok_or_else(|| CodecError::SpotId("empty".into()))?;
        let digits = chars.as_str();
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(CodecError::SpotId(s.to_string()));
        }
        let number = digits
            .parse()
            .map_err(|_| CodecError::SpotId(s.to_string()))?;
        SpotId::new(lot, number)
    }
}

impl Serialize for SpotId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SpotId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
