use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Event, Lot, ParkingError};

/// One journal line: a sequence number and the event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    /// Last journal sequence number folded into `lot`.
    seq: u64,
    lot: Lot,
}

/// Append-only line-delimited JSON event log, with an optional snapshot
/// (`<journal>.snapshot.json`) that entries up to its sequence number are
/// folded into.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
    seq: u64,
    sync: bool,
}

impl Journal {
    pub fn snapshot_path(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".snapshot.json");
        PathBuf::from(name)
    }

    /// Opens (creating if needed) and replays. `initial` builds the lot when
    /// no snapshot exists.
    pub fn open(
        path: &Path,
        initial: impl FnOnce() -> Result<Lot, ParkingError>,
    ) -> Result<(Journal, Lot), ParkingError> {
        let snap_path = Self::snapshot_path(path);
        let (mut seq, mut lot) = if snap_path.exists() {
            let text = std::fs::read_to_string(&snap_path)?;
            let snap: Snapshot =
                serde_json::from_str(&text).map_err(|e| ParkingError::Journal(e.to_string()))?;
            (snap.seq, snap.lot)
        } else {
            (0, initial()?)
        };

        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: JournalEntry = match serde_json::from_str(&line) {
                    Ok(e) => e,
                    Err(e) => {
                        // A torn final write is the only tolerated corruption.
                        log::warn!("journal line {} unreadable ({e}); stopping replay", lineno + 1);
                        break;
                    }
                };
                if entry.seq <= seq {
                    continue;
                }
                lot.apply(&entry.event)?;
                seq = entry.seq;
            }
        }

        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok((
            Journal {
                path: path.to_path_buf(),
                file,
                seq,
                sync: true,
            },
            lot,
        ))
    }

    pub fn append(&mut self, event: &Event) -> Result<(), ParkingError> {
        let entry = JournalEntry {
            seq: self.seq + 1,
            event: event.clone(),
        };
        let mut line =
            serde_json::to_string(&entry).map_err(|e| ParkingError::Journal(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        if self.sync {
            self.file.sync_data()?;
        }
        self.seq = entry.seq;
        Ok(())
    }

    /// Whether each append waits for the data to reach the disk (default on).
    pub fn set_sync(&mut self, sync: bool) {
        self.sync = sync;
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// Snapshot first, then truncate; replay skips entries the snapshot covers,
    /// so a crash between the two steps is harmless.
    pub fn compact(&mut self, lot: &Lot) -> Result<(), ParkingError> {
        let snap_path = Self::snapshot_path(&self.path);
        let dir = snap_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer(
            &mut tmp,
            &Snapshot {
                seq: self.seq,
                lot: lot.clone(),
            },
        )
        .map_err(|e| ParkingError::Journal(e.to_string()))?;
        tmp.as_file().sync_all()?;
        tmp.persist(&snap_path).map_err(|e| ParkingError::Io(e.error))?;
        self.file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&self.path)?;
        self.file = OpenOptions::new().append(true).open(&self.path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use std::fs::OpenOptions;
    use std::io::Write;

    fn id(s: &str) -> SpotId {
        s.parse().unwrap()
    }

    fn user(card: &str) -> UserProfile {
        UserProfile {
            user_id: format!("u-{card}"),
            vehicle_plate: "P".into(),
            card_token: card.into(),
        }
    }

    #[test]
    fn replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lot.jsonl");
        let config = LotConfig::uniform('A', 3, 200);
        let expected = {
            let mut s = ParkingService::open(&config, &path, StubGateway::default()).unwrap();
            s.register(id("A1"), user("tok"), 0, None).unwrap();
            s.register(id("A2"), user(StubGateway::NOFUNDS), 0, Some(5)).unwrap();
            s.unregister(id("A1"), 600).unwrap();
            s.expire_overstays(1000).unwrap();
            s.lot().clone()
        };
        let s = ParkingService::open(&config, &path, StubGateway::default()).unwrap();
        assert_eq!(s.lot(), &expected);
        assert!(matches!(s.lot().spot(id("A2")).unwrap().state, SpotState::Illegal(_)));
    }

    #[test]
    fn compaction_then_more_events() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lot.jsonl");
        let config = LotConfig::uniform('A', 2, 60);
        let expected = {
            let mut s = ParkingService::open(&config, &path, StubGateway::default()).unwrap();
            s.register(id("A1"), user("tok"), 0, None).unwrap();
            s.compact().unwrap();
            assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
            s.unregister(id("A1"), 120).unwrap();
            s.register(id("A2"), user("tok"), 200, None).unwrap();
            s.lot().clone()
        };
        let s = ParkingService::open(&config, &path, StubGateway::default()).unwrap();
        assert_eq!(s.lot(), &expected);
        assert_eq!(s.lot().next_session_id(), 3);
    }

    #[test]
    fn stale_entries_before_snapshot_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lot.jsonl");
        let config = LotConfig::uniform('A', 1, 60);
        let saved = {
            let mut s = ParkingService::open(&config, &path, StubGateway::default()).unwrap();
            s.register(id("A1"), user("tok"), 0, None).unwrap();
            std::fs::read_to_string(&path).unwrap()
        };
        {
            let mut s = ParkingService::open(&config, &path, StubGateway::default()).unwrap();
            s.compact().unwrap();
        }
        // simulate a crash after snapshot but before truncation
        std::fs::write(&path, saved).unwrap();
        let s = ParkingService::open(&config, &path, StubGateway::default()).unwrap();
        assert!(matches!(s.lot().spot(id("A1")).unwrap().state, SpotState::Occupied(_)));
    }

    #[test]
    fn torn_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lot.jsonl");
        let config = LotConfig::uniform('A', 1, 60);
        {
            let mut s = ParkingService::open(&config, &path, StubGateway::default()).unwrap();
            s.register(id("A1"), user("tok"), 0, None).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":9,\"ev").unwrap();
        let s = ParkingService::open(&config, &path, StubGateway::default()).unwrap();
        assert_eq!(s.lot().census(), (0, 1, 0));
    }
}
