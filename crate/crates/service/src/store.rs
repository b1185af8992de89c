//! On-disk session state: the starting point, an append-only event log and
//! snapshots written after each round closes.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use histyle_core::annotation::{
    AnnotationSession, LoopConfig, RoundLog, SessionEvent, SessionStatus, ThresholdTable, UtteranceRecord,
};
use histyle_core::{Error, Result};
use serde::{Deserialize, Serialize};

const INIT_FILE: &str = "session.json";
const EVENTS_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

/// Everything needed to rebuild a session before any event.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionInit {
    pub records: Vec<UtteranceRecord>,
    pub table: ThresholdTable,
    pub config: LoopConfig,
    pub roster: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Snapshot<'a> {
    events: usize,
    status: SessionStatus,
    table: &'a ThresholdTable,
    rounds: &'a [RoundLog],
}

#[derive(Debug)]
pub struct EventStore {
    dir: PathBuf,
    log: File,
}

impl EventStore {
    /// Start a fresh state directory, replacing any previous log.
    pub fn create(dir: &Path, init: &SessionInit) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(INIT_FILE), serde_json::to_string_pretty(init)?)?;
        let log = File::create(dir.join(EVENTS_FILE))?;
        Ok(Self { dir: dir.to_path_buf(), log })
    }

    /// Reopen a state directory and replay its log.
    pub fn open(dir: &Path) -> Result<(Self, AnnotationSession)> {
        let init: SessionInit = serde_json::from_str(&std::fs::read_to_string(dir.join(INIT_FILE))?)?;
        let events = read_events(&dir.join(EVENTS_FILE))?;
        let session = AnnotationSession::replay(init.records, init.table, init.config, init.roster, &events)?;
        let log = OpenOptions::new().append(true).open(dir.join(EVENTS_FILE))?;
        Ok((Self { dir: dir.to_path_buf(), log }, session))
    }

    pub fn append(&mut self, event: &SessionEvent) -> Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.flush()?;
        Ok(())
    }

    pub fn snapshot(&self, session: &AnnotationSession) -> Result<()> {
        let snap = Snapshot {
            events: session.events().len(),
            status: session.status(),
            table: session.table(),
            rounds: session.log(),
        };
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(&snap)?)?;
        std::fs::rename(tmp, self.dir.join(SNAPSHOT_FILE))?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

pub fn read_events(path: &Path) -> Result<Vec<SessionEvent>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
