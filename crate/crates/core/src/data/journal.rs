//! Append-only journal backing the data manager.
//!
//! One JSON object per line, newline-terminated:
//!
//! ```text
//! {"op":"ingest","record":{"id":1,"value":{"real":1.5},"properties":[...],"model_link":{...}}}
//! {"op":"link","id":1,"link":{"model":"tank_model","element":"tank"}}
//! ```
//!
//! A line only counts once its newline is on disk. On replay an
//! unterminated tail, or a malformed final line, is a torn write and is
//! dropped; a malformed line followed by more entries is corruption.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, DataRecord, RecordId, MANDATORY};
use crate::refs::ModelElementRef;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum JournalEntry {
    Ingest { record: DataRecord },
    Link { id: RecordId, link: ModelElementRef },
}

impl JournalEntry {
    pub fn encode(&self) -> String {
        let mut s = serde_json::to_string(self).expect("journal entries always encode");
        s.push('\n');
        s
    }
}

#[derive(Debug)]
pub struct Replayed {
    pub records: Vec<DataRecord>,
    /// Byte length of the valid prefix.
    pub valid_len: u64,
    /// Whether bytes past the valid prefix were discarded.
    pub torn: bool,
}

fn apply(records: &mut Vec<DataRecord>, entry: JournalEntry) -> Result<(), String> {
    match entry {
        JournalEntry::Ingest { record } => {
            let expected = records.len() as RecordId + 1;
            if record.id != expected {
                return Err(format!(
                    "record id {} out of order, expected {expected}",
                    record.id
                ));
            }
            if let Some(k) = MANDATORY.iter().find(|k| record.property(**k).is_none()) {
                return Err(format!("record {} lacks {k:?}", record.id));
            }
            if !record.value.is_finite() {
                return Err(format!("record {} has a non-finite value", record.id));
            }
            records.push(record);
        }
        JournalEntry::Link { id, link } => {
            let rec = id
                .checked_sub(1)
                .and_then(|i| records.get_mut(i as usize))
                .ok_or_else(|| format!("link to unknown record {id}"))?;
            match &rec.model_link {
                Some(existing) if *existing != link => return Err(format!("record {id} relinked")),
                _ => rec.model_link = Some(link),
            }
        }
    }
    Ok(())
}

/// Rebuilds the record list from journal bytes.
pub fn replay(bytes: &[u8]) -> Result<Replayed, DataError> {
    let mut records = Vec::new();
    let mut valid_len = 0usize;
    let mut pos = 0usize;
    let mut line_no = 0usize;
    while pos < bytes.len() {
        line_no += 1;
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            // unterminated tail
            return Ok(Replayed {
                records,
                valid_len: valid_len as u64,
                torn: true,
            });
        };
        let end = pos + nl;
        let is_last = end + 1 == bytes.len();
        let parsed = std::str::from_utf8(&bytes[pos..end])
            .map_err(|e| e.to_string())
            .and_then(|s| serde_json::from_str::<JournalEntry>(s).map_err(|e| e.to_string()))
            .and_then(|entry| apply(&mut records, entry));
        match parsed {
            Ok(()) => valid_len = end + 1,
            Err(_) if is_last => {
                return Ok(Replayed {
                    records,
                    valid_len: valid_len as u64,
                    torn: true,
                })
            }
            Err(detail) => {
                return Err(DataError::CorruptJournal {
                    line: line_no,
                    detail,
                })
            }
        }
        pos = end + 1;
    }
    Ok(Replayed {
        records,
        valid_len: valid_len as u64,
        torn: false,
    })
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Opens (or creates) a journal, replays it and truncates any torn tail
    /// so later appends start on a clean line.
    pub fn open(path: &Path) -> Result<(Self, Vec<DataRecord>), DataError> {
        let storage =
            |e: std::io::Error| DataError::StorageFailure(format!("{}: {e}", path.display()));
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(storage)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(storage)?;
        let replayed = replay(&bytes)?;
        if replayed.torn {
            log::warn!(
                "{}: discarding {} torn byte(s)",
                path.display(),
                bytes.len() as u64 - replayed.valid_len
            );
            file.set_len(replayed.valid_len).map_err(storage)?;
        }
        Ok((
            Self {
                path: path.to_owned(),
                file,
            },
            replayed.records,
        ))
    }

    pub fn append(&mut self, entry: &JournalEntry) -> Result<(), DataError> {
        self.file
            .write_all(entry.encode().as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| DataError::StorageFailure(format!("{}: {e}", self.path.display())))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::super::{DataManager, DataProperty, Origin, Selector, Timeliness};
    use super::*;
    use crate::value::Value;

    fn props() -> Vec<DataProperty> {
        vec![
            DataProperty::Origin(Origin::Operator),
            DataProperty::Timeliness(Timeliness::Historical),
        ]
    }

    #[test]
    fn reload_after_three_ingests() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.journal");
        let live = {
            let mut dm = DataManager::open(&path).unwrap();
            for i in 0..3 {
                dm.ingest(Value::Int(i), props(), None).unwrap();
            }
            dm.link_to_model(2, ModelElementRef::new("m", "e"), |_| true)
                .unwrap();
            dm.query(&Selector::all())
        };
        let dm = DataManager::open(&path).unwrap();
        assert_eq!(dm.query(&Selector::all()), live);
        assert_eq!(dm.len(), 3);
    }

    #[test]
    fn empty_file_is_empty_store() {
        let r = replay(b"").unwrap();
        assert!(r.records.is_empty() && !r.torn);
    }

    #[test]
    fn garbage_final_line_is_dropped_but_inner_garbage_is_corrupt() {
        let good = JournalEntry::Ingest {
            record: DataRecord {
                id: 1,
                value: Value::Int(1),
                properties: props(),
                model_link: None,
            },
        }
        .encode();
        let r = replay(format!("{good}garbage\n").as_bytes()).unwrap();
        assert_eq!(r.records.len(), 1);
        assert!(r.torn);
        assert_eq!(r.valid_len as usize, good.len());
        let err = replay(format!("garbage\n{good}").as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::CorruptJournal { line: 1, .. }));
    }

    #[test]
    fn reopen_truncates_torn_tail_before_appending() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j");
        {
            let mut dm = DataManager::open(&path).unwrap();
            dm.ingest(Value::Int(1), props(), None).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"op\":\"ing").unwrap();
        drop(f);
        {
            let mut dm = DataManager::open(&path).unwrap();
            assert_eq!(dm.len(), 1);
            assert_eq!(dm.ingest(Value::Int(2), props(), None).unwrap(), 2);
        }
        let dm = DataManager::open(&path).unwrap();
        assert_eq!(dm.len(), 2);
    }
}
