//! Append-only journal of applied mutations, one JSON record per line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::state::{ClusterState, Mutation};
use crate::ControlPlaneError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    /// Revision after applying the mutation.
    pub rev: u64,
    pub mutation: Mutation,
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Opens (creating if needed) the journal at `path` and replays it. A
    /// torn final line from an interrupted write is dropped and truncated.
    pub fn open(path: &Path) -> Result<(Self, ClusterState), ControlPlaneError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut state = ClusterState::default();
        let mut good_len = 0u64;
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            let mut lines = reader.split(b'\n').enumerate().peekable();
            while let Some((i, line)) = lines.next() {
                let line = line?;
                let is_last = lines.peek().is_none();
                let entry: JournalEntry = match serde_json::from_slice(&line) {
                    Ok(e) => e,
                    Err(_) if is_last => break,
                    Err(e) => {
                        return Err(ControlPlaneError::Corrupt {
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                };
                state.apply(&entry.mutation).map_err(|e| ControlPlaneError::Corrupt {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if state.revision != entry.rev {
                    return Err(ControlPlaneError::Corrupt {
                        line: i + 1,
                        message: format!("revision {} but replay reached {}", entry.rev, state.revision),
                    });
                }
                good_len += line.len() as u64 + 1;
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        let len = file.metadata()?.len();
        if len > good_len {
            file.set_len(good_len)?;
        } else if len < good_len {
            // The last record lacks its newline.
            file.write_all(b"\n")?;
        }
        Ok((
            Journal {
                path: path.to_path_buf(),
                file,
            },
            state,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, entry: &JournalEntry) -> Result<(), ControlPlaneError> {
        let mut line = serde_json::to_vec(entry).map_err(|e| ControlPlaneError::Corrupt {
            line: 0,
            message: e.to_string(),
        })?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }
}
