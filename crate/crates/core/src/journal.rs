//! Append-only JSON-lines journal.
//!
//! Each record is written with a single `write` call on an unbuffered file,
//! so a killed process loses at most the record in flight. On open, a torn
//! final line is truncated away; corruption anywhere else is an error.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug)]
pub struct Journal<E> {
    path: PathBuf,
    file: File,
    sync: bool,
    _entries: PhantomData<fn() -> E>,
}

impl<E: Serialize + DeserializeOwned> Journal<E> {
    /// Open (creating if needed) and return every intact record in order.
    pub fn open(path: impl Into<PathBuf>) -> io::Result<(Self, Vec<E>)> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e),
        };
        let mut entries = Vec::new();
        let mut good_len = 0usize;
        let mut offset = 0usize;
        while offset < bytes.len() {
            let newline = bytes[offset..].iter().position(|&b| b == b'\n');
            let end = newline.map_or(bytes.len(), |i| offset + i);
            let line = &bytes[offset..end];
            let next = end + 1;
            if !line.iter().all(u8::is_ascii_whitespace) {
                match serde_json::from_slice::<E>(line) {
                    Ok(e) if newline.is_some() => entries.push(e),
                    result => {
                        let rest = bytes.get(next..).unwrap_or_default();
                        if rest.iter().all(u8::is_ascii_whitespace) {
                            // Torn final record.
                            break;
                        }
                        let detail = result.err().map(|e| e.to_string()).unwrap_or_default();
                        return Err(io::Error::new(
                            io::ErrorKind::InvalidData,
                            format!("{}: record {}: {detail}", path.display(), entries.len() + 1),
                        ));
                    }
                }
            }
            offset = next;
            good_len = next.min(bytes.len());
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if good_len < bytes.len() {
            file.set_len(good_len as u64)?;
        }
        Ok((
            Self {
                path,
                file,
                sync: false,
                _entries: PhantomData,
            },
            entries,
        ))
    }

    /// Also `fsync` after every record (survives power loss, not just a
    /// killed process).
    pub fn with_sync(mut self, sync: bool) -> Self {
        self.sync = sync;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, entry: &E) -> io::Result<()> {
        let mut line = serde_json::to_vec(entry).map_err(io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    /// Atomically replace the journal with `entries`.
    pub fn rewrite(&mut self, entries: &[E]) -> io::Result<()> {
        let mut buf = Vec::new();
        for e in entries {
            buf.extend(serde_json::to_vec(e).map_err(io::Error::other)?);
            buf.push(b'\n');
        }
        crate::domain::write_atomic(&self.path, &buf)?;
        self.file = OpenOptions::new().append(true).open(&self.path)?;
        Ok(())
    }
}
