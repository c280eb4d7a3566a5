//! Append-only key/value log with an in-memory index.
//!
//! Record layout, all integers big-endian:
//!
//! ```text
//! key_len(4) value_len(4) key value crc32(4)
//! ```
//!
//! The checksum covers the two lengths, the key, and the value. Recovery scans
//! from the start and truncates the file at the first record that is short or
//! fails its checksum.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

const HEADER: usize = 8;
const TRAILER: usize = 4;
/// Upper bound on a single key or value, to reject garbage lengths early.
const MAX_ITEM: u32 = 256 << 20;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt or torn record at offset {0}; log truncated there")]
    Corruption(u64),
    #[error("key or value larger than {MAX_ITEM} bytes")]
    TooLarge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RecoveryReport {
    pub records: u64,
    /// Offset of the first bad record, if the tail was truncated.
    pub truncated_at: Option<u64>,
}

impl RecoveryReport {
    pub fn corruption(&self) -> Option<StoreError> {
        self.truncated_at.map(StoreError::Corruption)
    }
}

#[derive(Clone, Copy)]
struct Slot {
    offset: u64,
    len: u32,
}

pub struct LogStore {
    path: PathBuf,
    reader: File,
    writer: Mutex<(BufWriter<File>, u64)>,
    index: RwLock<HashMap<Vec<u8>, Slot>>,
}

fn checksum(key: &[u8], value: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&(key.len() as u32).to_be_bytes());
    h.update(&(value.len() as u32).to_be_bytes());
    h.update(key);
    h.update(value);
    h.finalize()
}

/// Encodes one record.
pub fn encode_record(key: &[u8], value: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + key.len() + value.len() + TRAILER);
    out.extend_from_slice(&(key.len() as u32).to_be_bytes());
    out.extend_from_slice(&(value.len() as u32).to_be_bytes());
    out.extend_from_slice(key);
    out.extend_from_slice(value);
    out.extend_from_slice(&checksum(key, value).to_be_bytes());
    out
}

/// Reads records until EOF or the first bad one. Calls `f(key, value, value_offset)`.
fn scan(
    file: &File,
    mut f: impl FnMut(Vec<u8>, Vec<u8>, u64),
) -> io::Result<(u64, u64, bool)> {
    let total = file.metadata()?.len();
    let mut r = BufReader::with_capacity(1 << 16, file);
    r.seek(SeekFrom::Start(0))?;
    let mut offset = 0u64;
    let mut records = 0u64;
    loop {
        if offset == total {
            return Ok((offset, records, false));
        }
        if total - offset < (HEADER + TRAILER) as u64 {
            return Ok((offset, records, true));
        }
        let mut hdr = [0u8; HEADER];
        r.read_exact(&mut hdr)?;
        let klen = u32::from_be_bytes(hdr[..4].try_into().unwrap());
        let vlen = u32::from_be_bytes(hdr[4..].try_into().unwrap());
        let need = (HEADER + TRAILER) as u64 + klen as u64 + vlen as u64;
        if klen > MAX_ITEM || vlen > MAX_ITEM || total - offset < need {
            return Ok((offset, records, true));
        }
        let mut key = vec![0u8; klen as usize];
        r.read_exact(&mut key)?;
        let mut value = vec![0u8; vlen as usize];
        r.read_exact(&mut value)?;
        let mut crc = [0u8; TRAILER];
        r.read_exact(&mut crc)?;
        if u32::from_be_bytes(crc) != checksum(&key, &value) {
            return Ok((offset, records, true));
        }
        let value_offset = offset + HEADER as u64 + klen as u64;
        f(key, value, value_offset);
        offset += need;
        records += 1;
    }
}

impl LogStore {
    /// Opens (creating if needed) and recovers the log at `path`.
    pub fn open(path: &Path) -> Result<(LogStore, RecoveryReport), StoreError> {
        let io_err = |source| StoreError::Io {
            path: path.to_owned(),
            source,
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(path)
            .map_err(io_err)?;
        let mut index = HashMap::new();
        let (end, records, torn) = scan(&file, |k, v, off| {
            index.insert(
                k,
                Slot {
                    offset: off,
                    len: v.len() as u32,
                },
            );
        })
        .map_err(io_err)?;
        let report = RecoveryReport {
            records,
            truncated_at: torn.then_some(end),
        };
        if torn {
            log::warn!("{}: torn record at offset {end}, truncating", path.display());
            file.set_len(end).map_err(io_err)?;
        }
        let mut writer = file.try_clone().map_err(io_err)?;
        writer.seek(SeekFrom::Start(end)).map_err(io_err)?;
        Ok((
            LogStore {
                path: path.to_owned(),
                reader: file,
                writer: Mutex::new((BufWriter::new(writer), end)),
                index: RwLock::new(index),
            },
            report,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.index.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.read().is_empty()
    }

    pub fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>, StoreError> {
        let Some(slot) = self.index.read().get(key).copied() else {
            return Ok(None);
        };
        let mut buf = vec![0u8; slot.len as usize];
        self.reader
            .read_exact_at(&mut buf, slot.offset)
            .map_err(|source| StoreError::Io {
                path: self.path.clone(),
                source,
            })?;
        Ok(Some(buf))
    }

    /// Appends and indexes the record. Returns once the bytes are handed to the OS.
    pub fn put(&self, key: &[u8], value: &[u8]) -> Result<(), StoreError> {
        if key.len() as u64 > MAX_ITEM as u64 || value.len() as u64 > MAX_ITEM as u64 {
            return Err(StoreError::TooLarge);
        }
        let rec = encode_record(key, value);
        let mut w = self.writer.lock();
        let offset = w.1;
        w.0.write_all(&rec)
            .and_then(|_| w.0.flush())
            .map_err(|source| StoreError::Io {
                path: self.path.clone(),
                source,
            })?;
        w.1 += rec.len() as u64;
        self.index.write().insert(
            key.to_vec(),
            Slot {
                offset: offset + HEADER as u64 + key.len() as u64,
                len: value.len() as u32,
            },
        );
        Ok(())
    }

    /// All live keys, sorted.
    pub fn keys(&self) -> Vec<Vec<u8>> {
        let mut k: Vec<Vec<u8>> = self.index.read().keys().cloned().collect();
        k.sort();
        k
    }
}

/// Rewrites the log at `path` keeping only the latest value per key, in key
/// order. Must not run while a store has the log open.
pub fn compact(path: &Path) -> Result<RecoveryReport, StoreError> {
    let io_err = |source| StoreError::Io {
        path: path.to_owned(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut latest: HashMap<Vec<u8>, Vec<u8>> = HashMap::new();
    let (_, _, torn) = scan(&file, |k, v, _| {
        latest.insert(k, v);
    })
    .map_err(io_err)?;
    let mut keys: Vec<&Vec<u8>> = latest.keys().collect();
    keys.sort();
    let tmp = path.with_extension("compact");
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io_err)?);
        for k in &keys {
            w.write_all(&encode_record(k, &latest[*k])).map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)?;
    Ok(RecoveryReport {
        records: keys.len() as u64,
        truncated_at: if torn { Some(0) } else { None },
    })
}

/// Writes records in order to a fresh log file.
pub fn write_log<'a>(
    path: &Path,
    records: impl IntoIterator<Item = (&'a [u8], &'a [u8])>,
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (k, v) in records {
        w.write_all(&encode_record(k, v))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.log");
        {
            let (s, _) = LogStore::open(&p).unwrap();
            s.put(b"a", b"1").unwrap();
            s.put(b"a", b"2").unwrap();
            s.put(b"b", b"3").unwrap();
        }
        let (s, rep) = LogStore::open(&p).unwrap();
        assert_eq!(rep.records, 3);
        assert_eq!(rep.truncated_at, None);
        assert_eq!(s.get(b"a").unwrap(), Some(b"2".to_vec()));
        assert_eq!(s.get(b"zz").unwrap(), None);
    }

    #[test]
    fn torn_tail_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.log");
        {
            let (s, _) = LogStore::open(&p).unwrap();
            s.put(b"a", b"first").unwrap();
            s.put(b"b", b"second").unwrap();
        }
        let full = fs::metadata(&p).unwrap().len();
        let first_len = encode_record(b"a", b"first").len() as u64;
        let f = OpenOptions::new().write(true).open(&p).unwrap();
        f.set_len(full - 3).unwrap();
        let (s, rep) = LogStore::open(&p).unwrap();
        assert_eq!(rep.truncated_at, Some(first_len));
        assert!(matches!(rep.corruption(), Some(StoreError::Corruption(o)) if o == first_len));
        assert_eq!(s.get(b"a").unwrap(), Some(b"first".to_vec()));
        assert_eq!(s.get(b"b").unwrap(), None);
        s.put(b"c", b"third").unwrap();
        drop(s);
        let (s, rep) = LogStore::open(&p).unwrap();
        assert_eq!(rep.truncated_at, None);
        assert_eq!(s.get(b"c").unwrap(), Some(b"third".to_vec()));
    }

    #[test]
    fn compaction_keeps_latest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.log");
        {
            let (s, _) = LogStore::open(&p).unwrap();
            for i in 0..10u8 {
                s.put(b"k", &[i]).unwrap();
            }
            s.put(b"j", b"x").unwrap();
        }
        let rep = compact(&p).unwrap();
        assert_eq!(rep.records, 2);
        let (s, rep) = LogStore::open(&p).unwrap();
        assert_eq!(rep.records, 2);
        assert_eq!(s.get(b"k").unwrap(), Some(vec![9]));
    }
}
