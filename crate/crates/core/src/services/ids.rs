//! Unique 64-bit identifiers: instance id in the top 16 bits, a counter below.
//!
//! A persistent source reserves counter values in blocks and records the end
//! of the current block on disk before handing any of it out, so a restarted
//! instance resumes past everything it may have issued.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;

const COUNTER_BITS: u32 = 48;
const COUNTER_MASK: u64 = (1 << COUNTER_BITS) - 1;
const RESERVE_BLOCK: u64 = 1 << 16;

#[derive(Debug)]
struct Reservation {
    path: PathBuf,
    limit: AtomicU64,
    lock: Mutex<()>,
}

impl Reservation {
    fn extend_past(&self, n: u64) {
        let _g = self.lock.lock();
        if n <= self.limit.load(Ordering::Acquire) {
            return;
        }
        let limit = (n + RESERVE_BLOCK).min(COUNTER_MASK);
        let tmp = self.path.with_extension("tmp");
        let written = fs::write(&tmp, format!("{limit}\n")).and_then(|_| fs::rename(&tmp, &self.path));
        if let Err(e) = written {
            panic!("cannot record id reservation in {}: {e}", self.path.display());
        }
        self.limit.store(limit, Ordering::Release);
    }
}

#[derive(Debug)]
pub struct UniqueIds {
    instance: u16,
    counter: AtomicU64,
    reservation: Option<Reservation>,
}

impl UniqueIds {
    pub fn new(instance: u16) -> Self {
        Self::starting_after(instance, 0)
    }

    /// Resumes after `last` (a counter value, without the instance bits).
    pub fn starting_after(instance: u16, last: u64) -> Self {
        UniqueIds {
            instance,
            counter: AtomicU64::new(last & COUNTER_MASK),
            reservation: None,
        }
    }

    /// A source whose progress survives restarts through the file at `path`.
    pub fn persistent(instance: u16, path: &Path) -> io::Result<Self> {
        let last = match fs::read_to_string(path) {
            Ok(text) => text
                .trim()
                .parse::<u64>()
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => 0,
            Err(e) => return Err(e),
        };
        let mut ids = Self::starting_after(instance, last);
        ids.reservation = Some(Reservation {
            path: path.to_owned(),
            limit: AtomicU64::new(last),
            lock: Mutex::new(()),
        });
        Ok(ids)
    }

    pub fn instance(&self) -> u16 {
        self.instance
    }

    pub fn next(&self) -> u64 {
        let n = self.counter.fetch_add(1, Ordering::Relaxed) + 1;
        assert!(n <= COUNTER_MASK, "unique id counter exhausted");
        if let Some(r) = &self.reservation {
            if n > r.limit.load(Ordering::Acquire) {
                r.extend_past(n);
            }
        }
        ((self.instance as u64) << COUNTER_BITS) | n
    }
}

pub fn instance_of(id: u64) -> u16 {
    (id >> COUNTER_BITS) as u16
}
