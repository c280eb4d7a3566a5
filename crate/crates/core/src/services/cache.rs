//! Byte-budgeted LRU cache.

use lru::LruCache;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CacheError {
    #[error("value of {size} bytes exceeds cache capacity {capacity}")]
    OversizeValue { size: u64, capacity: u64 },
}

/// LRU over a byte budget. An entry costs its value length; keys are not charged.
pub struct ByteLru {
    map: LruCache<Vec<u8>, Vec<u8>>,
    used: u64,
    capacity: u64,
    hits: u64,
    misses: u64,
}

impl ByteLru {
    pub fn new(capacity: u64) -> Self {
        ByteLru {
            map: LruCache::unbounded(),
            used: 0,
            capacity,
            hits: 0,
            misses: 0,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn hit_counts(&self) -> (u64, u64) {
        (self.hits, self.misses)
    }

    /// Returns the value and marks it most recently used.
    pub fn get(&mut self, key: &[u8]) -> Option<&[u8]> {
        match self.map.get(key) {
            Some(v) => {
                self.hits += 1;
                Some(v.as_slice())
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    /// Inserts or replaces `key`, evicting least recently used entries until
    /// the budget holds.
    pub fn put(&mut self, key: Vec<u8>, value: Vec<u8>) -> Result<(), CacheError> {
        let size = value.len() as u64;
        if size > self.capacity {
            return Err(CacheError::OversizeValue {
                size,
                capacity: self.capacity,
            });
        }
        if let Some(old) = self.map.pop(&key) {
            self.used -= old.len() as u64;
        }
        self.used += size;
        self.map.put(key, value);
        while self.used > self.capacity {
            match self.map.pop_lru() {
                Some((_, v)) => self.used -= v.len() as u64,
                None => break,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn get_after_put() {
        let mut c = ByteLru::new(100);
        c.put(b"k".to_vec(), b"v".to_vec()).unwrap();
        assert_eq!(c.get(b"k"), Some(&b"v"[..]));
    }

    #[test]
    fn eviction_order() {
        let mut c = ByteLru::new(2);
        for k in [b"a", b"b", b"c"] {
            c.put(k.to_vec(), vec![0]).unwrap();
        }
        assert_eq!(c.get(b"a"), None);
        assert!(c.get(b"b").is_some() && c.get(b"c").is_some());
    }

    #[test]
    fn oversize_rejected() {
        let mut c = ByteLru::new(2);
        assert_eq!(
            c.put(b"k".to_vec(), vec![0; 3]),
            Err(CacheError::OversizeValue {
                size: 3,
                capacity: 2
            })
        );
    }
}
