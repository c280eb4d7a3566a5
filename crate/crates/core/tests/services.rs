mod common;

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs::OpenOptions;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use moviebench::services::cache::{ByteLru, CacheError};
use moviebench::services::compute::synthetic_compute;
use moviebench::services::dataset::plot_size_cv;
use moviebench::services::ids::{instance_of, UniqueIds};
use moviebench::services::store::{compact, LogStore};
use moviebench::services::{generate_dataset, DatasetError, DatasetOptions, Manifest};

/// Reference LRU: a recency list, front = least recently used.
struct ModelLru {
    entries: VecDeque<(Vec<u8>, Vec<u8>)>,
    capacity: u64,
}

impl ModelLru {
    fn used(&self) -> u64 {
        self.entries.iter().map(|(_, v)| v.len() as u64).sum()
    }

    fn get(&mut self, k: &[u8]) -> Option<Vec<u8>> {
        let i = self.entries.iter().position(|(key, _)| key == k)?;
        let e = self.entries.remove(i).unwrap();
        let v = e.1.clone();
        self.entries.push_back(e);
        Some(v)
    }

    fn put(&mut self, k: Vec<u8>, v: Vec<u8>) {
        if let Some(i) = self.entries.iter().position(|(key, _)| *key == k) {
            self.entries.remove(i);
        }
        self.entries.push_back((k, v));
        while self.used() > self.capacity {
            self.entries.pop_front();
        }
    }
}

#[test]
fn lru_matches_reference_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut lru = ByteLru::new(100);
    let mut model = ModelLru {
        entries: VecDeque::new(),
        capacity: 100,
    };
    for _ in 0..10_000 {
        let k = vec![rng.gen_range(0..24u8)];
        if rng.gen_bool(0.5) {
            let v: Vec<u8> = (0..rng.gen_range(0..30)).map(|_| rng.gen()).collect();
            lru.put(k.clone(), v.clone()).unwrap();
            model.put(k, v);
        } else {
            assert_eq!(lru.get(&k).map(<[u8]>::to_vec), model.get(&k));
        }
        assert_eq!(lru.used(), model.used());
        assert_eq!(lru.len(), model.entries.len());
    }
    assert_eq!(
        lru.put(b"big".to_vec(), vec![0; 101]),
        Err(CacheError::OversizeValue {
            size: 101,
            capacity: 100
        })
    );
}

#[test]
fn store_matches_map_across_restarts() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.log");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut model: HashMap<Vec<u8>, Vec<u8>> = HashMap::new();
    let (mut store, _) = LogStore::open(&p).unwrap();
    for i in 0..10_000 {
        let k = format!("k{}", rng.gen_range(0..300)).into_bytes();
        if rng.gen_bool(0.5) {
            let v: Vec<u8> = (0..rng.gen_range(0..100)).map(|_| rng.gen()).collect();
            store.put(&k, &v).unwrap();
            model.insert(k, v);
        } else {
            assert_eq!(store.get(&k).unwrap(), model.get(&k).cloned());
        }
        if i % 2500 == 2499 {
            drop(store);
            store = LogStore::open(&p).unwrap().0;
        }
    }
    drop(store);
    compact(&p).unwrap();
    let (store, rep) = LogStore::open(&p).unwrap();
    assert_eq!(rep.records as usize, model.len());
    for (k, v) in &model {
        assert_eq!(store.get(k).unwrap().as_ref(), Some(v));
    }
}

#[test]
fn torn_record_keeps_every_complete_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.log");
    {
        let (s, _) = LogStore::open(&p).unwrap();
        for i in 0..50u32 {
            s.put(&i.to_be_bytes(), &vec![i as u8; 40]).unwrap();
        }
    }
    let full = std::fs::metadata(&p).unwrap().len();
    // Cut inside the last record at every possible offset.
    let record = full / 50;
    for cut in 1..record {
        let copy = dir.path().join(format!("c{cut}.log"));
        std::fs::copy(&p, &copy).unwrap();
        OpenOptions::new().write(true).open(&copy).unwrap().set_len(full - cut).unwrap();
        let (s, rep) = LogStore::open(&copy).unwrap();
        assert_eq!(rep.records, 49);
        assert!(rep.corruption().is_some());
        for i in 0..49u32 {
            assert_eq!(s.get(&i.to_be_bytes()).unwrap(), Some(vec![i as u8; 40]));
        }
        assert_eq!(s.get(&49u32.to_be_bytes()).unwrap(), None);
    }
}

#[test]
fn ids_never_collide_across_instances() {
    let a = Arc::new(UniqueIds::new(1));
    let b = Arc::new(UniqueIds::new(2));
    let handles: Vec<_> = [a.clone(), a, b.clone(), b]
        .into_iter()
        .map(|ids| std::thread::spawn(move || (0..250_000).map(|_| ids.next()).collect::<Vec<u64>>()))
        .collect();
    let mut seen = HashSet::with_capacity(1_000_000);
    for h in handles {
        let ids = h.join().unwrap();
        assert!(ids.windows(2).all(|w| w[1] > w[0]));
        for id in ids {
            assert!(matches!(instance_of(id), 1 | 2));
            assert!(seen.insert(id));
        }
    }
    assert_eq!(seen.len(), 1_000_000);
    assert_eq!(UniqueIds::new(3).next() >> 48, 3);
}

fn small(movies: u64, seed: u64) -> DatasetOptions {
    DatasetOptions {
        movies,
        seed,
        users: 20,
        video_bytes: 50 << 20,
        chunk_bytes: 1 << 20,
        ..DatasetOptions::default()
    }
}

#[test]
fn dataset_is_deterministic_and_varied() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate_dataset(&dir.path().join("a"), &small(100, 4)).unwrap();
    let b = generate_dataset(&dir.path().join("b"), &small(100, 4)).unwrap();
    let c = generate_dataset(&dir.path().join("c"), &small(100, 5)).unwrap();
    assert_eq!(a.checksum, b.checksum);
    assert_ne!(a.checksum, c.checksum);
    assert_eq!(Manifest::load(&dir.path().join("a")).unwrap(), a);
    for d in ["a", "c"] {
        let cv = plot_size_cv(&dir.path().join(d)).unwrap();
        assert!(cv > 0.5, "{d}: cv {cv}");
    }
    assert!(matches!(
        generate_dataset(&dir.path().join("z"), &small(0, 1)),
        Err(DatasetError::InvalidCount)
    ));
}

#[test]
fn compute_scales_with_size_and_slowdown() {
    let time = |len: usize, s: f64| {
        let p = vec![3u8; len];
        let t = Instant::now();
        synthetic_compute(&p, 200.0, s);
        t.elapsed().as_secs_f64()
    };
    let base = time(20_000, 1.0);
    let double_size = time(40_000, 1.0);
    let half_speed = time(20_000, 0.5);
    assert!((1.6..=2.4).contains(&(double_size / base)), "{}", double_size / base);
    assert!((1.6..=2.4).contains(&(half_speed / base)), "{}", half_speed / base);
    assert_eq!(synthetic_compute(b"abc", 0.0, 1.0), synthetic_compute(b"abc", 5.0, 2.0));
}
