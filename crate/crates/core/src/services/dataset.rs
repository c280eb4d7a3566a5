//! Deterministic synthetic movie dataset.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest            key=value text: movies, seed, users, video/chunk sizes, checksum
//! records/store.log   store-tier log holding every record
//! blobs/<id>          video files (sparse, deterministic 4 KiB header)
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Zipf};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::ids::UniqueIds;
use super::proto::{self, RatingValue, Review, Section, VideoMeta};
use super::store::encode_record;

pub const MANIFEST_FILE: &str = "manifest";
pub const STORE_LOG: &str = "records/store.log";
pub const BLOB_DIR: &str = "blobs";
const VIDEO_HEADER: usize = 4096;
const RECOMMEND_K: usize = 5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("movie count must be at least 1")]
    InvalidCount,
    #[error("disk full while writing {0}")]
    DiskFull(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad manifest: {0}")]
    BadManifest(String),
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> DatasetError + '_ {
    move |source| {
        if source.raw_os_error() == Some(28) {
            DatasetError::DiskFull(path.to_owned())
        } else {
            DatasetError::Io {
                path: path.to_owned(),
                source,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetOptions {
    pub movies: u64,
    pub seed: u64,
    pub users: u64,
    pub video_bytes: u64,
    pub chunk_bytes: u64,
    pub user_balance: u64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            movies: 1000,
            seed: 1,
            users: 1000,
            video_bytes: 50 << 20,
            chunk_bytes: 1 << 20,
            user_balance: 1_000_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub movies: u64,
    pub seed: u64,
    pub users: u64,
    pub video_bytes: u64,
    pub chunk_bytes: u64,
    pub records: u64,
    /// Hex SHA-256 over the store log and video blob descriptions.
    pub checksum: String,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        format!(
            "movies={}\nseed={}\nusers={}\nvideo_bytes={}\nchunk_bytes={}\nrecords={}\nchecksum={}\n",
            self.movies,
            self.seed,
            self.users,
            self.video_bytes,
            self.chunk_bytes,
            self.records,
            self.checksum
        )
    }

    pub fn parse(text: &str) -> Result<Manifest, DatasetError> {
        let mut kv = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DatasetError::BadManifest(format!("line {line:?}")))?;
            kv.insert(k.trim(), v.trim());
        }
        let num = |k: &str| -> Result<u64, DatasetError> {
            kv.get(k)
                .ok_or_else(|| DatasetError::BadManifest(format!("missing {k}")))?
                .parse()
                .map_err(|_| DatasetError::BadManifest(format!("bad {k}")))
        };
        Ok(Manifest {
            movies: num("movies")?,
            seed: num("seed")?,
            users: num("users")?,
            video_bytes: num("video_bytes")?,
            chunk_bytes: num("chunk_bytes")?,
            records: num("records")?,
            checksum: kv
                .get("checksum")
                .ok_or_else(|| DatasetError::BadManifest("missing checksum".into()))?
                .to_string(),
        })
    }

    pub fn load(dir: &Path) -> Result<Manifest, DatasetError> {
        let p = dir.join(MANIFEST_FILE);
        Manifest::parse(&fs::read_to_string(&p).map_err(io_err(&p))?)
    }
}

/// One generated movie before it is split into store records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MovieRecord {
    pub movie_id: u64,
    pub title: String,
    pub plot: Vec<u8>,
    pub thumbnail: Vec<u8>,
    pub cast: Vec<String>,
    pub rating_sum: u64,
    pub rating_count: u64,
    pub photo_refs: Vec<u64>,
    pub photos: Vec<Vec<u8>>,
    pub video_ref: u64,
    pub review_ids: Vec<u64>,
}

pub fn video_blob_id(movie_id: u64) -> u64 {
    movie_id << 8
}

pub fn photo_blob_id(movie_id: u64, k: usize) -> u64 {
    (movie_id << 8) | (k as u64 + 1)
}

const WORDS: [&str; 16] = [
    "night", "river", "silent", "empire", "last", "golden", "shadow", "city", "dream", "winter",
    "storm", "lost", "north", "glass", "hidden", "road",
];

fn text(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    let mut raw = vec![0u8; len];
    rng.fill_bytes(&mut raw);
    raw.iter()
        .map(|b| if b % 7 == 0 { b' ' } else { b'a' + b % 26 })
        .collect()
}

fn lognormal_len(rng: &mut ChaCha8Rng, d: &LogNormal<f64>, lo: usize, hi: usize) -> usize {
    (d.sample(rng).round() as usize).clamp(lo, hi)
}

fn photos_value(refs: &[u64], photos: &[Vec<u8>]) -> Vec<u8> {
    let mut v = Vec::new();
    v.extend_from_slice(&(photos.len() as u32).to_be_bytes());
    for (id, p) in refs.iter().zip(photos) {
        v.extend_from_slice(&id.to_be_bytes());
        v.extend_from_slice(&(p.len() as u32).to_be_bytes());
        v.extend_from_slice(p);
    }
    v
}

fn video_header(seed: u64, movie_id: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ movie_id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut h = vec![0u8; VIDEO_HEADER];
    rng.fill_bytes(&mut h);
    h
}

/// Generates the dataset into `dir` (created if needed, existing content overwritten).
pub fn generate_dataset(dir: &Path, opts: &DatasetOptions) -> Result<Manifest, DatasetError> {
    if opts.movies == 0 {
        return Err(DatasetError::InvalidCount);
    }
    if opts.users == 0 || opts.chunk_bytes == 0 {
        return Err(DatasetError::BadManifest("users and chunk_bytes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let size_dist = LogNormal::new(4096f64.ln(), 1.0).unwrap();
    let thumb_dist = LogNormal::new(1024f64.ln(), 0.5).unwrap();
    let review_len = LogNormal::new(160f64.ln(), 0.6).unwrap();
    let per_movie = Zipf::new(200, 1.2).unwrap();
    let ids = UniqueIds::new(0);

    let mut movies = Vec::with_capacity(opts.movies as usize);
    let mut reviews: Vec<Review> = Vec::new();
    let mut user_reviews: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for movie_id in 1..=opts.movies {
        let title = format!(
            "{} {} {}",
            WORDS[rng.gen_range(0..WORDS.len())],
            WORDS[rng.gen_range(0..WORDS.len())],
            movie_id
        );
        let plot_len = lognormal_len(&mut rng, &size_dist, 16, 1 << 20);
        let plot = text(&mut rng, plot_len);
        let thumb_len = lognormal_len(&mut rng, &thumb_dist, 64, 64 << 10);
        let mut thumbnail = vec![0u8; thumb_len];
        rng.fill_bytes(&mut thumbnail);
        let cast = (0..rng.gen_range(3..=10))
            .map(|i| format!("actor{} as role{}", rng.gen_range(1..100_000), i + 1))
            .collect();
        let n_photos = rng.gen_range(1..=4);
        let mut photo_refs = Vec::new();
        let mut photos = Vec::new();
        for k in 0..n_photos {
            let len = lognormal_len(&mut rng, &size_dist, 64, 1 << 20);
            let mut p = vec![0u8; len];
            rng.fill_bytes(&mut p);
            photo_refs.push(photo_blob_id(movie_id, k));
            photos.push(p);
        }
        let n_reviews = per_movie.sample(&mut rng) as u64;
        let mut review_ids = Vec::new();
        let (mut sum, mut count) = (0, 0);
        for _ in 0..n_reviews {
            let stars = rng.gen_range(1..=5u8);
            let user_id = rng.gen_range(1..=opts.users);
            let len = lognormal_len(&mut rng, &review_len, 8, 4096);
            let r = Review {
                review_id: ids.next(),
                movie_id,
                user_id,
                text: text(&mut rng, len),
                stars,
                created_at: 1_500_000_000_000_000_000 + rng.gen_range(0..200_000_000_000_000_000u64),
            };
            sum += stars as u64;
            count += 1;
            review_ids.push(r.review_id);
            user_reviews.entry(user_id).or_default().push(r.review_id);
            reviews.push(r);
        }
        movies.push(MovieRecord {
            movie_id,
            title,
            plot,
            thumbnail,
            cast,
            rating_sum: sum,
            rating_count: count,
            photo_refs,
            photos,
            video_ref: video_blob_id(movie_id),
            review_ids,
        });
    }

    // Stub recommender: best average rating first, ties by id.
    let mut ranked: Vec<(u64, u64, u64)> = movies
        .iter()
        .map(|m| (m.rating_sum, m.rating_count.max(1), m.movie_id))
        .collect();
    ranked.sort_by(|a, b| (b.0 * a.1).cmp(&(a.0 * b.1)).then(a.2.cmp(&b.2)));
    let top: Vec<u64> = ranked.iter().take(RECOMMEND_K + 1).map(|r| r.2).collect();

    fs::create_dir_all(dir.join("records")).map_err(io_err(dir))?;
    let blob_dir = dir.join(BLOB_DIR);
    fs::create_dir_all(&blob_dir).map_err(io_err(&blob_dir))?;

    let log_path = dir.join(STORE_LOG);
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let mut hasher = Sha256::new();
    let mut records = 0u64;
    let mut put = |k: Vec<u8>, v: Vec<u8>| -> Result<(), DatasetError> {
        let rec = encode_record(&k, &v);
        hasher.update(&rec);
        records += 1;
        log.write_all(&rec).map_err(io_err(&log_path))
    };

    let by_review: BTreeMap<u64, &Review> = reviews.iter().map(|r| (r.review_id, r)).collect();
    for m in &movies {
        let mid = m.movie_id;
        let mut plot = Vec::with_capacity(m.title.len() + 1 + m.plot.len());
        plot.extend_from_slice(m.title.as_bytes());
        plot.push(b'\n');
        plot.extend_from_slice(&m.plot);
        put(Section::Plot.key(mid), plot)?;
        put(Section::Thumbnail.key(mid), m.thumbnail.clone())?;
        put(
            Section::Rating.key(mid),
            RatingValue {
                sum: m.rating_sum,
                count: m.rating_count,
            }
            .encode(),
        )?;
        put(Section::CastInfo.key(mid), m.cast.join("\n").into_bytes())?;
        let mut list = Vec::new();
        for rid in &m.review_ids {
            by_review[rid].entry().encode_into(&mut list);
        }
        put(Section::Reviews.key(mid), list)?;
        put(Section::Photos.key(mid), photos_value(&m.photo_refs, &m.photos))?;
        put(
            Section::Videos.key(mid),
            VideoMeta {
                blob_id: m.video_ref,
                total_bytes: opts.video_bytes,
                chunk_size: opts.chunk_bytes,
            }
            .encode(),
        )?;
        let recs: Vec<u64> = top.iter().copied().filter(|&t| t != mid).take(RECOMMEND_K).collect();
        put(Section::Recommend.key(mid), proto::u64_list(&recs))?;
    }
    for r in &reviews {
        put(proto::review_key(r.review_id), r.encode())?;
    }
    for uid in 1..=opts.users {
        put(proto::user_key(uid), opts.user_balance.to_be_bytes().to_vec())?;
        if let Some(list) = user_reviews.get(&uid) {
            put(proto::user_reviews_key(uid), proto::u64_list(list))?;
        }
    }
    drop(put);
    log.flush().map_err(io_err(&log_path))?;

    for m in &movies {
        let p = blob_dir.join(m.video_ref.to_string());
        let header = video_header(opts.seed, m.movie_id);
        let f = File::create(&p).map_err(io_err(&p))?;
        let keep = header.len().min(opts.video_bytes as usize);
        (&f).write_all(&header[..keep]).map_err(io_err(&p))?;
        f.set_len(opts.video_bytes).map_err(io_err(&p))?;
        hasher.update(m.video_ref.to_be_bytes());
        hasher.update(opts.video_bytes.to_be_bytes());
        hasher.update(&header[..keep]);
    }

    let manifest = Manifest {
        movies: opts.movies,
        seed: opts.seed,
        users: opts.users,
        video_bytes: opts.video_bytes,
        chunk_bytes: opts.chunk_bytes,
        records,
        checksum: hex::encode(hasher.finalize()),
    };
    let mp = dir.join(MANIFEST_FILE);
    fs::write(&mp, manifest.to_text()).map_err(io_err(&mp))?;
    Ok(manifest)
}

/// Read-only view of a generated dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Dataset, DatasetError> {
        Ok(Dataset {
            dir: dir.to_owned(),
            manifest: Manifest::load(dir)?,
        })
    }

    pub fn store_log(&self) -> PathBuf {
        self.dir.join(STORE_LOG)
    }

    pub fn blob_dir(&self) -> PathBuf {
        self.dir.join(BLOB_DIR)
    }
}

/// Coefficient of variation of plot sizes in a generated dataset.
pub fn plot_size_cv(dir: &Path) -> Result<f64, DatasetError> {
    let p = dir.join(STORE_LOG);
    let (store, _) = super::store::LogStore::open(&p).map_err(|e| DatasetError::BadManifest(e.to_string()))?;
    let manifest = Manifest::load(dir)?;
    let mut sizes = Vec::new();
    for mid in 1..=manifest.movies {
        if let Ok(Some(v)) = store.get(&Section::Plot.key(mid)) {
            sizes.push(v.len() as f64);
        }
    }
    let n = sizes.len() as f64;
    let mean = sizes.iter().sum::<f64>() / n;
    let var = sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> DatasetOptions {
        DatasetOptions {
            movies: 20,
            seed,
            users: 10,
            video_bytes: 10_000,
            chunk_bytes: 4096,
            user_balance: 100,
        }
    }

    #[test]
    fn deterministic_checksum() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_dataset(a.path(), &small(5)).unwrap();
        let mb = generate_dataset(b.path(), &small(5)).unwrap();
        assert_eq!(ma.checksum, mb.checksum);
        assert_eq!(Manifest::load(a.path()).unwrap(), ma);
        let mc = generate_dataset(b.path(), &small(6)).unwrap();
        assert_ne!(ma.checksum, mc.checksum);
    }

    #[test]
    fn zero_movies_rejected() {
        let d = tempfile::tempdir().unwrap();
        let mut o = small(1);
        o.movies = 0;
        assert!(matches!(generate_dataset(d.path(), &o), Err(DatasetError::InvalidCount)));
    }

    #[test]
    fn ratings_match_reviews() {
        let d = tempfile::tempdir().unwrap();
        generate_dataset(d.path(), &small(9)).unwrap();
        let (store, _) = super::super::store::LogStore::open(&d.path().join(STORE_LOG)).unwrap();
        for mid in 1..=20 {
            let r = RatingValue::decode(&store.get(&Section::Rating.key(mid)).unwrap().unwrap()).unwrap();
            let list = store.get(&Section::Reviews.key(mid)).unwrap().unwrap();
            let entries = proto::ReviewEntry::decode_list(&list).unwrap();
            assert_eq!(r.count, entries.len() as u64);
            assert_eq!(r.sum, entries.iter().map(|e| e.stars as u64).sum::<u64>());
            assert!(r.count >= 1);
        }
    }
}
