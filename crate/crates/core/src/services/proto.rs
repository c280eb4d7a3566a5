//! Request/response field layouts and stored value encodings.

use crate::rpc::{Fault, Reply};
use crate::wire::{Field, RpcMessage};

pub mod codes {
    pub const NOT_FOUND: &str = "NotFound";
    pub const INVALID_STARS: &str = "InvalidStars";
    pub const INSUFFICIENT_FUNDS: &str = "InsufficientFunds";
    pub const STORE_UNAVAILABLE: &str = "StoreUnavailable";
    pub const SECTION_UNAVAILABLE: &str = "SectionUnavailable";
    pub const BAD_REQUEST: &str = "BadRequest";
    pub const UNKNOWN_METHOD: &str = "UnknownMethod";
    pub const UNCONFIGURED: &str = "Unconfigured";
    pub const OVERSIZE_VALUE: &str = "OversizeValue";
    pub const TIMEOUT: &str = "Timeout";
    pub const IO: &str = "Io";
}

pub mod methods {
    pub const COMPOSE_PAGE: &str = "ComposePage";
    pub const PLOT: &str = "Plot";
    pub const THUMBNAIL: &str = "Thumbnail";
    pub const RATING: &str = "Rating";
    pub const CAST_INFO: &str = "CastInfo";
    pub const REVIEWS: &str = "Reviews";
    pub const PHOTOS: &str = "Photos";
    pub const VIDEOS: &str = "Videos";
    pub const RECOMMEND: &str = "Recommend";
    pub const COMPOSE_REVIEW: &str = "ComposeReview";
    pub const UNIQUE_ID: &str = "UniqueId";
    pub const MOVIE_REVIEW: &str = "MovieReview";
    pub const USER_REVIEW: &str = "UserReview";
    pub const REVIEW_STORAGE: &str = "ReviewStorage";
    pub const UPDATE_MOVIE: &str = "UpdateMovie";
    pub const USER_AUTH: &str = "UserAuth";
    pub const RENT_CHUNK: &str = "RentChunk";
    pub const CACHE_GET: &str = "CacheGet";
    pub const CACHE_PUT: &str = "CachePut";
    pub const STORE_GET: &str = "StoreGet";
    pub const STORE_PUT: &str = "StorePut";
    pub const RELAY: &str = "Relay";
    // Control plane, answered inline and never traced.
    pub const SET_SLOWDOWN: &str = "SetSlowdown";
    pub const SET_TRACING: &str = "SetTracing";
    pub const FLUSH: &str = "Flush";
    pub const STATS: &str = "Stats";
    pub const SHUTDOWN: &str = "Shutdown";
}

/// The eight page sections, in page order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Section {
    Plot,
    Thumbnail,
    Rating,
    CastInfo,
    Reviews,
    Photos,
    Videos,
    Recommend,
}

impl Section {
    pub const ALL: [Section; 8] = [
        Section::Plot,
        Section::Thumbnail,
        Section::Rating,
        Section::CastInfo,
        Section::Reviews,
        Section::Photos,
        Section::Videos,
        Section::Recommend,
    ];

    pub fn method(self) -> &'static str {
        match self {
            Section::Plot => methods::PLOT,
            Section::Thumbnail => methods::THUMBNAIL,
            Section::Rating => methods::RATING,
            Section::CastInfo => methods::CAST_INFO,
            Section::Reviews => methods::REVIEWS,
            Section::Photos => methods::PHOTOS,
            Section::Videos => methods::VIDEOS,
            Section::Recommend => methods::RECOMMEND,
        }
    }

    /// Conventional service name in the shipped topology.
    pub fn service_name(self) -> &'static str {
        match self {
            Section::Plot => "plot",
            Section::Thumbnail => "thumbnail",
            Section::Rating => "rating",
            Section::CastInfo => "cast_info",
            Section::Reviews => "reviews",
            Section::Photos => "photos",
            Section::Videos => "videos",
            Section::Recommend => "recommend",
        }
    }

    pub fn from_service_name(name: &str) -> Option<Section> {
        Section::ALL.into_iter().find(|s| s.service_name() == name)
    }

    pub fn key(self, movie_id: u64) -> Vec<u8> {
        let prefix = match self {
            Section::Plot => "plot",
            Section::Thumbnail => "thumb",
            Section::Rating => "rating",
            Section::CastInfo => "cast",
            Section::Reviews => "reviews",
            Section::Photos => "photos",
            Section::Videos => "videos",
            Section::Recommend => "recommend",
        };
        format!("{prefix}:{movie_id}").into_bytes()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn user_key(user_id: u64) -> Vec<u8> {
    format!("user:{user_id}").into_bytes()
}

pub fn user_reviews_key(user_id: u64) -> Vec<u8> {
    format!("user_reviews:{user_id}").into_bytes()
}

pub fn review_key(review_id: u64) -> Vec<u8> {
    format!("review:{review_id}").into_bytes()
}

pub fn fault(code: &str, message: impl Into<String>) -> Fault {
    Fault::new(code, message)
}

pub fn bad_request(what: &str) -> Fault {
    fault(codes::BAD_REQUEST, what)
}

pub fn get_field<'a>(fields: &'a [Field], tag: u8) -> Option<&'a [u8]> {
    fields.iter().find(|f| f.tag == tag).map(|f| f.value.as_slice())
}

pub fn req_bytes<'a>(fields: &'a [Field], tag: u8, name: &str) -> Result<&'a [u8], Fault> {
    get_field(fields, tag).ok_or_else(|| bad_request(&format!("missing {name}")))
}

pub fn req_u64(fields: &[Field], tag: u8, name: &str) -> Result<u64, Fault> {
    let b = req_bytes(fields, tag, name)?;
    read_u64(b).ok_or_else(|| bad_request(&format!("{name} must be 8 bytes")))
}

pub fn read_u64(b: &[u8]) -> Option<u64> {
    Some(u64::from_be_bytes(b.try_into().ok()?))
}

/// Converts a reply message back into handler form.
pub fn reply_of(msg: RpcMessage) -> Reply {
    match msg.kind {
        crate::wire::MessageKind::Response => Ok(msg.fields),
        _ => {
            let code = msg.error_code().unwrap_or("Error").to_owned();
            let text = msg
                .field(1)
                .map(|b| String::from_utf8_lossy(b).into_owned())
                .unwrap_or_default();
            Err(Fault::new(code, text))
        }
    }
}

/// Stored rating: running sum and count of stars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RatingValue {
    pub sum: u64,
    pub count: u64,
}

impl RatingValue {
    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(16);
        v.extend_from_slice(&self.sum.to_be_bytes());
        v.extend_from_slice(&self.count.to_be_bytes());
        v
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() != 16 {
            return None;
        }
        Some(RatingValue {
            sum: read_u64(&b[..8])?,
            count: read_u64(&b[8..])?,
        })
    }

    /// Displayed rating, or `None` before the first review.
    pub fn average(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum as f64 / self.count as f64)
    }
}

/// One review as listed under a movie (no creation time).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewEntry {
    pub review_id: u64,
    pub user_id: u64,
    pub stars: u8,
    pub text: Vec<u8>,
}

impl ReviewEntry {
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.review_id.to_be_bytes());
        out.extend_from_slice(&self.user_id.to_be_bytes());
        out.push(self.stars);
        out.extend_from_slice(&(self.text.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.text);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(21 + self.text.len());
        self.encode_into(&mut v);
        v
    }

    /// Decodes a concatenated list.
    pub fn decode_list(mut b: &[u8]) -> Option<Vec<ReviewEntry>> {
        let mut out = Vec::new();
        while !b.is_empty() {
            if b.len() < 21 {
                return None;
            }
            let len = u32::from_be_bytes(b[17..21].try_into().ok()?) as usize;
            if b.len() < 21 + len {
                return None;
            }
            out.push(ReviewEntry {
                review_id: read_u64(&b[..8])?,
                user_id: read_u64(&b[8..16])?,
                stars: b[16],
                text: b[21..21 + len].to_vec(),
            });
            b = &b[21 + len..];
        }
        Some(out)
    }
}

/// Full review record kept by the store tier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Review {
    pub review_id: u64,
    pub movie_id: u64,
    pub user_id: u64,
    pub text: Vec<u8>,
    pub stars: u8,
    /// Nanoseconds since the Unix epoch.
    pub created_at: u64,
}

impl Review {
    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(37 + self.text.len());
        v.extend_from_slice(&self.review_id.to_be_bytes());
        v.extend_from_slice(&self.movie_id.to_be_bytes());
        v.extend_from_slice(&self.user_id.to_be_bytes());
        v.push(self.stars);
        v.extend_from_slice(&self.created_at.to_be_bytes());
        v.extend_from_slice(&(self.text.len() as u32).to_be_bytes());
        v.extend_from_slice(&self.text);
        v
    }

    pub fn decode(b: &[u8]) -> Option<Review> {
        if b.len() < 37 {
            return None;
        }
        let len = u32::from_be_bytes(b[33..37].try_into().ok()?) as usize;
        if b.len() != 37 + len {
            return None;
        }
        Some(Review {
            review_id: read_u64(&b[..8])?,
            movie_id: read_u64(&b[8..16])?,
            user_id: read_u64(&b[16..24])?,
            stars: b[24],
            created_at: read_u64(&b[25..33])?,
            text: b[37..].to_vec(),
        })
    }

    pub fn entry(&self) -> ReviewEntry {
        ReviewEntry {
            review_id: self.review_id,
            user_id: self.user_id,
            stars: self.stars,
            text: self.text.clone(),
        }
    }
}

/// Video metadata stored under `videos:<movie_id>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VideoMeta {
    pub blob_id: u64,
    pub total_bytes: u64,
    pub chunk_size: u64,
}

impl VideoMeta {
    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(24);
        v.extend_from_slice(&self.blob_id.to_be_bytes());
        v.extend_from_slice(&self.total_bytes.to_be_bytes());
        v.extend_from_slice(&self.chunk_size.to_be_bytes());
        v
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() != 24 {
            return None;
        }
        Some(VideoMeta {
            blob_id: read_u64(&b[..8])?,
            total_bytes: read_u64(&b[8..16])?,
            chunk_size: read_u64(&b[16..])?,
        })
    }
}

/// What a successful rent returns: how to fetch the video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamManifest {
    pub movie_id: u64,
    pub blob_id: u64,
    pub chunk_size: u64,
    pub chunk_count: u64,
    pub total_bytes: u64,
    /// Balance left after the debit.
    pub balance: u64,
}

impl StreamManifest {
    pub fn new(movie_id: u64, meta: VideoMeta, balance: u64) -> Self {
        let chunk = meta.chunk_size.max(1);
        StreamManifest {
            movie_id,
            blob_id: meta.blob_id,
            chunk_size: chunk,
            chunk_count: meta.total_bytes.div_ceil(chunk).max(1),
            total_bytes: meta.total_bytes,
            balance,
        }
    }

    pub fn to_fields(&self) -> Vec<Field> {
        vec![
            Field::u64(0, self.movie_id),
            Field::u64(1, self.blob_id),
            Field::u64(2, self.chunk_size),
            Field::u64(3, self.chunk_count),
            Field::u64(4, self.total_bytes),
            Field::u64(5, self.balance),
        ]
    }

    pub fn from_fields(f: &[Field]) -> Result<Self, Fault> {
        Ok(StreamManifest {
            movie_id: req_u64(f, 0, "movie_id")?,
            blob_id: req_u64(f, 1, "blob_id")?,
            chunk_size: req_u64(f, 2, "chunk_size")?,
            chunk_count: req_u64(f, 3, "chunk_count")?,
            total_bytes: req_u64(f, 4, "total_bytes")?,
            balance: req_u64(f, 5, "balance")?,
        })
    }

    /// Length of chunk `index`.
    pub fn chunk_len(&self, index: u64) -> u64 {
        let start = index * self.chunk_size;
        self.total_bytes.saturating_sub(start).min(self.chunk_size)
    }
}

/// Section payload inside a page: 0 + body, or 1 + error code.
pub fn section_ok(body: &[u8]) -> Vec<u8> {
    let mut v = Vec::with_capacity(body.len() + 1);
    v.push(0);
    v.extend_from_slice(body);
    v
}

pub fn section_err(code: &str) -> Vec<u8> {
    let mut v = Vec::with_capacity(code.len() + 1);
    v.push(1);
    v.extend_from_slice(code.as_bytes());
    v
}

/// A decoded page: one entry per section in page order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComposedPage {
    pub sections: Vec<Result<Vec<u8>, String>>,
}

impl ComposedPage {
    pub fn from_fields(f: &[Field]) -> Result<Self, Fault> {
        let mut sections = Vec::with_capacity(8);
        for s in Section::ALL {
            let raw = req_bytes(f, s.index() as u8, s.method())?;
            sections.push(match raw.split_first() {
                Some((0, body)) => Ok(body.to_vec()),
                Some((1, code)) => Err(String::from_utf8_lossy(code).into_owned()),
                _ => return Err(bad_request("malformed section")),
            });
        }
        Ok(ComposedPage { sections })
    }

    pub fn section(&self, s: Section) -> &Result<Vec<u8>, String> {
        &self.sections[s.index()]
    }

    pub fn rating(&self) -> Option<RatingValue> {
        self.section(Section::Rating)
            .as_ref()
            .ok()
            .and_then(|b| RatingValue::decode(b))
    }
}

pub fn u64_list(values: &[u64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_be_bytes()).collect()
}

pub fn parse_u64_list(b: &[u8]) -> Option<Vec<u64>> {
    if b.len() % 8 != 0 {
        return None;
    }
    b.chunks_exact(8).map(read_u64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_chunking() {
        let m = StreamManifest::new(
            1,
            VideoMeta {
                blob_id: 9,
                total_bytes: 50 << 20,
                chunk_size: 1 << 20,
            },
            7,
        );
        assert_eq!(m.chunk_count, 50);
        assert_eq!(StreamManifest::from_fields(&m.to_fields()).unwrap(), m);
        let odd = StreamManifest::new(
            1,
            VideoMeta {
                blob_id: 9,
                total_bytes: 10,
                chunk_size: 4,
            },
            0,
        );
        assert_eq!(odd.chunk_count, 3);
        assert_eq!(odd.chunk_len(2), 2);
    }

    #[test]
    fn review_codecs() {
        let r = Review {
            review_id: 5,
            movie_id: 6,
            user_id: 7,
            text: b"great".to_vec(),
            stars: 4,
            created_at: 99,
        };
        assert_eq!(Review::decode(&r.encode()).unwrap(), r);
        let mut list = r.entry().encode();
        list.extend(r.entry().encode());
        assert_eq!(ReviewEntry::decode_list(&list).unwrap().len(), 2);
    }
}
