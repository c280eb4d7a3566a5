//! Request handlers shared by the microservice and monolith deployments.
//!
//! Handlers only see an [`Env`]: a way to call other logical services, burn
//! synthetic compute, and reach the local tier state. The microservice
//! deployment implements `call` over RPC; the monolith implements it as a
//! direct function call into the same handlers.

use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, MutexGuard};

use super::cache::{ByteLru, CacheError};
use super::ids::UniqueIds;
use super::proto::{self, codes, methods, Section};
use super::store::LogStore;
use crate::rpc::{Fault, Reply};
use crate::topology::{EdgeMode, Role, ServiceTopology};
use crate::wire::Field;

/// What a logical service does, derived from its role and name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ServiceKind {
    Frontend,
    ComposePage,
    Section(Section),
    ComposeReview,
    UniqueId,
    User,
    Cache,
    Store,
    Blob,
    /// Any other logic service: computes and calls its out-edges.
    Relay,
}

impl ServiceKind {
    pub fn of(name: &str, role: Role) -> ServiceKind {
        match role {
            Role::Frontend => ServiceKind::Frontend,
            Role::Cache => ServiceKind::Cache,
            Role::Store => ServiceKind::Store,
            Role::Blob => ServiceKind::Blob,
            Role::Logic => match name {
                "compose_page" => ServiceKind::ComposePage,
                "compose_review" => ServiceKind::ComposeReview,
                "unique_id" => ServiceKind::UniqueId,
                "user" => ServiceKind::User,
                other => Section::from_service_name(other)
                    .map(ServiceKind::Section)
                    .unwrap_or(ServiceKind::Relay),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Callee {
    pub name: String,
    pub kind: ServiceKind,
    pub mode: EdgeMode,
}

/// Striped mutexes for read-modify-write on per-key state.
pub struct Stripes {
    locks: Vec<Mutex<()>>,
}

impl Stripes {
    pub fn new(n: usize) -> Self {
        Stripes {
            locks: (0..n.max(1)).map(|_| Mutex::new(())).collect(),
        }
    }

    pub fn lock(&self, key: u64) -> MutexGuard<'_, ()> {
        let i = (key.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 32) as usize % self.locks.len();
        self.locks[i].lock()
    }
}

/// Static description of one logical service as its handlers need it.
pub struct LocalService {
    pub name: String,
    pub kind: ServiceKind,
    pub callees: Vec<Callee>,
    pub locks: Arc<Stripes>,
}

impl LocalService {
    pub fn from_topology(t: &ServiceTopology, name: &str) -> Option<LocalService> {
        let spec = t.service(name)?;
        let callees = t
            .callees(name)
            .into_iter()
            .filter_map(|e| {
                let s = t.service(&e.callee)?;
                Some(Callee {
                    name: s.name.clone(),
                    kind: ServiceKind::of(&s.name, s.role),
                    mode: e.mode,
                })
            })
            .collect();
        Some(LocalService {
            name: spec.name.clone(),
            kind: ServiceKind::of(&spec.name, spec.role),
            callees,
            locks: Arc::new(Stripes::new(1024)),
        })
    }

    pub fn callee(&self, pred: impl Fn(ServiceKind) -> bool) -> Option<&Callee> {
        self.callees.iter().find(|c| pred(c.kind))
    }
}

pub struct Call {
    pub callee: String,
    pub method: &'static str,
    pub fields: Vec<Field>,
}

pub trait Env {
    fn local(&self) -> &LocalService;

    fn call(&mut self, callee: &str, method: &str, fields: Vec<Field>) -> Reply;

    /// Issues `calls` concurrently when `parallel`, otherwise one after another.
    /// Results come back in call order.
    fn call_many(&mut self, calls: Vec<Call>, parallel: bool) -> Vec<Reply>;

    fn compute(&mut self, payload: &[u8]) -> u64;

    /// Compute over `len` virtual bytes without materializing them.
    fn compute_len(&mut self, len: usize, seed: u64) -> u64;

    fn cache(&self) -> Option<&Mutex<ByteLru>> {
        None
    }

    fn store(&self) -> Option<&LogStore> {
        None
    }

    fn ids(&self) -> Option<&UniqueIds> {
        None
    }

    fn blobs(&self) -> Option<&Path> {
        None
    }
}

fn unknown(method: &str) -> Fault {
    proto::fault(codes::UNKNOWN_METHOD, method)
}

fn unconfigured(what: &str) -> Fault {
    proto::fault(codes::UNCONFIGURED, what)
}

fn callee_name(env: &dyn Env, pred: impl Fn(ServiceKind) -> bool, what: &str) -> Result<String, Fault> {
    env.local()
        .callee(pred)
        .map(|c| c.name.clone())
        .ok_or_else(|| unconfigured(what))
}

/// Entry point for every request a logical service receives.
pub fn dispatch(env: &mut dyn Env, method: &str, fields: &[Field]) -> Reply {
    match env.local().kind {
        ServiceKind::Frontend => frontend(env, method, fields),
        ServiceKind::ComposePage => match method {
            methods::COMPOSE_PAGE => compose_page(env, fields),
            _ => Err(unknown(method)),
        },
        ServiceKind::Section(s) => section_service(env, s, method, fields),
        ServiceKind::ComposeReview => match method {
            methods::COMPOSE_REVIEW => compose_review(env, fields),
            _ => Err(unknown(method)),
        },
        ServiceKind::UniqueId => match method {
            methods::UNIQUE_ID => {
                let ids = env.ids().ok_or_else(|| unconfigured("id source"))?;
                Ok(vec![Field::u64(0, ids.next())])
            }
            _ => Err(unknown(method)),
        },
        ServiceKind::User => match method {
            methods::USER_AUTH => user_auth(env, fields),
            methods::USER_REVIEW => user_review(env, fields),
            _ => Err(unknown(method)),
        },
        ServiceKind::Cache => cache_service(env, method, fields),
        ServiceKind::Store => store_service(env, method, fields),
        ServiceKind::Blob => match method {
            methods::RENT_CHUNK => rent_chunk(env, fields),
            _ => Err(unknown(method)),
        },
        ServiceKind::Relay => relay(env, fields),
    }
}

fn payload_of(fields: &[Field]) -> Vec<u8> {
    let mut v = Vec::with_capacity(fields.iter().map(|f| f.value.len()).sum());
    for f in fields {
        v.extend_from_slice(&f.value);
    }
    v
}

fn frontend(env: &mut dyn Env, method: &str, fields: &[Field]) -> Reply {
    match method {
        methods::COMPOSE_PAGE => {
            let callee = callee_name(env, |k| k == ServiceKind::ComposePage, "compose_page")?;
            let page = env.call(&callee, method, fields.to_vec())?;
            env.compute(&payload_of(&page));
            Ok(page)
        }
        methods::COMPOSE_REVIEW => {
            let callee = callee_name(env, |k| k == ServiceKind::ComposeReview, "compose_review")?;
            env.compute(&payload_of(fields));
            env.call(&callee, method, fields.to_vec())
        }
        methods::USER_AUTH => {
            let callee = callee_name(env, |k| k == ServiceKind::User, "user")?;
            env.compute(&payload_of(fields));
            env.call(&callee, method, fields.to_vec())
        }
        methods::RENT_CHUNK => {
            let callee = callee_name(env, |k| k == ServiceKind::Blob, "blob")?;
            env.call(&callee, method, fields.to_vec())
        }
        _ => Err(unknown(method)),
    }
}

fn compose_page(env: &mut dyn Env, fields: &[Field]) -> Reply {
    let movie_id = proto::req_u64(fields, 0, "movie_id")?;
    let mut slots: Vec<Option<usize>> = vec![None; 8];
    let mut calls = Vec::new();
    let mut parallel = true;
    for c in &env.local().callees {
        if let ServiceKind::Section(s) = c.kind {
            if slots[s.index()].is_none() {
                slots[s.index()] = Some(calls.len());
                parallel &= c.mode == EdgeMode::Parallel;
                calls.push(Call {
                    callee: c.name.clone(),
                    method: s.method(),
                    fields: vec![Field::u64(0, movie_id)],
                });
            }
        }
    }
    let results = env.call_many(calls, parallel);
    let mut out = Vec::with_capacity(8);
    for s in Section::ALL {
        let value = match slots[s.index()] {
            None => proto::section_err(codes::UNCONFIGURED),
            Some(i) => match &results[i] {
                Ok(f) => proto::section_ok(proto::get_field(f, 0).unwrap_or_default()),
                Err(fault) => {
                    if s == Section::Plot && fault.code == codes::NOT_FOUND {
                        return Err(proto::fault(codes::NOT_FOUND, format!("movie {movie_id}")));
                    }
                    if fault.code == codes::NOT_FOUND {
                        proto::section_err(codes::NOT_FOUND)
                    } else {
                        proto::section_err(codes::SECTION_UNAVAILABLE)
                    }
                }
            },
        };
        out.push(Field::new(s.index() as u8, value));
    }
    env.compute(&payload_of(&out));
    Ok(out)
}

fn cache_get(env: &mut dyn Env, key: &[u8]) -> Result<Option<Vec<u8>>, Fault> {
    let Some(cache) = env.local().callee(|k| k == ServiceKind::Cache).map(|c| c.name.clone()) else {
        return Ok(None);
    };
    let f = env.call(&cache, methods::CACHE_GET, vec![Field::new(0, key.to_vec())])?;
    Ok(proto::get_field(&f, 0).map(<[u8]>::to_vec))
}

fn cache_put(env: &mut dyn Env, key: &[u8], value: &[u8]) -> Result<(), Fault> {
    let Some(cache) = env.local().callee(|k| k == ServiceKind::Cache).map(|c| c.name.clone()) else {
        return Ok(());
    };
    match env.call(
        &cache,
        methods::CACHE_PUT,
        vec![Field::new(0, key.to_vec()), Field::new(1, value.to_vec())],
    ) {
        Err(f) if f.code == codes::OVERSIZE_VALUE => Ok(()),
        other => other.map(|_| ()),
    }
}

fn store_name(env: &dyn Env) -> Result<String, Fault> {
    callee_name(env, |k| k == ServiceKind::Store, "store")
}

fn store_get(env: &mut dyn Env, key: &[u8]) -> Result<Option<Vec<u8>>, Fault> {
    let store = store_name(env)?;
    let f = env.call(&store, methods::STORE_GET, vec![Field::new(0, key.to_vec())])?;
    Ok(proto::get_field(&f, 0).map(<[u8]>::to_vec))
}

fn store_put(env: &mut dyn Env, key: &[u8], value: &[u8]) -> Result<(), Fault> {
    let store = store_name(env)?;
    env.call(
        &store,
        methods::STORE_PUT,
        vec![Field::new(0, key.to_vec()), Field::new(1, value.to_vec())],
    )
    .map(|_| ())
}

/// Cache first; on a miss read the store and populate the cache.
fn read_through(env: &mut dyn Env, key: &[u8]) -> Result<Option<Vec<u8>>, Fault> {
    if let Some(v) = cache_get(env, key)? {
        return Ok(Some(v));
    }
    let Some(v) = store_get(env, key)? else {
        return Ok(None);
    };
    cache_put(env, key, &v)?;
    Ok(Some(v))
}

fn write_through(env: &mut dyn Env, key: &[u8], value: &[u8]) -> Result<(), Fault> {
    store_put(env, key, value)?;
    cache_put(env, key, value)
}

fn not_found(what: impl Into<String>) -> Fault {
    proto::fault(codes::NOT_FOUND, what)
}

/// Bytes of synthetic work the recommender does per request.
pub const RECOMMEND_WORK_BYTES: usize = 4096;

fn section_service(env: &mut dyn Env, s: Section, method: &str, fields: &[Field]) -> Reply {
    match (s, method) {
        (Section::Rating, methods::UPDATE_MOVIE) => update_movie(env, fields),
        (Section::Reviews, methods::MOVIE_REVIEW) => movie_review(env, fields),
        (_, m) if m == s.method() => {
            let movie_id = proto::req_u64(fields, 0, "movie_id")?;
            let key = s.key(movie_id);
            let value = if matches!(s, Section::Rating | Section::Reviews) {
                // Hits need no lock; a miss refills under it so a concurrent
                // review cannot be overwritten by a stale store read.
                match cache_get(env, &key)? {
                    Some(v) => Some(v),
                    None => with_lock(env, movie_id, |env| read_through(env, &key))?,
                }
            } else {
                read_through(env, &key)?
            };
            let value = value.ok_or_else(|| not_found(format!("{} {movie_id}", s.method())))?;
            if s == Section::Recommend {
                env.compute_len(RECOMMEND_WORK_BYTES, movie_id);
            } else {
                env.compute(&value);
            }
            Ok(vec![Field::new(0, value)])
        }
        _ => Err(unknown(method)),
    }
}

fn with_lock<T>(env: &mut dyn Env, key: u64, f: impl FnOnce(&mut dyn Env) -> T) -> T {
    let locks = env.local().locks.clone();
    let _g = locks.lock(key);
    f(env)
}

fn update_movie(env: &mut dyn Env, fields: &[Field]) -> Reply {
    let movie_id = proto::req_u64(fields, 0, "movie_id")?;
    let stars = proto::req_u64(fields, 1, "stars")?;
    with_lock(env, movie_id, |env| {
        let key = Section::Rating.key(movie_id);
        let raw = read_through(env, &key)?.ok_or_else(|| not_found(format!("movie {movie_id}")))?;
        let mut r = proto::RatingValue::decode(&raw).ok_or_else(|| proto::bad_request("rating record"))?;
        r.sum += stars;
        r.count += 1;
        let enc = r.encode();
        write_through(env, &key, &enc)?;
        env.compute(&enc);
        Ok(vec![Field::u64(0, r.sum), Field::u64(1, r.count)])
    })
}

fn movie_review(env: &mut dyn Env, fields: &[Field]) -> Reply {
    let movie_id = proto::req_u64(fields, 0, "movie_id")?;
    let entry = proto::req_bytes(fields, 1, "review")?.to_vec();
    let stars = proto::req_u64(fields, 2, "stars")?;
    let rating = callee_name(env, |k| k == ServiceKind::Section(Section::Rating), "rating")?;
    with_lock(env, movie_id, |env| {
        let key = Section::Reviews.key(movie_id);
        let mut list =
            read_through(env, &key)?.ok_or_else(|| not_found(format!("movie {movie_id}")))?;
        list.extend_from_slice(&entry);
        write_through(env, &key, &list)?;
        env.compute(&entry);
        env.call(
            &rating,
            methods::UPDATE_MOVIE,
            vec![Field::u64(0, movie_id), Field::u64(1, stars)],
        )
    })
}

fn compose_review(env: &mut dyn Env, fields: &[Field]) -> Reply {
    let movie_id = proto::req_u64(fields, 0, "movie_id")?;
    let user_id = proto::req_u64(fields, 1, "user_id")?;
    let stars = proto::req_u64(fields, 2, "stars")?;
    let text = proto::req_bytes(fields, 3, "text")?.to_vec();
    if !(1..=5).contains(&stars) {
        return Err(proto::fault(codes::INVALID_STARS, format!("stars {stars}")));
    }
    let ids = callee_name(env, |k| k == ServiceKind::UniqueId, "unique_id")?;
    let reviews = callee_name(env, |k| k == ServiceKind::Section(Section::Reviews), "reviews")?;
    let store = store_name(env)?;
    let user = callee_name(env, |k| k == ServiceKind::User, "user")?;

    env.compute(&text);
    let id_reply = env.call(&ids, methods::UNIQUE_ID, vec![])?;
    let review_id = proto::req_u64(&id_reply, 0, "review_id")?;
    let review = proto::Review {
        review_id,
        movie_id,
        user_id,
        text,
        stars: stars as u8,
        created_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0),
    };
    let rating = env.call(
        &reviews,
        methods::MOVIE_REVIEW,
        vec![
            Field::u64(0, movie_id),
            Field::new(1, review.entry().encode()),
            Field::u64(2, stars),
        ],
    )?;
    env.call(
        &store,
        methods::REVIEW_STORAGE,
        vec![Field::u64(0, review_id), Field::new(1, review.encode())],
    )
    .map_err(|f| proto::fault(codes::STORE_UNAVAILABLE, f.message))?;
    env.call(
        &user,
        methods::USER_REVIEW,
        vec![Field::u64(0, user_id), Field::u64(1, review_id)],
    )?;
    let mut out = vec![Field::u64(0, review_id)];
    out.extend(rating.into_iter().map(|f| Field::new(f.tag + 1, f.value)));
    Ok(out)
}

fn user_auth(env: &mut dyn Env, fields: &[Field]) -> Reply {
    let user_id = proto::req_u64(fields, 0, "user_id")?;
    let movie_id = proto::req_u64(fields, 1, "movie_id")?;
    let price = proto::req_u64(fields, 2, "price")?;
    with_lock(env, user_id, |env| {
        let ukey = proto::user_key(user_id);
        let raw = read_through(env, &ukey)?.ok_or_else(|| not_found(format!("user {user_id}")))?;
        let balance = proto::read_u64(&raw).ok_or_else(|| proto::bad_request("user record"))?;
        let meta_raw = read_through(env, &Section::Videos.key(movie_id))?
            .ok_or_else(|| not_found(format!("movie {movie_id}")))?;
        let meta = proto::VideoMeta::decode(&meta_raw).ok_or_else(|| proto::bad_request("video record"))?;
        if balance < price {
            return Err(proto::fault(
                codes::INSUFFICIENT_FUNDS,
                format!("balance {balance} < price {price}"),
            ));
        }
        let left = balance - price;
        write_through(env, &ukey, &left.to_be_bytes())?;
        env.compute(&meta_raw);
        Ok(proto::StreamManifest::new(movie_id, meta, left).to_fields())
    })
}

fn user_review(env: &mut dyn Env, fields: &[Field]) -> Reply {
    let user_id = proto::req_u64(fields, 0, "user_id")?;
    let review_id = proto::req_u64(fields, 1, "review_id")?;
    with_lock(env, user_id, |env| {
        if read_through(env, &proto::user_key(user_id))?.is_none() {
            return Err(not_found(format!("user {user_id}")));
        }
        let key = proto::user_reviews_key(user_id);
        let mut list = read_through(env, &key)?.unwrap_or_default();
        list.extend_from_slice(&review_id.to_be_bytes());
        write_through(env, &key, &list)?;
        env.compute(&review_id.to_be_bytes());
        Ok(vec![])
    })
}

fn cache_service(env: &mut dyn Env, method: &str, fields: &[Field]) -> Reply {
    let key = proto::req_bytes(fields, 0, "key")?;
    match method {
        methods::CACHE_GET => {
            let hit = {
                let cache = env.cache().ok_or_else(|| unconfigured("cache"))?;
                cache.lock().get(key).map(<[u8]>::to_vec)
            };
            match hit {
                Some(v) => {
                    env.compute(&v);
                    Ok(vec![Field::new(0, v)])
                }
                None => Ok(vec![]),
            }
        }
        methods::CACHE_PUT => {
            let value = proto::req_bytes(fields, 1, "value")?;
            env.compute(value);
            let cache = env.cache().ok_or_else(|| unconfigured("cache"))?;
            let put = cache.lock().put(key.to_vec(), value.to_vec());
            match put {
                Ok(()) => Ok(vec![]),
                Err(e @ CacheError::OversizeValue { .. }) => {
                    Err(proto::fault(codes::OVERSIZE_VALUE, e.to_string()))
                }
            }
        }
        _ => Err(unknown(method)),
    }
}

fn store_service(env: &mut dyn Env, method: &str, fields: &[Field]) -> Reply {
    let io = |e: super::store::StoreError| proto::fault(codes::IO, e.to_string());
    match method {
        methods::STORE_GET => {
            let key = proto::req_bytes(fields, 0, "key")?;
            let store = env.store().ok_or_else(|| unconfigured("store"))?;
            match store.get(key).map_err(io)? {
                Some(v) => {
                    env.compute(&v);
                    Ok(vec![Field::new(0, v)])
                }
                None => Ok(vec![]),
            }
        }
        methods::STORE_PUT => {
            let key = proto::req_bytes(fields, 0, "key")?;
            let value = proto::req_bytes(fields, 1, "value")?;
            env.compute(value);
            let store = env.store().ok_or_else(|| unconfigured("store"))?;
            store.put(key, value).map_err(io)?;
            Ok(vec![])
        }
        methods::REVIEW_STORAGE => {
            let review_id = proto::req_u64(fields, 0, "review_id")?;
            let record = proto::req_bytes(fields, 1, "review")?;
            env.compute(record);
            let store = env.store().ok_or_else(|| unconfigured("store"))?;
            store.put(&proto::review_key(review_id), record).map_err(io)?;
            Ok(vec![])
        }
        _ => Err(unknown(method)),
    }
}

fn rent_chunk(env: &mut dyn Env, fields: &[Field]) -> Reply {
    use std::os::unix::fs::FileExt;
    let blob_id = proto::req_u64(fields, 0, "blob_id")?;
    let index = proto::req_u64(fields, 1, "chunk")?;
    let chunk_size = proto::req_u64(fields, 2, "chunk_size")?;
    if chunk_size == 0 || chunk_size > 64 << 20 {
        return Err(proto::bad_request("chunk_size"));
    }
    let dir = env.blobs().ok_or_else(|| unconfigured("blob directory"))?;
    let path = dir.join(blob_id.to_string());
    let file = std::fs::File::open(&path).map_err(|_| not_found(format!("blob {blob_id}")))?;
    let total = file
        .metadata()
        .map_err(|e| proto::fault(codes::IO, e.to_string()))?
        .len();
    let start = index.saturating_mul(chunk_size);
    if start >= total {
        return Err(proto::bad_request("chunk index past end"));
    }
    let len = (total - start).min(chunk_size) as usize;
    let mut buf = vec![0u8; len];
    file.read_exact_at(&mut buf, start)
        .map_err(|e| proto::fault(codes::IO, e.to_string()))?;
    env.compute(&buf);
    Ok(vec![Field::new(0, buf)])
}

fn relay(env: &mut dyn Env, fields: &[Field]) -> Reply {
    let payload = payload_of(fields);
    let digest = env.compute(&payload);
    let callees = env.local().callees.clone();
    let (par, ser): (Vec<&Callee>, Vec<&Callee>) =
        callees.iter().partition(|c| c.mode == EdgeMode::Parallel);
    let mk = |c: &Callee| Call {
        callee: c.name.clone(),
        method: methods::RELAY,
        fields: vec![Field::u64(0, digest)],
    };
    let mut results = env.call_many(par.into_iter().map(mk).collect(), true);
    results.extend(env.call_many(ser.into_iter().map(mk).collect(), false));
    for r in results {
        r?;
    }
    Ok(vec![Field::u64(0, digest)])
}
