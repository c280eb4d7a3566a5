//! Randomized request streams replayed against two deployments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use moviebench::services::client::{browse_fields, review_fields};
use moviebench::services::proto::methods;
use moviebench::services::{ClientError, MovieClient};
use moviebench::wire::Field;

#[derive(Debug, Clone)]
pub enum Req {
    Browse(u64),
    Review { movie: u64, user: u64, stars: u64 },
    Rent { user: u64, movie: u64, price: u64 },
}

/// Mostly valid requests, with some unknown movies, bad stars and
/// unaffordable rents mixed in.
pub fn random_requests(seed: u64, n: usize, movies: u64, users: u64) -> Vec<Req> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| match rng.gen_range(0..10) {
            0..=5 => Req::Browse(rng.gen_range(0..movies + 5)),
            6..=8 => Req::Review {
                movie: rng.gen_range(0..movies + 2),
                user: rng.gen_range(1..users + 5),
                stars: rng.gen_range(0..7),
            },
            _ => Req::Rent {
                user: rng.gen_range(1..users + 5),
                movie: rng.gen_range(0..movies + 2),
                price: if rng.gen_bool(0.2) { 5_000_000_000 } else { rng.gen_range(1..1000) },
            },
        })
        .collect()
}

fn crc(b: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(b);
    h.finalize()
}

/// Response body (or error code) rendered for comparison. Rent chunks are
/// reduced to length and CRC.
pub fn outcome(c: &MovieClient, r: &Req) -> String {
    let show = |res: Result<Vec<Field>, ClientError>| match res {
        Ok(f) => format!("ok {f:?}"),
        Err(e) => format!("err {:?}", e.code()),
    };
    match *r {
        Req::Browse(m) => show(c.request(methods::COMPOSE_PAGE, browse_fields(m))),
        Req::Review { movie, user, stars } => {
            show(c.request(methods::COMPOSE_REVIEW, review_fields(movie, user, stars, b"same text")))
        }
        Req::Rent { user, movie, price } => match c.user_auth(user, movie, price) {
            Ok(m) => {
                let mut out = format!("auth {m:?}");
                for i in 0..m.chunk_count {
                    match c.fetch_chunk(&m, i) {
                        Ok(bytes) => out.push_str(&format!(" {}:{:x}", bytes.len(), crc(&bytes))),
                        Err(e) => out.push_str(&format!(" err {:?}", e.code())),
                    }
                }
                out
            }
            Err(e) => format!("err {:?}", e.code()),
        },
    }
}

/// Index of the first differing outcome, if any.
pub fn first_difference(a: &[String], b: &[String]) -> Option<usize> {
    if a.len() != b.len() {
        return Some(a.len().min(b.len()));
    }
    a.iter().zip(b).position(|(x, y)| x != y)
}
