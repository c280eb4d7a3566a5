//! Request mix and pre-computed open-loop send schedules.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RequestKind {
    Browse,
    Review,
    Rent,
}

impl RequestKind {
    pub const ALL: [RequestKind; 3] = [RequestKind::Browse, RequestKind::Review, RequestKind::Rent];

    pub fn name(self) -> &'static str {
        match self {
            RequestKind::Browse => "browse",
            RequestKind::Review => "review",
            RequestKind::Rent => "rent",
        }
    }
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MixError {
    #[error("weights must be non-negative and finite")]
    Negative,
    #[error("weights sum to {0}, not 1")]
    BadSum(f64),
    #[error("malformed mix entry {0:?}")]
    Syntax(String),
}

/// Weights of browse, review and rent requests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RequestMix {
    weights: [f64; 3],
}

impl RequestMix {
    pub fn new(browse: f64, review: f64, rent: f64) -> Result<Self, MixError> {
        let w = [browse, review, rent];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(MixError::Negative);
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MixError::BadSum(sum));
        }
        Ok(RequestMix { weights: w })
    }

    pub fn only(kind: RequestKind) -> Self {
        let mut weights = [0.0; 3];
        weights[kind as usize] = 1.0;
        RequestMix { weights }
    }

    pub fn weight(&self, kind: RequestKind) -> f64 {
        self.weights[kind as usize]
    }

    /// Draws one kind given a uniform variate in [0, 1).
    pub fn pick(&self, u: f64) -> RequestKind {
        let mut acc = 0.0;
        for k in RequestKind::ALL {
            acc += self.weights[k as usize];
            if u < acc {
                return k;
            }
        }
        *RequestKind::ALL
            .iter()
            .rev()
            .find(|k| self.weights[**k as usize] > 0.0)
            .unwrap_or(&RequestKind::Browse)
    }
}

impl Default for RequestMix {
    fn default() -> Self {
        RequestMix {
            weights: [0.8, 0.15, 0.05],
        }
    }
}

impl FromStr for RequestMix {
    type Err = MixError;

    /// `browse=0.8,review=0.15,rent=0.05`; missing kinds weigh 0.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut w = [0.0; 3];
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| MixError::Syntax(part.into()))?;
            let kind = RequestKind::ALL
                .into_iter()
                .find(|x| x.name() == k.trim())
                .ok_or_else(|| MixError::Syntax(part.into()))?;
            w[kind as usize] = v.trim().parse().map_err(|_| MixError::Syntax(part.into()))?;
        }
        RequestMix::new(w[0], w[1], w[2])
    }
}

impl fmt::Display for RequestMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "browse={},review={},rent={}",
            self.weights[0], self.weights[1], self.weights[2]
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arrival {
    Poisson,
    Uniform,
}

impl FromStr for Arrival {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "poisson" => Ok(Arrival::Poisson),
            "uniform" => Ok(Arrival::Uniform),
            _ => Err(format!("unknown arrival process {s:?}")),
        }
    }
}

impl fmt::Display for Arrival {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arrival::Poisson => "poisson",
            Arrival::Uniform => "uniform",
        })
    }
}

/// Send offsets in ns from the run start. Depends only on the arguments.
pub fn schedule(rate: f64, duration: Duration, seed: u64, arrival: Arrival) -> Vec<u64> {
    let horizon = duration.as_nanos() as u64;
    if !(rate > 0.0) || horizon == 0 {
        return Vec::new();
    }
    match arrival {
        Arrival::Uniform => {
            let n = (rate * duration.as_secs_f64() + 1e-9).floor() as u64;
            (0..n).map(|i| (i as f64 * 1e9 / rate) as u64).collect()
        }
        Arrival::Poisson => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let exp = Exp::new(rate).expect("rate > 0");
            let mut t = 0.0f64;
            let mut out = Vec::with_capacity((rate * duration.as_secs_f64() * 1.1) as usize + 16);
            loop {
                t += exp.sample(&mut rng);
                let ns = (t * 1e9) as u64;
                if ns >= horizon {
                    return out;
                }
                out.push(ns);
            }
        }
    }
}

/// What one scheduled slot will send.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedRequest {
    pub kind: RequestKind,
    pub movie_id: u64,
    pub user_id: u64,
    pub stars: u64,
    pub text_len: usize,
}

/// Draws request kinds and parameters for `n` slots, independent of timing.
pub fn plan_requests(n: usize, mix: &RequestMix, movies: u64, users: u64, seed: u64) -> Vec<PlannedRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7e9e57);
    (0..n)
        .map(|_| PlannedRequest {
            kind: mix.pick(rng.gen()),
            movie_id: rng.gen_range(1..=movies.max(1)),
            user_id: rng.gen_range(1..=users.max(1)),
            stars: rng.gen_range(1..=5),
            text_len: rng.gen_range(32..=512),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_count_is_exact() {
        assert_eq!(schedule(100.0, Duration::from_secs(10), 1, Arrival::Uniform).len(), 1000);
        assert!(schedule(0.0, Duration::from_secs(10), 1, Arrival::Poisson).is_empty());
    }

    #[test]
    fn poisson_is_reproducible() {
        let a = schedule(200.0, Duration::from_secs(30), 9, Arrival::Poisson);
        let b = schedule(200.0, Duration::from_secs(30), 9, Arrival::Poisson);
        assert_eq!(a, b);
        assert!((a.len() as f64 - 6000.0).abs() < 6000.0 * 0.05);
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert_ne!(a, schedule(200.0, Duration::from_secs(30), 10, Arrival::Poisson));
    }

    #[test]
    fn mix_parsing() {
        let m: RequestMix = "browse=0.8,review=0.15,rent=0.05".parse().unwrap();
        assert_eq!(m, RequestMix::default());
        assert!(matches!("browse=0.5".parse::<RequestMix>(), Err(MixError::BadSum(_))));
        assert!("browse=-1,rent=2".parse::<RequestMix>().is_err());
        assert_eq!(RequestMix::only(RequestKind::Rent).pick(0.99), RequestKind::Rent);
        assert_eq!(m.pick(0.0), RequestKind::Browse);
        assert_eq!(m.pick(0.9), RequestKind::Review);
        assert_eq!(m.pick(0.99), RequestKind::Rent);
    }
}
