//! Exponential link delays and their Erlang / hypoexponential sums.
//!
//! A round trip over one link is a constant plus an exponential delay; `k`
//! independent delays at one rate sum to `Erlang(k, rate)`. Sums over links
//! with different rates stay as term lists ([`DelaySum`]) so moments are
//! exact and sampling draws every exponential individually.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DelayError {
    #[error("delay rate must be finite and positive, got {0}")]
    BadRate(f64),
    #[error("Erlang shape must be at least 1")]
    ZeroShape,
    #[error("constant delay offset must be finite and non-negative, got {0}")]
    BadConstant(f64),
}

fn check_rate(rate: f64) -> Result<f64, DelayError> {
    if rate.is_finite() && rate > 0.0 {
        Ok(rate)
    } else {
        Err(DelayError::BadRate(rate))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentialDelay {
    rate: f64,
}

impl ExponentialDelay {
    pub fn new(rate: f64) -> Result<Self, DelayError> {
        Ok(ExponentialDelay {
            rate: check_rate(rate)?,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        1.0 / self.rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErlangDelay {
    shape: u64,
    rate: f64,
}

impl ErlangDelay {
    pub fn new(shape: u64, rate: f64) -> Result<Self, DelayError> {
        if shape == 0 {
            return Err(DelayError::ZeroShape);
        }
        Ok(ErlangDelay {
            shape,
            rate: check_rate(rate)?,
        })
    }

    pub fn shape(&self) -> u64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        self.shape as f64 / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape as f64 / (self.rate * self.rate)
    }

    /// Sum of `shape` independent exponential draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let exp = Exp::new(self.rate).expect("rate validated at construction");
        (0..self.shape).map(|_| exp.sample(rng)).sum()
    }
}

impl From<ExponentialDelay> for ErlangDelay {
    fn from(e: ExponentialDelay) -> Self {
        ErlangDelay {
            shape: 1,
            rate: e.rate,
        }
    }
}

/// The sum of `n` i.i.d. `Exponential(rate)` delays.
pub fn exp_to_erlang_sum(n: u64, rate: f64) -> Result<ErlangDelay, DelayError> {
    ErlangDelay::new(n, rate)
}

/// A constant offset plus independent Erlang terms.
///
/// Terms are kept sorted by rate with equal rates merged, so two sums that
/// are equal in distribution have identical representations.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DelaySum {
    constant: f64,
    terms: Vec<ErlangDelay>,
}

impl DelaySum {
    pub fn zero() -> Self {
        DelaySum::default()
    }

    pub fn constant(constant: f64) -> Result<Self, DelayError> {
        if !(constant.is_finite() && constant >= 0.0) {
            return Err(DelayError::BadConstant(constant));
        }
        Ok(DelaySum {
            constant,
            terms: Vec::new(),
        })
    }

    pub fn offset(&self) -> f64 {
        self.constant
    }

    pub fn terms(&self) -> &[ErlangDelay] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.is_empty()
    }

    pub fn push_term(&mut self, term: ErlangDelay) {
        match self
            .terms
            .binary_search_by(|t| t.rate.total_cmp(&term.rate))
        {
            Ok(pos) => self.terms[pos].shape += term.shape,
            Err(pos) => self.terms.insert(pos, term),
        }
    }

    pub fn add_constant(&mut self, c: f64) -> Result<(), DelayError> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(DelayError::BadConstant(c));
        }
        self.constant += c;
        Ok(())
    }

    pub fn combine(&self, other: &DelaySum) -> DelaySum {
        let mut out = self.clone();
        out.constant += other.constant;
        for &t in &other.terms {
            out.push_term(t);
        }
        out
    }

    /// Collapses to a single Erlang term when there is exactly one rate.
    pub fn as_single_erlang(&self) -> Option<ErlangDelay> {
        match self.terms.as_slice() {
            [only] => Some(*only),
            _ => None,
        }
    }

    pub fn mean(&self) -> f64 {
        self.constant + self.terms.iter().map(ErlangDelay::mean).sum::<f64>()
    }

    pub fn variance(&self) -> f64 {
        self.terms.iter().map(ErlangDelay::variance).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.constant + self.terms.iter().map(|t| t.sample(rng)).sum::<f64>()
    }
}

impl From<ErlangDelay> for DelaySum {
    fn from(term: ErlangDelay) -> Self {
        DelaySum {
            constant: 0.0,
            terms: vec![term],
        }
    }
}

impl std::ops::Add for &DelaySum {
    type Output = DelaySum;

    fn add(self, rhs: &DelaySum) -> DelaySum {
        self.combine(rhs)
    }
}

pub fn combine_delay_sums(a: &DelaySum, b: &DelaySum) -> DelaySum {
    a.combine(b)
}

pub fn delay_mean(d: &DelaySum) -> f64 {
    d.mean()
}

pub fn delay_variance(d: &DelaySum) -> f64 {
    d.variance()
}

/// Seeded source of independent generator streams.
///
/// Stream `i` of seed `s` is always the same sequence, so every sample is a
/// pure function of `(seed, stream index, draw index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// One draw of `d` from stream `stream` of `seeds`.
pub fn sample_delay(d: &DelaySum, seeds: &SeedStream, stream: u64) -> f64 {
    d.sample(&mut seeds.rng(stream))
}
