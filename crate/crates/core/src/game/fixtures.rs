//! Closed-form games with known interaction structure, used by tests and the
//! self-check.

use rand::Rng;

use super::{Coalition, EvalError, SetFunction};
use crate::rng::{stream_rng, tag};

/// `f(S) = Σ_{k ∈ S} w_k`. Every interaction vanishes.
#[derive(Debug, Clone)]
pub struct AdditiveGame {
    weights: Vec<f64>,
}

impl AdditiveGame {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }
}

impl SetFunction for AdditiveGame {
    fn num_players(&self) -> usize {
        self.weights.len()
    }
    fn evaluate(&self, c: &Coalition) -> Result<f64, EvalError> {
        Ok(c.iter().map(|k| self.weights[k]).sum())
    }
}

/// `f(S) = 1` when `S` holds a strict majority of the players, else 0.
#[derive(Debug, Clone, Copy)]
pub struct MajorityGame {
    n: usize,
}

impl MajorityGame {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl SetFunction for MajorityGame {
    fn num_players(&self) -> usize {
        self.n
    }
    fn evaluate(&self, c: &Coalition) -> Result<f64, EvalError> {
        Ok(if 2 * c.cardinality() > self.n { 1.0 } else { 0.0 })
    }
}

/// `f(S) = |S|²`, for which `Δf ≡ 2`.
#[derive(Debug, Clone, Copy)]
pub struct CardinalitySquareGame {
    n: usize,
}

impl CardinalitySquareGame {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl SetFunction for CardinalitySquareGame {
    fn num_players(&self) -> usize {
        self.n
    }
    fn evaluate(&self, c: &Coalition) -> Result<f64, EvalError> {
        let k = c.cardinality() as f64;
        Ok(k * k)
    }
}

/// A game given by an explicit table over all `2^n` coalitions (`n <= 24`).
#[derive(Debug, Clone)]
pub struct TableGame {
    n: usize,
    values: Vec<f64>,
}

impl TableGame {
    pub fn new(n: usize, values: Vec<f64>) -> Self {
        assert!(n <= 24 && values.len() == 1 << n, "table must hold 2^n values");
        Self { n, values }
    }

    /// Seeded table with values uniform in `[-1, 1)`.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, &[tag::TABLE, n as u64]);
        let values = (0..1usize << n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self::new(n, values)
    }

    pub fn value(&self, mask: u64) -> f64 {
        self.values[mask as usize]
    }
}

impl SetFunction for TableGame {
    fn num_players(&self) -> usize {
        self.n
    }
    fn evaluate(&self, c: &Coalition) -> Result<f64, EvalError> {
        Ok(self.values[c.low_word() as usize])
    }
}
