use std::num::NonZeroUsize;
use std::sync::Mutex;

use lru::LruCache;
use rayon::prelude::*;
use thiserror::Error;

use super::Coalition;

/// Default bound on memoized evaluations per game.
pub const DEFAULT_CACHE_CAPACITY: usize = 1 << 22;

/// A failed reward evaluation, tagged with the coalition when known.
#[derive(Debug, Clone, Error)]
#[error("evaluation failed{}: {message}", coalition.as_ref().map(|c| format!(" at {c}")).unwrap_or_default())]
pub struct EvalError {
    /// Boxed because a coalition is large next to the message.
    pub coalition: Option<Box<Coalition>>,
    pub message: String,
}

impl EvalError {
    pub fn new(message: impl Into<String>) -> Self {
        Self { coalition: None, message: message.into() }
    }

    pub fn at(mut self, coalition: Coalition) -> Self {
        self.coalition.get_or_insert_with(|| Box::new(coalition));
        self
    }
}

/// A reward `f: 2^N -> R`. Must be deterministic.
pub trait SetFunction: Send + Sync {
    fn num_players(&self) -> usize;

    fn evaluate(&self, coalition: &Coalition) -> Result<f64, EvalError>;

    /// Evaluates several coalitions, preserving order. Implementations backed
    /// by a batched model should override this.
    fn evaluate_batch(&self, coalitions: &[Coalition]) -> Vec<Result<f64, EvalError>> {
        coalitions.iter().map(|c| self.evaluate(c)).collect()
    }

    /// Whether concurrent calls are allowed. Serial games are driven from a
    /// single thread.
    fn is_concurrent(&self) -> bool {
        true
    }
}

impl<T: SetFunction + ?Sized> SetFunction for &T {
    fn num_players(&self) -> usize {
        (**self).num_players()
    }
    fn evaluate(&self, coalition: &Coalition) -> Result<f64, EvalError> {
        (**self).evaluate(coalition)
    }
    fn evaluate_batch(&self, coalitions: &[Coalition]) -> Vec<Result<f64, EvalError>> {
        (**self).evaluate_batch(coalitions)
    }
    fn is_concurrent(&self) -> bool {
        (**self).is_concurrent()
    }
}

impl<T: SetFunction + ?Sized> SetFunction for Box<T> {
    fn num_players(&self) -> usize {
        (**self).num_players()
    }
    fn evaluate(&self, coalition: &Coalition) -> Result<f64, EvalError> {
        (**self).evaluate(coalition)
    }
    fn evaluate_batch(&self, coalitions: &[Coalition]) -> Vec<Result<f64, EvalError>> {
        (**self).evaluate_batch(coalitions)
    }
    fn is_concurrent(&self) -> bool {
        (**self).is_concurrent()
    }
}

/// Wraps a closure as a set function.
pub struct FnGame<F> {
    n: usize,
    f: F,
}

impl<F> FnGame<F>
where
    F: Fn(&Coalition) -> f64 + Send + Sync,
{
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F> SetFunction for FnGame<F>
where
    F: Fn(&Coalition) -> f64 + Send + Sync,
{
    fn num_players(&self) -> usize {
        self.n
    }
    fn evaluate(&self, coalition: &Coalition) -> Result<f64, EvalError> {
        Ok((self.f)(coalition))
    }
}

/// Bounded LRU memoization in front of another game. Only successful
/// evaluations are cached.
pub struct CachedGame<G> {
    inner: G,
    cache: Mutex<LruCache<Coalition, f64>>,
}

impl<G: SetFunction> CachedGame<G> {
    pub fn new(inner: G) -> Self {
        Self::with_capacity(inner, DEFAULT_CACHE_CAPACITY)
    }

    pub fn with_capacity(inner: G, capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).expect("nonzero");
        Self { inner, cache: Mutex::new(LruCache::new(cap)) }
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().expect("cache poisoned").len()
    }
}

impl<G: SetFunction> SetFunction for CachedGame<G> {
    fn num_players(&self) -> usize {
        self.inner.num_players()
    }

    fn evaluate(&self, coalition: &Coalition) -> Result<f64, EvalError> {
        if let Some(v) = self.cache.lock().expect("cache poisoned").get(coalition) {
            return Ok(*v);
        }
        let v = self.inner.evaluate(coalition)?;
        self.cache.lock().expect("cache poisoned").put(*coalition, v);
        Ok(v)
    }

    fn evaluate_batch(&self, coalitions: &[Coalition]) -> Vec<Result<f64, EvalError>> {
        let mut out: Vec<Option<Result<f64, EvalError>>> = vec![None; coalitions.len()];
        let mut misses: Vec<Coalition> = Vec::new();
        let mut miss_slots: Vec<Vec<usize>> = Vec::new();
        {
            let mut cache = self.cache.lock().expect("cache poisoned");
            let mut pending: std::collections::HashMap<Coalition, usize> = Default::default();
            for (slot, c) in coalitions.iter().enumerate() {
                if let Some(v) = cache.get(c) {
                    out[slot] = Some(Ok(*v));
                } else if let Some(&m) = pending.get(c) {
                    miss_slots[m].push(slot);
                } else {
                    pending.insert(*c, misses.len());
                    misses.push(*c);
                    miss_slots.push(vec![slot]);
                }
            }
        }
        if !misses.is_empty() {
            let results = self.inner.evaluate_batch(&misses);
            let mut cache = self.cache.lock().expect("cache poisoned");
            for ((c, r), slots) in misses.iter().zip(results).zip(miss_slots) {
                if let Ok(v) = r {
                    cache.put(*c, v);
                }
                for s in slots {
                    out[s] = Some(r.clone());
                }
            }
        }
        out.into_iter().map(|r| r.expect("every slot filled")).collect()
    }

    fn is_concurrent(&self) -> bool {
        self.inner.is_concurrent()
    }
}

const CHUNK: usize = 256;

/// Evaluates every coalition, in parallel chunks when the game allows it.
/// The output order always matches the input order.
pub fn evaluate_all<G: SetFunction + ?Sized>(game: &G, coalitions: &[Coalition]) -> Vec<Result<f64, EvalError>> {
    let run = |chunk: &[Coalition]| -> Vec<Result<f64, EvalError>> {
        game.evaluate_batch(chunk).into_iter().zip(chunk).map(|(r, c)| r.map_err(|e| e.at(*c))).collect()
    };
    if game.is_concurrent() && coalitions.len() > CHUNK {
        coalitions.par_chunks(CHUNK).flat_map_iter(run).collect()
    } else {
        coalitions.chunks(CHUNK).flat_map(run).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        calls: AtomicUsize,
    }

    impl SetFunction for Counting {
        fn num_players(&self) -> usize {
            8
        }
        fn evaluate(&self, c: &Coalition) -> Result<f64, EvalError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if c.contains(7) {
                Err(EvalError::new("player 7 is poison"))
            } else {
                Ok(c.cardinality() as f64)
            }
        }
    }

    #[test]
    fn cache_deduplicates_and_skips_failures() {
        let game = CachedGame::new(Counting { calls: AtomicUsize::new(0) });
        let a = Coalition::from_players(8, [0, 1]).unwrap();
        let bad = Coalition::from_players(8, [7]).unwrap();
        let out = game.evaluate_batch(&[a, a, bad, a]);
        assert_eq!(out[0].as_ref().unwrap(), &2.0);
        assert!(out[2].is_err());
        assert_eq!(game.inner().calls.load(Ordering::SeqCst), 2);
        assert_eq!(game.evaluate(&a).unwrap(), 2.0);
        assert_eq!(game.inner().calls.load(Ordering::SeqCst), 2);
        assert_eq!(game.cached_len(), 1);
    }

    #[test]
    fn lru_bound_holds() {
        let game = CachedGame::with_capacity(Counting { calls: AtomicUsize::new(0) }, 4);
        let all: Vec<Coalition> = (0..64).map(|m| Coalition::from_mask(8, m).unwrap()).collect();
        let _ = game.evaluate_batch(&all);
        assert_eq!(game.cached_len(), 4);
    }

    #[test]
    fn evaluate_all_tags_failures_with_coalition() {
        let game = Counting { calls: AtomicUsize::new(0) };
        let cs: Vec<Coalition> = (0..=255).map(|m| Coalition::from_mask(8, m).unwrap()).collect();
        let out = evaluate_all(&game, &cs);
        assert_eq!(out.len(), 256);
        let err = out[128].as_ref().unwrap_err();
        assert_eq!(err.coalition.as_deref(), Some(&cs[128]));
        assert_eq!(*out[3].as_ref().unwrap(), 2.0);
    }
}
