use rand::seq::{index, SliceRandom};

use super::{Coalition, GameError};
use crate::numeric::binomial_capped;
use crate::rng::derive_seed;
use crate::rng::stream_rng;

/// How a set of contexts was drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Every size-`s` context was used exactly once.
    Exhaustive,
    /// A uniformly shuffled prefix of the full enumeration.
    WithoutReplacement,
    /// Independent uniform draws, one seeded stream per context.
    WithReplacement,
}

#[derive(Debug, Clone)]
pub struct ContextDraw {
    pub contexts: Vec<Coalition>,
    pub mode: SamplingMode,
    /// Number of distinct size-`s` contexts, `C(n - 2, s)`.
    pub population: f64,
}

pub(crate) fn others(n: usize, i: usize, j: usize) -> Vec<usize> {
    (0..n).filter(|&p| p != i && p != j).collect()
}

/// Calls `visit` with every `s`-subset of `players`, in lexicographic order of
/// positions.
pub(crate) fn for_each_combination(n: usize, players: &[usize], s: usize, mut visit: impl FnMut(Coalition)) {
    let m = players.len();
    if s > m {
        return;
    }
    let mut idx: Vec<usize> = (0..s).collect();
    loop {
        let c = Coalition::from_players(n, idx.iter().map(|&k| players[k])).expect("players in range");
        visit(c);
        // advance to the next combination
        let mut pos = s;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            if idx[pos] < m - s + pos {
                idx[pos] += 1;
                for q in pos + 1..s {
                    idx[q] = idx[q - 1] + 1;
                }
                break;
            }
        }
    }
}

pub(crate) fn check_pair(n: usize, i: usize, j: usize) -> Result<(), GameError> {
    if i >= n {
        return Err(GameError::PlayerOutOfRange { player: i, n });
    }
    if j >= n {
        return Err(GameError::PlayerOutOfRange { player: j, n });
    }
    if i == j {
        return Err(GameError::Precondition(format!("pair players must differ, got i = j = {i}")));
    }
    Ok(())
}

/// Draws contexts `S ⊆ N \ {i, j}` with `|S| = s`.
///
/// When `C(n - 2, s) <= 2 * budget` the contexts are enumerated, shuffled and
/// truncated to the budget (so at most `C(n - 2, s)` are returned). Otherwise
/// each context is an independent uniform draw from its own seeded stream.
pub fn sample_contexts(
    n: usize,
    i: usize,
    j: usize,
    s: usize,
    budget: usize,
    seed: u64,
) -> Result<ContextDraw, GameError> {
    check_pair(n, i, j)?;
    if s > n - 2 {
        return Err(GameError::Precondition(format!("order {s} exceeds n - 2 = {}", n - 2)));
    }
    if budget == 0 {
        return Err(GameError::Precondition("context budget must be at least 1".into()));
    }
    let pool = others(n, i, j);
    let population = crate::numeric::binomial_f64(pool.len() as u64, s as u64);
    let enumerable = binomial_capped(pool.len() as u64, s as u64, 2 * budget as u64);
    match enumerable {
        Some(total) => {
            let mut all = Vec::with_capacity(total as usize);
            for_each_combination(n, &pool, s, |c| all.push(c));
            let mode = if budget as u64 >= total {
                SamplingMode::Exhaustive
            } else {
                all.shuffle(&mut stream_rng(seed, &[]));
                all.truncate(budget);
                SamplingMode::WithoutReplacement
            };
            Ok(ContextDraw { contexts: all, mode, population })
        }
        None => {
            let contexts = (0..budget)
                .map(|k| {
                    let mut rng = stream_rng(derive_seed(seed, &[k as u64]), &[]);
                    let picks = index::sample(&mut rng, pool.len(), s);
                    Coalition::from_players(n, picks.iter().map(|p| pool[p])).expect("players in range")
                })
                .collect();
            Ok(ContextDraw { contexts, mode: SamplingMode::WithReplacement, population })
        }
    }
}
