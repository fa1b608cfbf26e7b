use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::contexts::{check_pair, for_each_combination, others, sample_contexts};
use super::{evaluate_all, Coalition, GameError, SamplingMode, SetFunction};
use crate::numeric::{binomial_capped, binomial_f64, mean, sample_variance, CompensatedSum};
use crate::rng::{derive_seed, stream_rng, tag};

/// Caps on exhaustive enumeration. Exceeding one is an error, never a silent
/// fallback to sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExhaustiveLimits {
    /// Largest `n` for which `2^n` evaluations are attempted.
    pub max_players: usize,
    /// Largest `C(n - 2, s)` enumerated by [`multi_order_exact`].
    pub max_contexts: u64,
}

impl Default for ExhaustiveLimits {
    fn default() -> Self {
        Self { max_players: 20, max_contexts: 1_000_000 }
    }
}

/// `I^(s)(i, j)`, exact or sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiOrderEstimate {
    pub i: usize,
    pub j: usize,
    pub order: usize,
    pub value: f64,
    pub num_contexts: usize,
    /// Standard error of `value`; zero when every context was used.
    pub stderr: f64,
    pub mode: SamplingMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledShapley {
    pub value: f64,
    pub stderr: f64,
    pub num_permutations: usize,
}

fn check_game_size<G: SetFunction + ?Sized>(f: &G, c: &Coalition) -> Result<(), GameError> {
    if c.num_players() != f.num_players() {
        return Err(GameError::Precondition(format!(
            "coalition over {} players used with a {}-player game",
            c.num_players(),
            f.num_players()
        )));
    }
    Ok(())
}

fn check_exhaustive(n: usize, limits: &ExhaustiveLimits) -> Result<(), GameError> {
    if n > limits.max_players {
        return Err(GameError::BudgetExceeded {
            what: "2^n coalition enumeration",
            needed: format!("n = {n}"),
            limit: limits.max_players as u64,
        });
    }
    Ok(())
}

/// The four coalitions of `Δf(i, j, S)` in the order
/// `S ∪ {i, j}`, `S ∪ {j}`, `S ∪ {i}`, `S`.
pub(crate) fn delta_coalitions(i: usize, j: usize, s: &Coalition) -> [Coalition; 4] {
    [s.with(i).with(j), s.with(j), s.with(i), *s]
}

// Grouping the terms as (a + d) - (b + c) makes the result bitwise symmetric in (i, j).
pub(crate) fn combine(v: [f64; 4]) -> f64 {
    (v[0] + v[3]) - (v[1] + v[2])
}

fn deltas<G: SetFunction + ?Sized>(f: &G, i: usize, j: usize, contexts: &[Coalition]) -> Result<Vec<f64>, GameError> {
    let coalitions: Vec<Coalition> = contexts.iter().flat_map(|s| delta_coalitions(i, j, s)).collect();
    let values = evaluate_all(f, &coalitions);
    let mut out = Vec::with_capacity(contexts.len());
    let mut it = values.into_iter();
    for _ in contexts {
        let mut quad = [0.0; 4];
        for q in &mut quad {
            *q = it.next().expect("four values per context")?;
        }
        out.push(combine(quad));
    }
    Ok(out)
}

/// `Δf(i, j, S) = f(S ∪ {i, j}) − f(S ∪ {j}) − f(S ∪ {i}) + f(S)`.
pub fn delta_f<G: SetFunction + ?Sized>(f: &G, i: usize, j: usize, s: &Coalition) -> Result<f64, GameError> {
    check_game_size(f, s)?;
    check_pair(f.num_players(), i, j)?;
    if s.contains(i) || s.contains(j) {
        return Err(GameError::Precondition(format!("context {s} must exclude players {i} and {j}")));
    }
    Ok(deltas(f, i, j, std::slice::from_ref(s))?[0])
}

/// Shapley value of `groups[target]` in the game whose players are `groups`,
/// a coalition of groups being evaluated on the union of its members.
fn shapley_over_groups<G: SetFunction + ?Sized>(f: &G, groups: &[Coalition], target: usize) -> Result<f64, GameError> {
    const CHUNK: u64 = 1 << 14;
    let g = groups.len();
    let rest: Vec<&Coalition> = groups.iter().enumerate().filter(|(k, _)| *k != target).map(|(_, c)| c).collect();
    let empty = Coalition::empty(f.num_players())?;
    let mut by_size = vec![CompensatedSum::new(); g];
    let total: u64 = 1 << rest.len();
    let mut start = 0u64;
    while start < total {
        let end = (start + CHUNK).min(total);
        let mut coalitions = Vec::with_capacity(2 * (end - start) as usize);
        let mut sizes = Vec::with_capacity((end - start) as usize);
        for mask in start..end {
            let s = rest.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).fold(empty, |acc, (_, c)| acc.union(c));
            coalitions.push(s.union(&groups[target]));
            coalitions.push(s);
            sizes.push(mask.count_ones() as usize);
        }
        let values = evaluate_all(f, &coalitions);
        let mut it = values.into_iter();
        for size in sizes {
            let with = it.next().expect("paired")?;
            let without = it.next().expect("paired")?;
            by_size[size].add(with - without);
        }
        start = end;
    }
    // weight |S|!(g - |S| - 1)!/g! = 1 / (g * C(g - 1, |S|))
    let mut phi = CompensatedSum::new();
    for (k, sum) in by_size.iter().enumerate() {
        phi.add(sum.total() / (g as f64 * binomial_f64(g as u64 - 1, k as u64)));
    }
    Ok(phi.total())
}

fn singletons(n: usize, excluded: &[usize]) -> Result<Vec<Coalition>, GameError> {
    (0..n).filter(|p| !excluded.contains(p)).map(|p| Coalition::from_players(n, [p])).collect()
}

/// Exact Shapley value of player `i` by enumerating every context.
pub fn shapley_exact<G: SetFunction + ?Sized>(f: &G, i: usize, limits: &ExhaustiveLimits) -> Result<f64, GameError> {
    let n = f.num_players();
    if i >= n {
        return Err(GameError::PlayerOutOfRange { player: i, n });
    }
    check_exhaustive(n, limits)?;
    shapley_over_groups(f, &singletons(n, &[])?, i)
}

/// Permutation-sampling Shapley estimate with its standard error.
pub fn shapley_sampled<G: SetFunction + ?Sized>(
    f: &G,
    i: usize,
    num_permutations: usize,
    seed: u64,
) -> Result<SampledShapley, GameError> {
    let n = f.num_players();
    if i >= n {
        return Err(GameError::PlayerOutOfRange { player: i, n });
    }
    if num_permutations == 0 {
        return Err(GameError::Precondition("num_permutations must be at least 1".into()));
    }
    let mut coalitions = Vec::with_capacity(2 * num_permutations);
    let mut order: Vec<usize> = (0..n).collect();
    for p in 0..num_permutations {
        order.sort_unstable();
        order.shuffle(&mut stream_rng(seed, &[tag::PERMUTATION, i as u64, p as u64]));
        let before = order.iter().take_while(|&&q| q != i).copied();
        let s = Coalition::from_players(n, before)?;
        coalitions.push(s.with(i));
        coalitions.push(s);
    }
    let values = evaluate_all(f, &coalitions);
    let mut marginals = Vec::with_capacity(num_permutations);
    let mut it = values.into_iter();
    while let Some(with) = it.next() {
        let without = it.next().expect("paired")?;
        marginals.push(with? - without);
    }
    let value = mean(&marginals).expect("nonempty");
    let stderr = match sample_variance(&marginals) {
        Some(v) => (v / num_permutations as f64).sqrt(),
        None => f64::INFINITY,
    };
    Ok(SampledShapley { value, stderr, num_permutations })
}

/// Interaction of a pair treated as one merged player, minus the two
/// Shapley values each player earns while the other is absent.
pub fn pairwise_interaction_exact<G: SetFunction + ?Sized>(
    f: &G,
    i: usize,
    j: usize,
    limits: &ExhaustiveLimits,
) -> Result<f64, GameError> {
    let n = f.num_players();
    check_pair(n, i, j)?;
    check_exhaustive(n, limits)?;
    let mut merged = vec![Coalition::from_players(n, [i, j])?];
    merged.extend(singletons(n, &[i, j])?);
    let joint = shapley_over_groups(f, &merged, 0)?;

    let without_j = singletons(n, &[j])?;
    let pos_i = without_j.iter().position(|c| c.contains(i)).expect("i present");
    let phi_i = shapley_over_groups(f, &without_j, pos_i)?;

    let without_i = singletons(n, &[i])?;
    let pos_j = without_i.iter().position(|c| c.contains(j)).expect("j present");
    let phi_j = shapley_over_groups(f, &without_i, pos_j)?;

    Ok(joint - phi_i - phi_j)
}

/// Mean of `Δf(i, j, S)` over every context of size `s`.
pub fn multi_order_exact<G: SetFunction + ?Sized>(
    f: &G,
    i: usize,
    j: usize,
    s: usize,
    limits: &ExhaustiveLimits,
) -> Result<MultiOrderEstimate, GameError> {
    const CHUNK: usize = 4096;
    let n = f.num_players();
    check_pair(n, i, j)?;
    if s > n - 2 {
        return Err(GameError::Precondition(format!("order {s} exceeds n - 2 = {}", n - 2)));
    }
    let count =
        binomial_capped(n as u64 - 2, s as u64, limits.max_contexts).ok_or_else(|| GameError::BudgetExceeded {
            what: "context enumeration",
            needed: format!("C({}, {s}) contexts", n - 2),
            limit: limits.max_contexts,
        })?;
    let pool = others(n, i, j);
    let mut values = Vec::with_capacity(count as usize);
    let mut buffer = Vec::with_capacity(CHUNK);
    let mut failure = None;
    for_each_combination(n, &pool, s, |c| {
        if failure.is_some() {
            return;
        }
        buffer.push(c);
        if buffer.len() == CHUNK {
            match deltas(f, i, j, &buffer) {
                Ok(v) => values.extend(v),
                Err(e) => failure = Some(e),
            }
            buffer.clear();
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    values.extend(deltas(f, i, j, &buffer)?);
    Ok(MultiOrderEstimate {
        i,
        j,
        order: s,
        value: mean(&values).expect("at least one context"),
        num_contexts: values.len(),
        stderr: 0.0,
        mode: SamplingMode::Exhaustive,
    })
}

/// Monte-Carlo `I^(s)(i, j)` from `num_contexts` sampled contexts.
pub fn multi_order_sampled<G: SetFunction + ?Sized>(
    f: &G,
    i: usize,
    j: usize,
    s: usize,
    num_contexts: usize,
    seed: u64,
) -> Result<MultiOrderEstimate, GameError> {
    let n = f.num_players();
    let draw =
        sample_contexts(n, i, j, s, num_contexts, derive_seed(seed, &[tag::CONTEXT, i as u64, j as u64, s as u64]))?;
    let values = deltas(f, i, j, &draw.contexts)?;
    let k = values.len();
    let value = mean(&values).expect("at least one context");
    let stderr = match (draw.mode, sample_variance(&values)) {
        (SamplingMode::Exhaustive, _) => 0.0,
        (_, None) => f64::INFINITY,
        (SamplingMode::WithoutReplacement, Some(var)) => (var / k as f64 * (1.0 - k as f64 / draw.population)).sqrt(),
        (SamplingMode::WithReplacement, Some(var)) => (var / k as f64).sqrt(),
    };
    Ok(MultiOrderEstimate { i, j, order: s, value, num_contexts: k, stderr, mode: draw.mode })
}

/// `(1 / (n − 1)) Σ_s I^(s)(i, j)`, which must agree with
/// [`pairwise_interaction_exact`].
pub fn decompose_check<G: SetFunction + ?Sized>(
    f: &G,
    i: usize,
    j: usize,
    limits: &ExhaustiveLimits,
) -> Result<f64, GameError> {
    let n = f.num_players();
    check_pair(n, i, j)?;
    check_exhaustive(n, limits)?;
    let mut acc = CompensatedSum::new();
    for s in 0..=n - 2 {
        acc.add(multi_order_exact(f, i, j, s, limits)?.value);
    }
    Ok(acc.total() / (n - 1) as f64)
}
