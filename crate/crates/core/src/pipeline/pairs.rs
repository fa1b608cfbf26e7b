use rand::seq::SliceRandom;
use rand::Rng;

use super::PipelineError;
use crate::image::PatchGrid;
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct PairDraw {
    /// Unordered pairs with `i < j`.
    pub pairs: Vec<(usize, usize)>,
    /// Set when more pairs were requested than are eligible, so some repeat.
    pub with_replacement: bool,
}

/// Every unordered pair of distinct patches whose centers are within
/// `radius` (Euclidean, in patch units).
pub fn eligible_pairs(grid: &PatchGrid, radius: f64) -> Vec<(usize, usize)> {
    let n = grid.num_players();
    let mut out = Vec::new();
    for i in 0..n {
        let (ri, ci) = grid.position(i);
        for j in i + 1..n {
            let (rj, cj) = grid.position(j);
            let dr = ri as f64 - rj as f64;
            let dc = ci as f64 - cj as f64;
            if dr * dr + dc * dc <= radius * radius {
                out.push((i, j));
            }
        }
    }
    out
}

/// Draws `count` pairs uniformly without replacement; once the eligible set is
/// exhausted the remainder is drawn with replacement and the draw is flagged.
pub fn sample_pairs(grid: &PatchGrid, count: usize, radius: f64, seed: u64) -> Result<PairDraw, PipelineError> {
    if grid.num_players() < 2 {
        return Err(PipelineError::Config("a single-patch grid has no pairs".into()));
    }
    let mut pool = eligible_pairs(grid, radius);
    if pool.is_empty() {
        return Err(PipelineError::Config(format!("no patch pairs lie within radius {radius}")));
    }
    let mut rng = stream_rng(seed, &[]);
    pool.shuffle(&mut rng);
    if count <= pool.len() {
        pool.truncate(count);
        return Ok(PairDraw { pairs: pool, with_replacement: false });
    }
    let mut pairs = pool.clone();
    while pairs.len() < count {
        pairs.push(pool[rng.random_range(0..pool.len())]);
    }
    Ok(PairDraw { pairs, with_replacement: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn two_by_two_grid_has_all_pairs() {
        let g = PatchGrid::new(32, 32, 16).unwrap();
        assert_eq!(eligible_pairs(&g, 2.0).len(), 6);
    }

    #[test]
    fn interior_patch_has_twelve_neighbors() {
        let g = PatchGrid::new(224, 224, 16).unwrap();
        let centre = g.player_at(7, 7);
        let neighbours: HashSet<(i64, i64)> = eligible_pairs(&g, 2.0)
            .into_iter()
            .filter_map(|(i, j)| {
                let other = if i == centre {
                    j
                } else if j == centre {
                    i
                } else {
                    return None;
                };
                let (r, c) = g.position(other);
                Some((r as i64 - 7, c as i64 - 7))
            })
            .collect();
        let expected: HashSet<(i64, i64)> = (-2i64..=2)
            .flat_map(|dx| (-2i64..=2).map(move |dy| (dx, dy)))
            .filter(|&(dx, dy)| (dx, dy) != (0, 0) && dx * dx + dy * dy <= 4)
            .collect();
        assert_eq!(expected.len(), 12);
        assert_eq!(neighbours, expected);
    }

    #[test]
    fn sampling_rules() {
        let g = PatchGrid::new(64, 64, 16).unwrap();
        let d = sample_pairs(&g, 20, 2.0, 3).unwrap();
        assert!(!d.with_replacement);
        assert_eq!(d.pairs.iter().collect::<HashSet<_>>().len(), 20);
        assert_eq!(d, sample_pairs(&g, 20, 2.0, 3).unwrap());

        let g = PatchGrid::new(32, 32, 16).unwrap();
        let d = sample_pairs(&g, 10, 2.0, 3).unwrap();
        assert!(d.with_replacement);
        assert_eq!(d.pairs.len(), 10);
        assert_eq!(d.pairs[..6].iter().collect::<HashSet<_>>().len(), 6);

        assert!(sample_pairs(&g, 3, 0.0, 1).is_err());
        assert!(sample_pairs(&PatchGrid::new(16, 16, 16).unwrap(), 1, 2.0, 1).is_err());
    }
}
