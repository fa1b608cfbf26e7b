use serde::{Deserialize, Serialize};

use super::PipelineError;

/// Order ratios at which distributions are reported.
pub const DISTRIBUTION_RATIOS: [f64; 13] = [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0];

/// Order ratios averaged into a pair's overall interaction.
pub const AVERAGE_RATIOS: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    pub num_images: usize,
    pub pairs_per_image: usize,
    pub contexts_per_pair: usize,
    /// Maximum Euclidean distance between paired patches, in patch units.
    pub pair_radius: f64,
    pub order_ratios: Vec<f64>,
    pub average_ratios: Vec<f64>,
    pub seed: u64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            num_images: 50,
            pairs_per_image: 200,
            contexts_per_pair: 100,
            pair_radius: 2.0,
            order_ratios: DISTRIBUTION_RATIOS.to_vec(),
            average_ratios: AVERAGE_RATIOS.to_vec(),
            seed: 0,
        }
    }
}

fn check_ratios(name: &str, ratios: &[f64], problems: &mut Vec<String>) {
    if ratios.is_empty() {
        problems.push(format!("{name} is empty"));
    }
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        problems.push(format!("{name} has values outside [0, 1]: {ratios:?}"));
    }
    if ratios.windows(2).any(|w| w[0] >= w[1]) {
        problems.push(format!("{name} must be sorted and unique: {ratios:?}"));
    }
}

impl SamplingPlan {
    /// Every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.num_images == 0 {
            p.push("num_images must be at least 1".into());
        }
        if self.pairs_per_image == 0 {
            p.push("pairs_per_image must be at least 1".into());
        }
        if self.contexts_per_pair == 0 {
            p.push("contexts_per_pair must be at least 1".into());
        }
        if self.pair_radius.is_nan() || self.pair_radius < 1.0 {
            p.push(format!("pair_radius {} must be at least 1", self.pair_radius));
        }
        check_ratios("order_ratios", &self.order_ratios, &mut p);
        check_ratios("average_ratios", &self.average_ratios, &mut p);
        let missing: Vec<f64> =
            self.average_ratios.iter().copied().filter(|r| !self.order_ratios.contains(r)).collect();
        if !missing.is_empty() {
            p.push(format!("average_ratios {missing:?} are not in order_ratios"));
        }
        p
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Config(p.join("; ")))
        }
    }
}

/// A list of order ratios, realized for a given player count as
/// `s = clamp(round(r * n), 0, n - 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderGrid {
    ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealizedOrders {
    /// `(ratio, order)` for each ratio, in grid order.
    pub per_ratio: Vec<(f64, usize)>,
    /// Distinct orders, ascending.
    pub distinct: Vec<usize>,
    /// Ratios whose order was already produced by an earlier ratio.
    pub collapsed: Vec<(f64, usize)>,
}

impl OrderGrid {
    pub fn new(ratios: Vec<f64>) -> Self {
        Self { ratios }
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn order_for(ratio: f64, n: usize) -> usize {
        let s = (ratio * n as f64).round().max(0.0) as usize;
        s.min(n.saturating_sub(2))
    }

    pub fn realize(&self, n: usize) -> RealizedOrders {
        let per_ratio: Vec<(f64, usize)> = self.ratios.iter().map(|&r| (r, Self::order_for(r, n))).collect();
        let mut distinct = Vec::new();
        let mut collapsed = Vec::new();
        for &(r, s) in &per_ratio {
            if distinct.contains(&s) {
                collapsed.push((r, s));
            } else {
                distinct.push(s);
            }
        }
        distinct.sort_unstable();
        RealizedOrders { per_ratio, distinct, collapsed }
    }
}
