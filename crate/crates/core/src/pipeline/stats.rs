use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{InteractionSample, PipelineError, ProtocolRun};
use crate::numeric::{quantile_sorted, CompensatedSum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub order_ratio: f64,
    /// Quartiles are `None` when the order has no samples.
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub count: usize,
}

/// Signed quartile summary per order ratio.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OrderDistribution {
    pub rows: Vec<OrderRow>,
}

impl OrderDistribution {
    pub fn row(&self, ratio: f64) -> Option<&OrderRow> {
        self.rows.iter().find(|r| r.order_ratio == ratio)
    }

    pub fn missing(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| r.count == 0).map(|r| r.order_ratio).collect()
    }
}

/// Quartiles of `Δf` pooled over every image, pair and context.
pub fn order_distribution(samples: &[InteractionSample], ratios: &[f64]) -> OrderDistribution {
    let rows = ratios
        .iter()
        .map(|&r| {
            let mut v: Vec<f64> = samples.iter().filter(|s| s.order_ratio == r).map(|s| s.value).collect();
            v.sort_by(f64::total_cmp);
            OrderRow {
                order_ratio: r,
                q1: quantile_sorted(&v, 0.25),
                median: quantile_sorted(&v, 0.5),
                q3: quantile_sorted(&v, 0.75),
                count: v.len(),
            }
        })
        .collect();
    OrderDistribution { rows }
}

pub fn per_image_order_distribution(samples: &[InteractionSample], ratios: &[f64]) -> Vec<(usize, OrderDistribution)> {
    let mut by_image: BTreeMap<usize, Vec<InteractionSample>> = BTreeMap::new();
    for s in samples {
        by_image.entry(s.image_id).or_default().push(s.clone());
    }
    by_image.into_iter().map(|(id, v)| (id, order_distribution(&v, ratios))).collect()
}

type PairKey = (usize, usize);

/// Per-pair context means, keyed by `(image_id, pair_index)` and then by ratio.
struct PairMeans {
    pairs: BTreeMap<PairKey, BTreeMap<u64, (usize, CompensatedSum, usize)>>,
}

impl PairMeans {
    fn new(samples: &[InteractionSample]) -> Self {
        let mut pairs: BTreeMap<PairKey, BTreeMap<u64, (usize, CompensatedSum, usize)>> = BTreeMap::new();
        for s in samples {
            let e = pairs.entry((s.image_id, s.pair_index)).or_default().entry(s.order_ratio.to_bits()).or_insert((
                s.order,
                CompensatedSum::new(),
                0,
            ));
            e.1.add(s.value);
            e.2 += 1;
        }
        Self { pairs }
    }

    fn check_coverage(&self, ratios: &[f64]) -> Result<(), PipelineError> {
        for (&(image_id, _), by_ratio) in &self.pairs {
            let missing: Vec<f64> = ratios.iter().copied().filter(|r| !by_ratio.contains_key(&r.to_bits())).collect();
            if !missing.is_empty() {
                return Err(PipelineError::MissingOrders { image_id, missing });
            }
        }
        Ok(())
    }

    /// `I^(s(r))(i, j)` for one pair.
    fn mean(&self, key: &PairKey, ratio: f64) -> f64 {
        let (_, sum, count) = &self.pairs[key][&ratio.to_bits()];
        sum.total() / *count as f64
    }
}

fn mean_of<I: IntoIterator<Item = f64>>(values: I) -> Option<f64> {
    let mut acc = CompensatedSum::new();
    let mut k = 0usize;
    for v in values {
        acc.add(v);
        k += 1;
    }
    (k > 0).then(|| acc.total() / k as f64)
}

/// Mean over pairs of each pair's interaction averaged over the distinct
/// orders realized by `average_ratios`. Samples from ratios that realize the
/// same order are pooled.
pub fn average_interaction(samples: &[InteractionSample], average_ratios: &[f64]) -> Result<f64, PipelineError> {
    let means = PairMeans::new(samples);
    if means.pairs.is_empty() {
        return Err(PipelineError::Empty);
    }
    means.check_coverage(average_ratios)?;
    let wanted: Vec<u64> = average_ratios.iter().map(|r| r.to_bits()).collect();
    let per_pair = means.pairs.values().map(|by_ratio| {
        let mut by_order: BTreeMap<usize, (CompensatedSum, usize)> = BTreeMap::new();
        for (bits, (order, sum, count)) in by_ratio {
            if wanted.contains(bits) {
                let e = by_order.entry(*order).or_default();
                e.0.add(sum.total());
                e.1 += count;
            }
        }
        mean_of(by_order.values().map(|(s, c)| s.total() / *c as f64)).expect("coverage checked")
    });
    Ok(mean_of(per_pair).expect("nonempty"))
}

/// `E_{(i,j)}[I^(s)(i, j)]` at each ratio.
pub fn order_averages(samples: &[InteractionSample], ratios: &[f64]) -> Result<Vec<(f64, f64)>, PipelineError> {
    let means = PairMeans::new(samples);
    if means.pairs.is_empty() {
        return Err(PipelineError::Empty);
    }
    means.check_coverage(ratios)?;
    Ok(ratios.iter().map(|&r| (r, mean_of(means.pairs.keys().map(|k| means.mean(k, r))).expect("nonempty"))).collect())
}

/// Normalized mean absolute interaction per ratio: the mean over images of
/// the mean over pairs of `|I^(m)(i, j)|`, divided by its average over all
/// ratios.
pub fn interaction_strength(samples: &[InteractionSample], ratios: &[f64]) -> Result<Vec<(f64, f64)>, PipelineError> {
    let means = PairMeans::new(samples);
    if means.pairs.is_empty() || ratios.is_empty() {
        return Err(PipelineError::Empty);
    }
    means.check_coverage(ratios)?;
    let mut images: BTreeMap<usize, Vec<PairKey>> = BTreeMap::new();
    for key in means.pairs.keys() {
        images.entry(key.0).or_default().push(*key);
    }
    let raw: Vec<f64> = ratios
        .iter()
        .map(|&r| {
            mean_of(images.values().map(|keys| mean_of(keys.iter().map(|k| means.mean(k, r).abs())).expect("nonempty")))
                .expect("nonempty")
        })
        .collect();
    let norm = mean_of(raw.iter().copied()).expect("nonempty");
    if norm == 0.0 || !norm.is_finite() {
        return Err(PipelineError::UndefinedStrength);
    }
    Ok(ratios.iter().zip(raw).map(|(&r, a)| (r, a / norm)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAverage {
    pub image_id: usize,
    pub label: usize,
    pub predicted: Option<usize>,
    /// `None` when the image lacks samples for part of the grid.
    pub average: Option<f64>,
}

impl ImageAverage {
    pub fn correct(&self) -> Option<bool> {
        self.predicted.map(|p| p == self.label)
    }
}

/// Average interaction for every image of a run.
pub fn image_averages(run: &ProtocolRun, average_ratios: &[f64]) -> Vec<ImageAverage> {
    run.images
        .iter()
        .map(|rec| {
            let mine: Vec<InteractionSample> =
                run.samples.iter().filter(|s| s.image_id == rec.image_id).cloned().collect();
            ImageAverage {
                image_id: rec.image_id,
                label: rec.label,
                predicted: rec.predicted,
                average: average_interaction(&mine, average_ratios).ok(),
            }
        })
        .collect()
}

/// Fixed-width bins over `[lo, hi]`. Bins are half-open `[a, b)` except the
/// last, which also includes `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl BinSpec {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self, PipelineError> {
        if bins == 0 || !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(PipelineError::Config(format!("bin range [{lo}, {hi}] with {bins} bins has zero-width bins")));
        }
        Ok(Self { lo, hi, bins })
    }

    /// Bins of the given width; the range must be a whole number of widths.
    pub fn with_width(lo: f64, hi: f64, width: f64) -> Result<Self, PipelineError> {
        if width.is_nan() || width <= 0.0 {
            return Err(PipelineError::Config(format!("bin width {width} must be positive")));
        }
        let count = (hi - lo) / width;
        if (count - count.round()).abs() > 1e-9 {
            return Err(PipelineError::Config(format!("width {width} does not divide [{lo}, {hi}]")));
        }
        Self::new(lo, hi, count.round() as usize)
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let w = self.width();
        let lo = self.lo + k as f64 * w;
        let hi = if k + 1 == self.bins { self.hi } else { self.lo + (k + 1) as f64 * w };
        (lo, hi)
    }

    fn index(&self, v: f64) -> Option<usize> {
        if !(v >= self.lo && v <= self.hi) {
            return None;
        }
        let k = ((v - self.lo) / self.width()).floor() as usize;
        Some(k.min(self.bins - 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub spec: BinSpec,
    pub counts: Vec<usize>,
    pub below: usize,
    pub above: usize,
    pub values: Vec<f64>,
}

pub fn average_interaction_histogram(values: &[f64], spec: BinSpec) -> Result<Histogram, PipelineError> {
    if values.is_empty() {
        return Err(PipelineError::Empty);
    }
    let mut counts = vec![0; spec.bins];
    let (mut below, mut above) = (0, 0);
    for &v in values {
        match spec.index(v) {
            Some(k) => counts[k] += 1,
            None if v < spec.lo => below += 1,
            None => above += 1,
        }
    }
    Ok(Histogram { spec, counts, below, above, values: values.to_vec() })
}
