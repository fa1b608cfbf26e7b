//! Median-split transferability analysis.
//!
//! For each order, adversarial images are split into those whose average
//! interaction at that order is strictly above the median (`D1`) and the rest
//! (`D2`). The transfer success rate is measured in each half for every target
//! model, and the report carries `a1 - a2`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{argmax, Classifier, ImageTensor, ModelError};
use crate::perturb::AttackOutcome;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("median split needs at least 2 outcomes, got {0}")]
    TooFewOutcomes(usize),
    #[error("image {image_id} has no average interaction at order ratio {ratio}")]
    MissingOrder { image_id: usize, ratio: f64 },
    #[error("image {image_id} has no transfer flag for target '{target}'")]
    MissingTarget { image_id: usize, target: String },
    #[error("transfer plan lists no targets")]
    NoTargets,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan {
    pub source: String,
    pub targets: Vec<String>,
    pub order_ratios: Vec<f64>,
    pub seed: u64,
}

/// Indices into the outcome slice.
#[derive(Debug, Clone, PartialEq)]
pub struct MedianSplit {
    pub median: f64,
    pub above: Vec<usize>,
    pub rest: Vec<usize>,
    /// No outcome lies strictly above the median.
    pub degenerate: bool,
}

fn median_of(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// `D1` = strictly above the median, `D2` = everything else.
pub fn split_by_median(outcomes: &[AttackOutcome], ratio: f64) -> Result<MedianSplit, TransferError> {
    if outcomes.len() < 2 {
        return Err(TransferError::TooFewOutcomes(outcomes.len()));
    }
    let values = outcomes
        .iter()
        .map(|o| o.average_at(ratio).ok_or(TransferError::MissingOrder { image_id: o.image_id, ratio }))
        .collect::<Result<Vec<f64>, _>>()?;
    let median = median_of(&values);
    let (above, rest): (Vec<usize>, Vec<usize>) = (0..values.len()).partition(|&k| values[k] > median);
    Ok(MedianSplit { median, degenerate: above.is_empty(), above, rest })
}

/// Fraction of `true` flags; `None` for an empty set.
pub fn success_fraction<I: IntoIterator<Item = bool>>(flags: I) -> Option<f64> {
    let (hits, total) = flags.into_iter().fold((0usize, 0usize), |(h, t), f| (h + usize::from(f), t + 1));
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Fraction of `(image, label)` pairs the target misclassifies.
pub fn transfer_rates(images: &[(&ImageTensor, usize)], target: &dyn Classifier) -> Result<Option<f64>, TransferError> {
    if images.is_empty() {
        return Ok(None);
    }
    let refs: Vec<&ImageTensor> = images.iter().map(|(i, _)| *i).collect();
    let probs = target.predict_batch(&refs)?;
    Ok(success_fraction(probs.iter().zip(images).map(|(p, (_, label))| argmax(p) != *label)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub order_ratio: f64,
    pub target: String,
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    pub diff: Option<f64>,
    pub n1: usize,
    pub n2: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransferReport {
    pub rows: Vec<TransferRow>,
}

/// Splits at every order ratio of the plan and compares transfer rates.
pub fn transfer_curve(outcomes: &[AttackOutcome], plan: &TransferPlan) -> Result<TransferReport, TransferError> {
    if plan.targets.is_empty() {
        return Err(TransferError::NoTargets);
    }
    for o in outcomes {
        for t in &plan.targets {
            if o.transferred_to(t).is_none() {
                return Err(TransferError::MissingTarget { image_id: o.image_id, target: t.clone() });
            }
        }
    }
    let mut rows = Vec::new();
    for &ratio in &plan.order_ratios {
        let split = split_by_median(outcomes, ratio)?;
        for t in &plan.targets {
            let rate =
                |idx: &[usize]| success_fraction(idx.iter().map(|&k| outcomes[k].transferred_to(t).expect("checked")));
            let (a1, a2) = (rate(&split.above), rate(&split.rest));
            rows.push(TransferRow {
                order_ratio: ratio,
                target: t.clone(),
                a1,
                a2,
                diff: a1.zip(a2).map(|(x, y)| x - y),
                n1: split.above.len(),
                n2: split.rest.len(),
                degenerate: split.degenerate,
            });
        }
    }
    Ok(TransferReport { rows })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

impl TransferReport {
    /// `order_ratio,target,a1,a2,diff,n1,n2`; undefined rates are written as `NA`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TransferError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["order_ratio", "target", "a1", "a2", "diff", "n1", "n2"]).map_err(csv_io)?;
        for r in &self.rows {
            w.write_record([
                r.order_ratio.to_string(),
                r.target.clone(),
                fmt_opt(r.a1),
                fmt_opt(r.a2),
                fmt_opt(r.diff),
                r.n1.to_string(),
                r.n2.to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> TransferError {
    TransferError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{ConstantModel, ImageShape};

    fn outcome(id: usize, avg: f64, flags: &[(&str, bool)]) -> AttackOutcome {
        let shape = ImageShape::new(1, 1, 1);
        AttackOutcome {
            image_id: id,
            adversarial: ImageTensor::filled(shape, 0.5).unwrap(),
            label: 0,
            source_prediction: 1,
            source_success: true,
            transfers: flags.iter().map(|(t, f)| (t.to_string(), *f)).collect(),
            order_averages: vec![(0.5, avg)],
        }
    }

    fn values(vals: &[f64]) -> Vec<AttackOutcome> {
        vals.iter().enumerate().map(|(k, &v)| outcome(k, v, &[])).collect()
    }

    #[test]
    fn median_split_examples() {
        let s = split_by_median(&values(&[1.0, 2.0, 3.0, 4.0]), 0.5).unwrap();
        assert_eq!((s.median, s.above.clone(), s.rest.clone()), (2.5, vec![2, 3], vec![0, 1]));
        let s = split_by_median(&values(&[0.0; 4]), 0.5).unwrap();
        assert!(s.degenerate && s.above.is_empty() && s.rest.len() == 4);
        let s = split_by_median(&values(&[1.0, 2.0, 2.0, 3.0, 5.0]), 0.5).unwrap();
        assert_eq!((s.median, s.above, s.rest), (2.0, vec![3, 4], vec![0, 1, 2]));
        assert!(matches!(split_by_median(&values(&[1.0]), 0.5), Err(TransferError::TooFewOutcomes(1))));
        assert!(matches!(split_by_median(&values(&[1.0, 2.0]), 0.3), Err(TransferError::MissingOrder { .. })));
    }

    #[test]
    fn rates() {
        assert_eq!(success_fraction([true, false, true, true, false]), Some(0.6));
        assert_eq!(success_fraction(std::iter::empty()), None);
        let shape = ImageShape::new(1, 1, 1);
        let img = ImageTensor::filled(shape, 0.5).unwrap();
        let truthful = ConstantModel::predicting(shape, 3, 2, 0.9);
        assert_eq!(transfer_rates(&[(&img, 2), (&img, 2)], &truthful).unwrap(), Some(0.0));
        assert_eq!(transfer_rates(&[(&img, 1)], &truthful).unwrap(), Some(1.0));
        assert_eq!(transfer_rates(&[], &truthful).unwrap(), None);
    }

    #[test]
    fn curve_requires_targets_and_flags() {
        let outs = vec![outcome(0, 1.0, &[("a", true)]), outcome(1, 2.0, &[("a", false)])];
        let plan = TransferPlan { source: "s".into(), targets: vec![], order_ratios: vec![0.5], seed: 0 };
        assert!(matches!(transfer_curve(&outs, &plan), Err(TransferError::NoTargets)));
        let plan = TransferPlan { targets: vec!["b".into()], ..plan };
        assert!(matches!(transfer_curve(&outs, &plan), Err(TransferError::MissingTarget { .. })));
    }

    #[test]
    fn csv_marks_undefined_rates() {
        let outs = vec![outcome(0, 0.0, &[("a", true)]), outcome(1, 0.0, &[("a", false)])];
        let plan = TransferPlan { source: "s".into(), targets: vec!["a".into()], order_ratios: vec![0.5], seed: 0 };
        let report = transfer_curve(&outs, &plan).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "order_ratio,target,a1,a2,diff,n1,n2\n0.5,a,NA,0.5,NA,0,2\n");
    }
}
