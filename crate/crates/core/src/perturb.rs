//! Misclassification regimes: L∞ I-FGSM adversarial examples, Gaussian noise
//! corruption, and the attack-success sweep over perturbation budgets.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::io::LabeledImage;
use crate::image::{argmax, Classifier, ImageError, ImageShape, ImageTensor, ModelError};
use crate::rng::{stream_rng, tag};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error("classifier cannot provide input gradients")]
    GradientUnavailable,
    #[error("no image is classified correctly; nothing to attack")]
    NoEligibleImages,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Untargeted L∞ I-FGSM settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub steps: usize,
    /// Defaults to `epsilon / steps`.
    pub step_size: Option<f64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { epsilon: 16.0 / 255.0, steps: 10, step_size: None }
    }
}

impl AttackConfig {
    pub fn step_size(&self) -> f64 {
        self.step_size.unwrap_or(self.epsilon / self.steps.max(1) as f64)
    }

    /// Same settings at another budget; an explicit step size is kept.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self { epsilon, ..*self }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(AttackError::Config(format!("epsilon {} must lie in (0, 1]", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(AttackError::Config("steps must be at least 1".into()));
        }
        if !(self.step_size() > 0.0 && self.step_size().is_finite()) {
            return Err(AttackError::Config(format!("step size {} must be positive", self.step_size())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    /// Noise standard deviation in pixel units.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self { sigma: 0.1, seed: 0 }
    }
}

/// Per-image record of an attack and its downstream analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub image_id: usize,
    pub adversarial: ImageTensor,
    pub label: usize,
    pub source_prediction: usize,
    pub source_success: bool,
    /// Whether each target model misclassifies the adversarial image.
    pub transfers: Vec<(String, bool)>,
    /// `(order ratio, average interaction over pairs)`.
    pub order_averages: Vec<(f64, f64)>,
}

impl AttackOutcome {
    pub fn average_at(&self, ratio: f64) -> Option<f64> {
        self.order_averages.iter().find(|(r, _)| (r - ratio).abs() < 1e-12).map(|(_, v)| *v)
    }

    pub fn transferred_to(&self, target: &str) -> Option<bool> {
        self.transfers.iter().find(|(t, _)| t == target).map(|(_, f)| *f)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// I-FGSM from the clean image.
pub fn ifgsm(
    model: &dyn Classifier,
    x: &ImageTensor,
    label: usize,
    cfg: &AttackConfig,
) -> Result<ImageTensor, AttackError> {
    ifgsm_from(model, x, x, label, cfg)
}

/// I-FGSM started at `start` but projected onto the ε-ball around `clean`.
pub fn ifgsm_from(
    model: &dyn Classifier,
    clean: &ImageTensor,
    start: &ImageTensor,
    label: usize,
    cfg: &AttackConfig,
) -> Result<ImageTensor, AttackError> {
    cfg.validate()?;
    if !model.supports_gradient() {
        return Err(AttackError::GradientUnavailable);
    }
    if start.shape() != clean.shape() {
        return Err(AttackError::Config(format!("start {} differs from clean {}", start.shape(), clean.shape())));
    }
    let (eps, alpha) = (cfg.epsilon, cfg.step_size());
    let origin = clean.data();
    let mut current = start.clone();
    for _ in 0..cfg.steps {
        let grad = model.loss_gradient(&current, label)?;
        let next: Vec<f64> = current
            .data()
            .iter()
            .zip(&grad)
            .zip(origin)
            .map(|((&v, &g), &o)| project(v + alpha * sign(g), o, eps).clamp(0.0, 1.0))
            .collect();
        current = ImageTensor::new(clean.shape(), next)?;
    }
    Ok(current)
}

/// Clamp into the ε-ball around `o` so that `|v - o| <= eps` holds exactly
/// in floating point, not just up to rounding of `o ± eps`.
fn project(v: f64, o: f64, eps: f64) -> f64 {
    let mut c = v.clamp(o - eps, o + eps);
    while c - o > eps {
        c = c.next_down();
    }
    while o - c > eps {
        c = c.next_up();
    }
    c
}

/// Rounds `adv` to f32 precision for storage while keeping every pixel in
/// `[0, 1]` and within `eps` of `clean`. A rounded value that leaves the ball
/// is stepped one f32 ulp at a time towards the clean value.
pub fn quantize_within(adv: &ImageTensor, clean: &ImageTensor, eps: f64) -> Result<ImageTensor, ImageError> {
    let data = adv
        .data()
        .iter()
        .zip(clean.data())
        .map(|(&v, &o)| {
            let mut q = (v as f32).clamp(0.0, 1.0);
            while f64::from(q) - o > eps && f64::from(q.next_down()) >= o - eps {
                q = q.next_down();
            }
            while o - f64::from(q) > eps && f64::from(q.next_up()) <= o + eps {
                q = q.next_up();
            }
            f64::from(q)
        })
        .collect();
    ImageTensor::new(adv.shape(), data)
}

/// Seeded standard-normal field, independent of the image content.
pub fn noise_field(shape: ImageShape, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, &[tag::NOISE]);
    (0..shape.len()).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// `clip(x + sigma * noise)`.
pub fn corrupt_with_noise(x: &ImageTensor, noise: &[f64], sigma: f64) -> Result<ImageTensor, ImageError> {
    if noise.len() != x.data().len() {
        return Err(ImageError::Invalid(format!("noise has {} values, image has {}", noise.len(), x.data().len())));
    }
    ImageTensor::from_clamped(x.shape(), x.data().iter().zip(noise).map(|(v, z)| v + sigma * z).collect())
}

pub fn gaussian_corrupt(x: &ImageTensor, cfg: &CorruptionConfig) -> Result<ImageTensor, ImageError> {
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(ImageError::Config(format!("sigma {} must be finite and nonnegative", cfg.sigma)));
    }
    if cfg.sigma == 0.0 {
        return Ok(x.clone());
    }
    corrupt_with_noise(x, &noise_field(x.shape(), cfg.seed), cfg.sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub success_rate: f64,
    pub successes: usize,
    pub attacked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Images skipped because the clean prediction was already wrong.
    pub excluded: usize,
}

/// Attack success rate at each ε, over the correctly classified images.
///
/// With `warm_start`, each budget resumes from the previous budget's
/// adversarial image, and images already fooled are kept as they are, so the
/// rates are non-decreasing in ε.
pub fn success_rate_sweep(
    model: &dyn Classifier,
    images: &[LabeledImage],
    epsilons: &[f64],
    template: &AttackConfig,
    warm_start: bool,
) -> Result<SweepReport, AttackError> {
    if epsilons.is_empty() {
        return Err(AttackError::Config("no epsilons to sweep".into()));
    }
    let mut eps: Vec<f64> = epsilons.to_vec();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    for &e in &eps {
        template.with_epsilon(e).validate()?;
    }
    let refs: Vec<&ImageTensor> = images.iter().map(|i| &i.image).collect();
    let preds = model.predict_batch(&refs)?;
    let eligible: Vec<&LabeledImage> =
        images.iter().zip(&preds).filter(|(i, p)| argmax(p) == i.label).map(|(i, _)| i).collect();
    if eligible.is_empty() {
        return Err(AttackError::NoEligibleImages);
    }
    let excluded = images.len() - eligible.len();

    let mut current: Vec<(ImageTensor, bool)> = eligible.iter().map(|i| (i.image.clone(), false)).collect();
    let mut rows = Vec::with_capacity(eps.len());
    for &e in &eps {
        let cfg = template.with_epsilon(e);
        let results: Result<Vec<(ImageTensor, bool)>, AttackError> = eligible
            .par_iter()
            .zip(current.par_iter())
            .map(|(img, (prev, fooled))| {
                if warm_start && *fooled {
                    return Ok((prev.clone(), true));
                }
                let start = if warm_start { prev } else { &img.image };
                let adv = ifgsm_from(model, &img.image, start, img.label, &cfg)?;
                let success = argmax(&model.predict(&adv)?) != img.label;
                Ok((adv, success))
            })
            .collect();
        current = results?;
        let successes = current.iter().filter(|(_, s)| *s).count();
        rows.push(SweepRow {
            epsilon: e,
            success_rate: successes as f64 / eligible.len() as f64,
            successes,
            attacked: eligible.len(),
        });
    }
    Ok(SweepReport { rows, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{builtin_linear_model, builtin_mlp_model, cross_entropy, ConstantModel};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(shape: ImageShape, seed: u64, lo: f64, hi: f64) -> ImageTensor {
        let mut rng = stream_rng(seed, &[123]);
        ImageTensor::new(shape, (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn budget_and_range_hold() {
        let shape = ImageShape::new(8, 8, 3);
        let model = builtin_mlp_model(5, shape, 12, 2);
        let cfg = AttackConfig { epsilon: 0.2, steps: 7, step_size: Some(0.09) };
        for seed in 0..10 {
            let x = random_image(shape, seed, 0.0, 1.0);
            let adv = ifgsm(&model, &x, seed as usize % 5, &cfg).unwrap();
            assert!(adv.linf_distance(&x) <= cfg.epsilon);
            assert!(adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn tiny_budget_leaves_image_unchanged() {
        let shape = ImageShape::new(4, 4, 1);
        let model = builtin_linear_model(3, shape, 1);
        let x = random_image(shape, 4, 0.2, 0.8);
        let adv = ifgsm(&model, &x, 0, &AttackConfig { epsilon: 1e-9, ..Default::default() }).unwrap();
        assert!(adv.linf_distance(&x) <= 1e-9);
    }

    #[test]
    fn single_step_attains_the_corner_optimum_for_linear_models() {
        // Binary softmax regression: the loss is monotone in one linear
        // function of the input, so the sign corner is the exact maximizer.
        let shape = ImageShape::new(2, 2, 1);
        let eps = 0.1;
        for seed in 0..20 {
            let model = builtin_linear_model(2, shape, seed);
            let x = random_image(shape, seed, 0.2, 0.8);
            let label = seed as usize % 2;
            let adv = ifgsm(&model, &x, label, &AttackConfig { epsilon: eps, steps: 1, step_size: Some(eps) }).unwrap();
            let attacked = cross_entropy(&model.predict(&adv).unwrap(), label);
            let best = (0u32..16)
                .map(|corner| {
                    let data: Vec<f64> =
                        (0..4).map(|k| x.data()[k] + if corner >> k & 1 == 1 { eps } else { -eps }).collect();
                    cross_entropy(&model.predict(&ImageTensor::new(shape, data).unwrap()).unwrap(), label)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((attacked - best).abs() <= 1e-12, "{attacked} vs {best}");
        }
    }

    struct NoGrad(ConstantModel);

    impl Classifier for NoGrad {
        fn num_classes(&self) -> usize {
            self.0.num_classes()
        }
        fn input_shape(&self) -> ImageShape {
            self.0.input_shape()
        }
        fn predict_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f64>>, ModelError> {
            self.0.predict_batch(images)
        }
    }

    #[test]
    fn attack_errors() {
        let shape = ImageShape::new(2, 2, 1);
        let x = ImageTensor::filled(shape, 0.5).unwrap();
        let m = NoGrad(ConstantModel::uniform(shape, 2));
        assert!(matches!(ifgsm(&m, &x, 0, &AttackConfig::default()), Err(AttackError::GradientUnavailable)));
        let lin = builtin_linear_model(2, shape, 0);
        for bad in [
            AttackConfig { epsilon: 0.0, ..Default::default() },
            AttackConfig { steps: 0, ..Default::default() },
            AttackConfig { step_size: Some(-1.0), ..Default::default() },
        ] {
            assert!(matches!(ifgsm(&lin, &x, 0, &bad), Err(AttackError::Config(_))));
        }
        assert_eq!(AttackConfig::default().step_size(), 16.0 / 255.0 / 10.0);
    }

    #[test]
    fn gaussian_noise_properties() {
        let shape = ImageShape::new(100, 100, 1);
        let x = ImageTensor::filled(shape, 0.5).unwrap();
        assert_eq!(gaussian_corrupt(&x, &CorruptionConfig { sigma: 0.0, seed: 3 }).unwrap(), x);
        let cfg = CorruptionConfig { sigma: 0.1, seed: 3 };
        let a = gaussian_corrupt(&x, &cfg).unwrap();
        assert_eq!(a, gaussian_corrupt(&x, &cfg).unwrap());
        let m = a.data().iter().sum::<f64>() / 1e4;
        let sd = (a.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / (1e4 - 1.0)).sqrt();
        assert!((0.09..=0.11).contains(&sd), "std {sd}");
        assert!(gaussian_corrupt(&x, &CorruptionConfig { sigma: -1.0, seed: 0 }).is_err());
    }

    #[test]
    fn noise_commutes_with_flips() {
        let shape = ImageShape::new(6, 5, 2);
        let x = random_image(shape, 8, 0.0, 1.0);
        let cfg = CorruptionConfig { sigma: 0.3, seed: 12 };
        let field = noise_field(shape, cfg.seed);
        // flip the raw noise field with the same index map as the image
        let flipped_field: Vec<f64> = {
            let mut out = Vec::with_capacity(field.len());
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for px in (0..shape.width).rev() {
                        out.push(field[(c * shape.height + y) * shape.width + px]);
                    }
                }
            }
            out
        };
        let lhs = gaussian_corrupt(&x, &cfg).unwrap().flip_horizontal();
        let rhs = corrupt_with_noise(&x.flip_horizontal(), &flipped_field, cfg.sigma).unwrap();
        assert_eq!(lhs, rhs);
    }

    proptest! {
        #[test]
        fn quantized_images_stay_in_the_ball(raw in proptest::collection::vec((0.0f64..=1.0, -1.0f64..=1.0), 1..64), k in 1u32..=16) {
            let eps = f64::from(k) / 255.0;
            let shape = ImageShape::new(1, raw.len(), 1);
            let clean: Vec<f64> = raw.iter().map(|(o, _)| *o).collect();
            let adv: Vec<f64> = raw.iter().map(|(o, d)| project(o + d * eps, *o, eps).clamp(0.0, 1.0)).collect();
            let clean = ImageTensor::new(shape, clean).unwrap();
            let q = quantize_within(&ImageTensor::new(shape, adv).unwrap(), &clean, eps).unwrap();
            prop_assert!(q.linf_distance(&clean) <= eps);
            for v in q.data() {
                prop_assert!((0.0..=1.0).contains(v));
                prop_assert_eq!(f64::from(*v as f32), *v);
            }
        }
    }
}
