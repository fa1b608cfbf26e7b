use std::sync::Arc;

use super::{apply_mask, Classifier, ImageError, ImageTensor, MaskBaseline, MaskedPredictor, PatchGrid};
use crate::game::{Coalition, EvalError, SetFunction};

/// Default probability clamp for the log-odds reward.
pub const DEFAULT_CLAMP: f64 = 1e-6;

/// Coalitions per classifier call.
pub const DEFAULT_BATCH_SIZE: usize = 64;

/// `log(p' / (1 - p'))` with `p' = clamp(p, δ, 1 - δ)`.
pub fn reward_log_odds(p: f64, delta: f64) -> f64 {
    let p = p.clamp(delta, 1.0 - delta);
    p.ln() - (-p).ln_1p()
}

/// Everything needed to turn an image into a game, except the image.
#[derive(Clone)]
pub struct ClassifierOracle {
    pub model: Arc<dyn Classifier>,
    pub label: usize,
    pub baseline: MaskBaseline,
    pub grid: PatchGrid,
    pub clamp: f64,
    pub batch_size: usize,
}

impl ClassifierOracle {
    pub fn new(model: Arc<dyn Classifier>, label: usize, baseline: MaskBaseline, grid: PatchGrid) -> Self {
        Self { model, label, baseline, grid, clamp: DEFAULT_CLAMP, batch_size: DEFAULT_BATCH_SIZE }
    }
}

/// `f(S) = reward_log_odds(P(label | apply_mask(x, S)))`.
pub struct ImageGame {
    oracle: ClassifierOracle,
    image: ImageTensor,
    fast: Option<Box<dyn MaskedPredictor>>,
}

pub fn make_set_function(oracle: ClassifierOracle, x: ImageTensor) -> Result<ImageGame, ImageError> {
    if !oracle.grid.tiles(x.shape()) {
        return Err(ImageError::Config(format!("patch grid does not tile a {} image", x.shape())));
    }
    if oracle.model.input_shape() != x.shape() {
        return Err(ImageError::Config(format!(
            "model expects {} inputs, image is {}",
            oracle.model.input_shape(),
            x.shape()
        )));
    }
    if oracle.label >= oracle.model.num_classes() {
        return Err(ImageError::Config(format!(
            "label {} out of range for {} classes",
            oracle.label,
            oracle.model.num_classes()
        )));
    }
    if !(oracle.clamp > 0.0 && oracle.clamp < 0.5) {
        return Err(ImageError::Config(format!("clamp {} must lie in (0, 0.5)", oracle.clamp)));
    }
    if oracle.batch_size == 0 {
        return Err(ImageError::Config("batch size must be positive".into()));
    }
    let n = oracle.grid.num_players();
    let fill = apply_mask(
        &x,
        &Coalition::empty(n).map_err(|e| ImageError::Config(e.to_string()))?,
        &oracle.grid,
        &oracle.baseline,
    )?;
    let fast = oracle.model.masked_predictor(&x, &fill, &oracle.grid);
    Ok(ImageGame { oracle, image: x, fast })
}

impl ImageGame {
    pub fn image(&self) -> &ImageTensor {
        &self.image
    }

    pub fn oracle(&self) -> &ClassifierOracle {
        &self.oracle
    }

    fn reward(&self, probs: &[f64]) -> Result<f64, EvalError> {
        let total: f64 = probs.iter().sum();
        if probs.len() != self.oracle.model.num_classes()
            || probs.iter().any(|p| p.is_nan() || *p < 0.0)
            || (total - 1.0).abs() > 1e-6
        {
            return Err(EvalError::new(format!("classifier returned an invalid probability vector (sum {total})")));
        }
        Ok(reward_log_odds(probs[self.oracle.label], self.oracle.clamp))
    }
}

impl SetFunction for ImageGame {
    fn num_players(&self) -> usize {
        self.oracle.grid.num_players()
    }

    fn evaluate(&self, coalition: &Coalition) -> Result<f64, EvalError> {
        self.evaluate_batch(std::slice::from_ref(coalition)).remove(0)
    }

    fn evaluate_batch(&self, coalitions: &[Coalition]) -> Vec<Result<f64, EvalError>> {
        if let Some(fast) = &self.fast {
            let n = self.num_players();
            return coalitions
                .iter()
                .map(|c| {
                    if c.num_players() != n {
                        let msg = format!("coalition over {} players used with a {n}-patch grid", c.num_players());
                        return Err(EvalError::new(msg).at(*c));
                    }
                    self.reward(&fast.predict_masked(c)).map_err(|e| e.at(*c))
                })
                .collect();
        }
        let mut out = Vec::with_capacity(coalitions.len());
        for chunk in coalitions.chunks(self.oracle.batch_size) {
            let masked: Vec<Result<ImageTensor, EvalError>> = chunk
                .iter()
                .map(|c| {
                    apply_mask(&self.image, c, &self.oracle.grid, &self.oracle.baseline)
                        .map_err(|e| EvalError::new(e.to_string()).at(*c))
                })
                .collect();
            let ok: Vec<&ImageTensor> = masked.iter().filter_map(|m| m.as_ref().ok()).collect();
            let mut probs = match self.oracle.model.predict_batch(&ok) {
                Ok(p) if p.len() == ok.len() => p.into_iter(),
                Ok(p) => {
                    let msg = format!("classifier returned {} results for {} images", p.len(), ok.len());
                    out.extend(chunk.iter().map(|c| Err(EvalError::new(msg.clone()).at(*c))));
                    continue;
                }
                Err(e) => {
                    let msg = e.to_string();
                    out.extend(chunk.iter().map(|c| Err(EvalError::new(msg.clone()).at(*c))));
                    continue;
                }
            };
            for (m, c) in masked.into_iter().zip(chunk) {
                out.push(match m {
                    Ok(_) => self.reward(&probs.next().expect("one result per image")).map_err(|e| e.at(*c)),
                    Err(e) => Err(e),
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{multi_order_exact, ExhaustiveLimits};
    use crate::image::{builtin_linear_model, builtin_mlp_model, ConstantModel, ImageShape, ModelError};
    use proptest::prelude::*;

    #[test]
    fn log_odds_values() {
        assert_eq!(reward_log_odds(0.5, DEFAULT_CLAMP), 0.0);
        assert!((reward_log_odds(0.9, DEFAULT_CLAMP) - 2.197224577).abs() < 1e-9);
        let top = (1e6f64 - 1.0).ln();
        assert!((reward_log_odds(1.0, 1e-6) - top).abs() < 1e-9);
        assert!((reward_log_odds(0.0, 1e-6) + top).abs() < 1e-9);
    }

    #[test]
    fn log_odds_is_antisymmetric_and_increasing() {
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=1000 {
            let p = 1e-6 + (1.0 - 2e-6) * k as f64 / 1000.0;
            let r = reward_log_odds(p, 1e-6);
            assert!(r > prev);
            prev = r;
            // 1 - p is itself rounded, which costs up to ~1e-10 near the clamp
            assert!((r + reward_log_odds(1.0 - p, 1e-6)).abs() <= 1e-9);
        }
    }

    #[test]
    fn constant_classifier_game_is_flat() {
        let shape = ImageShape::new(32, 32, 1);
        let model = Arc::new(ConstantModel::predicting(shape, 2, 0, 0.5));
        let grid = PatchGrid::for_shape(shape, 16).unwrap();
        let oracle = ClassifierOracle::new(model, 0, MaskBaseline::Zero, grid);
        let game = make_set_function(oracle, ImageTensor::filled(shape, 0.3).unwrap()).unwrap();
        for m in 0..16 {
            assert_eq!(game.evaluate(&Coalition::from_mask(4, m).unwrap()).unwrap(), 0.0);
        }
        for s in 0..=2 {
            assert_eq!(multi_order_exact(&game, 0, 3, s, &ExhaustiveLimits::default()).unwrap().value, 0.0);
        }
    }

    #[test]
    fn linear_model_rewards_follow_closed_form() {
        let shape = ImageShape::new(32, 32, 3);
        let model = Arc::new(builtin_linear_model(4, shape, 9));
        let grid = PatchGrid::for_shape(shape, 16).unwrap();
        let x = ImageTensor::new(shape, (0..shape.len()).map(|k| (k % 7) as f64 / 6.0).collect()).unwrap();
        let label = 2;
        let oracle = ClassifierOracle::new(model.clone(), label, MaskBaseline::Zero, grid);
        let game = make_set_function(oracle, x.clone()).unwrap();

        // closed form: log-odds of softmax(z)_y is z_y - log Σ_{k≠y} e^{z_k}
        let log_odds = |z: Vec<f64>| {
            let others: f64 = z.iter().enumerate().filter(|(k, _)| *k != label).map(|(_, v)| v.exp()).sum();
            z[label] - others.ln()
        };
        let full = game.evaluate(&Coalition::full(4).unwrap()).unwrap();
        let empty = game.evaluate(&Coalition::empty(4).unwrap()).unwrap();
        assert!((full - log_odds(model.logits(x.data()))).abs() < 1e-9);
        assert!((empty - log_odds(model.logits(&vec![0.0; shape.len()]))).abs() < 1e-9);
        assert_ne!(full, empty);
    }

    struct Broken(ImageShape);

    impl Classifier for Broken {
        fn num_classes(&self) -> usize {
            2
        }
        fn input_shape(&self) -> ImageShape {
            self.0
        }
        fn predict_batch(&self, _: &[&ImageTensor]) -> Result<Vec<Vec<f64>>, ModelError> {
            Err(ModelError::Remote("boom".into()))
        }
    }

    #[test]
    fn classifier_failures_carry_the_coalition() {
        let shape = ImageShape::new(16, 16, 1);
        let grid = PatchGrid::for_shape(shape, 8).unwrap();
        let oracle = ClassifierOracle::new(Arc::new(Broken(shape)), 1, MaskBaseline::Zero, grid);
        let game = make_set_function(oracle, ImageTensor::filled(shape, 0.1).unwrap()).unwrap();
        let c = Coalition::from_players(4, [1, 2]).unwrap();
        let err = game.evaluate(&c).unwrap_err();
        assert_eq!(err.coalition.as_deref(), Some(&c));
        assert!(err.message.contains("boom"));
    }

    #[test]
    fn configuration_is_validated() {
        let shape = ImageShape::new(32, 32, 1);
        let model: Arc<dyn Classifier> = Arc::new(ConstantModel::uniform(shape, 3));
        let grid = PatchGrid::new(48, 48, 16).unwrap();
        let x = ImageTensor::filled(shape, 0.0).unwrap();
        assert!(
            make_set_function(ClassifierOracle::new(model.clone(), 0, MaskBaseline::Zero, grid), x.clone()).is_err()
        );
        let grid = PatchGrid::for_shape(shape, 16).unwrap();
        assert!(
            make_set_function(ClassifierOracle::new(model.clone(), 3, MaskBaseline::Zero, grid), x.clone()).is_err()
        );
        let mut o = ClassifierOracle::new(model, 0, MaskBaseline::Zero, grid);
        o.clamp = 0.0;
        assert!(make_set_function(o, x).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn fast_masking_matches_explicit_masking(seed in 0u64..1000, mask in 0u64..(1 << 12), mlp: bool, mean: bool) {
            let shape = ImageShape::new(12, 16, 3);
            let model: Arc<dyn Classifier> = if mlp {
                Arc::new(builtin_mlp_model(5, shape, 8, seed))
            } else {
                Arc::new(builtin_linear_model(5, shape, seed))
            };
            let x = ImageTensor::new(shape, (0..shape.len()).map(|k| ((k as u64 * 31 + seed) % 101) as f64 / 100.0).collect()).unwrap();
            let baseline = if mean { MaskBaseline::channel_mean([&x]).unwrap() } else { MaskBaseline::Zero };
            let grid = PatchGrid::for_shape(shape, 4).unwrap();
            let c = Coalition::from_mask(12, mask).unwrap();
            let fast = model.masked_predictor(&x, &apply_mask(&x, &Coalition::empty(12).unwrap(), &grid, &baseline).unwrap(), &grid).unwrap();
            let slow = model.predict(&apply_mask(&x, &c, &grid, &baseline).unwrap()).unwrap();
            for (a, b) in fast.predict_masked(&c).iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let game = make_set_function(ClassifierOracle::new(model, 1, baseline, grid), x).unwrap();
            prop_assert!(game.fast.is_some());
        }
    }
}
