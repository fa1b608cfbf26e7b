use std::path::Path;

use rand::Rng;
use thiserror::Error;

use super::io::{read_raw_records, write_raw_records, RawTensor};
use super::{ImageShape, ImageTensor, PatchGrid};
use crate::game::Coalition;
use crate::rng::{stream_rng, tag};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model does not provide input gradients")]
    GradientUnavailable,
    #[error("input shape mismatch: model expects {expected}, got {got}")]
    ShapeMismatch { expected: ImageShape, got: ImageShape },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("protocol version mismatch: expected {expected}, bridge speaks {got}")]
    VersionMismatch { expected: u32, got: u32 },
    #[error("malformed bridge response: {0}")]
    Protocol(String),
    #[error("bridge reported an error: {0}")]
    Remote(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("no response within {0:?}")]
    Timeout(std::time::Duration),
    #[error("weights file {path}: {message}")]
    Weights { path: String, message: String },
}

/// A black-box classifier over images of a fixed shape.
pub trait Classifier: Send + Sync {
    fn num_classes(&self) -> usize;

    fn input_shape(&self) -> ImageShape;

    /// Class probabilities for each image, in order.
    fn predict_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f64>>, ModelError>;

    fn predict(&self, image: &ImageTensor) -> Result<Vec<f64>, ModelError> {
        Ok(self.predict_batch(&[image])?.remove(0))
    }

    /// `d(cross-entropy(label)) / d(input)`, same layout as the image data.
    fn loss_gradient(&self, _image: &ImageTensor, _label: usize) -> Result<Vec<f64>, ModelError> {
        Err(ModelError::GradientUnavailable)
    }

    fn supports_gradient(&self) -> bool {
        false
    }

    /// Optional fast path for scoring many patch maskings of one image.
    /// `fill` is the fully masked image. `None` means callers should build
    /// each masked image and use [`Classifier::predict_batch`].
    fn masked_predictor(
        &self,
        _x: &ImageTensor,
        _fill: &ImageTensor,
        _grid: &PatchGrid,
    ) -> Option<Box<dyn MaskedPredictor>> {
        None
    }
}

/// Class probabilities of `x` with only the patches in a coalition kept.
pub trait MaskedPredictor: Send + Sync {
    fn predict_masked(&self, coalition: &Coalition) -> Vec<f64>;
}

impl<T: Classifier + ?Sized> Classifier for std::sync::Arc<T> {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn input_shape(&self) -> ImageShape {
        (**self).input_shape()
    }
    fn predict_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f64>>, ModelError> {
        (**self).predict_batch(images)
    }
    fn loss_gradient(&self, image: &ImageTensor, label: usize) -> Result<Vec<f64>, ModelError> {
        (**self).loss_gradient(image, label)
    }
    fn supports_gradient(&self) -> bool {
        (**self).supports_gradient()
    }
    fn masked_predictor(
        &self,
        x: &ImageTensor,
        fill: &ImageTensor,
        grid: &PatchGrid,
    ) -> Option<Box<dyn MaskedPredictor>> {
        (**self).masked_predictor(x, fill, grid)
    }
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    probs.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (k, &p)| if p > best.1 { (k, p) } else { best }).0
}

pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(f64::MIN_POSITIVE).ln()
}

fn softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    for z in logits.iter_mut() {
        *z /= total;
    }
}

fn check_shape(expected: ImageShape, image: &ImageTensor) -> Result<(), ModelError> {
    if image.shape() != expected {
        return Err(ModelError::ShapeMismatch { expected, got: image.shape() });
    }
    Ok(())
}

fn check_label(label: usize, num_classes: usize) -> Result<(), ModelError> {
    if label >= num_classes {
        return Err(ModelError::LabelOutOfRange { label, num_classes });
    }
    Ok(())
}

/// Dense `rows x cols` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
struct Dense {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    // Values are drawn as f32 so that exporting to the float32 weight format is lossless.
    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (cols as f32).sqrt();
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| f64::from(rng.random_range(-a..=a))).collect() };
        let weights = draw(rows * cols);
        let bias = draw(rows);
        Self { rows, cols, weights, bias }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let row = &self.weights[r * self.cols..(r + 1) * self.cols];
                self.bias[r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// `W^T g`.
    fn backward(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, gr) in g.iter().enumerate() {
            if *gr == 0.0 {
                continue;
            }
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gr;
            }
        }
        out
    }

    /// Pre-activations of the fully masked input plus, for each patch, the
    /// change from un-masking it. A linear layer makes these exact up to
    /// rounding.
    fn patch_decomposition(&self, x: &ImageTensor, fill: &ImageTensor, grid: &PatchGrid) -> PatchSums {
        let shape = x.shape();
        let n = grid.num_players();
        let base = self.forward(fill.data());
        let mut deltas = vec![0.0; n * self.rows];
        let diff: Vec<f64> = x.data().iter().zip(fill.data()).map(|(a, b)| a - b).collect();
        let owner: Vec<usize> = (0..shape.len())
            .map(|k| {
                let within = k % (shape.height * shape.width);
                grid.player_of_pixel(within / shape.width, within % shape.width)
            })
            .collect();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            for ((w, d), &p) in row.iter().zip(&diff).zip(&owner) {
                deltas[p * self.rows + r] += w * d;
            }
        }
        PatchSums { base, deltas, width: self.rows }
    }

    fn to_records(&self) -> [RawTensor; 2] {
        [RawTensor::from_f64(self.rows, self.cols, 1, &self.weights), RawTensor::from_f64(1, self.rows, 1, &self.bias)]
    }

    fn from_records(w: &RawTensor, b: &RawTensor, rows: usize, cols: usize) -> Result<Self, String> {
        if (w.height, w.width, w.channels) != (rows, cols, 1) {
            return Err(format!("weight record is {}x{}x{}, expected {rows}x{cols}x1", w.height, w.width, w.channels));
        }
        if (b.height, b.width, b.channels) != (1, rows, 1) {
            return Err(format!("bias record is {}x{}x{}, expected 1x{rows}x1", b.height, b.width, b.channels));
        }
        Ok(Self { rows, cols, weights: w.to_f64(), bias: b.to_f64() })
    }
}

struct PatchSums {
    base: Vec<f64>,
    deltas: Vec<f64>,
    width: usize,
}

impl PatchSums {
    fn at(&self, coalition: &Coalition) -> Vec<f64> {
        let mut z = self.base.clone();
        for p in coalition.iter() {
            for (zi, d) in z.iter_mut().zip(&self.deltas[p * self.width..(p + 1) * self.width]) {
                *zi += d;
            }
        }
        z
    }
}

struct MaskedLinear(PatchSums);

impl MaskedPredictor for MaskedLinear {
    fn predict_masked(&self, coalition: &Coalition) -> Vec<f64> {
        let mut z = self.0.at(coalition);
        softmax(&mut z);
        z
    }
}

struct MaskedMlp {
    sums: PatchSums,
    output: Dense,
}

impl MaskedPredictor for MaskedMlp {
    fn predict_masked(&self, coalition: &Coalition) -> Vec<f64> {
        let h: Vec<f64> = self.sums.at(coalition).into_iter().map(f64::tanh).collect();
        let mut p = self.output.forward(&h);
        softmax(&mut p);
        p
    }
}

/// Softmax regression: `p = softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    shape: ImageShape,
    layer: Dense,
}

/// Seeded softmax-regression classifier with weights uniform in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn builtin_linear_model(num_classes: usize, shape: ImageShape, seed: u64) -> LinearModel {
    let mut rng = stream_rng(seed, &[tag::WEIGHTS, 1]);
    LinearModel { shape, layer: Dense::random(num_classes, shape.len(), &mut rng) }
}

impl LinearModel {
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.layer.forward(x)
    }

    pub fn save_weights(&self, path: &Path) -> std::io::Result<()> {
        write_raw_records(path, &self.layer.to_records())
    }
}

/// Loads weights written by [`LinearModel::save_weights`].
pub fn load_linear_weights(path: &Path, num_classes: usize, shape: ImageShape) -> Result<LinearModel, ModelError> {
    let err = |message: String| ModelError::Weights { path: path.display().to_string(), message };
    let records = read_raw_records(path).map_err(|e| err(e.to_string()))?;
    if records.len() != 2 {
        return Err(err(format!("expected 2 records, found {}", records.len())));
    }
    let layer = Dense::from_records(&records[0], &records[1], num_classes, shape.len()).map_err(err)?;
    Ok(LinearModel { shape, layer })
}

impl Classifier for LinearModel {
    fn num_classes(&self) -> usize {
        self.layer.rows
    }

    fn input_shape(&self) -> ImageShape {
        self.shape
    }

    fn predict_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f64>>, ModelError> {
        images
            .iter()
            .map(|img| {
                check_shape(self.shape, img)?;
                let mut z = self.layer.forward(img.data());
                softmax(&mut z);
                Ok(z)
            })
            .collect()
    }

    fn loss_gradient(&self, image: &ImageTensor, label: usize) -> Result<Vec<f64>, ModelError> {
        check_shape(self.shape, image)?;
        check_label(label, self.num_classes())?;
        let mut p = self.layer.forward(image.data());
        softmax(&mut p);
        p[label] -= 1.0;
        Ok(self.layer.backward(&p))
    }

    fn supports_gradient(&self) -> bool {
        true
    }

    fn masked_predictor(
        &self,
        x: &ImageTensor,
        fill: &ImageTensor,
        grid: &PatchGrid,
    ) -> Option<Box<dyn MaskedPredictor>> {
        (x.shape() == self.shape && fill.shape() == self.shape && grid.tiles(self.shape))
            .then(|| Box::new(MaskedLinear(self.layer.patch_decomposition(x, fill, grid))) as Box<dyn MaskedPredictor>)
    }
}

/// One-hidden-layer tanh network: `p = softmax(W2 tanh(W1 x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    shape: ImageShape,
    hidden: Dense,
    output: Dense,
}

pub fn builtin_mlp_model(num_classes: usize, shape: ImageShape, hidden_width: usize, seed: u64) -> MlpModel {
    let mut rng = stream_rng(seed, &[tag::WEIGHTS, 2]);
    let hidden = Dense::random(hidden_width, shape.len(), &mut rng);
    let output = Dense::random(num_classes, hidden_width, &mut rng);
    MlpModel { shape, hidden, output }
}

impl MlpModel {
    fn activations(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h: Vec<f64> = self.hidden.forward(x).into_iter().map(f64::tanh).collect();
        let mut p = self.output.forward(&h);
        softmax(&mut p);
        (h, p)
    }

    pub fn save_weights(&self, path: &Path) -> std::io::Result<()> {
        let [w1, b1] = self.hidden.to_records();
        let [w2, b2] = self.output.to_records();
        write_raw_records(path, &[w1, b1, w2, b2])
    }
}

pub fn load_mlp_weights(
    path: &Path,
    num_classes: usize,
    shape: ImageShape,
    hidden_width: usize,
) -> Result<MlpModel, ModelError> {
    let err = |message: String| ModelError::Weights { path: path.display().to_string(), message };
    let records = read_raw_records(path).map_err(|e| err(e.to_string()))?;
    if records.len() != 4 {
        return Err(err(format!("expected 4 records, found {}", records.len())));
    }
    let hidden = Dense::from_records(&records[0], &records[1], hidden_width, shape.len()).map_err(err)?;
    let output = Dense::from_records(&records[2], &records[3], num_classes, hidden_width).map_err(err)?;
    Ok(MlpModel { shape, hidden, output })
}

impl Classifier for MlpModel {
    fn num_classes(&self) -> usize {
        self.output.rows
    }

    fn input_shape(&self) -> ImageShape {
        self.shape
    }

    fn predict_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f64>>, ModelError> {
        images
            .iter()
            .map(|img| {
                check_shape(self.shape, img)?;
                Ok(self.activations(img.data()).1)
            })
            .collect()
    }

    fn loss_gradient(&self, image: &ImageTensor, label: usize) -> Result<Vec<f64>, ModelError> {
        check_shape(self.shape, image)?;
        check_label(label, self.num_classes())?;
        let (h, mut p) = self.activations(image.data());
        p[label] -= 1.0;
        let dh = self.output.backward(&p);
        let dpre: Vec<f64> = dh.iter().zip(&h).map(|(g, a)| g * (1.0 - a * a)).collect();
        Ok(self.hidden.backward(&dpre))
    }

    fn supports_gradient(&self) -> bool {
        true
    }

    fn masked_predictor(
        &self,
        x: &ImageTensor,
        fill: &ImageTensor,
        grid: &PatchGrid,
    ) -> Option<Box<dyn MaskedPredictor>> {
        (x.shape() == self.shape && fill.shape() == self.shape && grid.tiles(self.shape)).then(|| {
            let sums = self.hidden.patch_decomposition(x, fill, grid);
            Box::new(MaskedMlp { sums, output: self.output.clone() }) as Box<dyn MaskedPredictor>
        })
    }
}

/// Returns the same probability vector for every input.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantModel {
    shape: ImageShape,
    probs: Vec<f64>,
}

impl ConstantModel {
    pub fn new(shape: ImageShape, probs: Vec<f64>) -> Result<Self, ModelError> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(ModelError::InvalidProbabilities(format!("{probs:?}")));
        }
        Ok(Self { shape, probs })
    }

    /// Uniform over `num_classes` classes.
    pub fn uniform(shape: ImageShape, num_classes: usize) -> Self {
        Self { shape, probs: vec![1.0 / num_classes as f64; num_classes] }
    }

    /// Puts `confidence` on `class` and spreads the rest evenly.
    pub fn predicting(shape: ImageShape, num_classes: usize, class: usize, confidence: f64) -> Self {
        let rest = if num_classes > 1 { (1.0 - confidence) / (num_classes - 1) as f64 } else { 0.0 };
        let probs = (0..num_classes).map(|k| if k == class { confidence } else { rest }).collect();
        Self { shape, probs }
    }
}

impl Classifier for ConstantModel {
    fn num_classes(&self) -> usize {
        self.probs.len()
    }

    fn input_shape(&self) -> ImageShape {
        self.shape
    }

    fn predict_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f64>>, ModelError> {
        images
            .iter()
            .map(|img| {
                check_shape(self.shape, img)?;
                Ok(self.probs.clone())
            })
            .collect()
    }

    fn loss_gradient(&self, image: &ImageTensor, label: usize) -> Result<Vec<f64>, ModelError> {
        check_shape(self.shape, image)?;
        check_label(label, self.num_classes())?;
        Ok(vec![0.0; image.data().len()])
    }

    fn supports_gradient(&self) -> bool {
        true
    }
}

/// Largest absolute gap between `loss_gradient` and central finite
/// differences of the cross-entropy loss with the given step. Every pixel
/// must sit at least `step` inside `[0, 1]`.
pub fn gradient_deviation(model: &dyn Classifier, x: &ImageTensor, label: usize, step: f64) -> Result<f64, ModelError> {
    let analytic = model.loss_gradient(x, label)?;
    let shape = x.shape();
    let mut worst = 0.0f64;
    for (k, g) in analytic.iter().enumerate() {
        let mut plus = x.data().to_vec();
        let mut minus = x.data().to_vec();
        plus[k] += step;
        minus[k] -= step;
        let nudged = |v: Vec<f64>| -> Result<f64, ModelError> {
            let img = ImageTensor::new(shape, v).map_err(|e| ModelError::InvalidInput(e.to_string()))?;
            Ok(cross_entropy(&model.predict(&img)?, label))
        };
        let fd = (nudged(plus)? - nudged(minus)?) / (2.0 * step);
        worst = worst.max((fd - g).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(shape: ImageShape, seed: u64) -> ImageTensor {
        let mut rng = stream_rng(seed, &[99]);
        ImageTensor::new(shape, (0..shape.len()).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap()
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let shape = ImageShape::new(4, 4, 2);
        let model = builtin_linear_model(5, shape, 3);
        for seed in 0..10 {
            let x = random_image(shape, seed);
            let label = seed as usize % 5;
            assert!(gradient_deviation(&model, &x, label, 1e-4).unwrap() <= 1e-5);
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let shape = ImageShape::new(4, 4, 1);
        let model = builtin_mlp_model(3, shape, 8, 5);
        for seed in 0..10 {
            let x = random_image(shape, seed);
            let label = seed as usize % 3;
            assert!(gradient_deviation(&model, &x, label, 1e-4).unwrap() <= 1e-5);
        }
    }

    #[test]
    fn probabilities_are_normalized_and_seeded() {
        let shape = ImageShape::new(8, 8, 3);
        let x = random_image(shape, 1);
        for model in [
            Box::new(builtin_linear_model(10, shape, 1)) as Box<dyn Classifier>,
            Box::new(builtin_mlp_model(10, shape, 16, 1)),
        ] {
            let p = model.predict(&x).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!(p.iter().all(|v| *v >= 0.0));
        }
        assert_eq!(builtin_linear_model(10, shape, 7), builtin_linear_model(10, shape, 7));
        assert_ne!(builtin_linear_model(10, shape, 7), builtin_linear_model(10, shape, 8));
        assert_eq!(builtin_mlp_model(4, shape, 6, 2), builtin_mlp_model(4, shape, 6, 2));
    }

    #[test]
    fn linear_logits_have_closed_form() {
        let shape = ImageShape::new(2, 2, 1);
        let model = builtin_linear_model(3, shape, 11);
        let zero = ImageTensor::filled(shape, 0.0).unwrap();
        // at x = 0 the logits are exactly the biases
        assert_eq!(model.logits(zero.data()), model.layer.bias);
    }

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let shape = ImageShape::new(4, 4, 3);
        let lin = builtin_linear_model(6, shape, 21);
        let path = dir.path().join("lin.ilns");
        lin.save_weights(&path).unwrap();
        assert_eq!(load_linear_weights(&path, 6, shape).unwrap(), lin);
        assert!(matches!(load_linear_weights(&path, 7, shape), Err(ModelError::Weights { .. })));
        assert!(load_mlp_weights(&path, 6, shape, 4).is_err());

        let mlp = builtin_mlp_model(6, shape, 5, 21);
        let path = dir.path().join("mlp.ilns");
        mlp.save_weights(&path).unwrap();
        assert_eq!(load_mlp_weights(&path, 6, shape, 5).unwrap(), mlp);
        assert!(load_mlp_weights(&path, 6, ImageShape::new(4, 4, 1), 5).is_err());

        let junk = dir.path().join("junk.ilns");
        std::fs::write(&junk, b"XXXXgarbage").unwrap();
        assert!(load_linear_weights(&junk, 6, shape).is_err());
    }

    #[test]
    fn shape_and_label_checks() {
        let shape = ImageShape::new(2, 2, 1);
        let model = builtin_linear_model(3, shape, 0);
        let other = ImageTensor::filled(ImageShape::new(2, 2, 3), 0.5).unwrap();
        assert!(matches!(model.predict(&other), Err(ModelError::ShapeMismatch { .. })));
        let x = ImageTensor::filled(shape, 0.5).unwrap();
        assert!(matches!(model.loss_gradient(&x, 3), Err(ModelError::LabelOutOfRange { .. })));
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }
}
