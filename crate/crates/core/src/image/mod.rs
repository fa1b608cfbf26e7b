//! Images as cooperative games.
//!
//! An image is cut into a grid of square patches; each patch is one player.
//! A coalition keeps its patches and replaces every other pixel with the mask
//! baseline, and the reward is the log-odds of the true class under the masked
//! image.

mod grid;
pub mod io;
mod model;
mod oracle;
pub mod protocol;
mod tensor;

pub use grid::{apply_mask, MaskBaseline, PatchGrid};
pub use model::{
    argmax, builtin_linear_model, builtin_mlp_model, cross_entropy, gradient_deviation, load_linear_weights,
    load_mlp_weights, Classifier, ConstantModel, LinearModel, MaskedPredictor, MlpModel, ModelError,
};
pub use oracle::{make_set_function, reward_log_odds, ClassifierOracle, ImageGame, DEFAULT_BATCH_SIZE, DEFAULT_CLAMP};
pub use tensor::{ImageShape, ImageTensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
