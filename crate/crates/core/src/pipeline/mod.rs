//! The measurement protocol: sample patch pairs near each other, draw contexts
//! at a grid of orders, record every `Δf`, and summarize.

mod output;
mod pairs;
mod plan;
mod run;
mod stats;

pub use output::{
    write_averages_csv, write_histogram_csv, write_order_distribution_csv, write_samples_csv, write_strength_csv,
};
pub use pairs::{eligible_pairs, sample_pairs, PairDraw};
pub use plan::{OrderGrid, RealizedOrders, SamplingPlan, AVERAGE_RATIOS, DISTRIBUTION_RATIOS};
pub use run::{run_protocol, ClassifierSource, GameSource, ImageRecord, InteractionSample, ProtocolRun, SampleFailure};
pub use stats::{
    average_interaction, average_interaction_histogram, image_averages, interaction_strength, order_averages,
    order_distribution, per_image_order_distribution, BinSpec, Histogram, OrderDistribution, OrderRow,
};

use thiserror::Error;

use crate::game::GameError;
use crate::image::ImageError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("image {image_id} lacks samples at order ratios {missing:?}")]
    MissingOrders { image_id: usize, missing: Vec<f64> },
    #[error("interaction strength is undefined: every interaction is zero")]
    UndefinedStrength,
    #[error("no samples to summarize")]
    Empty,
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
