//! Game-theoretic multi-order interactions between image patches.
//!
//! The crate is organised by stage:
//!
//! - [`game`]: coalitions, Shapley values, pairwise and multi-order
//!   interactions over arbitrary set functions.
//! - [`image`]: patch grids, masking, the log-odds reward, built-in toy
//!   classifiers, file formats and the external-oracle wire protocol.
//! - [`pipeline`]: the sampling protocol that turns a labeled image set into
//!   interaction samples, quartile distributions, averages and strengths.
//! - [`perturb`]: I-FGSM adversarial examples, Gaussian noise, and the
//!   attack-success sweep.
//! - [`transfer`]: median-split transferability analysis.

pub mod game;
pub mod image;
pub mod numeric;
pub mod perturb;
pub mod pipeline;
pub mod rng;
pub mod transfer;

pub use game::{Coalition, GameError, MultiOrderEstimate, SetFunction};
pub use image::{Classifier, ImageTensor, MaskBaseline, PatchGrid};
pub use perturb::{AttackConfig, AttackOutcome, CorruptionConfig};
pub use pipeline::{InteractionSample, OrderDistribution, SamplingPlan};
pub use transfer::{TransferPlan, TransferReport};
