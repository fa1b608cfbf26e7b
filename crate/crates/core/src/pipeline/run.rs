use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_pairs, OrderGrid, PipelineError, SamplingPlan};
use crate::game::interaction::{combine, delta_coalitions};
use crate::game::{evaluate_all, sample_contexts, CachedGame, SetFunction, DEFAULT_CACHE_CAPACITY};
use crate::image::io::LabeledImage;
use crate::image::{argmax, make_set_function, Classifier, ClassifierOracle, ImageGame, MaskBaseline, PatchGrid};
use crate::rng::{derive_seed, stream_rng, tag};

/// One `Δf(i, j, S)` observation with its full provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSample {
    pub image_id: usize,
    pub pair_index: usize,
    pub i: usize,
    pub j: usize,
    pub order_ratio: f64,
    pub order: usize,
    pub context_id: usize,
    pub value: f64,
}

/// An observation that could not be made. `context_id` and `pair` are absent
/// when the whole image failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub image_id: usize,
    pub pair: Option<(usize, usize)>,
    pub order_ratio: Option<f64>,
    pub context_id: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: usize,
    pub label: usize,
    pub predicted: Option<usize>,
    pub num_players: usize,
    pub pairs_with_replacement: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ProtocolRun {
    pub samples: Vec<InteractionSample>,
    pub failures: Vec<SampleFailure>,
    pub images: Vec<ImageRecord>,
}

/// Produces the game analyzed for each image.
pub trait GameSource: Sync {
    type Game: SetFunction;

    fn grid(&self, image: &LabeledImage) -> Result<PatchGrid, PipelineError>;

    fn game(&self, image: &LabeledImage) -> Result<Self::Game, PipelineError>;

    /// Top-1 prediction on the clean image, when the source has one.
    fn predict(&self, _image: &LabeledImage) -> Result<Option<usize>, PipelineError> {
        Ok(None)
    }
}

/// Log-odds reward of a classifier under patch masking, memoized per image.
#[derive(Clone)]
pub struct ClassifierSource {
    pub model: Arc<dyn Classifier>,
    pub baseline: MaskBaseline,
    pub patch_size: usize,
    pub clamp: f64,
    pub batch_size: usize,
    pub cache_capacity: usize,
}

impl ClassifierSource {
    pub fn new(model: Arc<dyn Classifier>, baseline: MaskBaseline, patch_size: usize) -> Self {
        Self {
            model,
            baseline,
            patch_size,
            clamp: crate::image::DEFAULT_CLAMP,
            batch_size: crate::image::DEFAULT_BATCH_SIZE,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
        }
    }
}

impl GameSource for ClassifierSource {
    type Game = CachedGame<ImageGame>;

    fn grid(&self, image: &LabeledImage) -> Result<PatchGrid, PipelineError> {
        Ok(PatchGrid::for_shape(image.image.shape(), self.patch_size)?)
    }

    fn game(&self, image: &LabeledImage) -> Result<Self::Game, PipelineError> {
        let mut oracle =
            ClassifierOracle::new(self.model.clone(), image.label, self.baseline.clone(), self.grid(image)?);
        oracle.clamp = self.clamp;
        oracle.batch_size = self.batch_size;
        let game = make_set_function(oracle, image.image.clone())?;
        Ok(CachedGame::with_capacity(game, self.cache_capacity))
    }

    fn predict(&self, image: &LabeledImage) -> Result<Option<usize>, PipelineError> {
        let p = self
            .model
            .predict(&image.image)
            .map_err(|e| PipelineError::Config(format!("prediction failed for image {}: {e}", image.id)))?;
        Ok(Some(argmax(&p)))
    }
}

/// Picks `plan.num_images` images (seeded), returned in input order.
fn select_images<'a>(images: &'a [LabeledImage], plan: &SamplingPlan) -> Vec<&'a LabeledImage> {
    if plan.num_images >= images.len() {
        return images.iter().collect();
    }
    let mut idx: Vec<usize> = (0..images.len()).collect();
    idx.shuffle(&mut stream_rng(plan.seed, &[tag::IMAGES]));
    idx.truncate(plan.num_images);
    idx.sort_unstable();
    idx.into_iter().map(|k| &images[k]).collect()
}

struct PairOutput {
    samples: Vec<InteractionSample>,
    failures: Vec<SampleFailure>,
}

fn measure_pair<G: SetFunction>(
    game: &G,
    image_id: usize,
    pair_index: usize,
    (i, j): (usize, usize),
    orders: &[(f64, usize)],
    plan: &SamplingPlan,
) -> PairOutput {
    let n = game.num_players();
    let mut out = PairOutput { samples: Vec::new(), failures: Vec::new() };
    for (ratio_index, &(ratio, s)) in orders.iter().enumerate() {
        let seed = derive_seed(plan.seed, &[tag::CONTEXT, image_id as u64, pair_index as u64, ratio_index as u64]);
        let draw = match sample_contexts(n, i, j, s, plan.contexts_per_pair, seed) {
            Ok(d) => d,
            Err(e) => {
                out.failures.push(SampleFailure {
                    image_id,
                    pair: Some((i, j)),
                    order_ratio: Some(ratio),
                    context_id: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let coalitions: Vec<_> = draw.contexts.iter().flat_map(|c| delta_coalitions(i, j, c)).collect();
        let values = evaluate_all(game, &coalitions);
        for (context_id, quad) in values.chunks(4).enumerate() {
            let collected: Result<Vec<f64>, _> = quad.iter().cloned().collect();
            match collected {
                Ok(v) => out.samples.push(InteractionSample {
                    image_id,
                    pair_index,
                    i,
                    j,
                    order_ratio: ratio,
                    order: s,
                    context_id,
                    value: combine([v[0], v[1], v[2], v[3]]),
                }),
                Err(e) => out.failures.push(SampleFailure {
                    image_id,
                    pair: Some((i, j)),
                    order_ratio: Some(ratio),
                    context_id: Some(context_id),
                    message: e.to_string(),
                }),
            }
        }
    }
    out
}

fn image_failure(image_id: usize, e: impl ToString) -> SampleFailure {
    SampleFailure { image_id, pair: None, order_ratio: None, context_id: None, message: e.to_string() }
}

/// Runs the sampling protocol over `images`.
///
/// Evaluation failures are recorded in [`ProtocolRun::failures`] and skipped.
/// The output depends only on the inputs and `plan.seed`, not on the number
/// of worker threads.
pub fn run_protocol<S: GameSource>(
    images: &[LabeledImage],
    source: &S,
    plan: &SamplingPlan,
) -> Result<ProtocolRun, PipelineError> {
    plan.validate()?;
    if images.is_empty() {
        return Err(PipelineError::Config("no images to analyze".into()));
    }
    let grid = OrderGrid::new(plan.order_ratios.clone());
    let selected = select_images(images, plan);

    let per_image: Vec<ProtocolRun> = selected
        .par_iter()
        .map(|image| {
            let mut run = ProtocolRun::default();
            let predicted = match source.predict(image) {
                Ok(p) => p,
                Err(e) => {
                    run.failures.push(image_failure(image.id, e));
                    None
                }
            };
            let setup = source.grid(image).and_then(|g| {
                let draw = sample_pairs(
                    &g,
                    plan.pairs_per_image,
                    plan.pair_radius,
                    derive_seed(plan.seed, &[tag::PAIRS, image.id as u64]),
                )?;
                Ok((g, draw, source.game(image)?))
            });
            let (patch_grid, draw, game) = match setup {
                Ok(v) => v,
                Err(e) => {
                    run.failures.push(image_failure(image.id, e));
                    run.images.push(ImageRecord {
                        image_id: image.id,
                        label: image.label,
                        predicted,
                        num_players: 0,
                        pairs_with_replacement: false,
                    });
                    return run;
                }
            };
            let n = patch_grid.num_players();
            let orders = grid.realize(n).per_ratio;
            let pairs: Vec<PairOutput> = draw
                .pairs
                .par_iter()
                .enumerate()
                .map(|(k, &pair)| measure_pair(&game, image.id, k, pair, &orders, plan))
                .collect();
            for p in pairs {
                run.samples.extend(p.samples);
                run.failures.extend(p.failures);
            }
            run.images.push(ImageRecord {
                image_id: image.id,
                label: image.label,
                predicted,
                num_players: n,
                pairs_with_replacement: draw.with_replacement,
            });
            run
        })
        .collect();

    let mut out = ProtocolRun::default();
    for r in per_image {
        out.samples.extend(r.samples);
        out.failures.extend(r.failures);
        out.images.extend(r.images);
    }
    Ok(out)
}
