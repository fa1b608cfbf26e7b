use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use pixint_core::game::fixtures::TableGame;
use pixint_core::game::{
    multi_order_exact, multi_order_sampled, shapley_exact, Coalition, ExhaustiveLimits, SetFunction,
};
use pixint_core::image::io::LabeledImage;
use pixint_core::image::{
    apply_mask, builtin_mlp_model, make_set_function, ClassifierOracle, ImageShape, ImageTensor, MaskBaseline,
    PatchGrid,
};
use pixint_core::pipeline::{run_protocol, ClassifierSource, SamplingPlan};

fn games(c: &mut Criterion) {
    let limits = ExhaustiveLimits::default();
    let g = TableGame::random(14, 1);
    c.bench_function("shapley_exact n=14", |b| b.iter(|| shapley_exact(&g, black_box(3), &limits).unwrap()));
    c.bench_function("multi_order_exact n=14 s=6", |b| {
        b.iter(|| multi_order_exact(&g, 0, 5, black_box(6), &limits).unwrap())
    });
    c.bench_function("multi_order_sampled n=14 s=6 k=100", |b| {
        b.iter(|| multi_order_sampled(&g, 0, 5, 6, 100, black_box(7)).unwrap())
    });
}

fn image(shape: ImageShape) -> ImageTensor {
    ImageTensor::new(shape, (0..shape.len()).map(|k| (k % 255) as f64 / 255.0).collect()).unwrap()
}

fn masking(c: &mut Criterion) {
    let shape = ImageShape::new(64, 64, 3);
    let x = image(shape);
    let grid = PatchGrid::for_shape(shape, 16).unwrap();
    let model = Arc::new(builtin_mlp_model(10, shape, 32, 0));
    let coalitions: Vec<Coalition> =
        (0..64u64).map(|m| Coalition::from_mask(16, m.wrapping_mul(0x9e37) & 0xffff).unwrap()).collect();

    c.bench_function("apply_mask 64x64x3", |b| {
        b.iter(|| apply_mask(&x, black_box(&coalitions[5]), &grid, &MaskBaseline::Zero).unwrap())
    });
    let game = make_set_function(ClassifierOracle::new(model.clone(), 0, MaskBaseline::Zero, grid), x.clone()).unwrap();
    c.bench_function("image game, 64 coalitions", |b| b.iter(|| game.evaluate_batch(black_box(&coalitions))));
    c.bench_function("image game setup", |b| {
        b.iter_batched(
            || ClassifierOracle::new(model.clone(), 0, MaskBaseline::Zero, grid),
            |o| make_set_function(o, x.clone()).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn pipeline(c: &mut Criterion) {
    let shape = ImageShape::new(64, 64, 3);
    let images: Vec<LabeledImage> =
        (0..2).map(|id| LabeledImage { id, path: None, image: image(shape), label: id }).collect();
    let source = ClassifierSource::new(Arc::new(builtin_mlp_model(10, shape, 32, 0)), MaskBaseline::Zero, 16);
    let plan = SamplingPlan { num_images: 2, pairs_per_image: 10, contexts_per_pair: 10, ..Default::default() };
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("2 images, 10 pairs x 10 contexts", |b| {
        b.iter(|| run_protocol(&images, &source, &plan).unwrap())
    });
    group.finish();
}

criterion_group!(benches, games, masking, pipeline);
criterion_main!(benches);
