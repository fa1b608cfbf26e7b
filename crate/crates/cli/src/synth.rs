//! Seeded toy images: smooth plane waves plus pixel noise, labelled by the
//! source model so every clean image starts out correctly classified.

use std::f64::consts::TAU;
use std::fs;
use std::path::PathBuf;

use pixint_core::image::io::{write_image_raw, write_manifest, ManifestEntry};
use pixint_core::image::{argmax, ImageShape, ImageTensor};
use pixint_core::rng::{stream_rng, tag};
use rand::Rng;

use crate::config::RunConfig;
use crate::{models, Failure};

pub fn toy_image(shape: ImageShape, seed: u64, index: u64) -> ImageTensor {
    let mut rng = stream_rng(seed, &[tag::SYNTH, index]);
    let (h, w) = (shape.height as f64, shape.width as f64);
    let mut data = Vec::with_capacity(shape.len());
    for _ in 0..shape.channels {
        let base: f64 = rng.random_range(0.3..0.7);
        let waves: Vec<[f64; 4]> = (0..3)
            .map(|_| {
                [
                    rng.random_range(0.5..4.0) * TAU / h,
                    rng.random_range(0.5..4.0) * TAU / w,
                    rng.random_range(0.0..TAU),
                    rng.random_range(0.05..0.15),
                ]
            })
            .collect();
        for y in 0..shape.height {
            for x in 0..shape.width {
                let wave: f64 =
                    waves.iter().map(|[fy, fx, ph, a]| a * (fy * y as f64 + fx * x as f64 + ph).sin()).sum();
                let noise: f64 = rng.random_range(-0.02..0.02);
                data.push((base + wave + noise).clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(shape, data).expect("values are clamped")
}

pub fn synth(cfg: &RunConfig) -> Result<(), Failure> {
    let s = &cfg.synth;
    let shape = ImageShape::new(s.height, s.width, s.channels);
    if let Some(want) = cfg.input_shape() {
        if want != shape {
            return Err(Failure::config(format!("model.input_shape {want} differs from the synth shape {shape}")));
        }
    }
    let model = models::build(&cfg.model.source, &cfg.model, shape, cfg.model.weights.as_deref())?;
    fs::create_dir_all(cfg.out.join("images")).map_err(anyhow::Error::from)?;
    fs::write(cfg.out.join("effective_config.toml"), cfg.to_toml()).map_err(anyhow::Error::from)?;
    let mut entries = Vec::with_capacity(s.count);
    for k in 0..s.count {
        let img = toy_image(shape, cfg.seed, k as u64);
        let label = argmax(&model.predict(&img).map_err(anyhow::Error::from)?);
        let rel = PathBuf::from(format!("images/{k:05}.raw"));
        write_image_raw(&cfg.out.join(&rel), &img).map_err(anyhow::Error::from)?;
        entries.push(ManifestEntry { path: rel, label });
    }
    let manifest = cfg.out.join("manifest.csv");
    write_manifest(&manifest, &entries).map_err(anyhow::Error::from)?;
    eprintln!("{} images of {shape} written; manifest {}", s.count, manifest.display());
    Ok(())
}
