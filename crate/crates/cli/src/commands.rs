use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use pixint_core::image::io::{
    load_dataset, read_image_raw, write_image_raw, write_manifest, LabeledImage, ManifestEntry,
};
use pixint_core::image::{argmax, Classifier, ImageShape, ImageTensor, PatchGrid};
use pixint_core::perturb::{
    gaussian_corrupt, ifgsm, quantize_within, success_rate_sweep, AttackError, AttackOutcome, CorruptionConfig,
};
use pixint_core::pipeline::{
    average_interaction_histogram, image_averages, interaction_strength, order_averages, order_distribution,
    per_image_order_distribution, run_protocol, write_averages_csv, write_histogram_csv, write_order_distribution_csv,
    write_samples_csv, ClassifierSource, InteractionSample, PipelineError, ProtocolRun, SampleFailure, SamplingPlan,
};
use pixint_core::rng::{derive_seed, tag};
use pixint_core::transfer::{transfer_curve, TransferPlan};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::models;
use crate::Failure;

type Outcome = Result<(), Failure>;

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create(path)?))
}

/// Creates the output directory and records the merged config in it.
fn prepare_out(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    fs::write(cfg.out.join("effective_config.toml"), cfg.to_toml())?;
    Ok(cfg.out.clone())
}

fn load_images(cfg: &RunConfig) -> Result<(Vec<LabeledImage>, ImageShape), Failure> {
    let manifest = cfg.data.manifest.as_ref().ok_or_else(|| Failure::config("data.manifest is required"))?;
    let images = load_dataset(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    let shape = common_shape(&images, cfg)?;
    Ok((images, shape))
}

fn common_shape(images: &[LabeledImage], cfg: &RunConfig) -> Result<ImageShape, Failure> {
    let first = images.first().ok_or_else(|| Failure::config("the manifest lists no images"))?;
    let shape = first.image.shape();
    if let Some(bad) = images.iter().find(|i| i.image.shape() != shape) {
        return Err(Failure::config(format!("image {} is {}, others are {shape}", bad.id, bad.image.shape())));
    }
    if let Some(want) = cfg.input_shape() {
        if want != shape {
            return Err(Failure::config(format!("model.input_shape is {want} but the images are {shape}")));
        }
    }
    if let Some(bad) = images.iter().find(|i| i.label >= cfg.model.num_classes) {
        return Err(Failure::config(format!(
            "image {} has label {} but model.num_classes is {}",
            bad.id, bad.label, cfg.model.num_classes
        )));
    }
    Ok(shape)
}

fn source_for(
    cfg: &RunConfig,
    images: &[LabeledImage],
    shape: ImageShape,
    model: Arc<dyn Classifier>,
) -> Result<ClassifierSource, Failure> {
    PatchGrid::for_shape(shape, cfg.sampling.patch_size)
        .map_err(|e| Failure::config(format!("sampling.patch_size: {e}")))?;
    let baseline = models::baseline(&cfg.sampling.baseline, images.iter().map(|i| &i.image))?;
    let mut source = ClassifierSource::new(model, baseline, cfg.sampling.patch_size);
    source.clamp = cfg.sampling.clamp;
    source.batch_size = cfg.sampling.batch_size;
    Ok(source)
}

fn write_failures(path: &Path, failures: &[SampleFailure]) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["image_id", "i", "j", "order_ratio", "context_id", "message"])?;
    let opt = |v: Option<String>| v.unwrap_or_else(|| "NA".into());
    for f in failures {
        w.write_record([
            f.image_id.to_string(),
            opt(f.pair.map(|p| p.0.to_string())),
            opt(f.pair.map(|p| p.1.to_string())),
            opt(f.order_ratio.map(|r| r.to_string())),
            opt(f.context_id.map(|c| c.to_string())),
            f.message.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn report_failures(run: &ProtocolRun) {
    if let Some(first) = run.failures.first() {
        eprintln!("warning: {} evaluations failed and were skipped; first: {}", run.failures.len(), first.message);
    }
}

pub fn interactions(cfg: &RunConfig) -> Outcome {
    let (images, shape) = load_images(cfg)?;
    let model = models::build(&cfg.model.source, &cfg.model, shape, cfg.model.weights.as_deref())?;
    let source = source_for(cfg, &images, shape, model)?;
    let plan = cfg.plan();
    let out = prepare_out(cfg)?;
    let run = run_protocol(&images, &source, &plan).map_err(pipeline_failure)?;
    report_failures(&run);

    write_samples_csv(create(&out.join("samples.csv"))?, &run.samples)?;
    let dist = order_distribution(&run.samples, &plan.order_ratios);
    write_order_distribution_csv(create(&out.join("order_dist.csv"))?, &[(None, &dist)])?;
    if cfg.sampling.per_image {
        let per = per_image_order_distribution(&run.samples, &plan.order_ratios);
        let rows: Vec<_> = per.iter().map(|(id, d)| (Some(*id), d)).collect();
        write_order_distribution_csv(create(&out.join("order_dist_per_image.csv"))?, &rows)?;
    }
    let averages = image_averages(&run, &plan.average_ratios);
    write_averages_csv(create(&out.join("averages.csv"))?, &averages)?;
    write_strength(&out.join("strength.csv"), &run.samples, &plan.order_ratios)?;

    let values: Vec<f64> = averages.iter().filter_map(|a| a.average).collect();
    let bins = cfg.bins().map_err(Failure::config)?;
    match average_interaction_histogram(&values, bins) {
        Ok(h) => {
            if h.below + h.above > 0 {
                eprintln!("warning: {} averages fall outside the histogram range", h.below + h.above);
            }
            write_histogram_csv(create(&out.join("histogram.csv"))?, &h)?;
        }
        Err(PipelineError::Empty) => {
            eprintln!("warning: no image has a complete set of orders; histogram.csv is empty");
            fs::write(out.join("histogram.csv"), "bin_lo,bin_hi,count\n")?;
        }
        Err(e) => return Err(pipeline_failure(e)),
    }
    write_failures(&out.join("failures.csv"), &run.failures)?;
    eprintln!("{} samples from {} images written to {}", run.samples.len(), run.images.len(), out.display());
    Ok(())
}

/// Undefined strengths (an all-zero run, or missing orders) are written as `NA`.
fn write_strength(path: &Path, samples: &[InteractionSample], ratios: &[f64]) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["order_ratio", "J"])?;
    match interaction_strength(samples, ratios) {
        Ok(rows) => {
            for (r, j) in rows {
                w.write_record([r.to_string(), j.to_string()])?;
            }
        }
        Err(e) => {
            eprintln!("warning: interaction strength undefined: {e}");
            for r in ratios {
                w.write_record([r.to_string(), "NA".into()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::Config(m) => Failure::config(m),
        other => Failure::Runtime(other.into()),
    }
}

fn attack_failure(e: AttackError) -> Failure {
    match e {
        AttackError::Config(m) => Failure::config(m),
        other => Failure::Runtime(other.into()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackRow {
    pub clean_path: String,
    pub adv_path: String,
    pub label: usize,
    pub pred_clean: usize,
    pub pred_adv: usize,
    pub success: bool,
}

fn display_path(image: &LabeledImage) -> String {
    image.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

pub fn attack(cfg: &RunConfig) -> Outcome {
    let (images, shape) = load_images(cfg)?;
    let model = models::build(&cfg.model.source, &cfg.model, shape, cfg.model.weights.as_deref())?;
    if !model.supports_gradient() {
        return Err(Failure::config(format!("{} provides no input gradients to attack", cfg.model.source)));
    }
    let acfg = cfg.attack_config();
    acfg.validate().map_err(attack_failure)?;
    let out = prepare_out(cfg)?;
    fs::create_dir_all(out.join("adv"))?;

    let results: Vec<anyhow::Result<(ImageTensor, usize, usize)>> = images
        .par_iter()
        .map(|img| {
            let pred_clean = argmax(&model.predict(&img.image)?);
            // stored as f32, so round before predicting to keep the manifest truthful
            let adv = quantize_within(&ifgsm(model.as_ref(), &img.image, img.label, &acfg)?, &img.image, acfg.epsilon)?;
            let pred_adv = argmax(&model.predict(&adv)?);
            Ok((adv, pred_clean, pred_adv))
        })
        .collect();

    let mut w = csv_writer(&out.join("attack_manifest.csv"))?;
    let mut successes = 0;
    for (img, result) in images.iter().zip(results) {
        let (adv, pred_clean, pred_adv) = result.with_context(|| format!("attacking image {}", img.id))?;
        let rel = format!("adv/{:05}.raw", img.id);
        write_image_raw(&out.join(&rel), &adv)?;
        let success = pred_adv != img.label;
        successes += usize::from(success);
        w.serialize(AttackRow {
            clean_path: display_path(img),
            adv_path: rel,
            label: img.label,
            pred_clean,
            pred_adv,
            success,
        })?;
    }
    w.flush()?;

    let eps = if cfg.attack.sweep.is_empty() { vec![acfg.epsilon] } else { cfg.attack.sweep.clone() };
    let mut sw = csv_writer(&out.join("sweep.csv"))?;
    sw.write_record(["epsilon", "success_rate"])?;
    match success_rate_sweep(model.as_ref(), &images, &eps, &acfg, cfg.attack.warm_start) {
        Ok(report) => {
            if report.excluded > 0 {
                eprintln!("sweep: {} misclassified clean images excluded", report.excluded);
            }
            for r in &report.rows {
                sw.write_record([r.epsilon.to_string(), r.success_rate.to_string()])?;
            }
        }
        Err(AttackError::NoEligibleImages) => {
            eprintln!("warning: no clean image is classified correctly; sweep.csv is empty")
        }
        Err(e) => return Err(attack_failure(e)),
    }
    sw.flush()?;
    eprintln!(
        "{successes}/{} adversarial images fool {}; written to {}",
        images.len(),
        cfg.model.source,
        out.display()
    );
    Ok(())
}

pub fn corrupt(cfg: &RunConfig) -> Outcome {
    let (images, _) = load_images(cfg)?;
    let out = prepare_out(cfg)?;
    fs::create_dir_all(out.join("corrupt"))?;
    let noisy: Vec<anyhow::Result<ImageTensor>> = images
        .par_iter()
        .map(|img| {
            let seed = derive_seed(cfg.seed, &[tag::NOISE, img.id as u64]);
            Ok(gaussian_corrupt(&img.image, &CorruptionConfig { sigma: cfg.corrupt.sigma, seed })?)
        })
        .collect();
    let mut entries = Vec::with_capacity(images.len());
    for (img, x) in images.iter().zip(noisy) {
        let rel = PathBuf::from(format!("corrupt/{:05}.raw", img.id));
        write_image_raw(&out.join(&rel), &x?)?;
        entries.push(ManifestEntry { path: rel, label: img.label });
    }
    write_manifest(&out.join("corrupt_manifest.csv"), &entries)?;
    eprintln!("{} corrupted images written to {}", entries.len(), out.display());
    Ok(())
}

fn read_attack_manifest(path: &Path) -> anyhow::Result<Vec<(AttackRow, PathBuf)>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    reader
        .deserialize::<AttackRow>()
        .map(|row| {
            let row = row.with_context(|| format!("parsing {}", path.display()))?;
            let adv = base.join(&row.adv_path);
            Ok((row, adv))
        })
        .collect()
}

pub fn transfer(cfg: &RunConfig) -> Outcome {
    let manifest =
        cfg.transfer.attack_manifest.as_ref().ok_or_else(|| Failure::config("transfer.attack_manifest is required"))?;
    let rows = read_attack_manifest(manifest)?;
    let mut images = Vec::new();
    let mut source_preds = Vec::new();
    for (id, (row, adv)) in rows.iter().enumerate() {
        if row.success {
            let image = read_image_raw(adv)?;
            images.push(LabeledImage { id, path: Some(adv.clone()), image, label: row.label });
            source_preds.push(row.pred_adv);
        }
    }
    if images.len() < 2 {
        return Err(Failure::Runtime(anyhow!(
            "{} of {} adversarial images fooled the source; at least 2 are needed",
            images.len(),
            rows.len()
        )));
    }
    let shape = common_shape(&images, cfg)?;
    let ratios = cfg.transfer.order_ratios.clone();
    let model = models::build(&cfg.model.source, &cfg.model, shape, cfg.model.weights.as_deref())?;
    let source = source_for(cfg, &images, shape, model)?;
    let plan = SamplingPlan {
        num_images: images.len(),
        order_ratios: ratios.clone(),
        average_ratios: ratios.clone(),
        ..cfg.plan()
    };
    let out = prepare_out(cfg)?;
    let run = run_protocol(&images, &source, &plan).map_err(pipeline_failure)?;
    report_failures(&run);

    let targets: Vec<(String, Arc<dyn Classifier>)> = cfg
        .model
        .targets
        .iter()
        .map(|t| models::build(t, &cfg.model, shape, None).map(|m| (t.clone(), m)))
        .collect::<anyhow::Result<_>>()?;
    let refs: Vec<&ImageTensor> = images.iter().map(|i| &i.image).collect();
    let mut fooled: Vec<Vec<bool>> = Vec::new();
    for (name, target) in &targets {
        let mut flags = Vec::with_capacity(refs.len());
        for chunk in refs.chunks(cfg.sampling.batch_size) {
            let probs = target.predict_batch(chunk).with_context(|| format!("querying {name}"))?;
            flags.extend(probs.iter().map(|p| argmax(p)));
        }
        fooled.push(flags.iter().zip(&images).map(|(p, img)| *p != img.label).collect());
    }

    let mut outcomes = Vec::new();
    let mut aw = csv_writer(&out.join("order_averages.csv"))?;
    aw.write_record(["image_id", "order_ratio", "avg_interaction"])?;
    for (k, img) in images.iter().enumerate() {
        let mine: Vec<InteractionSample> = run.samples.iter().filter(|s| s.image_id == img.id).cloned().collect();
        let averages = match order_averages(&mine, &ratios) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("warning: image {} dropped: {e}", img.id);
                continue;
            }
        };
        for (r, v) in &averages {
            aw.write_record([img.id.to_string(), r.to_string(), v.to_string()])?;
        }
        outcomes.push(AttackOutcome {
            image_id: img.id,
            adversarial: img.image.clone(),
            label: img.label,
            source_prediction: source_preds[k],
            source_success: true,
            transfers: targets.iter().zip(&fooled).map(|((n, _), f)| (n.clone(), f[k])).collect(),
            order_averages: averages,
        });
    }
    aw.flush()?;
    let plan = TransferPlan {
        source: cfg.model.source.clone(),
        targets: targets.iter().map(|(n, _)| n.clone()).collect(),
        order_ratios: ratios,
        seed: cfg.seed,
    };
    let report = transfer_curve(&outcomes, &plan)?;
    report.write_csv(create(&out.join("transfer_report.csv"))?)?;
    eprintln!("transfer report over {} images written to {}", outcomes.len(), out.display());
    Ok(())
}

pub fn export_weights(cfg: &RunConfig, path: &Path) -> Outcome {
    let shape = cfg.input_shape().ok_or_else(|| Failure::config("export-weights needs model.input_shape"))?;
    use crate::models::{BuiltinKind, ModelSpec};
    use pixint_core::image::{builtin_linear_model, builtin_mlp_model};
    let spec: ModelSpec = cfg.model.source.parse().map_err(Failure::config)?;
    match spec {
        ModelSpec::Builtin { kind: BuiltinKind::Linear, seed } => {
            builtin_linear_model(cfg.model.num_classes, shape, seed).save_weights(path)?
        }
        ModelSpec::Builtin { kind: BuiltinKind::Mlp, seed } => {
            builtin_mlp_model(cfg.model.num_classes, shape, cfg.model.hidden, seed).save_weights(path)?
        }
        _ => return Err(Failure::config(format!("{} has no exportable weights", cfg.model.source))),
    }
    eprintln!("weights of {} written to {}", cfg.model.source, path.display());
    Ok(())
}

/// Serves the source model on stdin/stdout.
pub fn serve(cfg: &RunConfig) -> Outcome {
    let shape = cfg.input_shape().ok_or_else(|| Failure::config("serve needs model.input_shape"))?;
    let model = models::build(&cfg.model.source, &cfg.model, shape, cfg.model.weights.as_deref())?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    pixint_core::image::protocol::serve(stdin.lock(), stdout.lock(), model.as_ref(), &Default::default())
        .context("serving")?;
    Ok(())
}
