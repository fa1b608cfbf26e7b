//! Run configuration: a TOML file, overridden field by field by flags.

use std::path::{Path, PathBuf};

use clap::Args;
use pixint_core::image::{ImageShape, DEFAULT_BATCH_SIZE, DEFAULT_CLAMP};
use pixint_core::perturb::AttackConfig;
use pixint_core::pipeline::{BinSpec, SamplingPlan, AVERAGE_RATIOS, DISTRIBUTION_RATIOS};
use serde::{Deserialize, Serialize};

use crate::models::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub out: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub sampling: SamplingConfig,
    pub attack: AttackSection,
    pub corrupt: CorruptSection,
    pub transfer: TransferSection,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            sampling: SamplingConfig::default(),
            attack: AttackSection::default(),
            corrupt: CorruptSection::default(),
            transfer: TransferSection::default(),
            synth: SynthSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `path,label` CSV.
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub source: String,
    pub targets: Vec<String>,
    pub num_classes: usize,
    /// Hidden width of `builtin:mlp`.
    pub hidden: usize,
    /// Weights for a builtin source model, as written by `export-weights`.
    pub weights: Option<PathBuf>,
    /// `[height, width, channels]`; taken from the data when unset.
    pub input_shape: Option<[usize; 3]>,
    pub timeout_secs: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            source: "builtin:mlp".into(),
            targets: vec!["builtin:mlp@1".into(), "builtin:linear".into()],
            num_classes: 10,
            hidden: 32,
            weights: None,
            input_shape: None,
            timeout_secs: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub num_images: usize,
    pub pairs_per_image: usize,
    pub contexts_per_pair: usize,
    pub pair_radius: f64,
    pub order_ratios: Vec<f64>,
    pub average_ratios: Vec<f64>,
    pub patch_size: usize,
    /// `zero`, `mean`, or per-channel values such as `0.5` or `0.4,0.5,0.6`.
    pub baseline: String,
    pub clamp: f64,
    pub batch_size: usize,
    /// Also write per-image order distributions.
    pub per_image: bool,
    pub hist_lo: f64,
    pub hist_hi: f64,
    pub hist_bins: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        let plan = SamplingPlan::default();
        Self {
            num_images: plan.num_images,
            pairs_per_image: plan.pairs_per_image,
            contexts_per_pair: plan.contexts_per_pair,
            pair_radius: plan.pair_radius,
            order_ratios: DISTRIBUTION_RATIOS.to_vec(),
            average_ratios: AVERAGE_RATIOS.to_vec(),
            patch_size: 16,
            baseline: "zero".into(),
            clamp: DEFAULT_CLAMP,
            batch_size: DEFAULT_BATCH_SIZE,
            per_image: false,
            hist_lo: -2.0,
            hist_hi: 2.0,
            hist_bins: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub epsilon: f64,
    pub steps: usize,
    /// Defaults to `epsilon / steps`.
    pub step_size: Option<f64>,
    /// Budgets for `sweep.csv`.
    pub sweep: Vec<f64>,
    pub warm_start: bool,
}

impl Default for AttackSection {
    fn default() -> Self {
        let a = AttackConfig::default();
        Self {
            epsilon: a.epsilon,
            steps: a.steps,
            step_size: a.step_size,
            // in units of 1/255
            sweep: [0.25, 0.5, 1.0, 2.0, 4.0, 16.0].iter().map(|k| k / 255.0).collect(),
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptSection {
    pub sigma: f64,
}

impl Default for CorruptSection {
    fn default() -> Self {
        Self { sigma: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSection {
    /// Manifest written by `attack`.
    pub attack_manifest: Option<PathBuf>,
    pub order_ratios: Vec<f64>,
}

impl Default for TransferSection {
    fn default() -> Self {
        Self { attack_manifest: None, order_ratios: DISTRIBUTION_RATIOS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { count: 16, height: 64, width: 64, channels: 3 }
    }
}

/// A comma-separated number list given as one flag value. Wrapped so clap
/// treats it as a single value rather than repeated occurrences.
#[derive(Debug, Clone, PartialEq)]
pub struct NumberList(pub Vec<f64>);

fn parse_list(s: &str) -> Result<NumberList, String> {
    if s.trim().is_empty() {
        return Ok(NumberList(Vec::new()));
    }
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<Result<_, _>>()
        .map(NumberList)
}

fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split([',', 'x'])
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("'{t}': {e}")))
        .collect::<Result<_, _>>()?;
    <[usize; 3]>::try_from(v).map_err(|v| format!("expected height,width,channels, got {} values", v.len()))
}

/// Flags mirroring every config field. Unset flags leave the file value alone.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Base seed for every random choice
    #[arg(long, global = true, help_heading = "Run")]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true, help_heading = "Run")]
    pub workers: Option<usize>,
    /// Output directory
    #[arg(long, global = true, help_heading = "Run")]
    pub out: Option<PathBuf>,

    /// Dataset manifest (path,label CSV)
    #[arg(long, global = true, help_heading = "Data")]
    pub manifest: Option<PathBuf>,

    /// Source model: builtin:{linear,mlp,constant}[@SEED] or external:{tcp://HOST:PORT,cmd:PROGRAM ARGS}
    #[arg(long, global = true, help_heading = "Model")]
    pub model: Option<String>,
    /// Target model for transfer (repeatable; replaces the configured list)
    #[arg(long = "target", global = true, help_heading = "Model")]
    pub targets: Vec<String>,
    #[arg(long, global = true, help_heading = "Model")]
    pub num_classes: Option<usize>,
    /// Hidden width of builtin:mlp
    #[arg(long, global = true, help_heading = "Model")]
    pub hidden: Option<usize>,
    /// Weights file for a builtin source model
    #[arg(long, global = true, help_heading = "Model")]
    pub weights: Option<PathBuf>,
    /// Model input shape as H,W,C (default: from the data)
    #[arg(long, global = true, value_parser = parse_shape, help_heading = "Model")]
    pub input_shape: Option<[usize; 3]>,
    /// Seconds to wait for an external model's reply
    #[arg(long, global = true, help_heading = "Model")]
    pub timeout_secs: Option<f64>,

    #[arg(long, global = true, help_heading = "Sampling")]
    pub num_images: Option<usize>,
    #[arg(long, global = true, help_heading = "Sampling")]
    pub pairs_per_image: Option<usize>,
    #[arg(long, global = true, help_heading = "Sampling")]
    pub contexts_per_pair: Option<usize>,
    /// Maximum distance between paired patches, in patches
    #[arg(long, global = true, help_heading = "Sampling")]
    pub pair_radius: Option<f64>,
    /// Comma-separated order ratios in [0, 1]
    #[arg(long, global = true, value_parser = parse_list, help_heading = "Sampling")]
    pub order_ratios: Option<NumberList>,
    /// Comma-separated ratios averaged into each pair's interaction
    #[arg(long, global = true, value_parser = parse_list, help_heading = "Sampling")]
    pub average_ratios: Option<NumberList>,
    /// Patch side length in pixels
    #[arg(long, global = true, help_heading = "Sampling")]
    pub patch_size: Option<usize>,
    /// Mask fill: zero, mean, or comma-separated per-channel values
    #[arg(long, global = true, help_heading = "Sampling")]
    pub baseline: Option<String>,
    /// Probability clamp for the log-odds reward
    #[arg(long, global = true, help_heading = "Sampling")]
    pub clamp: Option<f64>,
    /// Masked images per model call
    #[arg(long, global = true, help_heading = "Sampling")]
    pub batch_size: Option<usize>,
    /// Also write per-image order distributions
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", help_heading = "Sampling")]
    pub per_image: Option<bool>,
    #[arg(long, global = true, allow_negative_numbers = true, help_heading = "Sampling")]
    pub hist_lo: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true, help_heading = "Sampling")]
    pub hist_hi: Option<f64>,
    #[arg(long, global = true, help_heading = "Sampling")]
    pub hist_bins: Option<usize>,

    /// L-infinity budget in pixel units
    #[arg(long, global = true, help_heading = "Attack")]
    pub epsilon: Option<f64>,
    #[arg(long, global = true, help_heading = "Attack")]
    pub steps: Option<usize>,
    /// Per-step size (default epsilon/steps)
    #[arg(long, global = true, help_heading = "Attack")]
    pub step_size: Option<f64>,
    /// Comma-separated budgets for the success-rate sweep
    #[arg(long, global = true, value_parser = parse_list, help_heading = "Attack")]
    pub sweep: Option<NumberList>,
    /// Resume each sweep budget from the previous adversarial image
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", help_heading = "Attack")]
    pub warm_start: Option<bool>,

    /// Gaussian noise standard deviation
    #[arg(long, global = true, help_heading = "Corrupt")]
    pub sigma: Option<f64>,

    /// Manifest written by the attack subcommand
    #[arg(long, global = true, help_heading = "Transfer")]
    pub attack_manifest: Option<PathBuf>,
    /// Comma-separated order ratios at which images are split
    #[arg(long, global = true, value_parser = parse_list, help_heading = "Transfer")]
    pub transfer_ratios: Option<NumberList>,

    #[arg(long, global = true, help_heading = "Synth")]
    pub count: Option<usize>,
    #[arg(long, global = true, help_heading = "Synth")]
    pub height: Option<usize>,
    #[arg(long, global = true, help_heading = "Synth")]
    pub width: Option<usize>,
    #[arg(long, global = true, help_heading = "Synth")]
    pub channels: Option<usize>,
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value {
            $target = v;
        }
    };
}

impl Overrides {
    pub fn apply(&self, c: &mut RunConfig) {
        let o = self.clone();
        set!(c.seed, o.seed);
        set!(c.workers, o.workers);
        set!(c.out, o.out);
        if o.manifest.is_some() {
            c.data.manifest = o.manifest;
        }
        set!(c.model.source, o.model);
        if !o.targets.is_empty() {
            c.model.targets = o.targets;
        }
        set!(c.model.num_classes, o.num_classes);
        set!(c.model.hidden, o.hidden);
        if o.weights.is_some() {
            c.model.weights = o.weights;
        }
        if o.input_shape.is_some() {
            c.model.input_shape = o.input_shape;
        }
        set!(c.model.timeout_secs, o.timeout_secs);
        let s = &mut c.sampling;
        set!(s.num_images, o.num_images);
        set!(s.pairs_per_image, o.pairs_per_image);
        set!(s.contexts_per_pair, o.contexts_per_pair);
        set!(s.pair_radius, o.pair_radius);
        set!(s.order_ratios, o.order_ratios.map(|l| l.0));
        set!(s.average_ratios, o.average_ratios.map(|l| l.0));
        set!(s.patch_size, o.patch_size);
        set!(s.baseline, o.baseline);
        set!(s.clamp, o.clamp);
        set!(s.batch_size, o.batch_size);
        set!(s.per_image, o.per_image);
        set!(s.hist_lo, o.hist_lo);
        set!(s.hist_hi, o.hist_hi);
        set!(s.hist_bins, o.hist_bins);
        set!(c.attack.epsilon, o.epsilon);
        if o.step_size.is_some() {
            c.attack.step_size = o.step_size;
        }
        set!(c.attack.steps, o.steps);
        set!(c.attack.sweep, o.sweep.map(|l| l.0));
        set!(c.attack.warm_start, o.warm_start);
        set!(c.corrupt.sigma, o.sigma);
        if o.attack_manifest.is_some() {
            c.transfer.attack_manifest = o.attack_manifest;
        }
        set!(c.transfer.order_ratios, o.transfer_ratios.map(|l| l.0));
        set!(c.synth.count, o.count);
        set!(c.synth.height, o.height);
        set!(c.synth.width, o.width);
        set!(c.synth.channels, o.channels);
    }
}

/// Reads the file (if any) and applies the flags on top.
pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, Vec<String>> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| vec![format!("config {}: {e}", p.display())])?;
            toml::from_str(&text).map_err(|e| vec![format!("config {}: {}", p.display(), e.message())])?
        }
        None => RunConfig::default(),
    };
    overrides.apply(&mut config);
    Ok(config)
}

/// Which parts of the config a subcommand depends on.
#[derive(Debug, Clone, Copy, Default)]
pub struct Needs {
    pub manifest: bool,
    pub sampling: bool,
    pub attack: bool,
    pub corrupt: bool,
    pub transfer: bool,
    pub synth: bool,
}

impl RunConfig {
    pub fn plan(&self) -> SamplingPlan {
        let s = &self.sampling;
        SamplingPlan {
            num_images: s.num_images,
            pairs_per_image: s.pairs_per_image,
            contexts_per_pair: s.contexts_per_pair,
            pair_radius: s.pair_radius,
            order_ratios: s.order_ratios.clone(),
            average_ratios: s.average_ratios.clone(),
            seed: self.seed,
        }
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig { epsilon: self.attack.epsilon, steps: self.attack.steps, step_size: self.attack.step_size }
    }

    pub fn bins(&self) -> Result<BinSpec, String> {
        BinSpec::new(self.sampling.hist_lo, self.sampling.hist_hi, self.sampling.hist_bins).map_err(|e| e.to_string())
    }

    pub fn input_shape(&self) -> Option<ImageShape> {
        self.model.input_shape.map(|[h, w, c]| ImageShape::new(h, w, c))
    }

    /// Every violated constraint relevant to `needs`.
    pub fn problems(&self, needs: Needs) -> Vec<String> {
        let mut p = Vec::new();
        let m = &self.model;
        if let Err(e) = m.source.parse::<ModelSpec>() {
            p.push(format!("model.source: {e}"));
        }
        if m.num_classes < 2 {
            p.push(format!("model.num_classes {} must be at least 2", m.num_classes));
        }
        if m.hidden == 0 {
            p.push("model.hidden must be at least 1".into());
        }
        if !(m.timeout_secs > 0.0 && m.timeout_secs.is_finite()) {
            p.push(format!("model.timeout_secs {} must be positive", m.timeout_secs));
        }
        if let Some(shape) = m.input_shape {
            if shape.contains(&0) {
                p.push(format!("model.input_shape {shape:?} has a zero dimension"));
            }
        }
        if let Some(w) = &m.weights {
            if !w.is_file() {
                p.push(format!("model.weights {} does not exist", w.display()));
            }
        }
        if needs.manifest {
            match &self.data.manifest {
                None => p.push("data.manifest is required".into()),
                Some(path) if !path.is_file() => p.push(format!("data.manifest {} does not exist", path.display())),
                _ => {}
            }
        }
        if needs.sampling {
            p.extend(self.plan().problems().into_iter().map(|e| format!("sampling: {e}")));
            let s = &self.sampling;
            if s.patch_size == 0 {
                p.push("sampling.patch_size must be at least 1".into());
            }
            if !(s.clamp > 0.0 && s.clamp < 0.5) {
                p.push(format!("sampling.clamp {} must lie in (0, 0.5)", s.clamp));
            }
            if s.batch_size == 0 {
                p.push("sampling.batch_size must be at least 1".into());
            }
            if let Err(e) = crate::models::parse_baseline(&s.baseline) {
                p.push(format!("sampling.baseline: {e}"));
            }
            if let Err(e) = self.bins() {
                p.push(format!("sampling histogram: {e}"));
            }
        }
        if needs.attack {
            if let Err(e) = self.attack_config().validate() {
                p.push(format!("attack: {e}"));
            }
            for &e in &self.attack.sweep {
                if let Err(err) = self.attack_config().with_epsilon(e).validate() {
                    p.push(format!("attack.sweep: {err}"));
                }
            }
        }
        if needs.corrupt && !(self.corrupt.sigma >= 0.0 && self.corrupt.sigma.is_finite()) {
            p.push(format!("corrupt.sigma {} must be a finite non-negative number", self.corrupt.sigma));
        }
        if needs.transfer {
            match &self.transfer.attack_manifest {
                None => p.push("transfer.attack_manifest is required".into()),
                Some(path) if !path.is_file() => {
                    p.push(format!("transfer.attack_manifest {} does not exist", path.display()))
                }
                _ => {}
            }
            if m.targets.is_empty() {
                p.push("model.targets must name at least one target".into());
            }
            for t in &m.targets {
                if let Err(e) = t.parse::<ModelSpec>() {
                    p.push(format!("model.targets: {e}"));
                }
            }
            let plan = SamplingPlan {
                order_ratios: self.transfer.order_ratios.clone(),
                average_ratios: self.transfer.order_ratios.clone(),
                ..self.plan()
            };
            p.extend(plan.problems().into_iter().map(|e| format!("transfer: {e}")));
        }
        if needs.synth {
            let s = &self.synth;
            if s.count == 0 || s.height == 0 || s.width == 0 || s.channels == 0 {
                p.push(format!("synth: count, height, width and channels must be positive, got {s:?}"));
            }
        }
        p
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
