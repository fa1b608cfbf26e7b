//! Model specs such as `builtin:mlp@3` or `external:tcp://127.0.0.1:7000`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use pixint_core::image::protocol::{external_oracle_client, ClientConfig, Endpoint};
use pixint_core::image::{
    builtin_linear_model, builtin_mlp_model, load_linear_weights, load_mlp_weights, Classifier, ConstantModel,
    ImageShape, ImageTensor, MaskBaseline,
};

use crate::config::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinKind {
    Linear,
    Mlp,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    Builtin { kind: BuiltinKind, seed: u64 },
    External(Endpoint),
}

impl FromStr for ModelSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("builtin:") {
            let (name, seed) = match rest.split_once('@') {
                Some((n, seed)) => (n, seed.parse::<u64>().map_err(|e| format!("bad seed in '{s}': {e}"))?),
                None => (rest, 0),
            };
            let kind = match name {
                "linear" => BuiltinKind::Linear,
                "mlp" => BuiltinKind::Mlp,
                "constant" => BuiltinKind::Constant,
                other => return Err(format!("unknown builtin model '{other}' (expected linear, mlp or constant)")),
            };
            Ok(Self::Builtin { kind, seed })
        } else if let Some(rest) = s.strip_prefix("external:") {
            Ok(Self::External(rest.parse()?))
        } else {
            Err(format!("model spec '{s}' must start with builtin: or external:"))
        }
    }
}

impl fmt::Display for BuiltinKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Mlp => "mlp",
            Self::Constant => "constant",
        })
    }
}

/// Instantiates a model. `weights` only applies to builtin linear and MLP
/// models.
pub fn build(spec: &str, cfg: &ModelConfig, shape: ImageShape, weights: Option<&Path>) -> Result<Arc<dyn Classifier>> {
    let parsed: ModelSpec = spec.parse().map_err(anyhow::Error::msg)?;
    let c = cfg.num_classes;
    let model: Arc<dyn Classifier> = match (parsed, weights) {
        (ModelSpec::Builtin { kind: BuiltinKind::Linear, .. }, Some(w)) => {
            Arc::new(load_linear_weights(w, c, shape).with_context(|| format!("loading weights {}", w.display()))?)
        }
        (ModelSpec::Builtin { kind: BuiltinKind::Mlp, .. }, Some(w)) => Arc::new(
            load_mlp_weights(w, c, shape, cfg.hidden).with_context(|| format!("loading weights {}", w.display()))?,
        ),
        (ModelSpec::Builtin { kind: BuiltinKind::Constant, .. }, Some(_)) => {
            bail!("builtin:constant takes no weights file")
        }
        (ModelSpec::Builtin { kind: BuiltinKind::Linear, seed }, None) => {
            Arc::new(builtin_linear_model(c, shape, seed))
        }
        (ModelSpec::Builtin { kind: BuiltinKind::Mlp, seed }, None) => {
            Arc::new(builtin_mlp_model(c, shape, cfg.hidden, seed))
        }
        (ModelSpec::Builtin { kind: BuiltinKind::Constant, .. }, None) => Arc::new(ConstantModel::uniform(shape, c)),
        (ModelSpec::External(endpoint), _) => {
            let client =
                external_oracle_client(ClientConfig { endpoint, timeout: Duration::from_secs_f64(cfg.timeout_secs) })
                    .with_context(|| format!("connecting to {spec}"))?;
            if client.input_shape() != shape {
                bail!("{spec} expects {} images, data is {}", client.input_shape(), shape);
            }
            Arc::new(client)
        }
    };
    Ok(model)
}

/// `zero`, `mean`, or comma-separated per-channel fill values.
pub fn parse_baseline(s: &str) -> Result<Option<Vec<f64>>, String> {
    match s.trim() {
        "zero" => Ok(Some(vec![0.0])),
        "mean" => Ok(None),
        list => {
            let v: Vec<f64> = list
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
                .collect::<Result<_, _>>()?;
            if v.is_empty() || v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(format!("baseline values {v:?} must lie in [0, 1]"));
            }
            Ok(Some(v))
        }
    }
}

pub fn baseline<'a, I: IntoIterator<Item = &'a ImageTensor>>(spec: &str, images: I) -> Result<MaskBaseline> {
    Ok(match parse_baseline(spec).map_err(anyhow::Error::msg)? {
        Some(v) if v == [0.0] => MaskBaseline::Zero,
        Some(v) => MaskBaseline::custom(v)?,
        None => MaskBaseline::channel_mean(images)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs_parse() {
        assert_eq!("builtin:mlp".parse(), Ok(ModelSpec::Builtin { kind: BuiltinKind::Mlp, seed: 0 }));
        assert_eq!("builtin:linear@7".parse(), Ok(ModelSpec::Builtin { kind: BuiltinKind::Linear, seed: 7 }));
        assert_eq!("external:tcp://localhost:9".parse(), Ok(ModelSpec::External(Endpoint::Tcp("localhost:9".into()))));
        assert!("builtin:resnet".parse::<ModelSpec>().is_err());
        assert!("builtin:mlp@x".parse::<ModelSpec>().is_err());
        assert!("mlp".parse::<ModelSpec>().is_err());
    }

    #[test]
    fn baselines_parse() {
        assert_eq!(parse_baseline("zero"), Ok(Some(vec![0.0])));
        assert_eq!(parse_baseline("mean"), Ok(None));
        assert_eq!(parse_baseline("0.5, 0.25"), Ok(Some(vec![0.5, 0.25])));
        assert!(parse_baseline("2").is_err());
        assert!(parse_baseline("grey").is_err());
    }
}
