//! TOML model/training spec files.
//!
//! ```toml
//! [model]
//! name = "cifar10_effnet"
//! input = [3, 32, 32]        # channels, height, width
//! classes = 10
//! first_layer = "block"      # or "vanilla_conv_mp"
//! dropout = 0.5
//!
//! [[stages]]
//! kind = "effnet"            # vanilla | effnet | effnet_v2 | mobilenet |
//! out_channels = 64          # shufflenet | mobilenet_v2 | mob_imp
//!
//! [train]
//! lr = 0.001
//! beta1 = 0.75
//! batch_size = 64
//! epochs = 10
//! seeds = [1, 2, 3, 4, 5]
//! ```
//!
//! Per-kind stage options (anything else is rejected):
//!
//! | kind           | options                                                        |
//! |----------------|----------------------------------------------------------------|
//! | `effnet`       | `depth_multiplier`, `pw_activation`, `dw_activation`, `leaky_alpha` |
//! | `effnet_v2`    | `expansion_rate`, `dw_activation`, `leaky_alpha`               |
//! | `mobilenet`    | `stride`                                                       |
//! | `shufflenet`   | `groups` (required)                                            |
//! | `mobilenet_v2` | `expansion_rate`, `stride`, `linear_tail`, `pooling`, `leaky_alpha` |
//! | `mob_imp`      | `expansion_rate`, `stride`, `leaky_alpha`                      |
//!
//! Activations are `"relu"`, `"leaky_relu"` (slope `leaky_alpha`) or `"linear"`.

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Spanned;

use crate::autograd::AdamConfig;
use crate::blocks::{
    build_layers, BlockKind, EffNetOptions, EffNetV2Options, FirstLayerMode, MobileNetV2Options, ModelSpec, Stage,
};
use crate::error::{Error, Result};
use crate::ops::{Activation, DEFAULT_LEAKY_ALPHA};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 64,
            epochs: 1,
            max_steps: None,
            seeds: vec![1],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpecFile {
    pub path: PathBuf,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl SpecFile {
    pub fn hash(&self) -> String {
        spec_hash(&self.model)
    }
}

/// SHA-256 over the canonical JSON encoding of the model description.
pub fn spec_hash(spec: &ModelSpec) -> String {
    let json = serde_json::to_string(spec).expect("model specs always serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    model: RawModel,
    stages: Vec<RawStage>,
    train: Option<RawTrain>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: String,
    input: [usize; 3],
    classes: usize,
    first_layer: Option<Spanned<String>>,
    dropout: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    kind: Spanned<String>,
    out_channels: usize,
    depth_multiplier: Option<Spanned<usize>>,
    pw_activation: Option<Spanned<String>>,
    dw_activation: Option<Spanned<String>>,
    leaky_alpha: Option<Spanned<f64>>,
    expansion_rate: Option<Spanned<f64>>,
    stride: Option<Spanned<usize>>,
    groups: Option<Spanned<usize>>,
    linear_tail: Option<Spanned<bool>>,
    pooling: Option<Spanned<bool>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    lr: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    eps: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    max_steps: Option<usize>,
    seeds: Option<Vec<u64>>,
}

struct Ctx<'a> {
    path: &'a Path,
    text: &'a str,
}

impl Ctx<'_> {
    fn line(&self, span: &Range<usize>) -> usize {
        self.text[..span.start.min(self.text.len())].matches('\n').count() + 1
    }

    fn err(&self, span: &Range<usize>, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.into(),
            line: self.line(span),
            msg: msg.into(),
        }
    }
}

impl RawStage {
    /// Option names that were set, with their spans.
    fn present(&self) -> Vec<(&'static str, Range<usize>)> {
        let mut v = Vec::new();
        macro_rules! check {
            ($($f:ident),*) => {$(
                if let Some(s) = &self.$f {
                    v.push((stringify!($f), s.span()));
                }
            )*};
        }
        check!(
            depth_multiplier,
            pw_activation,
            dw_activation,
            leaky_alpha,
            expansion_rate,
            stride,
            groups,
            linear_tail,
            pooling
        );
        v
    }
}

fn allowed_options(kind: &str) -> Option<&'static [&'static str]> {
    Some(match kind {
        "vanilla" => &[],
        "effnet" => &["depth_multiplier", "pw_activation", "dw_activation", "leaky_alpha"],
        "effnet_v2" => &["expansion_rate", "dw_activation", "leaky_alpha"],
        "mobilenet" => &["stride"],
        "shufflenet" => &["groups"],
        "mobilenet_v2" => &["expansion_rate", "stride", "linear_tail", "pooling", "leaky_alpha"],
        "mob_imp" => &["expansion_rate", "stride", "leaky_alpha"],
        _ => return None,
    })
}

fn activation(ctx: &Ctx, s: &Option<Spanned<String>>, alpha: f64) -> Result<Activation> {
    let Some(s) = s else {
        return Ok(Activation::Relu);
    };
    match s.get_ref().as_str() {
        "relu" => Ok(Activation::Relu),
        "leaky_relu" => Ok(Activation::LeakyRelu(alpha)),
        "linear" => Ok(Activation::Linear),
        other => Err(ctx.err(&s.span(), format!("unknown activation {other:?}"))),
    }
}

fn get<T: Clone>(s: &Option<Spanned<T>>, default: T) -> T {
    s.as_ref().map_or(default, |v| v.get_ref().clone())
}

fn stage(ctx: &Ctx, raw: &RawStage) -> Result<Stage> {
    let kind = raw.kind.get_ref().as_str();
    let allowed =
        allowed_options(kind).ok_or_else(|| ctx.err(&raw.kind.span(), format!("unknown block kind {kind:?}")))?;
    for (name, span) in raw.present() {
        if !allowed.contains(&name) {
            return Err(ctx.err(&span, format!("option {name} does not apply to {kind} stages")));
        }
    }
    let alpha = get(&raw.leaky_alpha, DEFAULT_LEAKY_ALPHA);
    let block = match kind {
        "vanilla" => BlockKind::Vanilla,
        "effnet" => BlockKind::Effnet(EffNetOptions {
            depth_multiplier: get(&raw.depth_multiplier, 1),
            pw_activation: activation(ctx, &raw.pw_activation, alpha)?,
            dw_activation: activation(ctx, &raw.dw_activation, alpha)?,
        }),
        "effnet_v2" => BlockKind::EffnetV2(EffNetV2Options {
            expansion_rate: get(&raw.expansion_rate, 6.0),
            leaky_alpha: alpha,
            dw_activation: activation(ctx, &raw.dw_activation, alpha)?,
        }),
        "mobilenet" => BlockKind::Mobilenet {
            stride: get(&raw.stride, 2),
        },
        "shufflenet" => BlockKind::Shufflenet {
            groups: raw
                .groups
                .as_ref()
                .map(|g| *g.get_ref())
                .ok_or_else(|| ctx.err(&raw.kind.span(), "shufflenet stages need `groups`"))?,
        },
        "mobilenet_v2" => {
            let base = MobileNetV2Options::original(get(&raw.expansion_rate, 6.0));
            BlockKind::MobilenetV2(MobileNetV2Options {
                stride: get(&raw.stride, base.stride),
                linear_tail: get(&raw.linear_tail, base.linear_tail),
                pooling: get(&raw.pooling, base.pooling),
                leaky_alpha: alpha,
                ..base
            })
        }
        "mob_imp" => {
            let base = MobileNetV2Options::mob_imp(get(&raw.expansion_rate, 6.0));
            BlockKind::MobImp(MobileNetV2Options {
                stride: get(&raw.stride, base.stride),
                leaky_alpha: alpha,
                ..base
            })
        }
        _ => unreachable!(),
    };
    Ok(Stage {
        block,
        out_channels: raw.out_channels,
    })
}

pub fn parse_spec(path: &Path, text: &str) -> Result<SpecFile> {
    let ctx = Ctx { path, text };
    let raw: RawFile = toml::from_str(text).map_err(|e| {
        let span = e.span().unwrap_or(0..0);
        ctx.err(&span, e.message().to_string())
    })?;

    let first_layer = match &raw.model.first_layer {
        None => FirstLayerMode::Block,
        Some(s) => match s.get_ref().as_str() {
            "block" => FirstLayerMode::Block,
            "vanilla_conv_mp" => FirstLayerMode::VanillaConvMp,
            other => return Err(ctx.err(&s.span(), format!("unknown first_layer {other:?}"))),
        },
    };
    let stages = raw.stages.iter().map(|s| stage(&ctx, s)).collect::<Result<Vec<_>>>()?;
    let model = ModelSpec {
        name: raw.model.name,
        input: raw.model.input,
        classes: raw.model.classes,
        first_layer,
        stages,
        dropout: raw.model.dropout.unwrap_or(0.0),
    };
    // Assembly errors carry the stage index; point them at that stage's line.
    if let Err(e) = build_layers(&model) {
        return Err(match &e {
            Error::Spec { stage: Some(i), .. } => ctx.err(&raw.stages[*i].kind.span(), e.to_string()),
            _ => ctx.err(&(0..0), e.to_string()),
        });
    }

    let defaults = TrainConfig::default();
    let train = match raw.train {
        None => defaults,
        Some(t) => TrainConfig {
            adam: AdamConfig {
                lr: t.lr.unwrap_or(defaults.adam.lr),
                beta1: t.beta1.unwrap_or(defaults.adam.beta1),
                beta2: t.beta2.unwrap_or(defaults.adam.beta2),
                eps: t.eps.unwrap_or(defaults.adam.eps),
            },
            batch_size: t.batch_size.unwrap_or(defaults.batch_size),
            epochs: t.epochs.unwrap_or(defaults.epochs),
            max_steps: t.max_steps,
            seeds: t.seeds.unwrap_or(defaults.seeds),
        },
    };
    if train.batch_size == 0 || train.seeds.is_empty() || train.adam.lr < 0.0 {
        return Err(ctx.err(
            &(0..0),
            "train: batch_size must be positive, seeds non-empty, lr non-negative",
        ));
    }
    Ok(SpecFile {
        path: path.into(),
        model,
        train,
    })
}

pub fn load_spec(path: &Path) -> Result<SpecFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spec(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const OK: &str = r#"
[model]
name = "t"
input = [3, 8, 8]
classes = 3

[[stages]]
kind = "effnet"
out_channels = 16
"#;

    fn parse(s: &str) -> Result<SpecFile> {
        parse_spec(Path::new("t.toml"), s)
    }

    #[test]
    fn minimal_spec_and_defaults() {
        let s = parse(OK).unwrap();
        assert_eq!(s.model.stages.len(), 1);
        assert_eq!(s.train, TrainConfig::default());
        assert_eq!(s.hash().len(), 64);
    }

    #[test]
    fn unknown_key_cites_line() {
        let bad = OK.replace("out_channels = 16", "out_channels = 16\ndepth_multiplyer = 2");
        match parse(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn option_for_other_kind_rejected() {
        let bad = OK.replace("out_channels = 16", "out_channels = 16\ngroups = 4");
        match parse(&bad) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 10);
                assert!(msg.contains("groups"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn build_error_points_at_stage() {
        let bad = format!("{OK}\n[[stages]]\nkind = \"vanilla\"\nout_channels = 8\n[[stages]]\nkind = \"vanilla\"\nout_channels = 8\n[[stages]]\nkind = \"vanilla\"\nout_channels = 8\n");
        match parse(&bad) {
            Err(Error::Parse { line, msg, .. }) => {
                assert!(msg.contains("stage 3"), "{msg}");
                assert_eq!(line, 18);
            }
            other => panic!("{other:?}"),
        }
    }
}
