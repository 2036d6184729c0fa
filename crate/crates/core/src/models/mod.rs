//! The five clip classifiers: an AlexNet-style trunk followed by plain
//! convolutions, ConvGRU layers or flat GRU layers, a fusion step and a
//! fully connected head.

mod checkpoint;
mod featmaps;
mod network;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recurrent::{BiasMode, FusionMethod, UpdateRule};
use crate::tensor_core::{out_dim, DropoutReading, Padding};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use featmaps::{FeatureMap, FEATURE_LAYERS};
pub use network::{ForwardOutput, Model, NamedTensor, StepOutput};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Single-frame AlexNet baseline.
    Spatial,
    /// All-convolution trunk with two stacked flat GRUs as the head.
    GruAlexnet,
    /// Unidirectional ConvGRU at layer 7.
    Convgru1d,
    /// Bidirectional ConvGRU at layer 7.
    #[default]
    Convgru2d,
    /// Bidirectional ConvGRUs at layers 6 and 7.
    Convgru2d2,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Spatial,
        Architecture::GruAlexnet,
        Architecture::Convgru1d,
        Architecture::Convgru2d,
        Architecture::Convgru2d2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Spatial => "spatial",
            Architecture::GruAlexnet => "gru_alexnet",
            Architecture::Convgru1d => "convgru1d",
            Architecture::Convgru2d => "convgru2d",
            Architecture::Convgru2d2 => "convgru2d2",
        }
    }

    /// Whether the architecture consumes one frame per clip.
    pub fn single_frame(self) -> bool {
        self == Architecture::Spatial
    }

    fn layer6_recurrent(self) -> bool {
        self == Architecture::Convgru2d2
    }

    fn layer7_recurrent(self) -> Option<bool> {
        match self {
            Architecture::Convgru1d => Some(false),
            Architecture::Convgru2d | Architecture::Convgru2d2 => Some(true),
            _ => None,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', ' '], "_");
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == key || a.name().replace('_', "") == key.replace('_', ""))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown architecture {s:?}; expected one of spatial, gru_alexnet, convgru1d, convgru2d, convgru2d2"
                ))
            })
    }
}

/// Feature counts of every layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Widths {
    pub conv1: usize,
    pub conv2: usize,
    pub conv3: usize,
    pub layer6: usize,
    pub layer7: usize,
    pub fc: usize,
    pub gru: usize,
}

impl Default for Widths {
    fn default() -> Self {
        Widths {
            conv1: 96,
            conv2: 256,
            conv3: 384,
            layer6: 384,
            layer7: 256,
            fc: 4096,
            gru: 1024,
        }
    }
}

impl Widths {
    /// Every default width divided by `k`, rounded up.
    pub fn divided_by(k: usize) -> Self {
        let d = Widths::default();
        let k = k.max(1);
        Widths {
            conv1: d.conv1.div_ceil(k),
            conv2: d.conv2.div_ceil(k),
            conv3: d.conv3.div_ceil(k),
            layer6: d.layer6.div_ceil(k),
            layer7: d.layer7.div_ceil(k),
            fc: d.fc.div_ceil(k),
            gru: d.gru.div_ceil(k),
        }
    }

    /// The same width everywhere.
    pub fn uniform(w: usize) -> Self {
        Widths {
            conv1: w,
            conv2: w,
            conv3: w,
            layer6: w,
            layer7: w,
            fc: w,
            gru: w,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Side length of the square input frames.
    pub input_size: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub fusion: FusionMethod,
    pub update_rule: UpdateRule,
    pub bias_mode: BiasMode,
    /// Dropout rate, read according to `dropout_reading`.
    pub dropout: f64,
    pub dropout_reading: DropoutReading,
    pub leaky_alpha: f64,
    pub widths: Widths,
    pub conv1_stride: usize,
    /// Spatial extent of the ConvGRU hidden-to-hidden kernels.
    pub hidden_kernel: usize,
    /// Seed of the parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::default(),
            input_size: 224,
            input_channels: 3,
            num_classes: 9,
            fusion: FusionMethod::LastFlat,
            update_rule: UpdateRule::Standard,
            bias_mode: BiasMode::PerChannel,
            dropout: 0.8,
            dropout_reading: DropoutReading::KeepProbability,
            leaky_alpha: 0.1,
            widths: Widths::default(),
            conv1_stride: 4,
            hidden_kernel: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(architecture: Architecture) -> Self {
        let mut c = ModelConfig {
            architecture,
            ..Default::default()
        };
        if architecture == Architecture::GruAlexnet {
            c.fusion = FusionMethod::Flat;
        }
        c
    }

    pub fn keep_prob(&self) -> f64 {
        self.dropout_reading.keep_prob(self.dropout)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        if self.num_classes < 2 {
            return Err(Error::config("class count must be at least 2"));
        }
        if [w.conv1, w.conv2, w.conv3, w.layer6, w.layer7, w.fc, w.gru].contains(&0)
            || self.input_channels == 0
            || self.input_size == 0
        {
            return Err(Error::config("all widths and input extents must be positive"));
        }
        if self.conv1_stride == 0 || self.hidden_kernel == 0 {
            return Err(Error::config("strides and kernel extents must be positive"));
        }
        let keep = self.keep_prob();
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::config(format!(
                "dropout {} read as {:?} gives keep probability {keep} outside (0, 1]",
                self.dropout, self.dropout_reading
            )));
        }
        if !self.leaky_alpha.is_finite() || self.leaky_alpha < 0.0 {
            return Err(Error::config("leaky-ReLU slope must be a non-negative number"));
        }
        if self.architecture == Architecture::GruAlexnet && self.fusion != FusionMethod::Flat {
            return Err(Error::config("the GRU AlexNet head needs flat (per-frame) fusion"));
        }
        if self.update_rule == UpdateRule::PaperLiteral {
            let mismatch = match self.architecture {
                Architecture::Convgru1d | Architecture::Convgru2d => w.layer6 != w.layer7,
                Architecture::Convgru2d2 => w.conv3 != w.layer6 || w.layer6 != w.layer7,
                _ => false,
            };
            if mismatch {
                return Err(Error::config(
                    "the literal update rule needs equal input and hidden channels at every ConvGRU layer",
                ));
            }
        }
        Ok(())
    }

    /// Shapes and parameter counts of every layer, computed without
    /// allocating parameters.
    pub fn shape_trace(&self) -> Result<ShapeTrace> {
        Ok(plan(self)?.0)
    }
}

/// How a parameter tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    Zero,
    Uniform(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// One row of a [`ShapeTrace`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Row of the layer table (0 for the input).
    pub layer: usize,
    pub name: String,
    pub kind: String,
    /// Output shape; per frame when `per_frame` is set.
    pub shape: Vec<usize>,
    pub per_frame: bool,
    pub params: usize,
}

impl TraceEntry {
    fn label(&self) -> String {
        let dims = self
            .shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        match self.name.as_str() {
            "logits" => format!("logits {dims}"),
            n if n.starts_with("fc") || n.starts_with("gru") => format!("fc {dims}"),
            _ => dims,
        }
    }
}

/// Layer-by-layer output shapes from the input frame to the logits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeTrace {
    pub entries: Vec<TraceEntry>,
}

impl ShapeTrace {
    pub fn get(&self, name: &str) -> Option<&TraceEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Spatial side length after each layer that keeps a map.
    pub fn spatial_extents(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.shape.len() == 3)
            .map(|e| e.shape[2])
            .collect()
    }

    /// Length of the fused feature vector (per frame for flat fusion).
    pub fn feature_len(&self) -> usize {
        self.get("fusion").map_or(0, |e| e.shape.iter().product())
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|e| e.params).sum()
    }
}

impl fmt::Display for ShapeTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>5}  {:<8} {:<26} {:<16} {:>12}", "layer", "name", "kind", "output", "params")?;
        for e in &self.entries {
            let shape = format!("{:?}{}", e.shape, if e.per_frame { " /frame" } else { "" });
            writeln!(f, "{:>5}  {:<8} {:<26} {:<16} {:>12}", e.layer, e.name, e.kind, shape, e.params)?;
        }
        writeln!(f, "total parameters: {}", self.parameter_count())?;
        let flow: Vec<String> = self.entries.iter().map(TraceEntry::label).collect();
        write!(f, "{}", flow.join(" → "))
    }
}

fn conv_specs(name: &str, c_out: usize, c_in: usize, k: usize) -> Vec<ParamSpec> {
    let fan_in = c_in * k * k;
    vec![
        ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![c_out, c_in, k, k],
            init: Init::Uniform((6.0 / fan_in as f64).sqrt()),
        },
        ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![c_out],
            init: Init::Zero,
        },
    ]
}

fn dense_specs(name: &str, out: usize, input: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![out, input],
            init: Init::Uniform((6.0 / input as f64).sqrt()),
        },
        ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![out],
            init: Init::Zero,
        },
    ]
}

fn gate_specs(prefix: &str, wx: Vec<usize>, wh: Vec<usize>, b: Vec<usize>) -> Vec<ParamSpec> {
    let fan_x: usize = wx[1..].iter().product();
    let fan_h: usize = wh[1..].iter().product();
    let bx = (3.0 / fan_x as f64).sqrt();
    let bh = 1.0 / (fan_h as f64).sqrt();
    let mut out = Vec::with_capacity(9);
    for gate in ["z", "r", "o"] {
        out.push(ParamSpec {
            name: format!("{prefix}.w_{gate}x"),
            shape: wx.clone(),
            init: Init::Uniform(bx),
        });
        out.push(ParamSpec {
            name: format!("{prefix}.w_{gate}h"),
            shape: wh.clone(),
            init: Init::Uniform(bh),
        });
        out.push(ParamSpec {
            name: format!("{prefix}.b_{gate}"),
            shape: b.clone(),
            init: Init::Zero,
        });
    }
    out
}

fn convgru_specs(
    name: &str,
    c_in: usize,
    c_h: usize,
    cfg: &ModelConfig,
    n: usize,
    bidirectional: bool,
) -> Vec<ParamSpec> {
    let hk = cfg.hidden_kernel;
    let bias = crate::recurrent::bias_shape(c_h, cfg.bias_mode, (n, n));
    let dirs: &[&str] = if bidirectional { &["fwd", "bwd"] } else { &["fwd"] };
    dirs.iter()
        .flat_map(|d| {
            gate_specs(
                &format!("{name}.{d}"),
                vec![c_h, c_in, 3, 3],
                vec![c_h, c_h, hk, hk],
                bias.clone(),
            )
        })
        .collect()
}

fn count(specs: &[ParamSpec]) -> usize {
    specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
}

/// Shape trace and ordered parameter list of a configuration.
pub(crate) fn plan(cfg: &ModelConfig) -> Result<(ShapeTrace, Vec<ParamSpec>)> {
    cfg.validate()?;
    let w = cfg.widths;
    let arch = cfg.architecture;
    let mut entries = Vec::new();
    let mut specs: Vec<ParamSpec> = Vec::new();
    let mut push = |layer: usize, name: &str, kind: String, shape: Vec<usize>, per_frame: bool, p: Vec<ParamSpec>| {
        entries.push(TraceEntry {
            layer,
            name: name.to_string(),
            kind,
            shape,
            per_frame,
            params: count(&p),
        });
        specs.extend(p);
    };

    let n0 = cfg.input_size;
    push(0, "input", "frame".into(), vec![cfg.input_channels, n0, n0], true, vec![]);
    let n1 = out_dim(n0, 11, cfg.conv1_stride, Padding::Same)?;
    push(
        1,
        "conv1",
        format!("11x11 conv s{} same", cfg.conv1_stride),
        vec![w.conv1, n1, n1],
        true,
        conv_specs("conv1", w.conv1, cfg.input_channels, 11),
    );
    let p1 = out_dim(n1, 3, 2, Padding::Valid)?;
    push(2, "pool1", "3x3 max pool s2 valid".into(), vec![w.conv1, p1, p1], true, vec![]);
    push(
        3,
        "conv2",
        "5x5 conv same".into(),
        vec![w.conv2, p1, p1],
        true,
        conv_specs("conv2", w.conv2, w.conv1, 5),
    );
    let n = out_dim(p1, 3, 2, Padding::Valid)?;
    push(4, "pool2", "3x3 max pool s2 valid".into(), vec![w.conv2, n, n], true, vec![]);
    push(
        5,
        "conv3",
        "3x3 conv same".into(),
        vec![w.conv3, n, n],
        true,
        conv_specs("conv3", w.conv3, w.conv2, 3),
    );
    if arch.layer6_recurrent() {
        push(
            6,
            "layer6",
            "3x3 bi-ConvGRU".into(),
            vec![w.layer6, n, n],
            true,
            convgru_specs("layer6", w.conv3, w.layer6, cfg, n, true),
        );
    } else {
        push(
            6,
            "layer6",
            "3x3 conv same".into(),
            vec![w.layer6, n, n],
            true,
            conv_specs("layer6", w.layer6, w.conv3, 3),
        );
    }
    match arch.layer7_recurrent() {
        Some(bi) => push(
            7,
            "layer7",
            if bi { "3x3 bi-ConvGRU" } else { "3x3 ConvGRU" }.into(),
            vec![w.layer7, n, n],
            true,
            convgru_specs("layer7", w.layer6, w.layer7, cfg, n, bi),
        ),
        None => push(
            7,
            "layer7",
            "3x3 conv same".into(),
            vec![w.layer7, n, n],
            true,
            conv_specs("layer7", w.layer7, w.layer6, 3),
        ),
    }

    let flat_len = w.layer7 * n * n;
    let (fusion_kind, feat, per_frame) = match (arch, cfg.fusion) {
        (Architecture::Spatial, _) => ("flatten".to_string(), flat_len, false),
        (Architecture::GruAlexnet, _) => ("flatten per frame".to_string(), flat_len, true),
        (_, FusionMethod::LastAvg) => ("last_avg".to_string(), w.layer7, false),
        (_, m) => (
            serde_json::to_value(m)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            flat_len,
            m == FusionMethod::Flat,
        ),
    };
    push(8, "fusion", fusion_kind, vec![feat], per_frame, vec![]);

    let head_width = if arch == Architecture::GruAlexnet {
        let g = w.gru;
        push(
            9,
            "gru9",
            "GRU".into(),
            vec![g],
            true,
            gate_specs("gru9", vec![g, feat], vec![g, g], vec![g]),
        );
        push(
            10,
            "gru10",
            "GRU".into(),
            vec![g],
            true,
            gate_specs("gru10", vec![g, g], vec![g, g], vec![g]),
        );
        g
    } else {
        push(9, "fc9", "dense".into(), vec![w.fc], per_frame, dense_specs("fc9", w.fc, feat));
        push(10, "fc10", "dense".into(), vec![w.fc], per_frame, dense_specs("fc10", w.fc, w.fc));
        w.fc
    };
    push(
        11,
        "logits",
        "dense".into(),
        vec![cfg.num_classes],
        false,
        dense_specs("out", cfg.num_classes, head_width),
    );
    Ok((ShapeTrace { entries }, specs))
}
