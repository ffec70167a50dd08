//! Network description files.
//!
//! Line-oriented UTF-8: `[model]`, `[stage.N]` (N = 1..5) and `[decoder]`
//! sections holding `key = value` pairs; `#` starts a comment. Every key is
//! optional and unknown keys are rejected.

use std::fmt;

use crate::blocks::RRBlockConfig;
use crate::error::{Error, Result};
use crate::ops::Activation;

pub const STAGES: usize = 5;

/// Default per-stage reduction widths; expansion defaults to twice these.
pub const DEFAULT_RR: [usize; STAGES] = [8, 16, 32, 64, 128];
pub const DEFAULT_DECODER_WIDTHS: [usize; STAGES] = [112, 96, 56, 48, 8];
pub const DEFAULT_R: usize = 4;
pub const DEFAULT_DILATION_BASE: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ConnectionMode {
    /// Stacked bottlenecks compressed by a linear 1x1 reduction.
    #[default]
    Cdc,
    /// The last bottleneck of each stage forwarded directly.
    Skip,
}

impl ConnectionMode {
    pub fn name(self) -> &'static str {
        match self {
            ConnectionMode::Cdc => "cdc",
            ConnectionMode::Skip => "skip",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphSpec {
    pub name: String,
    /// 6 for stereo (left/right concatenated), 3 for mono.
    pub input_channels: usize,
    pub stages: Vec<RRBlockConfig>,
    pub decoder_widths: Vec<usize>,
    pub rcn_per_stage: Vec<usize>,
    pub activation: Activation,
    pub connection: ConnectionMode,
    pub seed: u64,
    pub bias: bool,
}

impl Default for GraphSpec {
    fn default() -> Self {
        let stages = DEFAULT_RR
            .iter()
            .map(|&rr| RRBlockConfig {
                r: DEFAULT_R,
                rr,
                re: 2 * rr,
                dilation_base: DEFAULT_DILATION_BASE,
                stride_first: false,
                downsample: true,
            })
            .collect();
        GraphSpec {
            name: "rrnet".to_string(),
            input_channels: 6,
            stages,
            decoder_widths: DEFAULT_DECODER_WIDTHS.to_vec(),
            rcn_per_stage: DEFAULT_RR.to_vec(),
            activation: Activation::Elu,
            connection: ConnectionMode::Cdc,
            seed: 0,
            bias: true,
        }
    }
}

impl GraphSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != STAGES {
            return Err(Error::ConfigValue {
                key: "stage".into(),
                message: format!("expected {STAGES} stages, got {}", self.stages.len()),
            });
        }
        for (i, st) in self.stages.iter().enumerate() {
            st.validate().map_err(|e| match e {
                Error::ConfigValue { key, message } => Error::ConfigValue {
                    key: format!("stage.{}.{key}", i + 1),
                    message,
                },
                other => other,
            })?;
        }
        for (key, list) in [("decoder.widths", &self.decoder_widths), ("decoder.rcn", &self.rcn_per_stage)] {
            if list.len() != STAGES {
                return Err(Error::ConfigValue {
                    key: key.into(),
                    message: format!("expected {STAGES} values, got {}", list.len()),
                });
            }
            if list.contains(&0) {
                return Err(Error::ConfigValue {
                    key: key.into(),
                    message: "values must be >= 1".into(),
                });
            }
        }
        if self.input_channels != 3 && self.input_channels != 6 {
            return Err(Error::ConfigValue {
                key: "model.input".into(),
                message: format!("unsupported input width {}", self.input_channels),
            });
        }
        Ok(())
    }

    /// Same spec with every stage repeated `r` times.
    pub fn with_repetitions(&self, r: usize) -> Self {
        let mut s = self.clone();
        for st in &mut s.stages {
            st.r = r;
        }
        s
    }

    pub fn with_connection(&self, connection: ConnectionMode) -> Self {
        GraphSpec {
            connection,
            ..self.clone()
        }
    }

    /// Repetition count when all stages agree.
    pub fn uniform_r(&self) -> Option<usize> {
        let r = self.stages.first()?.r;
        self.stages.iter().all(|s| s.r == r).then_some(r)
    }
}

fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl fmt::Display for GraphSpec {
    /// Canonical config text; parses back to an equal spec.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[model]")?;
        writeln!(f, "name = {}", self.name)?;
        writeln!(f, "input = {}", if self.input_channels == 3 { "mono" } else { "stereo" })?;
        writeln!(f, "activation = {}", self.activation.name())?;
        writeln!(f, "connection = {}", self.connection.name())?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "bias = {}", self.bias)?;
        for (i, st) in self.stages.iter().enumerate() {
            writeln!(f, "\n[stage.{}]", i + 1)?;
            writeln!(f, "r = {}", st.r)?;
            writeln!(f, "rr = {}", st.rr)?;
            writeln!(f, "re = {}", st.re)?;
            writeln!(f, "dilation_base = {}", st.dilation_base)?;
            writeln!(f, "stride_first = {}", st.stride_first)?;
        }
        writeln!(f, "\n[decoder]")?;
        writeln!(f, "widths = {}", join(&self.decoder_widths))?;
        writeln!(f, "rcn = {}", join(&self.rcn_per_stage))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Section {
    None,
    Model,
    Stage(usize),
    Decoder,
}

#[derive(Default)]
struct StageOverrides {
    r: Option<usize>,
    rr: Option<usize>,
    re: Option<usize>,
    dilation_base: Option<usize>,
    stride_first: Option<bool>,
}

fn parse_uint<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| Error::ConfigValue {
        key: key.to_string(),
        message: format!("expected a non-negative integer, got `{value}`"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::ConfigValue {
            key: key.to_string(),
            message: format!("expected true or false, got `{value}`"),
        }),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse_uint(key, v.trim())).collect()
}

/// Parses and validates a config; absent keys take their defaults.
pub fn parse_config(text: &str) -> Result<GraphSpec> {
    let mut spec = GraphSpec::default();
    let mut stages: Vec<StageOverrides> = (0..STAGES).map(|_| StageOverrides::default()).collect();
    let mut rcn: Option<Vec<usize>> = None;
    let mut section = Section::None;
    let mut seen: Vec<String> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |message: String| Error::ConfigSyntax {
            line: line_no,
            message,
        };
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| syntax(format!("unterminated section header `{line}`")))?
                .trim();
            section = match name {
                "model" => Section::Model,
                "decoder" => Section::Decoder,
                _ => match name.strip_prefix("stage.").map(str::parse::<usize>) {
                    Some(Ok(n)) if (1..=STAGES).contains(&n) => Section::Stage(n),
                    _ => return Err(syntax(format!("unknown section `[{name}]`"))),
                },
            };
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax(format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(syntax(format!("missing value for `{key}`")));
        }
        let path = match section {
            Section::None => return Err(syntax(format!("`{key}` appears before any section"))),
            Section::Model => format!("model.{key}"),
            Section::Stage(n) => format!("stage.{n}.{key}"),
            Section::Decoder => format!("decoder.{key}"),
        };
        if seen.contains(&path) {
            return Err(syntax(format!("duplicate key `{path}`")));
        }
        seen.push(path.clone());

        match (section, key) {
            (Section::Model, "name") => spec.name = value.to_string(),
            (Section::Model, "input") => {
                spec.input_channels = match value {
                    "stereo" => 6,
                    "mono" => 3,
                    _ => {
                        return Err(Error::ConfigValue {
                            key: path,
                            message: format!("expected stereo or mono, got `{value}`"),
                        })
                    }
                }
            }
            (Section::Model, "activation") => {
                spec.activation = Activation::parse(value).ok_or_else(|| Error::ConfigValue {
                    key: path.clone(),
                    message: format!("expected elu or relu, got `{value}`"),
                })?
            }
            (Section::Model, "connection") => {
                spec.connection = match value {
                    "cdc" => ConnectionMode::Cdc,
                    "skip" => ConnectionMode::Skip,
                    _ => {
                        return Err(Error::ConfigValue {
                            key: path,
                            message: format!("expected cdc or skip, got `{value}`"),
                        })
                    }
                }
            }
            (Section::Model, "seed") => spec.seed = parse_uint(&path, value)?,
            (Section::Model, "bias") => spec.bias = parse_bool(&path, value)?,
            (Section::Stage(n), _) => {
                let st = &mut stages[n - 1];
                match key {
                    "r" => st.r = Some(parse_uint(&path, value)?),
                    "rr" => st.rr = Some(parse_uint(&path, value)?),
                    "re" => st.re = Some(parse_uint(&path, value)?),
                    "dilation_base" => st.dilation_base = Some(parse_uint(&path, value)?),
                    "stride_first" => st.stride_first = Some(parse_bool(&path, value)?),
                    _ => return Err(syntax(format!("unknown key `{path}`"))),
                }
            }
            (Section::Decoder, "widths") => spec.decoder_widths = parse_list(&path, value)?,
            (Section::Decoder, "rcn") => rcn = Some(parse_list(&path, value)?),
            _ => return Err(syntax(format!("unknown key `{path}`"))),
        }
    }

    for (st, ov) in spec.stages.iter_mut().zip(&stages) {
        if let Some(rr) = ov.rr {
            st.rr = rr;
            st.re = 2 * rr;
        }
        st.r = ov.r.unwrap_or(st.r);
        st.re = ov.re.unwrap_or(st.re);
        st.dilation_base = ov.dilation_base.unwrap_or(st.dilation_base);
        st.stride_first = ov.stride_first.unwrap_or(st.stride_first);
    }
    spec.rcn_per_stage = rcn.unwrap_or_else(|| spec.stages.iter().map(|s| s.rr).collect());
    spec.validate()?;
    Ok(spec)
}

const PRESETS: [(&str, &str); 5] = [
    ("rrnet-r1", include_str!("../presets/rrnet-r1.cfg")),
    ("rrnet-r2", include_str!("../presets/rrnet-r2.cfg")),
    ("rrnet-r3", include_str!("../presets/rrnet-r3.cfg")),
    ("rrnet-r4", include_str!("../presets/rrnet-r4.cfg")),
    ("rrnet-toy", include_str!("../presets/rrnet-toy.cfg")),
];

/// Names of the bundled presets.
pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// Config text of a bundled preset.
pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn preset(name: &str) -> Result<GraphSpec> {
    let text = preset_text(name).ok_or_else(|| Error::ConfigValue {
        key: "preset".into(),
        message: format!("unknown preset `{name}`"),
    })?;
    parse_config(text)
}
