//! Plain-text `key=value` run configuration.
//!
//! One flat file configures the schedule, drop strategy, segment scoring,
//! chunking, and cost-model dims. Unknown keys are rejected. Defaults:
//! cosine 16-token schedule over 28 layers with suffix dropping, 64-frame
//! windows at stride 32, clip size 8, 512-frame chunks with n_repeat 2, and
//! the cost model's stock decoder dims. The `VTCOMP_CONFIG` environment
//! variable names a default config path for the CLI.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::compress::{CompressError, DropStrategy};
use crate::cost::ModelDims;
use crate::schedule::{CompressionSchedule, ScheduleError, ScheduleKind, Stage};
use crate::scoring::{ChunkConfig, ScoringLayers, SegmentConfig};

/// Environment variable naming the default config file.
pub const CONFIG_ENV_VAR: &str = "VTCOMP_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: unknown key `{0}`")]
    UnknownKey(String),
    #[error("config: bad value `{value}` for key `{key}`")]
    BadValue { key: String, value: String },
    #[error("config line `{0}` is not key=value")]
    BadLine(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Strategy(#[from] CompressError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub schedule: CompressionSchedule,
    pub strategy: DropStrategy,
    pub segment: SegmentConfig,
    pub chunk: ChunkConfig,
    pub dims: ModelDims,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schedule: CompressionSchedule::cosine(16, 28).expect("valid default"),
            strategy: DropStrategy::Suffix,
            segment: SegmentConfig::default(),
            chunk: ChunkConfig::default(),
            dims: ModelDims::qwen2_1_5b(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parse a key=value block over the defaults. Blank lines and `#`
    /// comments are ignored; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut schedule_kind: Option<String> = None;
        let mut schedule_initial = cfg.schedule.initial_tokens;
        let mut schedule_layers = cfg.schedule.num_layers;
        let mut schedule_stages: Option<Vec<Stage>> = None;

        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::BadLine(line.to_string()))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "schedule.kind" => schedule_kind = Some(value.to_string()),
                "schedule.initial_tokens" => schedule_initial = parse_num(key, value)?,
                "schedule.num_layers" => schedule_layers = parse_num(key, value)?,
                "schedule.stages" => schedule_stages = Some(parse_stages(key, value)?),
                "strategy" => cfg.strategy = DropStrategy::parse(value)?,
                "segment.window_frames" => cfg.segment.window_frames = parse_num(key, value)?,
                "segment.stride_frames" => cfg.segment.stride_frames = parse_num(key, value)?,
                "segment.clip_size" => cfg.segment.clip_size = parse_num(key, value)?,
                "segment.scoring_layers" => {
                    cfg.segment.scoring_layers = parse_scoring_layers(key, value)?
                }
                "chunk.frames" => cfg.chunk.chunk_frames = parse_num(key, value)?,
                "chunk.n_repeat" => cfg.chunk.n_repeat = parse_num(key, value)?,
                "chunk.n_selected_frames" => cfg.chunk.n_selected_frames = parse_num(key, value)?,
                "dims.num_layers" => cfg.dims.num_layers = parse_num(key, value)?,
                "dims.model_width" => cfg.dims.model_width = parse_num(key, value)?,
                "dims.num_attention_heads" => {
                    cfg.dims.num_attention_heads = parse_num(key, value)?
                }
                "dims.num_kv_heads" => cfg.dims.num_kv_heads = parse_num(key, value)?,
                "dims.head_width" => cfg.dims.head_width = parse_num(key, value)?,
                "dims.mlp_width" => cfg.dims.mlp_width = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                _ => return Err(ConfigError::UnknownKey(key.to_string())),
            }
        }

        let kind = schedule_kind.unwrap_or_else(|| cfg.schedule.kind.name().to_string());
        cfg.schedule = match kind.as_str() {
            "cosine" => CompressionSchedule::cosine(schedule_initial, schedule_layers)?,
            "constant" => CompressionSchedule::constant(schedule_initial, schedule_layers)?,
            "stepwise" => {
                let stages =
                    schedule_stages.ok_or(ScheduleError::MissingKey("schedule.stages"))?;
                CompressionSchedule::stepwise(schedule_initial, schedule_layers, stages)?
            }
            other => {
                return Err(ConfigError::BadValue {
                    key: "schedule.kind".into(),
                    value: other.into(),
                })
            }
        };
        Ok(cfg)
    }

    pub fn to_block(&self) -> String {
        let mut out = String::new();
        writeln!(out, "schedule.kind={}", self.schedule.kind.name()).unwrap();
        writeln!(out, "schedule.initial_tokens={}", self.schedule.initial_tokens).unwrap();
        writeln!(out, "schedule.num_layers={}", self.schedule.num_layers).unwrap();
        if let ScheduleKind::Stepwise(stages) = &self.schedule.kind {
            let list: Vec<String> = stages
                .iter()
                .map(|s| format!("{}:{}", s.start_layer, s.tokens))
                .collect();
            writeln!(out, "schedule.stages={}", list.join(",")).unwrap();
        }
        writeln!(out, "strategy={}", self.strategy.name()).unwrap();
        writeln!(out, "segment.window_frames={}", self.segment.window_frames).unwrap();
        writeln!(out, "segment.stride_frames={}", self.segment.stride_frames).unwrap();
        writeln!(out, "segment.clip_size={}", self.segment.clip_size).unwrap();
        let layers = match &self.segment.scoring_layers {
            ScoringLayers::All => "all".to_string(),
            ScoringLayers::Subset(list) => list
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        };
        writeln!(out, "segment.scoring_layers={layers}").unwrap();
        writeln!(out, "chunk.frames={}", self.chunk.chunk_frames).unwrap();
        writeln!(out, "chunk.n_repeat={}", self.chunk.n_repeat).unwrap();
        writeln!(out, "chunk.n_selected_frames={}", self.chunk.n_selected_frames).unwrap();
        writeln!(out, "dims.num_layers={}", self.dims.num_layers).unwrap();
        writeln!(out, "dims.model_width={}", self.dims.model_width).unwrap();
        writeln!(out, "dims.num_attention_heads={}", self.dims.num_attention_heads).unwrap();
        writeln!(out, "dims.num_kv_heads={}", self.dims.num_kv_heads).unwrap();
        writeln!(out, "dims.head_width={}", self.dims.head_width).unwrap();
        writeln!(out, "dims.mlp_width={}", self.dims.mlp_width).unwrap();
        writeln!(out, "seed={}", self.seed).unwrap();
        out
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_stages(key: &str, value: &str) -> Result<Vec<Stage>, ConfigError> {
    value
        .split(',')
        .map(|entry| {
            let (start, tokens) = entry.split_once(':').ok_or_else(|| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
            })?;
            Ok(Stage {
                start_layer: parse_num(key, start.trim())?,
                tokens: parse_num(key, tokens.trim())?,
            })
        })
        .collect()
}

fn parse_scoring_layers(key: &str, value: &str) -> Result<ScoringLayers, ConfigError> {
    if value == "all" {
        return Ok(ScoringLayers::All);
    }
    let layers = value
        .split(',')
        .map(|v| parse_num(key, v.trim()))
        .collect::<Result<Vec<usize>, _>>()?;
    Ok(ScoringLayers::Subset(layers))
}
