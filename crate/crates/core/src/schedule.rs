//! Per-layer target token-per-frame counts.
//!
//! A schedule maps layer indices `0..=L` to token counts per frame, where
//! index 0 names the pre-first-layer input count and index `L` the count
//! after the final layer. The cosine family interpolates from
//! `initial_tokens` down to 1 along a half cosine; step-wise schedules hold
//! plateaus and drop abruptly; constant schedules never compress.
//!
//! Schedules serialize to a plain-text `key=value` block (see
//! [`CompressionSchedule::to_block`]) consumed by the CLI and config files.

use std::f64::consts::PI;
use std::fmt::Write as _;

use thiserror::Error;

/// Slack subtracted before the ceiling so float noise cannot lift values
/// that are exact integers in real arithmetic (e.g. cos(pi/3) evaluating to
/// 0.5000000000000001) onto the next count.
const CEIL_GUARD: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("initial_tokens must be >= 1")]
    ZeroInitialTokens,
    #[error("num_layers must be >= 1")]
    ZeroLayers,
    #[error("step-wise schedule needs at least one stage")]
    NoStages,
    #[error("step-wise stages must start at layer 0, got {0}")]
    FirstStageStart(usize),
    #[error("step-wise stage starts must be strictly increasing and <= num_layers")]
    StageOrder,
    #[error("step-wise first stage must hold initial_tokens ({expected}), got {got}")]
    FirstStageTokens { expected: usize, got: usize },
    #[error("step-wise stage counts must be non-increasing and within [1, initial_tokens]")]
    StageTokens,
    #[error("need num_stages >= 2, got {0}")]
    TooFewStages(usize),
    #[error("target average {0} outside [1, initial_tokens]")]
    TargetOutOfRange(f64),
    #[error(
        "no {num_stages}-stage placement over {num_layers} layers reaches average \
         {target:.3} within 0.5; best achievable is {best:.3}"
    )]
    StepwiseInfeasible {
        num_stages: usize,
        num_layers: usize,
        target: f64,
        best: f64,
    },
    #[error("schedule block: unknown key `{0}`")]
    UnknownKey(String),
    #[error("schedule block: missing key `{0}`")]
    MissingKey(&'static str),
    #[error("schedule block: bad value `{value}` for key `{key}`")]
    BadValue { key: &'static str, value: String },
}

/// One step-wise plateau: `tokens` per frame from `start_layer` onward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub start_layer: usize,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind {
    Cosine,
    Constant,
    Stepwise(Vec<Stage>),
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Constant => "constant",
            ScheduleKind::Stepwise(_) => "stepwise",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionSchedule {
    pub kind: ScheduleKind,
    pub initial_tokens: usize,
    pub num_layers: usize,
}

impl CompressionSchedule {
    pub fn cosine(initial_tokens: usize, num_layers: usize) -> Result<Self, ScheduleError> {
        Self::validate_dims(initial_tokens, num_layers)?;
        Ok(Self {
            kind: ScheduleKind::Cosine,
            initial_tokens,
            num_layers,
        })
    }

    pub fn constant(initial_tokens: usize, num_layers: usize) -> Result<Self, ScheduleError> {
        Self::validate_dims(initial_tokens, num_layers)?;
        Ok(Self {
            kind: ScheduleKind::Constant,
            initial_tokens,
            num_layers,
        })
    }

    pub fn stepwise(
        initial_tokens: usize,
        num_layers: usize,
        stages: Vec<Stage>,
    ) -> Result<Self, ScheduleError> {
        Self::validate_dims(initial_tokens, num_layers)?;
        let first = stages.first().ok_or(ScheduleError::NoStages)?;
        if first.start_layer != 0 {
            return Err(ScheduleError::FirstStageStart(first.start_layer));
        }
        if first.tokens != initial_tokens {
            return Err(ScheduleError::FirstStageTokens {
                expected: initial_tokens,
                got: first.tokens,
            });
        }
        for pair in stages.windows(2) {
            if pair[1].start_layer <= pair[0].start_layer {
                return Err(ScheduleError::StageOrder);
            }
            if pair[1].tokens > pair[0].tokens {
                return Err(ScheduleError::StageTokens);
            }
        }
        if stages.last().unwrap().start_layer > num_layers {
            return Err(ScheduleError::StageOrder);
        }
        if stages.iter().any(|s| s.tokens == 0 || s.tokens > initial_tokens) {
            return Err(ScheduleError::StageTokens);
        }
        Ok(Self {
            kind: ScheduleKind::Stepwise(stages),
            initial_tokens,
            num_layers,
        })
    }

    fn validate_dims(initial_tokens: usize, num_layers: usize) -> Result<(), ScheduleError> {
        if initial_tokens == 0 {
            return Err(ScheduleError::ZeroInitialTokens);
        }
        if num_layers == 0 {
            return Err(ScheduleError::ZeroLayers);
        }
        Ok(())
    }

    /// Token count per frame at layer boundary `layer` (0 = model input,
    /// `num_layers` = after the final layer).
    pub fn tokens_at(&self, layer: usize) -> usize {
        assert!(
            layer <= self.num_layers,
            "layer {layer} outside schedule domain [0, {}]",
            self.num_layers
        );
        match &self.kind {
            ScheduleKind::Constant => self.initial_tokens,
            ScheduleKind::Cosine => {
                let n1 = self.initial_tokens as f64;
                // Divide before multiplying by pi so layer == num_layers hits
                // cos(pi) == -1 exactly and the count lands on 1.
                let angle = (layer as f64 / self.num_layers as f64) * PI;
                let value = (n1 - 1.0) / 2.0 * angle.cos() + (n1 + 1.0) / 2.0;
                (value - CEIL_GUARD).ceil() as usize
            }
            ScheduleKind::Stepwise(stages) => stages
                .iter()
                .rev()
                .find(|s| s.start_layer <= layer)
                .expect("validated stepwise schedule has a stage at layer 0")
                .tokens,
        }
    }

    /// Mean token count per frame over each layer's input, i.e. the mean of
    /// `tokens_at(0..num_layers)`: compression applies after a layer's
    /// output, so layer `i` processes `tokens_at(i-1)` tokens per frame.
    pub fn average_tokens_processed(&self) -> f64 {
        let total: usize = (0..self.num_layers).map(|l| self.tokens_at(l)).sum();
        total as f64 / self.num_layers as f64
    }

    /// All counts `tokens_at(0..=num_layers)` in layer order.
    pub fn counts(&self) -> Vec<usize> {
        (0..=self.num_layers).map(|l| self.tokens_at(l)).collect()
    }

    /// Serialize to the plain-text block format.
    pub fn to_block(&self) -> String {
        let mut out = String::new();
        writeln!(out, "kind={}", self.kind.name()).unwrap();
        writeln!(out, "initial_tokens={}", self.initial_tokens).unwrap();
        writeln!(out, "num_layers={}", self.num_layers).unwrap();
        if let ScheduleKind::Stepwise(stages) = &self.kind {
            let list: Vec<String> = stages
                .iter()
                .map(|s| format!("{}:{}", s.start_layer, s.tokens))
                .collect();
            writeln!(out, "stages={}", list.join(",")).unwrap();
        }
        out
    }

    /// Parse the block format produced by [`Self::to_block`]. Blank lines and
    /// `#` comments are permitted; unknown keys are rejected.
    pub fn from_block(text: &str) -> Result<Self, ScheduleError> {
        let mut kind: Option<String> = None;
        let mut initial: Option<usize> = None;
        let mut layers: Option<usize> = None;
        let mut stages: Option<Vec<Stage>> = None;

        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ScheduleError::UnknownKey(line.to_string()))?;
            match key.trim() {
                "kind" => kind = Some(value.trim().to_string()),
                "initial_tokens" => initial = Some(parse_count("initial_tokens", value)?),
                "num_layers" => layers = Some(parse_count("num_layers", value)?),
                "stages" => stages = Some(parse_stages(value)?),
                other => return Err(ScheduleError::UnknownKey(other.to_string())),
            }
        }

        let kind = kind.ok_or(ScheduleError::MissingKey("kind"))?;
        let initial = initial.ok_or(ScheduleError::MissingKey("initial_tokens"))?;
        let layers = layers.ok_or(ScheduleError::MissingKey("num_layers"))?;
        match kind.as_str() {
            "cosine" => Self::cosine(initial, layers),
            "constant" => Self::constant(initial, layers),
            "stepwise" => {
                let stages = stages.ok_or(ScheduleError::MissingKey("stages"))?;
                Self::stepwise(initial, layers, stages)
            }
            _ => Err(ScheduleError::BadValue {
                key: "kind",
                value: kind,
            }),
        }
    }
}

fn parse_count(key: &'static str, value: &str) -> Result<usize, ScheduleError> {
    value.trim().parse().map_err(|_| ScheduleError::BadValue {
        key,
        value: value.trim().to_string(),
    })
}

fn parse_stages(value: &str) -> Result<Vec<Stage>, ScheduleError> {
    let bad = || ScheduleError::BadValue {
        key: "stages",
        value: value.trim().to_string(),
    };
    value
        .trim()
        .split(',')
        .map(|entry| {
            let (start, tokens) = entry.split_once(':').ok_or_else(bad)?;
            Ok(Stage {
                start_layer: start.trim().parse().map_err(|_| bad())?,
                tokens: tokens.trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Build a step-wise schedule with `num_stages` plateaus whose counts run
/// evenly from `initial_tokens` down to 1, choosing plateau widths so the
/// average token count matches `target_avg` within 0.5.
///
/// Errors if no placement reaches the tolerance; the error names the best
/// achievable average.
pub fn build_stepwise_matching(
    initial_tokens: usize,
    num_layers: usize,
    num_stages: usize,
    target_avg: f64,
) -> Result<CompressionSchedule, ScheduleError> {
    CompressionSchedule::validate_dims(initial_tokens, num_layers)?;
    if num_stages < 2 {
        return Err(ScheduleError::TooFewStages(num_stages));
    }
    if !(1.0..=initial_tokens as f64).contains(&target_avg) {
        return Err(ScheduleError::TargetOutOfRange(target_avg));
    }
    if num_stages > num_layers {
        return Err(ScheduleError::StepwiseInfeasible {
            num_stages,
            num_layers,
            target: target_avg,
            best: f64::NAN,
        });
    }

    // Plateau counts are fixed: evenly spaced from initial_tokens to 1.
    let counts: Vec<usize> = (0..num_stages)
        .map(|j| {
            let frac = j as f64 / (num_stages - 1) as f64;
            let c = (initial_tokens as f64 - (initial_tokens as f64 - 1.0) * frac).round();
            (c as usize).clamp(1, initial_tokens)
        })
        .collect();

    // Widths are searched exactly: reachable[j][t][s] marks that the first j
    // plateaus can fill t layers with token-layer sum s (each width >= 1).
    let max_sum = initial_tokens * num_layers + 1;
    let mut reachable = vec![vec![vec![false; max_sum]; num_layers + 1]; num_stages + 1];
    let mut width_taken = vec![vec![vec![0usize; max_sum]; num_layers + 1]; num_stages + 1];
    reachable[0][0][0] = true;
    for (j, &count) in counts.iter().enumerate() {
        let remaining_stages = num_stages - 1 - j;
        for t in 0..=num_layers {
            for s in 0..max_sum {
                if !reachable[j][t][s] {
                    continue;
                }
                let max_width = num_layers - t - remaining_stages;
                for w in 1..=max_width {
                    let nt = t + w;
                    let ns = s + w * count;
                    if ns < max_sum && !reachable[j + 1][nt][ns] {
                        reachable[j + 1][nt][ns] = true;
                        width_taken[j + 1][nt][ns] = w;
                    }
                }
            }
        }
    }

    let target_sum = target_avg * num_layers as f64;
    let mut best: Option<usize> = None;
    for (s, ok) in reachable[num_stages][num_layers].iter().enumerate() {
        if *ok {
            let better = match best {
                None => true,
                Some(b) => {
                    (s as f64 - target_sum).abs() < (b as f64 - target_sum).abs()
                }
            };
            if better {
                best = Some(s);
            }
        }
    }
    let best_sum = best.expect("at least one width assignment exists");
    let best_avg = best_sum as f64 / num_layers as f64;
    if (best_avg - target_avg).abs() > 0.5 {
        return Err(ScheduleError::StepwiseInfeasible {
            num_stages,
            num_layers,
            target: target_avg,
            best: best_avg,
        });
    }

    // Walk the DP back to recover plateau widths, then stage start layers.
    let mut widths = vec![0usize; num_stages];
    let (mut t, mut s) = (num_layers, best_sum);
    for j in (1..=num_stages).rev() {
        let w = width_taken[j][t][s];
        widths[j - 1] = w;
        t -= w;
        s -= w * counts[j - 1];
    }
    let mut stages = Vec::with_capacity(num_stages);
    let mut start = 0usize;
    for (j, &w) in widths.iter().enumerate() {
        stages.push(Stage {
            start_layer: start,
            tokens: counts[j],
        });
        start += w;
    }
    CompressionSchedule::stepwise(initial_tokens, num_layers, stages)
}
